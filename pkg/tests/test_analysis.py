import csv

import numpy as np
import pytest
import torch

from srl_handover import analysis
from srl_handover.dataio import HandoverState, MotionClip
from srl_handover.kinematics import synthetic_skeleton

NAMES = synthetic_skeleton().names
J = len(NAMES)
LW = NAMES.index("l_wrist")


def linear_on(joint, coord, coef):
    def model(x):
        return coef * x[:, -1, 9 * joint + coord]

    return model


def test_linear_model_ranks_single_joint_first(rng):
    h = rng.normal(size=(40, 5, 9 * J))
    table = analysis.joint_importance(linear_on(LW, 0, 5.0), h, NAMES)
    pos = table.channel("position")
    assert pos[0].joint == "l_wrist" and pos[0].rank == 1
    assert abs(pos[0].magnitude - 5.0) < 1e-6
    assert all(r.magnitude == 0 for r in pos[1:])
    assert all(r.magnitude == 0 for r in table.channel("rotation"))


def test_ranks_are_permutation_and_sorted(rng):
    W = torch.tensor(rng.normal(size=(9 * J, 3)))

    def model(x):
        return torch.tanh(x.sum(1) @ W)

    table = analysis.joint_importance(model, rng.normal(size=(30, 3, 9 * J)), NAMES)
    for ch in analysis.CHANNELS:
        rows = table.channel(ch)
        assert sorted(r.rank for r in rows) == list(range(1, J + 1))
        mags = [r.magnitude for r in rows]
        assert all(m >= 0 for m in mags) and all(a >= b for a, b in zip(mags, mags[1:]))


def test_vector_output_sums_abs_gradients(rng):
    def model(x):
        f = x[:, 0, 9 * 2 + 4]
        return torch.stack([2 * f, -3 * f, 0.5 * f], dim=1)

    table = analysis.joint_importance(model, rng.normal(size=(8, 2, 9 * J)), NAMES)
    rot = table.channel("rotation")
    assert rot[0].joint == NAMES[2] and rot[0].magnitude == pytest.approx(5.5, abs=1e-12)


def test_exact_linear_equals_abs_weight(rng):
    w = rng.normal(size=9 * J)
    model = lambda x: x[:, 0] @ torch.tensor(w)  # noqa: E731
    table = analysis.joint_importance(model, rng.normal(size=(10, 1, 9 * J)), NAMES)
    got = {(r.joint, r.channel): r.magnitude for r in table}
    for j, name in enumerate(NAMES):
        assert got[(name, "position")] == pytest.approx(np.abs(w[9 * j: 9 * j + 3]).sum(), abs=1e-12)
        assert got[(name, "rotation")] == pytest.approx(np.abs(w[9 * j + 3: 9 * j + 9]).sum(), abs=1e-12)


def test_invariant_to_shuffle_and_duplication(rng):
    W = torch.tensor(rng.normal(size=9 * J))
    model = lambda x: torch.sin(x[:, -1] @ W)  # noqa: E731
    h = rng.normal(size=(25, 2, 9 * J))
    a = analysis.joint_importance(model, h, NAMES, batch_size=7)
    b = analysis.joint_importance(model, h[rng.permutation(25)], NAMES, batch_size=7)
    c = analysis.joint_importance(model, np.concatenate([h, h]), NAMES, batch_size=7)
    for x, y in [(a, b), (a, c)]:
        assert [r.joint for r in x] == [r.joint for r in y]
        np.testing.assert_allclose([r.magnitude for r in x], [r.magnitude for r in y], rtol=1e-12)


def test_aux_inputs_and_errors(rng):
    h = rng.normal(size=(4, 2, 9 * J))
    model = lambda x, scale: scale[:, None] * x[:, 0, :3]  # noqa: E731
    table = analysis.joint_importance(model, h, NAMES, aux={"scale": np.full(4, 2.0)})
    assert table.channel("position")[0].magnitude == pytest.approx(6.0)
    with pytest.raises(TypeError):
        analysis.joint_importance(lambda x: np.zeros(len(x)), h, NAMES)
    with pytest.raises(ValueError):
        analysis.joint_importance(linear_on(0, 0, 1.0), h[:, :, :-1], NAMES)


def test_importance_csv(tmp_path, rng):
    table = analysis.joint_importance(linear_on(LW, 0, 5.0), rng.normal(size=(3, 2, 9 * J)), NAMES)
    table.to_csv(tmp_path / "imp.csv")
    with open(tmp_path / "imp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["rank", "joint", "channel", "magnitude"]
    assert len(rows) == 2 * J and rows[0]["joint"] == "l_wrist"
    assert table.top("position", 1) == ["l_wrist"]


def test_model_wrappers_run(small_corpus):
    from srl_handover import rot, svae, timing

    clips = small_corpus[:1]
    sm = svae.SvaeModel(svae.SvaeConfig(latent_dim=2, hidden_dim=8, embed_dim=8, attention_heads=2,
                                        gate_hidden=8, T=4, context_stride=2), 9 * J)
    rm = rot.RotModel(rot.RotConfig(latent_dim=2, hidden_dim=8, embed_dim=8, attention_heads=2, T=4), 9 * J)
    tm = timing.TimingModel(5 * 9 * J, 8, 9 * J)
    for table, model in [(analysis.svae_importance(sm, clips, 50), sm),
                         (analysis.rot_importance(rm, clips, 50), rm),
                         (analysis.timing_importance(tm, clips, 50), tm)]:
        assert len(table) == 2 * J
        assert next(model.parameters()).dtype == torch.float32


# --- statistics -----------------------------------------------------------


def two_segment_clip(offset=(0.0, 0.0, 0.0)):
    sk = synthetic_skeleton()
    n = 200
    states = np.full(n, HandoverState.IDLE, dtype=np.int8)
    states[10:60] = HandoverState.HANDING_OVER  # 2 s
    states[100:175] = HandoverState.TAKING_BACK  # 3 s
    clip = MotionClip.idle(sk, 25.0, np.tile(offset, (n, 1)) + [0, 1.0, 0],
                           np.broadcast_to(np.eye(3), (n, 3, 3)).copy(), np.zeros((n, J, 3)),
                           ee_positions=np.tile(np.r_[0.0, 1.2, 0.5] + offset, (n, 1)))
    return clip.replace(states=states)


def test_stats_durations_population_std():
    stats = analysis.handover_stats([two_segment_clip()])
    assert stats["n_segments"] == 2
    assert stats["duration_mean"] == pytest.approx(2.5)
    assert stats["duration_std"] == pytest.approx(0.5)


def test_stats_points_translation_invariant():
    a = analysis.handover_stats([two_segment_clip()])
    b = analysis.handover_stats([two_segment_clip((3.0, 0.0, -7.0))])
    np.testing.assert_allclose(a["rot_points"], b["rot_points"], atol=1e-9)
    np.testing.assert_allclose(a["palm_points"], b["palm_points"], atol=1e-9)


def test_stats_synthetic_mean_duration(full_corpus):
    stats = analysis.handover_stats(full_corpus)
    assert stats["n_segments"] == 200
    assert abs(stats["duration_mean"] - 2.244) < 0.1


def test_stats_empty_warns(caplog):
    sk = synthetic_skeleton()
    clip = MotionClip.idle(sk, 25.0, np.zeros((5, 3)), np.broadcast_to(np.eye(3), (5, 3, 3)).copy(),
                           np.zeros((5, J, 3)))
    with caplog.at_level("WARNING"):
        stats = analysis.handover_stats([clip])
    assert stats["n_segments"] == 0 and "no handover segments" in caplog.text


def test_write_stats(tmp_path, small_corpus):
    stats = analysis.handover_stats(small_corpus)
    paths = analysis.write_stats(stats, tmp_path)
    assert [p.name for p in paths] == ["segments.csv", "summary.csv", "handover_points.svg"]
    assert paths[2].read_text().lstrip().startswith("<?xml")
    with open(paths[0]) as fh:
        assert len(list(csv.DictReader(fh))) == stats["n_segments"]
