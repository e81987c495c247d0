import numpy as np
import pytest
import torch

from srl_handover import rot
from srl_handover.dataio import HandoverState
from srl_handover.training import parameter_hash

H, TB = HandoverState.HANDING_OVER, HandoverState.TAKING_BACK


def tiny_cfg(**kw):
    base = dict(latent_dim=2, hidden_dim=16, embed_dim=8, attention_heads=2, T=4, context_stride=2,
                batch_size=32, lr_start=1e-3)
    base.update(kw)
    return rot.RotConfig(**base)


# --- ground truth ---------------------------------------------------------


def test_ground_truth_robot_gives():
    r = rot.rot_ground_truth([0, 0, 0], [1, 0, 0], H)
    np.testing.assert_allclose(r.position, [0.5, 0, 0])
    np.testing.assert_allclose(r.direction, [-1, 0, 0])


def test_ground_truth_swap_negates_direction(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    give, take = rot.rot_ground_truth(a, b, H), rot.rot_ground_truth(a, b, TB)
    np.testing.assert_allclose(give.position, take.position)
    np.testing.assert_allclose(give.direction, -take.direction)


def test_ground_truth_midpoint_equidistant(rng):
    for _ in range(50):
        a, b = rng.normal(size=3), rng.normal(size=3)
        p = rot.rot_ground_truth(a, b, TB).position
        assert abs(np.linalg.norm(p - a) - np.linalg.norm(p - b)) < 1e-12
        assert abs(np.linalg.norm(rot.rot_ground_truth(a, b, TB).direction) - 1) < 1e-12


def test_ground_truth_errors():
    with pytest.raises(rot.DegenerateRoTError):
        rot.rot_ground_truth([0.1, 0, 0], [0.1, 0, 0])
    with pytest.raises(ValueError):
        rot.rot_ground_truth([0, 0, 0], [1, 0, 0], HandoverState.IDLE)


def test_region_normalizes_direction():
    r = rot.RegionOfTransfer(np.zeros(3), [0, 3.0, 4.0])
    np.testing.assert_allclose(r.direction, [0, 0.6, 0.8])
    with pytest.raises(rot.DegenerateRoTError):
        rot.RegionOfTransfer(np.zeros(3), np.zeros(3))


# --- loss and metric ------------------------------------------------------


def test_rot_loss_unit_cases():
    gt = np.array([0.1, 0.2, 0.3, 0, 0, 1.0])
    assert rot.rot_loss(gt, gt) == 0
    assert rot.rot_loss(gt + [1, 0, 0, 0, 0, 0], gt) == 0.5
    assert rot.rot_loss(gt + [0, 1, 0, 1, 0, 0], gt) == 1.0


def test_rot_loss_torch_matches_numpy(rng):
    p, g = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    t = rot.rot_loss(torch.tensor(p), torch.tensor(g)).item()
    assert t == pytest.approx(rot.rot_loss(p, g), abs=1e-12)
    brute = np.mean([0.5 * sum((p[i, k] - g[i, k]) ** 2 for k in range(6)) for i in range(5)])
    assert t == pytest.approx(brute, abs=1e-12)


def test_meae_cases(rng):
    d = np.array([0.3, 0.2, 0.9])
    assert rot.meae(d, d) == 0
    yaw = np.array([np.sin(0.4), 0, np.cos(0.4)])
    yaw2 = np.array([np.sin(0.5), 0, np.cos(0.5)])
    assert rot.meae(yaw, yaw2) == pytest.approx(0.05, abs=1e-12)
    a, b = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    assert rot.meae(a, b) == pytest.approx(rot.meae(b, a), abs=1e-15)
    with pytest.raises(ValueError):
        rot.meae(np.zeros(3), d)


def test_meae_wraps_yaw():
    a = np.array([np.sin(np.pi - 0.05), 0, np.cos(np.pi - 0.05)])
    b = np.array([np.sin(-np.pi + 0.05), 0, np.cos(-np.pi + 0.05)])
    assert rot.meae(a, b) == pytest.approx(0.05, abs=1e-9)


# --- windows --------------------------------------------------------------


def test_rot_windows_labels(small_corpus):
    data = rot.RotWindows(small_corpus[:2], T=4)
    assert len(data) > 0 and np.all(np.isfinite(data.labels))
    np.testing.assert_allclose(np.linalg.norm(data.labels[:, 3:], axis=1), 1, atol=1e-9)
    states = np.concatenate([c.states for c in data.ws.clips])[data.ws.centers]
    assert np.all(states != HandoverState.IDLE)


# --- model ----------------------------------------------------------------


@pytest.fixture(scope="module")
def fixed_rot_fit(small_corpus):
    """Corpus whose RoT label is a fixed value per activity."""
    data = rot.RotWindows(small_corpus, T=4)
    table = {}
    rng = np.random.default_rng(0)
    for name in sorted(set(data.activities)):
        d = rng.normal(size=3)
        table[name] = np.r_[rng.uniform(-0.4, 0.4, 3) + [0, 0.3, 0.4], d / np.linalg.norm(d)]
    data.labels = np.stack([table[a] for a in data.activities])
    model, log = rot.train_rot(data, tiny_cfg(epochs=60))
    return model, log, data


def test_overfit_fixed_rot_within_5cm(fixed_rot_fit):
    model, log, data = fixed_rot_fit
    b = data.batch(np.arange(len(data)))
    pred = rot.predict_rot_batch(model, b["h_seen"], b["r_seen"])
    err = np.linalg.norm(pred[:, :3] - data.labels[:, :3], axis=1)
    assert np.mean(err) < 0.05
    assert log[-1]["recon"] < 0.1 * log[0]["recon"]


def test_loss_moving_average_non_increasing(fixed_rot_fit):
    _, log, _ = fixed_rot_fit
    rec = np.array([r["recon"] for r in log])
    ma = np.convolve(rec, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(ma[::10]) <= 0)


def test_predict_rot_deterministic_unit(fixed_rot_fit):
    model, _, data = fixed_rot_fit
    b = data.batch([0])
    a = rot.predict_rot(model, b["h_seen"][0], b["r_seen"][0])
    c = rot.predict_rot(model, b["h_seen"][0], b["r_seen"][0])
    np.testing.assert_array_equal(a.as_vector(), c.as_vector())
    assert abs(np.linalg.norm(a.direction) - 1) < 1e-6
    with pytest.raises(ValueError):
        rot.predict_rot(model, b["h_seen"][0][:-1], b["r_seen"][0])


def test_train_log_length_and_reproducible(small_corpus):
    data = rot.RotWindows(small_corpus[:1], T=4)
    cfg = tiny_cfg(epochs=5, seed=2)
    assert rot.RotConfig().epochs == 250
    m1, l1 = rot.train_rot(data, cfg)
    m2, l2 = rot.train_rot(data, cfg)
    assert len(l1) == 5 and l1 == l2
    assert parameter_hash(m1) == parameter_hash(m2)


def test_evaluate_and_checkpoint(tmp_path, fixed_rot_fit, small_corpus):
    model, log, _ = fixed_rot_fit
    rows = rot.evaluate(model, small_corpus[:2])
    assert rows[-1]["activity"] == "Overall" and rows[-1]["n_windows"] > 0
    assert set(rows[0]) >= {"MAE_cm", "MAE_std", "MEAE_rad", "MEAE_std"}
    rot.save_rot(model, tmp_path / "rot.zip", log)
    back, blog = rot.load_rot(tmp_path / "rot.zip")
    assert len(blog) == len(log)
    assert rot.evaluate(back, small_corpus[:2])[-1]["MAE_cm"] == pytest.approx(rows[-1]["MAE_cm"], abs=1e-4)
