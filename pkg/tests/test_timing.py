import math

import numpy as np
import pytest
import torch

from srl_handover import timing
from srl_handover.dataio import ACTIVITIES, HandoverState, MotionClip
from srl_handover.kinematics import synthetic_skeleton
from srl_handover.training import TrainingError, parameter_hash

I, H, TB = HandoverState.IDLE, HandoverState.HANDING_OVER, HandoverState.TAKING_BACK


def block_clip(blocks, activity="Mount a mic", seed=0, signal=True):
    """Clip made of ``(state, n_frames)`` blocks; the right arm rises during handovers."""
    sk = synthetic_skeleton()
    states = np.concatenate([np.full(n, s, dtype=np.int8) for s, n in blocks])
    n = len(states)
    rng = np.random.default_rng(seed)
    angles = rng.normal(scale=0.02, size=(n, len(sk), 3)) * sk.dof_mask
    if signal:
        angles[:, sk.index("r_shoulder"), 0] += np.where(states != I, 1.0, 0.0)
    clip = MotionClip.idle(sk, 25.0, np.zeros((n, 3)), np.broadcast_to(np.eye(3), (n, 3, 3)).copy(), angles,
                           activity=activity)
    return clip.replace(states=states)


# --- primitives -----------------------------------------------------------


@pytest.mark.parametrize("lk,expected", [(0.61, True), (0.6, False), (0.0, False), (1.0, True)])
def test_classify_threshold(lk, expected):
    assert timing.classify(lk) is expected


def test_classify_monotone_and_range():
    grid = np.linspace(0, 1, 101)
    out = timing.classify(grid).astype(int)
    assert np.all(np.diff(out) >= 0)
    for bad in (-0.1, 1.2, float("nan")):
        with pytest.raises(ValueError):
            timing.classify(bad)


def test_bce_cases():
    assert timing.bce_loss(np.full(8, 0.5), np.r_[np.ones(4), np.zeros(4)]) == pytest.approx(math.log(2), abs=1e-9)
    assert timing.bce_loss([math.exp(-1)], [1]) == pytest.approx(1.0, abs=1e-12)
    perfect = timing.bce_loss([1.0, 0.0], [1, 0])
    assert 0 < perfect < 1e-6
    t = timing.bce_loss(torch.tensor([0.5, 0.5], dtype=torch.float64), [1.0, 0.0])
    assert t.item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_non_negative(rng):
    p, y = rng.uniform(size=100), rng.integers(0, 2, 100)
    assert timing.bce_loss(p, y) >= 0
    weighted = timing.bce_loss(p, y, pos_weight=2.0)
    manual = np.mean(-(y * np.log(p) * 2 + (1 - y) * np.log(1 - p)))
    assert weighted == pytest.approx(manual, rel=1e-9)


def test_model_shape_and_range(rng):
    m = timing.TimingModel(26 * 153, 128, 153)
    assert [type(l).__name__ for l in m.net] == ["Linear", "ELU", "Linear", "ELU", "Linear", "Sigmoid"]
    assert m.net[0].out_features == 128 and m.net[2].out_features == 128
    x = rng.normal(scale=100, size=(5, 26, 153))
    lk = timing.predict_likelihood(m, x)
    assert np.all((lk >= 0) & (lk <= 1))
    np.testing.assert_array_equal(lk, timing.predict_likelihood(m, x))
    assert isinstance(timing.predict_likelihood(m, x[0]), float)
    with pytest.raises(ValueError):
        timing.predict_likelihood(m, x[:, :25])


def test_gradient_check_toy_input(rng):
    m = timing.TimingModel(4, hidden=8, seed=1).double()
    x = torch.tensor(rng.normal(size=(6, 4)))
    y = torch.tensor([1.0, 0, 1, 0, 0, 1], dtype=torch.float64)
    m.zero_grad()
    timing.bce_loss(m(x), y).backward()
    for name, p in m.named_parameters():
        flat = p.detach().view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + 1e-6
                up = timing.bce_loss(m(x), y).item()
                flat[i] = old - 1e-6
                down = timing.bce_loss(m(x), y).item()
                flat[i] = old
            fd = (up - down) / 2e-6
            g = p.grad.view(-1)[i].item()
            assert abs(g - fd) <= 1e-4 * max(abs(fd), abs(g)) + 1e-10, name


# --- windows and training -------------------------------------------------


def test_window_labels_current_and_majority():
    clip = block_clip([(I, 10), (H, 10), (I, 10)])
    cur = timing.TimingWindows([clip], T=4)
    assert len(cur) == 26
    np.testing.assert_array_equal(cur.labels, (clip.states[4:] != I).astype(float))
    maj = timing.TimingWindows([clip], T=4, label_mode="majority")
    assert maj.labels[cur.ws.local_centers.tolist().index(10)] == 0  # one of five frames active
    assert maj.labels[cur.ws.local_centers.tolist().index(12)] == 1


def separable_corpus():
    return [block_clip([(I, 30), (H, 30), (I, 30), (TB, 30), (I, 30)], seed=s) for s in range(3)]


@pytest.fixture(scope="module")
def separable_fit():
    cfg = timing.TimingConfig(T=4, hidden=16, epochs=40, lr_start=1e-3, batch_size=64)
    model, log = timing.train_timing(separable_corpus(), cfg)
    return model, log, cfg


def test_separable_fixture_accuracy(separable_fit):
    model, log, _ = separable_fit
    assert log[-1]["accuracy"] >= 0.95
    clip = separable_corpus()[0]
    data = timing.TimingWindows([clip], T=4)
    positive = data.windows(np.flatnonzero(data.labels == 1)[10:11])[0]
    assert timing.predict_likelihood(model, positive) > 0.9


def test_training_reproducible_and_log_length():
    cfg = timing.TimingConfig(T=4, hidden=8, epochs=3, seed=9)
    a, la = timing.train_timing(separable_corpus()[:1], cfg)
    b, lb = timing.train_timing(separable_corpus()[:1], cfg)
    assert len(la) == 3 and la == lb and parameter_hash(a) == parameter_hash(b)
    assert timing.TimingConfig().epochs == 500


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_nan_aborts():
    clip = block_clip([(I, 20), (H, 20)])
    clip.joint_angles[3, 2, 0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        timing.train_timing([clip], timing.TimingConfig(T=4, hidden=8, epochs=1))


# --- report ---------------------------------------------------------------


def test_report_schema(separable_fit):
    model, _, _ = separable_fit
    rows = timing.accuracy_report(model, separable_corpus()[:1])
    assert [r["group"] for r in rows].count("activity") == 13
    assert [r["name"] for r in rows if r["group"] == "activity"] == list(ACTIVITIES)[:13]
    params = [(r["group"], r["name"]) for r in rows if r["group"] in ("height", "distance", "range")]
    assert params == list(timing.PARAMETER_ROWS)
    assert rows[-1]["name"] == "Overall" and len(rows) == 21


def test_report_perfect_predictor():
    corpus = separable_corpus()
    rest = timing.TimingWindows(corpus[:1], T=4).windows([0])[0, -1]

    def oracle(windows):
        # the newest frame departs from the rest pose exactly during handovers
        return (np.abs(windows[:, -1] - rest).max(axis=1) > 0.3).astype(float)

    rows = timing.accuracy_report(oracle, corpus, T=4)
    overall = rows[-1]
    assert overall["segment_accuracy"] == 100 and overall["window_accuracy"] == 100


def test_report_constant_false_half_segments():
    corpus = [block_clip([(I, 30), (H, 30)], seed=s, signal=False) for s in range(2)]
    rows = timing.accuracy_report(lambda w: np.zeros(len(w)), corpus, T=4)
    assert rows[-1]["segment_accuracy"] == 50.0
    assert rows[-1]["n_segments"] == 4


def test_report_empty_corpus(separable_fit):
    with pytest.raises(ValueError):
        timing.accuracy_report(separable_fit[0], [])


def test_checkpoint_round_trip(tmp_path, separable_fit):
    model, log, cfg = separable_fit
    timing.save_timing(model, cfg, tmp_path / "t.zip", log)
    back, bcfg, blog = timing.load_timing(tmp_path / "t.zip")
    assert bcfg == cfg and len(blog) == len(log)
    x = timing.TimingWindows(separable_corpus()[:1], T=4).windows(np.arange(20))
    np.testing.assert_allclose(timing.predict_likelihood(back, x), timing.predict_likelihood(model, x), atol=1e-6)
