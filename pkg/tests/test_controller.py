import json

import numpy as np
import pytest
import torch

from srl_handover import controller as ctl
from srl_handover import svae
from srl_handover.dataio import HandoverState


def const_velocity(n, v=(0.3, -0.1, 0.2), p0=(0.1, 0.9, 0.3), dt=0.04):
    return np.asarray(p0) + np.arange(n)[:, None] * dt * np.asarray(v)


# --- Kalman ---------------------------------------------------------------


def test_kalman_stationary_converges():
    target = np.array([0.2, 1.1, 0.4])
    state = ctl.kalman_init(np.zeros(3), 0.04)
    for _ in range(50):
        state, pred = ctl.kalman_step(state, target)
    assert np.linalg.norm(pred - target) < 1e-3


def test_kalman_constant_velocity_one_step_prediction():
    track = const_velocity(120)
    state = ctl.kalman_init(track[0], 0.04)
    errs = []
    for k in range(1, len(track) - 1):
        state, pred = ctl.kalman_step(state, track[k])
        errs.append(np.linalg.norm(pred - track[k + 1]))
        eig = np.linalg.eigvalsh(state.P)
        assert eig.min() >= -1e-9 and np.allclose(state.P, state.P.T)
    assert max(errs[-30:]) < 1e-3


def test_kalman_noiseless_exact():
    track = const_velocity(20)
    state = ctl.kalman_init(track[0], 0.04, process_noise=0.0, measurement_noise=0.0,
                            velocity=(0.3, -0.1, 0.2), P0=np.zeros((6, 6)))
    for k in range(1, 19):
        state, pred = ctl.kalman_step(state, track[k])
        np.testing.assert_allclose(pred, track[k + 1], atol=1e-12)


def test_kalman_rejects_bad_measurement():
    state = ctl.kalman_init(np.zeros(3), 0.04)
    with pytest.raises(ValueError):
        ctl.kalman_step(state, [0.0, np.nan, 0.0])


# --- baseline -------------------------------------------------------------


def run_baseline(hand, ticks=200, config=None, ee=None):
    cfg = config or ctl.ControllerConfig()
    ee = np.asarray(cfg.rest_ee if ee is None else ee, dtype=float)
    f, active, halted = None, False, False
    track = [ee]
    for k in range(ticks):
        h = hand[k] if np.ndim(hand) == 2 else hand
        ee, st = ctl.baseline_step(cfg, f, h, ee, active, halted)
        f, active, halted = st["filter"], st["active"], st["halted"]
        track.append(ee)
    return np.array(track), halted


def test_baseline_idle_outside_regions():
    track, halted = run_baseline(np.array([0.5, 1.5, 1.0]))
    assert np.all(track == track[0]) and not halted


def test_baseline_static_hand_stops_at_threshold():
    cfg = ctl.ControllerConfig()
    hand = np.array([-0.2, 0.4, 0.3])
    assert ctl.in_regions(hand, cfg.activation_regions)
    ee0 = hand + np.array([0.0, 0.0, 1.0])  # 1 m away
    track, halted = run_baseline(hand, ticks=150, ee=ee0)
    d = np.linalg.norm(track - hand, axis=1)
    assert halted and abs(d[-1] - 0.12) <= 0.005
    assert np.all(np.diff(d) <= 1e-12)
    steps = np.linalg.norm(np.diff(track, axis=0), axis=1)
    assert steps.max() <= cfg.speed_cap / cfg.tick_rate + 1e-12
    # absorbing: the last 20 ticks do not move
    assert np.all(steps[-20:] == 0)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        ctl.ControllerConfig(activation_regions=[]).validate(baseline=True)
    with pytest.raises(ValueError):
        ctl.ControllerConfig(stop_distance=0).validate()


# --- episodes -------------------------------------------------------------


@pytest.fixture(scope="module")
def script():
    return ctl.scripted_user(seed=1)


def test_run_episode_zero_ticks(script):
    log = ctl.run_episode(ctl.BaselineController(), script, 0)
    assert log.ticks == [] and not log.completed


def test_baseline_episode_completes_deterministically(script):
    a = ctl.run_episode(ctl.BaselineController(), script, 300)
    b = ctl.run_episode(ctl.BaselineController(), ctl.scripted_user(seed=1), 300)
    assert a.completed and a.completion_tick is not None
    assert a.final_distance <= 0.12
    assert a == b
    ee = np.array([t["ee"] for t in a.ticks])
    assert np.linalg.norm(np.diff(ee, axis=0), axis=1).max() <= 0.5 / 25 + 1e-12


def copy_model():
    cfg = svae.SvaeConfig(latent_dim=2, hidden_dim=8, embed_dim=8, attention_heads=2, gate_hidden=8)
    m = svae.SvaeModel(cfg, 153)
    with torch.no_grad():
        m.w3.zero_()
        m.b3.zero_()
    return m


@pytest.mark.parametrize("fires", [False, True])
def test_hands_controller_with_wired_timing(script, fires):
    model = copy_model()
    log = ctl.run_episode(ctl.HandsController(ctl.constant_timing(fires), model), script, 60)
    ee = np.array([t["ee"] for t in log.ticks])
    np.testing.assert_allclose(ee, np.tile(ctl.REST_EE, (len(ee), 1)), atol=1e-6)
    assert all(t["handover_detected"] is fires for t in log.ticks)
    assert not log.completed


def test_hands_step_needs_history():
    hist = ctl.HandsHistory(25, ctl.REST_EE, np.r_[1.0, 0, 0, 0, 1, 0])
    with pytest.raises(ValueError, match="buffered"):
        ctl.hands_step(ctl.constant_timing(True), copy_model(), hist, (np.zeros(153), np.zeros(3)))


def test_hands_step_uses_timing_model_likelihood(script):
    from srl_handover.timing import TimingModel

    tm = TimingModel(26 * 153, 8, 153)
    with torch.no_grad():
        tm.net[-2].bias.fill_(-50.0)  # likelihood ~ 0
    hist = ctl.HandsHistory(25, ctl.REST_EE, script.ee_rotation6d)
    for f in range(25):
        hist.push_user(script.features[f])
    ee, st = ctl.hands_step(tm, copy_model(), hist, (script.features[25], script.hand[25]))
    assert st["likelihood"] < 0.6 and not st["detected"]
    np.testing.assert_allclose(ee, ctl.REST_EE)


def test_mean_jerk():
    t = np.arange(10)[:, None] * np.ones(3)
    assert ctl.mean_jerk(t, 25) == 0.0
    cubic = (np.arange(10.0) ** 3)[:, None] * np.array([1.0, 0, 0])
    assert ctl.mean_jerk(cubic, 1.0) == pytest.approx(6.0)


def test_write_episode(tmp_path, script):
    log = ctl.run_episode(ctl.BaselineController(), script, 300)
    summary = ctl.write_episode(log, "baseline", "hammer", tmp_path)
    ctl.write_episode(log, "baseline", "hammer2", tmp_path)
    lines = (tmp_path / "baseline_hammer.jsonl").read_text().splitlines()
    assert len(lines) == len(log.ticks)
    assert set(json.loads(lines[0])) >= {"user_hand", "ee", "controller_state", "handover_detected"}
    rows = summary.read_text().splitlines()
    assert rows[0].startswith("controller,script,completed") and len(rows) == 3


def test_scripted_user_kinds():
    s = ctl.scripted_user(kind=HandoverState.TAKING_BACK, seed=2)
    assert s.state == HandoverState.TAKING_BACK and s.cue_frame == 37
    assert s.features.shape[1] == 153 and s.hand.shape == (len(s), 3)
