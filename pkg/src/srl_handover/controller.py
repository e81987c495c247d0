"""Closed-loop handover controllers and a discrete-time episode simulator.

Everything runs in the user's hip frame (+z front, +y up, -x the user's
right). A scripted user agent replays a synthetic clip; a controller moves
the robot end-effector once per tick.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import HandoverState, SynthConfig, normalize_clip, segment_handovers, synth_clip
from .dataio.synth import REST_EE
from .kinematics import matrix_to_6d

DEFAULT_REGION = ((-0.45, 0.0, 0.0), (0.05, 0.8, 0.5))  # (lower, upper) corners in the hip frame
SPEED_CAP = 0.5  # m/s, baseline end-effector speed limit


@dataclass
class ControllerConfig:
    stop_distance: float = 0.12
    tick_rate: float = 25.0
    activation_regions: list = field(default_factory=lambda: [DEFAULT_REGION])
    kalman: dict = field(default_factory=lambda: {"process_noise": 1.0, "measurement_noise": 1e-4})
    speed_cap: float = SPEED_CAP
    rest_ee: tuple = tuple(REST_EE)

    def validate(self, baseline: bool = False) -> "ControllerConfig":
        if self.stop_distance <= 0:
            raise ValueError("stop_distance must be positive")
        if self.tick_rate <= 0 or self.speed_cap <= 0:
            raise ValueError("tick_rate and speed_cap must be positive")
        if baseline and not self.activation_regions:
            raise ValueError("the baseline needs at least one activation region")
        for lo, hi in self.activation_regions:
            if np.any(np.asarray(lo) > np.asarray(hi)):
                raise ValueError(f"activation region {lo}..{hi} has lower > upper")
        extra = set(self.kalman) - {"process_noise", "measurement_noise"}
        if extra:
            raise ValueError(f"unknown kalman keys {sorted(extra)}")
        return self


# --------------------------------------------------------------------------
# Kalman filter


@dataclass
class KalmanState:
    """Constant-velocity state ``[position, velocity]`` and its covariance."""

    x: np.ndarray
    P: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def H(self) -> np.ndarray:
        return np.hstack([np.eye(3), np.zeros((3, 3))])


def kalman_init(position, dt: float, process_noise: float = 1.0, measurement_noise: float = 1e-4,
                velocity=(0.0, 0.0, 0.0), P0=None) -> KalmanState:
    """Filter started at ``position``; ``process_noise`` is the white-acceleration spectral density."""
    I = np.eye(3)
    F = np.block([[I, dt * I], [np.zeros((3, 3)), I]])
    q = float(process_noise)
    Q = q * np.block([[dt**3 / 3 * I, dt**2 / 2 * I], [dt**2 / 2 * I, dt * I]])
    R = float(measurement_noise) * I
    if P0 is None:
        P0 = np.diag([measurement_noise] * 3 + [1.0] * 3)
    x = np.concatenate([np.asarray(position, float), np.asarray(velocity, float)])
    return KalmanState(x, np.array(P0, dtype=float), F, Q, R)


def kalman_step(state: KalmanState, measurement) -> tuple[KalmanState, np.ndarray]:
    """Predict-update with a new position measurement; returns the one-step-ahead position."""
    z = np.asarray(measurement, dtype=float)
    if z.shape != (3,) or not np.all(np.isfinite(z)):
        raise ValueError("measurement must be a finite 3-vector")
    H = state.H
    x = state.F @ state.x
    P = state.F @ state.P @ state.F.T + state.Q
    S = H @ P @ H.T + state.R
    K = P @ H.T @ np.linalg.pinv(S)
    x = x + K @ (z - H @ x)
    A = np.eye(6) - K @ H
    P = A @ P @ A.T + K @ state.R @ K.T  # Joseph form keeps P symmetric PSD
    P = 0.5 * (P + P.T)
    new = KalmanState(x, P, state.F, state.Q, state.R)
    return new, (state.F @ x)[:3]


# --------------------------------------------------------------------------
# controllers


def in_regions(point, regions) -> bool:
    p = np.asarray(point, dtype=float)
    return any(np.all(p >= np.asarray(lo)) and np.all(p <= np.asarray(hi)) for lo, hi in regions)


def baseline_step(config: ControllerConfig, filter_state: KalmanState | None, user_hand, ee, active: bool = False,
                  halted: bool = False):
    """One tick of the activation-region + Kalman baseline.

    Returns ``(next_ee, status)`` where ``status`` holds the updated filter
    state, ``active``, ``halted`` and the predicted hand position.
    """
    hand = np.asarray(user_hand, dtype=float)
    ee = np.asarray(ee, dtype=float)
    dt = 1.0 / config.tick_rate
    if filter_state is None:
        filter_state = kalman_init(hand, dt, **config.kalman)
        predicted = hand.copy()
    else:
        filter_state, predicted = kalman_step(filter_state, hand)
    active = active or in_regions(hand, config.activation_regions)
    status = {"filter": filter_state, "active": active, "halted": halted, "predicted": predicted}
    if halted or not active:
        return ee.copy(), status
    if np.linalg.norm(hand - ee) <= config.stop_distance:
        status["halted"] = True
        return ee.copy(), status
    # aim just inside the stop sphere around the predicted hand
    to_hand = predicted - ee
    dist = np.linalg.norm(to_hand)
    travel = dist - (config.stop_distance - 0.002)
    step = min(max(travel, 0.0), config.speed_cap * dt)
    nxt = ee + (to_hand / dist) * step if dist > 1e-12 else ee.copy()
    if np.linalg.norm(hand - nxt) <= config.stop_distance:
        status["halted"] = True
    return nxt, status


def hands_step(timing_model, svae_model, history: "HandsHistory", user_frame, threshold: float = 0.6,
               state: HandoverState = HandoverState.HANDING_OVER, stop_distance: float = 0.12):
    """One tick of the data-driven controller.

    ``history`` holds the last ``T+1`` primary frames and robot EE frames;
    ``user_frame`` is ``(features, hand_position)`` for the current tick.
    Until the timing model fires the EE holds still; afterwards the SVAE
    generates the next position every tick, and motion halts within
    ``stop_distance`` of the user's hand.
    """
    from .svae import generate_next
    from .timing import classify, predict_likelihood

    features, hand = user_frame
    history.push_user(features)
    if not history.ready:
        raise ValueError(f"controller needs {history.T + 1} buffered frames, has {len(history.h)}")
    ee = history.r[-1, :3].copy()
    status = {"detected": history.detected, "halted": history.halted, "likelihood": None}
    if history.halted:
        history.push_robot(ee)
        return ee, status
    if not history.detected:
        if isinstance(timing_model, _TimingOracle):
            history.detected = timing_model.value
        else:
            lk = predict_likelihood(timing_model, np.asarray(history.h))
            status["likelihood"] = lk
            history.detected = classify(lk, threshold)
        status["detected"] = history.detected
    if history.detected:
        ee = generate_next(svae_model, np.asarray(history.h), history.r, int(state))
    if np.linalg.norm(np.asarray(hand) - ee) <= stop_distance and history.detected:
        history.halted = True
        status["halted"] = True
    history.push_robot(ee)
    return ee, status


class HandsHistory:
    """Rolling one-second buffers for :func:`hands_step`."""

    def __init__(self, T: int, rest_ee, ee_rotation6d):
        self.T = T
        self.h: list[np.ndarray] = []
        rot = np.asarray(ee_rotation6d, dtype=float)
        self.r = np.tile(np.concatenate([np.asarray(rest_ee, float), rot]), (T + 1, 1))
        self.held_rot = rot
        self.detected = False
        self.halted = False

    @property
    def ready(self) -> bool:
        return len(self.h) >= self.T + 1

    def push_user(self, features) -> None:
        self.h.append(np.asarray(features, dtype=float))
        if len(self.h) > self.T + 1:
            self.h.pop(0)

    def push_robot(self, position) -> None:
        self.r = np.vstack([self.r[1:], np.concatenate([position, self.held_rot])])


class _TimingOracle:
    """Stand-in timing model with a fixed answer, for tests and ablations."""

    def __init__(self, value: bool):
        self.value = value


def constant_timing(value: bool):
    """A timing 'model' that always (or never) reports a handover."""
    return _TimingOracle(value)


# --------------------------------------------------------------------------
# scripted users and episodes


@dataclass(eq=False)
class UserScript:
    features: np.ndarray  # (N, Dh) primary features, hip-normalized
    hand: np.ndarray  # (N, 3) right palm in the hip frame
    state: HandoverState
    cue_frame: int  # first frame of the scripted handover segment
    ee_rotation6d: np.ndarray
    name: str = ""

    def __len__(self) -> int:
        return len(self.features)


def scripted_user(activity: str = "Hammer a nail", seed: int = 0, pre_roll: int = 37,
                  kind: HandoverState = HandoverState.HANDING_OVER, config: SynthConfig | None = None) -> UserScript:
    """Replay the primary user of a synthetic clip, starting ``pre_roll`` frames before the cue."""
    clip = normalize_clip(synth_clip(config or SynthConfig(), activity, "sim", seed, f"sim{seed}"))
    seg = next(s for s in segment_handovers(clip) if s[2] == kind)
    begin = max(0, seg[0] - pre_roll)
    hand = clip.positions[begin:, clip.skeleton.index("r_hand")]
    return UserScript(
        features=clip.primary_features()[begin:], hand=hand, state=kind, cue_frame=seg[0] - begin,
        ee_rotation6d=matrix_to_6d(clip.ee_rotations[begin]), name=clip.name,
    )


@dataclass(eq=False)
class EpisodeLog:
    ticks: list = field(default_factory=list)
    completed: bool = False
    completion_tick: int | None = None
    path_length: float = 0.0
    mean_jerk: float = 0.0
    final_distance: float = float("nan")

    def outcome(self) -> dict:
        return {"completed": self.completed, "completion_tick": self.completion_tick,
                "path_length": self.path_length, "mean_jerk": self.mean_jerk, "final_distance": self.final_distance}

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.ticks:
                fh.write(json.dumps(t) + "\n")

    def __eq__(self, other) -> bool:
        return isinstance(other, EpisodeLog) and self.ticks == other.ticks and self.outcome() == other.outcome()


class BaselineController:
    name = "baseline"

    def __init__(self, config: ControllerConfig | None = None):
        self.config = (config or ControllerConfig()).validate(baseline=True)

    def reset(self, script: UserScript):
        self.filter, self.active, self.halted = None, False, False
        return np.asarray(self.config.rest_ee, dtype=float)

    def step(self, frame: int, script: UserScript, ee):
        nxt, st = baseline_step(self.config, self.filter, script.hand[frame], ee, self.active, self.halted)
        self.filter, self.active, self.halted = st["filter"], st["active"], st["halted"]
        return nxt, {"controller_state": "halted" if self.halted else ("active" if self.active else "idle"),
                     "handover_detected": bool(self.active), "halted": self.halted}


class HandsController:
    name = "3hands"

    def __init__(self, timing_model, svae_model, config: ControllerConfig | None = None, threshold: float = 0.6):
        self.timing_model, self.svae_model = timing_model, svae_model
        self.config = (config or ControllerConfig()).validate()
        self.threshold = threshold

    def reset(self, script: UserScript):
        T = self.svae_model.T
        self.history = HandsHistory(T, self.config.rest_ee, script.ee_rotation6d)
        for f in range(T):  # one second of buffered history before the first tick
            self.history.push_user(script.features[f])
        return np.asarray(self.config.rest_ee, dtype=float)

    @property
    def first_frame(self) -> int:
        return self.svae_model.T

    def step(self, frame: int, script: UserScript, ee):
        nxt, st = hands_step(self.timing_model, self.svae_model, self.history, (script.features[frame], script.hand[frame]),
                             self.threshold, script.state, self.config.stop_distance)
        state = "halted" if st["halted"] else ("generating" if st["detected"] else "idle")
        return nxt, {"controller_state": state, "handover_detected": bool(st["detected"]), "halted": st["halted"]}


def mean_jerk(track: np.ndarray, fps: float) -> float:
    track = np.asarray(track, dtype=float)
    if len(track) < 4:
        return 0.0
    return float(np.mean(np.linalg.norm(np.diff(track, n=3, axis=0), axis=1)) * fps**3)


def run_episode(controller, script: UserScript, ticks: int) -> EpisodeLog:
    """Step ``controller`` against ``script`` for up to ``ticks`` ticks (stops on completion)."""
    log = EpisodeLog()
    if ticks <= 0:
        return log
    ee = controller.reset(script)
    start = getattr(controller, "first_frame", 0)
    stop = controller.config.stop_distance
    fps = controller.config.tick_rate
    track = [ee.copy()]
    for k in range(ticks):
        frame = min(start + k, len(script) - 1)
        ee, info = controller.step(frame, script, ee)
        hand = script.hand[frame]
        dist = float(np.linalg.norm(hand - ee))
        track.append(np.asarray(ee, dtype=float).copy())
        log.ticks.append({
            "tick": k, "user_hand": [float(v) for v in hand], "ee": [float(v) for v in ee],
            "controller_state": info["controller_state"], "handover_detected": info["handover_detected"],
            "distance": dist,
        })
        if info["halted"] and dist <= stop:
            log.completed, log.completion_tick = True, k
            break
    track = np.array(track)
    log.path_length = float(np.sum(np.linalg.norm(np.diff(track, axis=0), axis=1)))
    log.mean_jerk = mean_jerk(track, fps)
    log.final_distance = log.ticks[-1]["distance"]
    return log


SUMMARY_COLUMNS = ("controller", "script", "completed", "completion_tick", "completion_s", "path_length",
                   "mean_jerk", "final_distance")


def write_episode(log: EpisodeLog, controller_name: str, script_name: str, out_dir, fps: float = 25.0) -> Path:
    """Write ``<controller>_<script>.jsonl`` and append a row to ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.to_jsonl(out / f"{controller_name}_{script_name}.jsonl")
    summary = out / "summary.csv"
    new = not summary.exists()
    with open(summary, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(SUMMARY_COLUMNS)
        tick = log.completion_tick
        w.writerow([controller_name, script_name, int(log.completed), "" if tick is None else tick,
                    "" if tick is None else (tick + 1) / fps, repr(log.path_length), repr(log.mean_jerk),
                    repr(log.final_distance)])
    return summary
