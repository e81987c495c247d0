"""Synthetic handover corpus built from scripted activities and minimum-jerk reaches.

Each clip follows one trial of the capture protocol: the primary user performs
an activity, signals with a reach of the right hand, the robot end-effector
travels from rest to the handover point and back (HandingOver), the user keeps
working with the object, then a second reach triggers the take-back
(TakingBack). Handover durations and handover locations follow the statistics
of the recorded dataset.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..kinematics import Skeleton, axis_rotation, euler_to_matrix, synthetic_skeleton
from .clip import ACTIVITIES, ACTIVITY_PARAMS, HandoverState, MotionClip, Possession

# hip-frame geometry (+z front, +y up, -x right)
REST_EE = np.array([-0.25, 0.0, 0.0])
ROT_FRONT = 0.5
ROT_RIGHT = 0.45
ROT_UP = 0.8
HIP_HEIGHT = 0.95
PALM_GAP = 0.07  # distance between the two palms at transfer

_HEIGHTS = {"torso": 0.30, "head": 0.62}
_DISTANCES = {"on-body": 0.16, "mid-air": 0.40}
_RANGES = {"small": (0.03, 0.7), "medium": (0.08, 1.6), "large": (0.20, 0.35)}


def minimum_jerk_profile(tau) -> np.ndarray:
    """Normalized minimum-jerk position ``10t^3 - 15t^4 + 6t^5`` on ``[0, 1]`` (clipped outside)."""
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def minimum_jerk(start, end, duration: float, fps: float = 25.0) -> np.ndarray:
    """Minimum-jerk trajectory from ``start`` to ``end``.

    Returns ``round(duration * fps) + 1`` samples including both endpoints.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    n = int(round(duration * fps))
    t = np.arange(n + 1) / fps
    s = minimum_jerk_profile(t / duration)
    return start + (end - start) * s[:, None]


def sub_seed(seed: int, *names) -> int:
    """Stable 63-bit sub-seed derived from ``(seed, *names)``."""
    key = ":".join([str(seed), *map(str, names)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


@dataclass
class SynthConfig:
    n_pairs: int = 10
    clips_per_pair: int = 10
    activity_counts: dict[str, int] | None = None  # overrides clips_per_pair when set
    fps: float = 25.0
    noise: float = 0.004  # rad, per-frame joint-angle jitter
    duration_mean: float = 2.244
    duration_std: float = 0.854
    duration_min: float = 0.8
    duration_max: float = 6.0
    idle_range: tuple[float, float] = (1.6, 2.6)  # seconds between events
    cue_lead: tuple[float, float] = (0.2, 0.4)  # user reach starts this long before the robot moves
    world_extent: float = 2.0

    def validate(self) -> None:
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.activity_counts is None and self.clips_per_pair < 1:
            raise ValueError("clips_per_pair must be >= 1")
        if self.activity_counts is not None:
            bad = set(self.activity_counts) - set(ACTIVITIES)
            if bad:
                raise ValueError(f"unknown activities {sorted(bad)}")
            if any(v < 0 for v in self.activity_counts.values()):
                raise ValueError("activity counts must be non-negative")
        if self.fps <= 0 or self.noise < 0 or self.duration_std < 0:
            raise ValueError("fps must be positive; noise and duration_std non-negative")
        if not 0 < self.duration_min <= self.duration_max:
            raise ValueError("need 0 < duration_min <= duration_max")

    def plan(self) -> list[tuple[str, str]]:
        """``(pair_id, activity)`` for every clip, in generation order."""
        pairs = [f"P{i + 1:02d}" for i in range(self.n_pairs)]
        if self.activity_counts is not None:
            seq = [a for a in ACTIVITIES for _ in range(self.activity_counts.get(a, 0))]
            return [(pairs[k % len(pairs)], a) for k, a in enumerate(seq)]
        return [
            (p, ACTIVITIES[(pi * self.clips_per_pair + k) % len(ACTIVITIES)])
            for pi, p in enumerate(pairs)
            for k in range(self.clips_per_pair)
        ]


def sample_durations(cfg: SynthConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.normal(cfg.duration_mean, cfg.duration_std, size=n)
    return np.clip(d, cfg.duration_min, cfg.duration_max)


def in_rot_region(p: np.ndarray) -> bool:
    """Inside the hemispherical handover envelope (hip frame)."""
    front, right, up = p[2], -p[0], p[1]
    return (
        0.0 <= front <= ROT_FRONT
        and -0.05 <= right <= ROT_RIGHT
        and 0.0 <= up <= ROT_UP
        and (front / ROT_FRONT) ** 2 + (max(right, 0.0) / ROT_RIGHT) ** 2 <= 1.0
    )


# --------------------------------------------------------------------------
# body model helpers


class _Body:
    """Arm IK on the synthetic skeleton, in the hip frame with a neutral trunk."""

    def __init__(self, skeleton: Skeleton):
        self.sk = skeleton
        self.rest = np.zeros((len(skeleton), 3))
        # arms hanging down
        self.rest[skeleton.index("l_shoulder"), 2] = -np.pi / 2 + 0.1
        self.rest[skeleton.index("r_shoulder"), 2] = np.pi / 2 - 0.1
        self._chains = {}
        for side in "lr":
            chain, j = [], skeleton.index(f"{side}_hand")
            while j >= 0:
                chain.append(j)
                j = skeleton.parents[j]
            self._chains[side] = chain[::-1]

    def palm(self, angles: np.ndarray, side: str = "r") -> np.ndarray:
        """Palm position for a pose with the hip at the origin, facing +z."""
        pos, rot = np.zeros(3), np.eye(3)
        for j in self._chains[side]:
            pos = pos + rot @ self.sk.offsets[j]
            rot = rot @ euler_to_matrix(angles[j], self.sk.joints[j].order)
        return pos

    def solve(self, target, side: str = "r", seed_angles=None) -> tuple[np.ndarray, float]:
        """Shoulder (3) + elbow (1) angles placing the palm at ``target``."""
        sh = self.sk.index(f"{side}_shoulder")
        el = self.sk.index(f"{side}_elbow")
        base = self.rest.copy() if seed_angles is None else seed_angles.copy()
        lo = np.r_[self.sk.lower[sh], self.sk.lower[el, 1]]
        hi = np.r_[self.sk.upper[sh], self.sk.upper[el, 1]]
        x0 = np.clip(np.r_[base[sh], base[el, 1]], lo + 1e-6, hi - 1e-6)
        sign = 1.0 if side == "l" else -1.0
        x0[3] = np.clip(-sign * 1.2, lo[3] + 1e-6, hi[3] - 1e-6)
        target = np.asarray(target, dtype=float)

        # the chain above the shoulder and below the elbow does not move during the solve
        chain = self._chains[side]
        k_sh = chain.index(sh)
        pos0, rot0 = np.zeros(3), np.eye(3)
        for j in chain[:k_sh]:
            pos0 = pos0 + rot0 @ self.sk.offsets[j]
            rot0 = rot0 @ euler_to_matrix(base[j], self.sk.joints[j].order)
        tail_pos, tail_rot = np.zeros(3), np.eye(3)
        for j in chain[k_sh + 2 :]:
            tail_pos = tail_pos + tail_rot @ self.sk.offsets[j]
            tail_rot = tail_rot @ euler_to_matrix(base[j], self.sk.joints[j].order)
        order_sh = self.sk.joints[sh].order

        def palm_of(x):
            r_sh = rot0 @ euler_to_matrix(x[:3], order_sh)
            p_el = pos0 + rot0 @ self.sk.offsets[sh] + r_sh @ self.sk.offsets[el]
            r_el = r_sh @ _rot_y(x[3])
            return p_el + r_el @ tail_pos

        def residual(x):
            # mild preference for a natural pose keeps solutions unique
            return np.r_[palm_of(x) - target, 0.02 * (x[:3] - x0[:3])]

        sol = least_squares(residual, x0, bounds=(lo, hi), xtol=1e-10, ftol=1e-10)
        out = base.copy()
        out[sh] = sol.x[:3]
        out[el, 1] = sol.x[3]
        return out, float(np.linalg.norm(self.palm(out, side) - target))


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


_BODY: _Body | None = None


def _body() -> _Body:
    global _BODY
    if _BODY is None:
        _BODY = _Body(synthetic_skeleton())
    return _BODY


@dataclass
class ActivityScript:
    """Joint-angle program for one activity: oscillation between two arm keyframes."""

    name: str
    right_a: np.ndarray
    right_b: np.ndarray
    left_a: np.ndarray
    left_b: np.ndarray
    freq: float
    phase: float
    trunk_amp: float

    def angles(self, t: np.ndarray, body: _Body) -> np.ndarray:
        """Joint angles ``(len(t), J, 3)`` at times ``t`` (seconds)."""
        sk = body.sk
        w = 0.5 - 0.5 * np.cos(2 * np.pi * self.freq * t + self.phase)
        wl = 0.5 - 0.5 * np.cos(2 * np.pi * self.freq * 0.5 * t + self.phase + 1.0)
        out = body.rest[None].repeat(len(t), 0)
        for side, a, b, ww in (("r", self.right_a, self.right_b, w), ("l", self.left_a, self.left_b, wl)):
            for name in (f"{side}_shoulder", f"{side}_elbow"):
                j = sk.index(name)
                out[:, j] = a[j] + (b[j] - a[j]) * ww[:, None]
        for k, name in enumerate(("spine", "spine1", "chest", "neck", "head")):
            j = sk.index(name)
            out[:, j, 0] += self.trunk_amp * np.sin(2 * np.pi * 0.3 * t + k + self.phase)
            out[:, j, 1] += self.trunk_amp * np.sin(2 * np.pi * 0.2 * t + 2 * k)
        return out


def make_activity(name: str, rng: np.random.Generator) -> ActivityScript:
    body = _body()
    params = ACTIVITY_PARAMS[name]
    if params is None:
        rest = body.rest
        return ActivityScript(name, rest, rest, rest, rest, 0.25, rng.uniform(0, 2 * np.pi), 0.01)
    height, distance, motion = params
    amp, freq = _RANGES[motion]
    y = _HEIGHTS[height] + rng.normal(0, 0.02)
    z = _DISTANCES[distance] + rng.normal(0, 0.02)
    center_r = np.array([-0.12, y, z])
    center_l = np.array([0.14, y - 0.05, z - 0.02])
    sweep = np.array([amp, 0.5 * amp, 0.2 * amp])
    ra, _ = body.solve(center_r - sweep, "r")
    rb, _ = body.solve(center_r + sweep, "r", ra)
    la, _ = body.solve(center_l - 0.3 * sweep, "l")
    lb, _ = body.solve(center_l + 0.3 * sweep, "l", la)
    return ActivityScript(
        name, ra, rb, la, lb,
        freq=freq * rng.uniform(0.85, 1.15),
        phase=rng.uniform(0, 2 * np.pi),
        trunk_amp=0.03,
    )


def sample_handover_point(rng: np.random.Generator, body: _Body, max_tries: int = 200):
    """Sample a reachable handover location.

    Returns ``(rot_position, primary_palm, robot_palm, reach_angles)`` in the
    hip frame; the primary palm is the IK-reached one, the robot palm sits
    ``PALM_GAP`` away on the robot's side.
    """
    for _ in range(max_tries):
        p = np.array([
            -rng.uniform(-0.05, ROT_RIGHT),
            rng.uniform(0.0, ROT_UP),
            rng.uniform(0.05, ROT_FRONT),
        ])
        if not in_rot_region(p):
            continue
        gap_dir = np.array([-0.8, -0.45, 0.2]) + rng.normal(0, 0.15, 3)
        gap_dir /= np.linalg.norm(gap_dir)
        target = p - 0.5 * PALM_GAP * gap_dir
        angles, err = body.solve(target, "r")
        if err > 0.005:
            continue
        palm = body.palm(angles, "r")
        robot = palm + PALM_GAP * gap_dir
        rot = 0.5 * (palm + robot)
        if in_rot_region(rot):
            return rot, palm, robot, angles
    raise RuntimeError("could not sample a reachable handover point")


# --------------------------------------------------------------------------
# clip generation


def _segment_frames(duration: float, fps: float) -> int:
    return max(int(round(duration * fps)), 2)


def synth_clip(cfg: SynthConfig, activity: str, pair_id: str, seed: int, name: str = "") -> MotionClip:
    """Generate a single annotated clip (deterministic in ``seed``)."""
    rng = np.random.default_rng(seed)
    body = _body()
    sk = body.sk
    fps = cfg.fps
    script = make_activity(activity, rng)

    durations = sample_durations(cfg, rng, 2)
    idles = rng.uniform(*cfg.idle_range, size=3)
    seg_frames = [_segment_frames(d, fps) for d in durations]
    idle_frames = [int(round(i * fps)) for i in idles]
    starts = [idle_frames[0], idle_frames[0] + seg_frames[0] + idle_frames[1]]
    n = starts[1] + seg_frames[1] + idle_frames[2]
    t = np.arange(n) / fps

    angles = script.angles(t, body)
    ee_hip = np.repeat(REST_EE[None], n, 0)
    ee_angle = np.zeros(n)
    states = np.full(n, HandoverState.IDLE, dtype=np.int8)
    possession = np.full(n, Possession.ROBOT, dtype=np.int8)
    tis = np.zeros(n)
    rots = []

    for k, kind in enumerate((HandoverState.HANDING_OVER, HandoverState.TAKING_BACK)):
        rot, palm, robot_palm, reach = sample_handover_point(rng, body)
        rots.append(rot)
        s0, m = starts[k], seg_frames[k]
        dur = m / fps
        lead = rng.uniform(*cfg.cue_lead)
        reach_dur = 0.45 * dur
        hold = 0.10 * dur
        back_dur = dur - reach_dur - hold
        tt = t - t[s0]  # seconds since the robot starts moving
        # robot end-effector: rest -> robot palm -> rest
        go = minimum_jerk_profile(tt / reach_dur)
        ret = minimum_jerk_profile((tt - reach_dur - hold) / back_dur)
        blend = np.where(tt < reach_dur + hold, go, 1.0 - ret)
        inside = (tt >= 0) & (tt <= dur)
        ee_hip[inside] = REST_EE + (robot_palm - REST_EE) * blend[inside, None]
        rot_angle = rng.uniform(0.4, 1.0)
        ee_angle[inside] = rot_angle * blend[inside]
        # primary right arm: activity -> reach pose -> activity
        arm_go = minimum_jerk_profile((tt + lead) / (reach_dur + lead))
        arm_ret = minimum_jerk_profile((tt - reach_dur - hold) / back_dur)
        arm = np.where(tt < reach_dur + hold, arm_go, 1.0 - arm_ret)
        active = (tt >= -lead) & (tt <= dur)
        for joint in ("r_shoulder", "r_elbow"):
            j = sk.index(joint)
            angles[active, j] += (reach[j] - angles[active, j]) * arm[active, None]
        # annotations
        seg = slice(s0, s0 + m)
        states[seg] = kind
        tis[seg] = np.arange(m) / fps
        transfer = s0 + int(round((reach_dur + 0.5 * hold) * fps))
        if kind == HandoverState.HANDING_OVER:
            possession[s0:transfer] = Possession.ROBOT
            possession[transfer:] = Possession.PRIMARY
        else:
            possession[s0:transfer] = Possession.PRIMARY
            possession[transfer:] = Possession.ROBOT
    # user holds the object between the two segments
    possession[starts[0] + seg_frames[0] : starts[1]] = Possession.PRIMARY

    angles += rng.normal(0.0, cfg.noise, size=angles.shape) * sk.dof_mask
    angles = np.clip(angles, sk.lower, sk.upper)

    # world placement with slight hip sway
    yaw0 = rng.uniform(-np.pi, np.pi)
    origin = np.array([rng.uniform(-1, 1) * cfg.world_extent, HIP_HEIGHT, rng.uniform(-1, 1) * cfg.world_extent])
    base = axis_rotation("Y", yaw0)
    sway_yaw = 0.03 * np.sin(2 * np.pi * 0.15 * t + rng.uniform(0, 6))
    sway_pos = 0.01 * np.stack([np.sin(2 * np.pi * 0.2 * t), 0 * t, np.cos(2 * np.pi * 0.17 * t)], -1)
    root_rot = base @ axis_rotation("Y", sway_yaw) @ axis_rotation("X", 0.02 * np.sin(2 * np.pi * 0.1 * t))
    root_pos = origin + sway_pos @ base.T
    ee_world = origin + ee_hip @ base.T
    ee_rot = base @ axis_rotation("Z", ee_angle)

    return MotionClip(
        skeleton=sk,
        fps=fps,
        root_positions=root_pos,
        root_rotations=root_rot,
        joint_angles=angles,
        ee_positions=ee_world,
        ee_rotations=ee_rot,
        states=states,
        possession=possession,
        time_in_segment=tis,
        activity=activity,
        pair_id=pair_id,
        name=name,
        meta={"rot_positions_hip": [r.tolist() for r in rots], "seed": seed},
    )


def synth_corpus(config: SynthConfig | None = None, seed: int = 0) -> list[MotionClip]:
    """Annotated synthetic corpus; clip ``k`` uses sub-seed ``(seed, 'clip', k)``."""
    cfg = config or SynthConfig()
    cfg.validate()
    return [
        synth_clip(cfg, activity, pair, sub_seed(seed, "clip", k), name=f"clip{k:04d}")
        for k, (pair, activity) in enumerate(cfg.plan())
    ]
