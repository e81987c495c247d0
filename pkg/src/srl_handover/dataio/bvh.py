"""Parser for the common BVH subset (HIERARCHY + MOTION)."""

from __future__ import annotations

import logging
import re

import numpy as np

from ..kinematics import AXES, JointSpec, Skeleton, euler_to_matrix, forward_kinematics_batch
from .clip import MotionClip

logger = logging.getLogger(__name__)

_CHANNEL = re.compile(r"^([XYZ])(position|rotation)$")
_WIDE = (-2 * np.pi, 2 * np.pi)


class BVHParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class _Tokens:
    def __init__(self, text: str):
        self.items = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, self.last_line)

    @property
    def last_line(self):
        return self.items[-1][1] if self.items else 0

    def next(self, expected: str | None = None):
        tok, line = self.peek()
        if tok is None:
            raise BVHParseError(f"unexpected end of file (expected {expected or 'more input'})", line)
        if expected is not None and tok != expected:
            raise BVHParseError(f"expected {expected!r}, found {tok!r}", line)
        self.pos += 1
        return tok, line

    def number(self, what: str) -> float:
        tok, line = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BVHParseError(f"expected a number for {what}, found {tok!r}", line) from None


def parse_bvh(text: str, scale: float = 0.01, include_end_sites: bool = False):
    """Parse BVH text into a skeleton and an (all-Idle) motion clip.

    Parameters
    ----------
    text : str
        BVH document.
    scale : float
        Multiplier applied to offsets and position channels; the default
        converts centimeters to meters.
    include_end_sites : bool
        Add every ``End Site`` as a zero-DoF leaf joint named ``<parent>_end``.

    Returns
    -------
    skeleton : Skeleton
    clip : MotionClip
        Root channels go to ``root_positions``/``root_rotations``; the robot
        end-effector track is left at the origin (see :func:`attach_robot`).
    """
    tok = _Tokens(text)
    tok.next("HIERARCHY")
    kind, line = tok.next()
    if kind != "ROOT":
        raise BVHParseError(f"expected 'ROOT', found {kind!r}", line)

    joints: list[dict] = []
    _parse_joint(tok, joints, parent=None, include_end_sites=include_end_sites)
    tok.next("MOTION")
    tok.next("Frames:")
    tok_frames, line_frames = tok.next()
    try:
        n_frames = int(tok_frames)
    except ValueError:
        raise BVHParseError(f"frame count {tok_frames!r} is not an integer", line_frames) from None
    tok.next("Frame")
    tok.next("Time:")
    frame_time = tok.number("Frame Time")
    if frame_time <= 0:
        raise BVHParseError("Frame Time must be positive", tok.items[tok.pos - 1][1])

    n_channels = sum(len(j["channels"]) for j in joints)
    values = []
    while tok.peek()[0] is not None:
        values.append(tok.number("channel value"))
    if n_channels == 0:
        raise BVHParseError("hierarchy declares no channels", line_frames)
    if len(values) != n_frames * n_channels:
        actual = len(values) // n_channels
        partial = " plus a partial frame" if len(values) % n_channels else ""
        raise BVHParseError(
            f"expected {n_frames} frames of {n_channels} channels, found {actual}{partial}",
            tok.last_line,
        )
    data = np.asarray(values, dtype=float).reshape(n_frames, n_channels)

    specs = []
    for j in joints:
        rot_axes = [a for a, kind in j["channels"] if kind == "rotation"]
        order = "".join(rot_axes) if len(rot_axes) == 3 else "ZXY"
        dof = {} if j["parent"] is None else {a: _WIDE for a in rot_axes}
        specs.append(JointSpec(j["name"], j["parent"], tuple(np.asarray(j["offset"]) * scale), dof, order))
    skeleton = Skeleton(specs)

    root_pos = np.zeros((n_frames, 3))
    root_rot = np.broadcast_to(np.eye(3), (n_frames, 3, 3)).copy()
    angles = np.zeros((n_frames, len(joints), 3))
    col = 0
    for ji, j in enumerate(joints):
        euler = np.zeros((n_frames, 3))
        for axis, kind in j["channels"]:
            k = AXES.index(axis)
            if kind == "position":
                if j["parent"] is None:
                    root_pos[:, k] = data[:, col] * scale
                elif np.any(data[:, col] != 0):
                    logger.warning("ignoring position channel %sposition on joint %s", axis, j["name"])
            else:
                euler[:, k] = np.deg2rad(data[:, col])
            col += 1
        if j["parent"] is None:
            root_rot = euler_to_matrix(euler, specs[0].order)
        else:
            angles[:, ji] = euler
    angles = skeleton.clamp(angles)

    clip = MotionClip.idle(skeleton, float(round(1.0 / frame_time)), root_pos, root_rot, angles)
    return skeleton, clip


def _parse_joint(tok: _Tokens, joints: list, parent, include_end_sites: bool) -> None:
    name, line = tok.next()
    index = len(joints)
    tok.next("{")
    tok.next("OFFSET")
    offset = [tok.number("OFFSET") for _ in range(3)]
    tok.next("CHANNELS")
    count_tok, line = tok.next()
    try:
        count = int(count_tok)
    except ValueError:
        raise BVHParseError(f"channel count {count_tok!r} is not an integer", line) from None
    channels = []
    for _ in range(count):
        ch, line = tok.next()
        m = _CHANNEL.match(ch)
        if not m:
            raise BVHParseError(f"unsupported channel {ch!r}", line)
        channels.append((m.group(1), m.group(2)))
    joints.append({"name": name, "parent": parent, "offset": offset, "channels": channels})

    while True:
        key, line = tok.next()
        if key == "}":
            return
        if key == "JOINT":
            _parse_joint(tok, joints, index, include_end_sites)
        elif key == "End":
            tok.next("Site")
            tok.next("{")
            tok.next("OFFSET")
            end_offset = [tok.number("End Site OFFSET") for _ in range(3)]
            tok.next("}")
            if include_end_sites:
                joints.append({"name": f"{name}_end", "parent": index, "offset": end_offset, "channels": []})
        else:
            raise BVHParseError(f"expected 'JOINT', 'End Site' or '}}', found {key!r}", line)


def attach_robot(primary: MotionClip, robot: MotionClip, hand_joint: str = "RightHand") -> MotionClip:
    """Use the robot participant's ``hand_joint`` as the end-effector track of ``primary``.

    Only the hand is consumed; the rest of the robot participant's body is
    discarded.
    """
    if len(robot) != len(primary):
        raise ValueError(f"robot clip has {len(robot)} frames, primary has {len(primary)}")
    j = robot.skeleton.index(hand_joint)
    pos, rot = forward_kinematics_batch(
        robot.skeleton, robot.root_positions, robot.root_rotations, robot.joint_angles,
        return_rotations=True,
    )
    return primary.replace(ee_positions=pos[:, j], ee_rotations=rot[:, j])
