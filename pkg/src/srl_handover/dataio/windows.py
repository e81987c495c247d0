"""Fixed-length model windows and participant-level splits."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .clip import HandoverState, MotionClip, normalize_clip

DEFAULT_T = 25


class ClipTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MotionWindow:
    h_seen: np.ndarray  # (T+1, Dh) frames t-T .. t
    h_future: np.ndarray  # (T, Dh) frames t+1 .. t+T
    r_seen: np.ndarray  # (T+1, 9)
    r_future: np.ndarray  # (T, 9)
    state: HandoverState
    target_next_ee: np.ndarray  # (3,) robot EE position at t+1
    center: int = 0
    clip_index: int = 0

    @property
    def h_full(self) -> np.ndarray:
        return np.concatenate([self.h_seen, self.h_future])

    @property
    def r_full(self) -> np.ndarray:
        return np.concatenate([self.r_seen, self.r_future])


class WindowSet(Sequence):
    """Windows over one or more normalized clips, stored without duplication.

    Frame features of all clips are concatenated once; a window is addressed
    by the global index of its center frame. ``batch`` gathers many windows
    as stacked arrays for training. With ``future=False`` only the past
    ``T+1`` frames are required, so centers run ``T .. len-1``.
    """

    def __init__(self, clips: Sequence[MotionClip], T: int = DEFAULT_T, stride: int = 1,
                 center_filter=None, future: bool = True):
        if T < 1:
            raise ValueError("T must be >= 1")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.T = T
        self.future = future
        need = 2 * T + 2 if future else T + 1
        self.clips = [normalize_clip(c) for c in clips]
        h, r, s, starts = [], [], [], []
        centers, owners, local = [], [], []
        offset = 0
        for ci, clip in enumerate(self.clips):
            n = len(clip)
            if n < need:
                raise ClipTooShortError(
                    f"clip {clip.name or ci!r} has {n} frames; windows with T={T} need at least {need}"
                )
            h.append(clip.primary_features())
            r.append(clip.robot_features())
            s.append(np.asarray(clip.states, dtype=np.int64))
            starts.append(offset)
            c = np.arange(T, n - T - 1 if future else n, stride)
            if center_filter is not None:
                c = c[center_filter(clip, c)]
            centers.append(offset + c)
            owners.append(np.full(len(c), ci))
            local.append(c)
            offset += n
        self.h = np.concatenate(h).astype(np.float64)
        self.r = np.concatenate(r).astype(np.float64)
        self.states = np.concatenate(s)
        self.clip_starts = np.array(starts)
        self.centers = np.concatenate(centers).astype(np.int64)
        self.clip_ids = np.concatenate(owners).astype(np.int64)
        self.local_centers = np.concatenate(local).astype(np.int64)

    def __len__(self) -> int:
        return len(self.centers)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if not self.future:
            raise TypeError("past-only window sets have no future frames; use batch(..., future=False)")
        c = int(self.centers[i])
        T = self.T
        return MotionWindow(
            h_seen=self.h[c - T : c + 1],
            h_future=self.h[c + 1 : c + T + 1],
            r_seen=self.r[c - T : c + 1],
            r_future=self.r[c + 1 : c + T + 1],
            state=HandoverState(int(self.states[c])),
            target_next_ee=self.r[c + 1, :3],
            center=int(self.local_centers[i]),
            clip_index=int(self.clip_ids[i]),
        )

    @property
    def h_dim(self) -> int:
        return self.h.shape[1]

    def gather(self, centers: np.ndarray, start: int, stop: int, which: str = "h") -> np.ndarray:
        """Frames ``center+start .. center+stop-1`` for each global center: ``(B, stop-start, D)``."""
        src = self.h if which == "h" else self.r
        idx = np.asarray(centers)[:, None] + np.arange(start, stop)[None, :]
        return src[idx]

    def batch(self, indices, future: bool = True) -> dict[str, np.ndarray]:
        """Stacked arrays for the windows at ``indices``."""
        c = self.centers[np.asarray(indices)]
        T = self.T
        out = {
            "h_seen": self.gather(c, -T, 1, "h"),
            "r_seen": self.gather(c, -T, 1, "r"),
            "state": self.states[c],
        }
        if self.future:
            out["target"] = self.r[c + 1, :3]
        if future and self.future:
            out["h_full"] = self.gather(c, -T, T + 1, "h")
            out["r_full"] = self.gather(c, -T, T + 1, "r")
        return out


def make_windows(clip: MotionClip, T: int = DEFAULT_T, stride: int = 1) -> WindowSet:
    """All windows of one clip, centers ``T .. len-T-2`` (every ``stride`` frames)."""
    return WindowSet([clip], T=T, stride=stride)


def participant_split(corpus: Sequence[MotionClip], test_pair_ids) -> tuple[list, list]:
    """Partition clips by participant pair."""
    test_pair_ids = set(test_pair_ids)
    known = {c.pair_id for c in corpus}
    unknown = test_pair_ids - known
    if unknown:
        raise LookupError(f"unknown participant pair ids: {sorted(unknown)}")
    train = [c for c in corpus if c.pair_id not in test_pair_ids]
    test = [c for c in corpus if c.pair_id in test_pair_ids]
    return train, test


def choose_test_pairs(corpus: Sequence[MotionClip], n_pairs: int = 2, seed: int = 0) -> list[str]:
    """Randomly pick ``n_pairs`` participant pairs to hold out."""
    pairs = sorted({c.pair_id for c in corpus})
    if n_pairs > len(pairs):
        raise ValueError(f"cannot hold out {n_pairs} of {len(pairs)} pairs")
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(pairs, size=n_pairs, replace=False).tolist())
