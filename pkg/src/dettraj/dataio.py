"""Trajectory files, detection windows and target centering.

A ``TrajectorySequence`` holds identity-annotated positions sorted by
(frame, pedestrian). Windows turn it into what the forecaster sees: sets of
timestamped detections with no identity, translated so the target's last
observed detection is the origin.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class TrajectorySequence:
    frame_ids: np.ndarray
    ped_ids: np.ndarray
    xy: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.frame_ids = np.asarray(self.frame_ids, dtype=np.int64)
        self.ped_ids = np.asarray(self.ped_ids, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        order = np.lexsort((self.ped_ids, self.frame_ids))
        self.frame_ids, self.ped_ids, self.xy = self.frame_ids[order], self.ped_ids[order], self.xy[order]
        if len(self.frame_ids) != len(self.xy) or len(self.ped_ids) != len(self.xy):
            raise DataError("frame_ids, ped_ids and xy must have equal length")
        dup = (np.diff(self.frame_ids) == 0) & (np.diff(self.ped_ids) == 0)
        if np.any(dup):
            raise DataError("duplicate (frame_id, ped_id) entries")
        if not np.all(np.isfinite(self.xy)):
            raise DataError("non-finite positions")

    def __len__(self):
        return len(self.xy)

    @property
    def frames(self):
        """Unique frame ids in increasing order."""
        return np.unique(self.frame_ids)

    def frame_table(self):
        """Map frame_id -> (ped_ids, positions)."""
        uniq, starts = np.unique(self.frame_ids, return_index=True)
        ends = list(starts[1:]) + [len(self.frame_ids)]
        return {int(f): (self.ped_ids[s:e], self.xy[s:e]) for f, s, e in zip(uniq, starts, ends)}


def _fmt(v):
    s = f"{v + 0.0:.6f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    return "0.0" if s == "-0.0" else s


def save_tsv(seq, path):
    lines = [f"{f} {p} {_fmt(x)} {_fmt(y)}\n" for f, p, (x, y) in zip(seq.frame_ids, seq.ped_ids, seq.xy)]
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def load_tsv(path):
    """Parse ``frame_id ped_id x y`` lines (whitespace separated)."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed line {line.strip()!r}") from None
    if not rows:
        raise DataError(f"{path}: empty sequence")
    arr = np.array(rows, dtype=object)
    name = os.path.splitext(os.path.basename(path))[0]
    return TrajectorySequence(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                              arr[:, 2:].astype(np.float64), name)


@dataclass
class DetectionWindow:
    """Detections over ``T_obs`` frames for one target, flattened token-wise.

    ``positions[k]`` was observed at frame ``time_index[k]`` (1..T_obs).
    ``id_labels`` is a side channel for pretext supervision and baselines; the
    forecaster never reads it.
    """

    positions: np.ndarray
    time_index: np.ndarray
    target_last_position: np.ndarray
    T_obs: int
    T_pred: int
    Y: np.ndarray | None = None
    future_detections: list = field(default_factory=list)
    id_labels: np.ndarray | None = None
    target_id: int = -1
    target_index: int = -1
    target_past: np.ndarray | None = None
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    seq_name: str = ""
    start_frame: int = 0

    @property
    def X(self):
        return [self.positions[self.time_index == t] for t in range(1, self.T_obs + 1)]

    def __len__(self):
        return len(self.positions)


def make_windows(seq, T_obs, T_pred, stride=1, mode="full"):
    """One window per (start frame, target) pair.

    ``mode="full"`` requires the target at the last observed frame and at every
    future frame; ``mode="weak"`` only at the last observed frame.
    """
    if T_obs < 1 or T_pred < 1 or stride < 1:
        raise ValueError("T_obs, T_pred and stride must be >= 1")
    if mode not in ("full", "weak"):
        raise ValueError(f"unknown window mode {mode!r}")
    frames = seq.frames
    table = seq.frame_table()
    span = T_obs + T_pred
    out = []
    for s in range(0, len(frames) - span + 1, stride):
        obs = frames[s:s + T_obs]
        fut = frames[s + T_obs:s + span]
        pos = np.concatenate([table[int(f)][1] for f in obs])
        ids = np.concatenate([table[int(f)][0] for f in obs])
        tix = np.concatenate([np.full(len(table[int(f)][0]), t + 1) for t, f in enumerate(obs)])
        last_ids, last_xy = table[int(obs[-1])]
        future = [table[int(f)][1].copy() for f in fut]
        for k, pid in enumerate(last_ids):
            Y = None
            fut_pos = []
            for f in fut:
                pids, fxy = table[int(f)]
                hit = np.flatnonzero(pids == pid)
                if len(hit):
                    fut_pos.append(fxy[hit[0]])
            if len(fut_pos) == T_pred:
                Y = np.array(fut_pos)
            elif mode == "full":
                continue
            past = np.full((T_obs, 2), np.nan)
            for t, f in enumerate(obs):
                pids, fxy = table[int(f)]
                hit = np.flatnonzero(pids == pid)
                if len(hit):
                    past[t] = fxy[hit[0]]
            tgt = int(np.flatnonzero((tix == T_obs) & (ids == pid))[0])
            out.append(DetectionWindow(
                positions=pos.copy(), time_index=tix.copy(), target_last_position=last_xy[k].copy(),
                T_obs=T_obs, T_pred=T_pred, Y=Y, future_detections=[d.copy() for d in future],
                id_labels=ids.copy(), target_id=int(pid), target_index=tgt, target_past=past,
                seq_name=seq.name, start_frame=int(obs[0]),
            ))
    return out


def center_on_target(w):
    """Translate everything by -target_last_position; the shift accumulates in ``offset``."""
    c = np.asarray(w.target_last_position, dtype=np.float64)
    return replace(
        w,
        positions=w.positions - c,
        target_last_position=np.zeros(2),
        Y=None if w.Y is None else w.Y - c,
        future_detections=[d - c for d in w.future_detections],
        target_past=None if w.target_past is None else w.target_past - c,
        offset=w.offset + c,
    )


def strip_ids(w, seed=0):
    """Shuffle detections within each frame so order carries no identity.

    Ids stay available in ``id_labels`` (permuted along) for pretext targets.
    """
    if w.id_labels is None:
        raise ValueError("strip_ids: window has no id labels")
    rng = np.random.default_rng(seed)
    perm = np.concatenate([rng.permutation(np.flatnonzero(w.time_index == t))
                           for t in range(1, w.T_obs + 1)]).astype(np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return replace(
        w,
        positions=w.positions[perm],
        time_index=w.time_index[perm],
        id_labels=w.id_labels[perm],
        target_index=int(inv[w.target_index]) if w.target_index >= 0 else -1,
    )


def prepare(w, seed=0):
    """Center then strip ids: the model-ready form of a raw window."""
    return strip_ids(center_on_target(w), seed)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    few_shot_frac: float = 1.0

    def __post_init__(self):
        if not 0 < self.few_shot_frac <= 1:
            raise ValueError("few_shot_frac must be in (0, 1]")
        if set(self.train) & set(self.val) or set(self.train) & set(self.test) or set(self.val) & set(self.test):
            raise ValueError("splits must be disjoint")


def split_paths(paths, val_frac=0.1, test_frac=0.2, seed=0, few_shot_frac=1.0):
    paths = sorted(paths)
    perm = np.random.default_rng(seed).permutation(len(paths))
    n_test = int(round(test_frac * len(paths)))
    n_val = int(round(val_frac * len(paths)))
    test = [paths[i] for i in perm[:n_test]]
    val = [paths[i] for i in perm[n_test:n_test + n_val]]
    train = [paths[i] for i in perm[n_test + n_val:]]
    return DatasetSplit(train, val, test, few_shot_frac)


def few_shot(windows, frac, seed=0):
    """Seeded uniform subset of windows (at least one when any exist)."""
    if not 0 < frac <= 1:
        raise ValueError("few-shot fraction must be in (0, 1]")
    if frac == 1 or not windows:
        return list(windows)
    n = max(1, int(round(frac * len(windows))))
    idx = np.sort(np.random.default_rng(seed).choice(len(windows), size=n, replace=False))
    return [windows[i] for i in idx]


def load_dir(directory):
    names = sorted(f for f in os.listdir(directory) if f.endswith(".tsv"))
    return [load_tsv(os.path.join(directory, f)) for f in names]
