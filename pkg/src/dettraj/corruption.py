"""Perception errors: miss-detections, localization noise and identity switches.

Detections are handled as flat ``(n, 2)`` arrays (one row per detection, as
in ``DetectionWindow.positions``). Every function takes a seed or a numpy
``Generator`` so corrupted inputs are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import TrajectorySequence


@dataclass
class CorruptionRecord:
    X_corrupt: np.ndarray
    mask: np.ndarray
    noise: np.ndarray
    noised: np.ndarray
    params: dict = field(default_factory=dict)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _protect(n, protect):
    keep = np.zeros(n, dtype=bool)
    if protect is not None:
        keep[np.atleast_1d(protect)[np.atleast_1d(protect) >= 0]] = True
    return keep


def _check_ratio(name, r):
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {r}")


def mask_detections(X, ratio, rng, protect=None):
    """Zero each detection independently with probability ``ratio``."""
    _check_ratio("ratio", ratio)
    X = np.asarray(X, dtype=np.float64)
    draw = _rng(rng).random(len(X))
    mask = (draw < ratio) & ~_protect(len(X), protect)
    Xc = np.where(mask[:, None], 0.0, X)
    return CorruptionRecord(Xc, mask, np.zeros_like(X), np.zeros(len(X), dtype=bool),
                            {"p_mask": ratio})


def add_localization_noise(X, ratio, sigma, rng, protect=None):
    """Add N(0, sigma^2) per coordinate to each detection with probability ``ratio``."""
    _check_ratio("ratio", ratio)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    g = _rng(rng)
    sel = (g.random(len(X)) < ratio) & ~_protect(len(X), protect)
    eps = g.normal(0.0, 1.0, size=X.shape) * sigma
    noise = np.where(sel[:, None], eps, 0.0)
    Xc = X + noise
    return CorruptionRecord(Xc, np.zeros(len(X), dtype=bool), Xc - X, sel & (sigma > 0),
                            {"p_noise": ratio, "sigma": sigma})


def sub_rngs(seed):
    """Independent generators for (noise, mask, switch) derived from one seed."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(3)
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def corrupt_combined(X, params, seed, protect=None):
    """Noise first, then masking; a masked detection is (0, 0) with zero noise."""
    p_noise = params.get("p_noise", 0.0)
    p_mask = params.get("p_mask", 0.0)
    sigma = params.get("sigma", 0.5)
    r_noise, r_mask, _ = sub_rngs(seed)
    nz = add_localization_noise(X, p_noise, sigma, r_noise, protect)
    mk = mask_detections(nz.X_corrupt, p_mask, r_mask, protect)
    noise = np.where(mk.mask[:, None], 0.0, nz.noise)
    return CorruptionRecord(mk.X_corrupt, mk.mask, noise, nz.noised & ~mk.mask,
                            {"p_noise": p_noise, "p_mask": p_mask, "sigma": sigma})


def corrupt_for_training(X, p_c, sigma, rng, protect=None, kinds=("mask", "noise")):
    """Corrupt each detection with probability ``p_c``; a fair coin picks mask or noise.

    ``kinds`` restricts the corruption to the pretext tasks being trained: with
    one kind every hit gets it, with none the input stays clean. The same
    random draws are consumed either way.
    """
    _check_ratio("p_c", p_c)
    unknown = set(kinds) - {"mask", "noise"}
    if unknown:
        raise ValueError(f"unknown corruption kind(s) {sorted(unknown)}")
    X = np.asarray(X, dtype=np.float64)
    g = _rng(rng)
    n = len(X)
    hit = (g.random(n) < p_c) & ~_protect(n, protect)
    coin = g.random(n) < 0.5
    eps = g.normal(0.0, 1.0, size=X.shape) * sigma
    if "mask" not in kinds:
        coin[:] = False
    elif "noise" not in kinds:
        coin[:] = True
    if not kinds:
        hit[:] = False
    mask = hit & coin
    noised = hit & ~coin
    Xc = np.where(mask[:, None], 0.0, X + np.where(noised[:, None], eps, 0.0))
    noise = np.where(noised[:, None], Xc - X, 0.0)
    return CorruptionRecord(Xc, mask, noise, noised,
                            {"p_c": p_c, "sigma": sigma})


def switch_identities(seq, ratio, radius, rng):
    """Swap id labels between nearby pedestrians, persisting from the swap onward.

    At each frame every present pedestrian is picked with probability
    ``ratio``; a picked pedestrian exchanges labels with its nearest neighbour
    within ``radius`` that has not already swapped in this frame. Positions are
    untouched.
    """
    new_ids = _switched_labels(seq, ratio, radius, rng)
    return TrajectorySequence(seq.frame_ids.copy(), new_ids, seq.xy.copy(), seq.name)


def _switched_labels(seq, ratio, radius, rng):
    # labels aligned with the rows of ``seq``
    _check_ratio("ratio", ratio)
    if radius <= 0:
        raise ValueError("radius must be positive")
    g = _rng(rng)
    label = {}
    new_ids = seq.ped_ids.copy()
    for f, (pids, xy) in seq.frame_table().items():
        rows = np.flatnonzero(seq.frame_ids == f)
        for p in pids:
            label.setdefault(int(p), int(p))
        draws = g.random(len(pids))
        swapped = np.zeros(len(pids), dtype=bool)
        for i in range(len(pids)):
            if draws[i] >= ratio or swapped[i]:
                continue
            d = np.hypot(*(xy - xy[i]).T)
            d[i] = np.inf
            d[swapped] = np.inf
            j = int(np.argmin(d)) if len(d) else -1
            if j < 0 or d[j] > radius:
                continue
            a, b = int(pids[i]), int(pids[j])
            label[a], label[b] = label[b], label[a]
            swapped[i] = swapped[j] = True
        new_ids[rows] = [label[int(p)] for p in pids]
    return new_ids


def tracked_labels(seq, ratio, radius, rng):
    """Map (frame_id, true ped_id) -> label a tracker with identity switches reports."""
    new_ids = _switched_labels(seq, ratio, radius, rng)
    return {(int(f), int(p)): int(q) for f, p, q in zip(seq.frame_ids, seq.ped_ids, new_ids)}


def interpolate_missing(track, missing):
    """Linearly fill missing rows of a (T, 2) track; ends hold the nearest value."""
    track = np.array(track, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool) | np.isnan(track).any(axis=1)
    ok = np.flatnonzero(~missing)
    if len(ok) == 0:
        return np.zeros_like(track)
    t = np.arange(len(track))
    for c in range(2):
        track[:, c] = np.interp(t, ok, track[ok, c])
    return track
