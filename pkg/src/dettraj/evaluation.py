"""Displacement metrics, a constant-velocity reference and robustness sweeps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .corruption import (add_localization_noise, corrupt_combined, interpolate_missing,
                         mask_detections, tracked_labels)
from .dataio import center_on_target, make_windows, strip_ids

REPORT_COLUMNS = ["error_type", "ratio", "ADE", "FDE", "minADE20", "minFDE20", "n_windows", "seed"]
ERROR_TYPES = ("none", "miss", "loc", "idswitch", "combined")


def _pair(pred, Y):
    pred = np.asarray(pred, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if pred.shape != Y.shape:
        raise ValueError(f"prediction/ground-truth length mismatch: {pred.shape} vs {Y.shape}")
    if len(Y) == 0:
        raise ValueError("empty trajectory")
    return pred, Y


def ade(pred, Y):
    pred, Y = _pair(pred, Y)
    return float(np.mean(np.sqrt(((pred - Y) ** 2).sum(-1))))


def fde(pred, Y):
    pred, Y = _pair(pred, Y)
    return float(np.sqrt(((pred[-1] - Y[-1]) ** 2).sum()))


def min_metrics(preds, Y):
    """(minADE_N, minFDE_N); each minimum is taken independently over heads."""
    preds = np.asarray(preds, dtype=np.float64)
    return min(ade(p, Y) for p in preds), min(fde(p, Y) for p in preds)


def constant_velocity_baseline(past, T_pred):
    """Extrapolate the last observed step of an id-linked past track.

    ``past`` is (T_obs, 2) with NaN rows where the target was not observed.
    Fewer than two observations give a zero-velocity forecast.
    """
    past = np.asarray(past, dtype=np.float64)
    seen = np.flatnonzero(~np.isnan(past).any(axis=1))
    if len(seen) == 0:
        return np.zeros((T_pred, 2))
    last = past[seen[-1]]
    if len(seen) < 2:
        return np.tile(last, (T_pred, 1))
    vel = (last - past[seen[-2]]) / (seen[-1] - seen[-2])
    steps = np.arange(1, T_pred + 1)[:, None] + (len(past) - 1 - seen[-1])
    return last + steps * vel


@dataclass
class MetricReport:
    dataset: str = ""
    phase: str = ""
    ADE: float = float("nan")
    FDE: float = float("nan")
    minADE: float = float("nan")
    minFDE: float = float("nan")
    N: int = 1
    curves: list = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""


# ---------------------------------------------------------------- predictors

def model_predictor(model, batch_size=64):
    """Callable mapping model-ready windows to (N, T_pred, 2) forecasts each."""
    from .training import collate

    def run(windows):
        out = []
        for s in range(0, len(windows), batch_size):
            b = collate(windows[s:s + batch_size])
            out.extend(model.predict(b.positions, b.time_index, b.valid))
        return out
    return run


def cv_predictor(windows):
    """Constant-velocity forecasts from each window's (tracked) target past.

    Missing past detections are linearly interpolated first.
    """
    out = []
    for w in windows:
        if w.target_past is None:
            raise ValueError("constant-velocity baseline needs target_past")
        past = interpolate_missing(w.target_past, np.isnan(w.target_past).any(axis=1))
        out.append(constant_velocity_baseline(past, w.T_pred)[None])
    return out


# ---------------------------------------------------------------- corruption of windows

def corrupt_window(w, error_type, ratio, seed, sigma=0.5):
    """Apply a detection error to a model-ready window; the target's last detection is kept."""
    X = w.positions
    if error_type in ("none", "idswitch") or ratio == 0:
        return w
    if error_type == "miss":
        rec = mask_detections(X, ratio, seed, protect=w.target_index)
    elif error_type == "loc":
        rec = add_localization_noise(X, ratio, sigma, seed, protect=w.target_index)
    elif error_type == "combined":
        rec = corrupt_combined(X, {"p_mask": ratio, "p_noise": ratio, "sigma": sigma}, seed,
                               protect=w.target_index)
    else:
        raise ValueError(f"unknown error type {error_type!r}")
    past = _corrupt_past(w, rec)
    return replace(w, positions=rec.X_corrupt, target_past=past)


def _corrupt_past(w, rec):
    # the tracked target history sees the same errors as its detections
    if w.target_past is None or w.id_labels is None:
        return w.target_past
    past = w.target_past.copy()
    for k in np.flatnonzero(w.id_labels == w.target_id):
        t = w.time_index[k] - 1
        past[t] = np.nan if rec.mask[k] else rec.X_corrupt[k]
    return past


def _switched_window(w, labels, obs_frames):
    # id side channel and target history as a tracker with identity switches reports them
    frames = obs_frames[w.time_index - 1]
    ids = np.array([labels[(int(f), int(i))] for f, i in zip(frames, w.id_labels)], dtype=np.int64)
    tracked = ids[w.target_index]
    past = np.full((w.T_obs, 2), np.nan)
    hit = ids == tracked
    past[w.time_index[hit] - 1] = w.positions[hit]
    return replace(w, id_labels=ids, target_past=past)


# ---------------------------------------------------------------- sweeps

@dataclass
class EvalWindow:
    """A model-ready window plus the frames it observes in its source sequence."""
    window: object
    seq_index: int
    obs_frames: np.ndarray


def build_eval_windows(seqs, T_obs, T_pred, stride=1, seed=0):
    """Fully-observed target windows, centered and id-stripped."""
    out = []
    for si, seq in enumerate(seqs):
        frames = seq.frames
        pos_of = {int(f): i for i, f in enumerate(frames)}
        for w in make_windows(seq, T_obs, T_pred, stride, mode="full"):
            w = strip_ids(center_on_target(w), seed=(seed * 7919 + len(out)) % 2**32)
            s = pos_of[w.start_frame]
            out.append(EvalWindow(w, si, frames[s:s + T_obs]))
    return out


def robustness_sweep(predict, seqs, error_type, ratios, T_obs=9, T_pred=12, stride=1,
                     seed=0, sigma=0.5, switch_radius=5.0, windows=None):
    """ADE/FDE (and min over heads) for each error ratio, rows in input order.

    ``predict`` maps a list of model-ready windows to per-window (N, T_pred, 2)
    forecasts, see :func:`model_predictor` and :func:`cv_predictor`. Identity
    switches are applied to the sequence labels before ids are stripped, so
    they only reach the id side channel and the tracked target history.
    """
    if error_type not in ERROR_TYPES:
        raise ValueError(f"unknown error type {error_type!r}")
    ew = windows if windows is not None else build_eval_windows(seqs, T_obs, T_pred, stride, seed)
    rows = []
    for ri, ratio in enumerate(ratios):
        rseed = seed * 1_000_003 + ri
        ws = []
        if error_type == "idswitch" and ratio > 0:
            labels = [tracked_labels(s, ratio, switch_radius, np.random.default_rng([rseed, i]))
                      for i, s in enumerate(seqs)]
            ws = [_switched_window(e.window, labels[e.seq_index], e.obs_frames) for e in ew]
        else:
            ws = [corrupt_window(e.window, error_type, ratio, [rseed, k], sigma)
                  for k, e in enumerate(ew)]
        rows.append(_metrics_row(error_type, ratio, predict(ws), ws, seed))
    return rows


def _metrics_row(error_type, ratio, preds, windows, seed):
    a, f, ma, mf = [], [], [], []
    for p, w in zip(preds, windows):
        p = np.asarray(p)
        a.append(ade(p[0], w.Y))
        f.append(fde(p[0], w.Y))
        m = min_metrics(p[:20], w.Y)
        ma.append(m[0])
        mf.append(m[1])
    return {"error_type": error_type, "ratio": float(ratio), "ADE": float(np.mean(a)),
            "FDE": float(np.mean(f)), "minADE20": float(np.mean(ma)), "minFDE20": float(np.mean(mf)),
            "n_windows": len(windows), "seed": seed}


def evaluate(predict, seqs, T_obs=9, T_pred=12, stride=1, seed=0, windows=None):
    return robustness_sweep(predict, seqs, "none", [0.0], T_obs, T_pred, stride, seed,
                            windows=windows)[0]


def write_report(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in REPORT_COLUMNS})


def read_report(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("ratio", "ADE", "FDE", "minADE20", "minFDE20"):
            r[k] = float(r[k])
        r["n_windows"] = int(r["n_windows"])
        r["seed"] = int(r["seed"])
    return rows


def write_svg(curves, path, metric="ADE", width=480, height=320):
    """Line plot of ``{label: rows}`` sweep curves (metric vs ratio) as plain SVG."""
    pad = 40
    pts = [(r["ratio"], r[metric]) for rows in curves.values() for r in rows]
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = 0.0, max(ys) * 1.1 if max(ys) > 0 else 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">error ratio</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">{metric}</text>']
    for i, (label, rows) in enumerate(curves.items()):
        c = colors[i % len(colors)]
        poly = " ".join(f"{sx(r['ratio']):.2f},{sy(r[metric]):.2f}" for r in rows)
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{poly}"/>')
        out.append(f'<text x="{width - pad - 100}" y="{pad + 14 * i}" fill="{c}" font-size="12">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
