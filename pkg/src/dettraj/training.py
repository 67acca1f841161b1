"""Losses, the Adam optimizer and the pretrain / fine-tune loops."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corruption import corrupt_for_training
from .dataio import prepare
from .model import save_checkpoint

LOG_COLUMNS = ["epoch", "phase", "loss_F", "loss_M", "loss_D", "loss_I", "loss_W", "loss_Reg",
               "val_ADE", "val_FDE", "lr"]
PHASES = ("pretrain", "finetune-weak", "finetune-supervised")


class NoWeakSupervision(ValueError):
    pass


# ---------------------------------------------------------------- schedules

def schedule_weights(epoch, total=200):
    """(alpha, beta, gamma) for unmasking, denoising and id reconstruction."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    return (1.0, 0.0, 0.0) if epoch < total / 2 else (0.0, 100.0, 0.1)


def learning_rate(epoch, total, lr, drop_at=0.8, factor=0.1):
    return lr * factor if epoch >= round(drop_at * total) else lr


# ---------------------------------------------------------------- id targets

class IdEmbeddingTable:
    """Fixed unit vectors per (sequence, pedestrian), drawn from a hash-keyed seed."""

    def __init__(self, dim, seed=0):
        self.dim = dim
        self.seed = seed
        self._cache = {}

    def __call__(self, seq_name, ped_id):
        key = (seq_name, int(ped_id))
        v = self._cache.get(key)
        if v is None:
            h = hashlib.sha256(f"{self.seed}|{seq_name}|{int(ped_id)}".encode()).digest()
            v = np.random.default_rng(int.from_bytes(h[:8], "little")).normal(size=self.dim)
            v /= np.linalg.norm(v)
            self._cache[key] = v
        return v


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    positions: np.ndarray          # (B, n, 2) clean, centered
    time_index: np.ndarray         # (B, n)
    valid: np.ndarray              # (B, n)
    Y: np.ndarray | None           # (B, T_pred, 2)
    id_labels: np.ndarray          # (B, n)
    target_index: np.ndarray       # (B,)
    seq_names: list
    future: np.ndarray | None = None        # (B, T_pred, M, 2)
    future_valid: np.ndarray | None = None  # (B, T_pred, M)
    windows: list = field(default_factory=list)


def collate(windows):
    """Pad model-ready windows into one batch."""
    B = len(windows)
    n = max(len(w) for w in windows)
    T = windows[0].T_pred
    pos = np.zeros((B, n, 2))
    tix = np.zeros((B, n), dtype=np.int64)
    valid = np.zeros((B, n), dtype=bool)
    ids = np.full((B, n), -1, dtype=np.int64)
    for b, w in enumerate(windows):
        k = len(w)
        pos[b, :k] = w.positions
        tix[b, :k] = w.time_index
        valid[b, :k] = True
        if w.id_labels is not None:
            ids[b, :k] = w.id_labels
    Y = None
    if all(w.Y is not None for w in windows):
        Y = np.stack([w.Y for w in windows])
    M = max([len(d) for w in windows for d in w.future_detections] + [1])
    fut = np.zeros((B, T, M, 2))
    fvalid = np.zeros((B, T, M), dtype=bool)
    for b, w in enumerate(windows):
        for t, d in enumerate(w.future_detections):
            fut[b, t, :len(d)] = d
            fvalid[b, t, :len(d)] = True
    return Batch(pos, tix, valid, Y, ids, np.array([w.target_index for w in windows]),
                 [w.seq_name for w in windows], fut, fvalid, list(windows))


# ---------------------------------------------------------------- losses

def wta_select(preds, Y):
    """Head with the smallest mean displacement to ``Y`` and its MSE (lowest index on ties)."""
    P = preds.data if isinstance(preds, ad.Tensor) else np.asarray(preds, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    disp = np.sqrt(((P - Y[None]) ** 2).sum(-1)).mean(-1)
    idx = int(np.argmin(disp))
    return idx, ad.mse(ad.as_tensor(preds)[idx], Y)


def _select_heads(preds, Y):
    # preds (B, N, T, 2) Tensor -> (B, T, 2) on the per-sample best head
    disp = np.sqrt(((preds.data - Y[:, None]) ** 2).sum(-1)).mean(-1)
    idx = np.argmin(disp, axis=1)
    return preds[np.arange(len(idx)), idx], idx


def supervised_loss(preds, Y):
    """MSE (mean over scalar elements); winner-take-all across heads when there are several."""
    preds = ad.as_tensor(preds)
    Y = np.asarray(Y, dtype=np.float64)
    if preds.ndim == Y.ndim:
        return ad.mse(preds, Y)
    if preds.ndim == Y.ndim + 1 and Y.ndim == 2:
        return wta_select(preds, Y)[1]
    sel, _ = _select_heads(preds, Y)
    return ad.mse(sel, Y)


def closest_detections(pred, future_detections):
    """Index of the nearest detection per future step (-1 where the frame is empty)."""
    P = pred.data if isinstance(pred, ad.Tensor) else np.asarray(pred)
    out = []
    for t, d in enumerate(future_detections):
        if len(d) == 0:
            out.append(-1)
            continue
        diff = P[t][None] - np.asarray(d)
        out.append(int(np.argmin(np.sqrt((diff * diff).sum(-1)))))
    return out


def weak_loss_terms(pred, future_detections):
    """(L_W, L_Reg, closest indices) for one (T_pred, 2) prediction."""
    pred = ad.as_tensor(pred)
    if all(len(d) == 0 for d in future_detections):
        raise NoWeakSupervision("no weak supervision available: all future frames are empty")
    idx = closest_detections(pred, future_detections)
    L_W = None
    for t, c in enumerate(idx):
        if c < 0:
            continue
        term = ad.norm(ad.sub(pred[t], np.asarray(future_detections[t][c], dtype=np.float64)))
        L_W = term if L_W is None else ad.add(L_W, term)
    padded = ad.concat([ad.Tensor(np.zeros((1, 2))), pred], axis=0)
    acc = ad.add(ad.sub(padded[2:], ad.scale(padded[1:-1], 2.0)), padded[:-2])
    L_Reg = ad.sum(ad.norm(acc))
    return L_W, L_Reg, idx


def weak_loss(pred, future_detections, lam):
    """Nearest-detection matching loss plus ``lam`` times the acceleration penalty."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    L_W, L_Reg, _ = weak_loss_terms(pred, future_detections)
    return ad.add(L_W, ad.scale(L_Reg, lam))


def batch_weak_loss(preds, batch, lam):
    """Batch mean of per-window L_W + lam * L_Reg; preds (B, T, 2)."""
    P = preds.data
    diff = P[:, :, None, :] - batch.future
    dist = np.sqrt((diff * diff).sum(-1))
    dist = np.where(batch.future_valid, dist, np.inf)
    c = np.argmin(dist, axis=-1)
    has = batch.future_valid.any(-1)
    B, T = c.shape
    target = batch.future[np.arange(B)[:, None], np.arange(T)[None], c]
    L_W = ad.sum(ad.mul(ad.norm(ad.sub(preds, target)), has.astype(np.float64)), axis=1)
    padded = ad.concat([ad.Tensor(np.zeros((B, 1, 2))), preds], axis=1)
    acc = ad.add(ad.sub(padded[:, 2:], ad.scale(padded[:, 1:-1], 2.0)), padded[:, :-2])
    L_Reg = ad.sum(ad.norm(acc), axis=1)
    total = ad.mean(ad.add(L_W, ad.scale(L_Reg, lam)))
    return total, ad.mean(L_W), ad.mean(L_Reg)


def pretrain_loss(model, batch, records, weights, id_table=None):
    """Forecasting from corrupted input plus weighted pretext losses.

    ``records`` are CorruptionRecords aligned with the batch windows. Returns
    (total, parts) where parts holds the float value of each term.
    """
    alpha, beta, gamma = weights
    if batch.Y is None:
        raise ValueError("pretrain_loss: windows need ground-truth futures")
    B, n, _ = batch.positions.shape
    Xc = batch.positions.copy()
    mask = np.zeros((B, n), dtype=bool)
    noised = np.zeros((B, n), dtype=bool)
    for b, r in enumerate(records):
        k = len(r.mask)
        Xc[b, :k] = r.X_corrupt
        mask[b, :k] = r.mask
        noised[b, :k] = r.noised
    H, Q = model.encode(Xc, batch.time_index, batch.valid)
    preds = model.forecast(Q)
    L_F = supervised_loss(preds, batch.Y)
    x_um, x_dn, _ = model.pretext_outputs(H)
    L_M = ad.mse(x_um, batch.positions, (mask & batch.valid)[..., None])
    L_D = ad.mse(x_dn, batch.positions, (noised & batch.valid)[..., None])
    total = ad.add(L_F, ad.add(ad.scale(L_M, alpha), ad.scale(L_D, beta)))
    L_I_val = float("nan")
    if gamma > 0:
        if id_table is None or np.any(batch.id_labels[batch.valid] < 0):
            raise ValueError("pretrain_loss: id labels required when gamma > 0")
        target = np.zeros((B, n, id_table.dim))
        for b in range(B):
            for k in range(int(batch.valid[b].sum())):
                target[b, k] = id_table(batch.seq_names[b], batch.id_labels[b, k])
        H_clean, _ = model.encode(batch.positions, batch.time_index, batch.valid)
        _, _, ids_hat = model.pretext_outputs(H_clean)
        L_I = ad.mse(ids_hat, target, batch.valid[..., None])
        total = ad.add(total, ad.scale(L_I, gamma))
        L_I_val = L_I.item()
    parts = {"loss_F": L_F.item(), "loss_M": L_M.item(), "loss_D": L_D.item(), "loss_I": L_I_val}
    return total, parts


# ---------------------------------------------------------------- optimizer

class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.step = 0


def adam_step(params, state, lr):
    """One bias-corrected Adam update using each parameter's ``grad``."""
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        if not p.trainable:
            continue
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        m = state.m[p.name] = b1 * state.m[p.name] + (1 - b1) * g
        v = state.v[p.name] = b2 * state.v[p.name] + (1 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params, max_norm):
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / total)
    return total


# ---------------------------------------------------------------- loop

@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    lr_drop_at: float = 0.8
    lr_drop: float = 0.1
    batch_size: int = 16
    p_c: float = 0.3
    sigma: float = 0.5
    lam: float = 10.0
    tasks: tuple = ("F", "P", "U", "D")
    grad_clip: float = 1.0
    seed: int = 0
    windows_per_epoch: int | None = None


def _prepare_all(windows, seed):
    return [prepare(w, seed=(seed * 1_000_003 + i) % 2**32) for i, w in enumerate(windows)]


def evaluate_windows(model, windows, batch_size=64):
    """(ADE, FDE) of head 0 averaged over model-ready windows with ground truth."""
    from .evaluation import ade, fde
    a, f = [], []
    for s in range(0, len(windows), batch_size):
        chunk = windows[s:s + batch_size]
        b = collate(chunk)
        preds = model.predict(b.positions, b.time_index, b.valid)
        for p, w in zip(preds, chunk):
            a.append(ade(p[0], w.Y))
            f.append(fde(p[0], w.Y))
    return float(np.mean(a)), float(np.mean(f))


def train(model, windows, phase, config=None, val_windows=None, log_path=None, ckpt_path=None,
          progress=None):
    """Run one training phase; returns (best model state, log rows).

    ``windows`` are raw DetectionWindows; they are centered and id-stripped
    here. The model is left holding the best-on-validation parameters (the last
    epoch's when no validation windows are given). ``progress`` is called
    with each epoch's log row.
    """
    cfg = config or TrainConfig()
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    if not windows:
        raise ValueError("training needs at least one window")
    data = _prepare_all(windows, cfg.seed)
    if phase == "finetune-weak":
        data = [w for w in data if any(len(d) for d in w.future_detections)]
        if not data:
            raise NoWeakSupervision("no weak supervision available in any window")
    elif any(w.Y is None for w in data):
        raise ValueError(f"{phase} needs windows with full ground-truth futures")
    val = _prepare_all(val_windows, cfg.seed + 1) if val_windows else None
    params = model.parameters()
    state = AdamState(params)
    id_table = IdEmbeddingTable(model.cfg.d_id, cfg.seed)
    flags = {t: float(t in cfg.tasks) for t in ("U", "D", "P")}
    # masking feeds the unmasking task and noise the denoising task
    kinds = tuple(k for k, t in (("mask", "U"), ("noise", "D")) if t in cfg.tasks)
    best = (math.inf, model.state_dict())
    rows = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        lr = learning_rate(epoch, cfg.epochs, cfg.lr, cfg.lr_drop_at, cfg.lr_drop)
        order = rng.permutation(len(data))
        if cfg.windows_per_epoch is not None:
            order = order[:cfg.windows_per_epoch]
        sums, count = {}, 0
        if phase == "pretrain":
            a, b, g = schedule_weights(epoch, cfg.epochs)
            weights = (a * flags["U"], b * flags["D"], g * flags["P"])
        for s in range(0, len(order), cfg.batch_size):
            chunk = [data[i] for i in order[s:s + cfg.batch_size]]
            batch = collate(chunk)
            model.zero_grad()
            if phase == "pretrain":
                recs = [corrupt_for_training(w.positions, cfg.p_c, cfg.sigma, rng, w.target_index, kinds)
                        for w in chunk]
                loss, parts = pretrain_loss(model, batch, recs, weights, id_table)
            else:
                _, Q = model.encode(batch.positions, batch.time_index, batch.valid)
                preds = model.forecast(Q)
                if phase == "finetune-supervised":
                    loss = supervised_loss(preds, batch.Y)
                    parts = {"loss_F": loss.item()}
                else:
                    sel = preds[:, 0] if model.cfg.n_futures == 1 else _weak_heads(preds, batch)
                    loss, lw, lr_ = batch_weak_loss(sel, batch, cfg.lam)
                    parts = {"loss_W": lw.item(), "loss_Reg": lr_.item()}
            loss.backward()
            if cfg.grad_clip:
                clip_grad_norm(params, cfg.grad_clip)
            adam_step(params, state, lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(chunk)
            count += len(chunk)
        row = {c: float("nan") for c in LOG_COLUMNS}
        row.update({k: v / count for k, v in sums.items()})
        row.update(epoch=epoch, phase=phase, lr=lr)
        if val:
            row["val_ADE"], row["val_FDE"] = evaluate_windows(model, val)
            score = row["val_ADE"]
        else:
            score = -epoch
        if score <= best[0]:
            best = (score, model.state_dict())
        rows.append(row)
        if progress:
            progress(row)
    model.load_state_dict(best[1])
    if log_path:
        write_log(rows, log_path)
    if ckpt_path:
        save_checkpoint(model, ckpt_path, extra={"phase": phase, "seed": cfg.seed})
    return best[1], rows


def _weak_heads(preds, batch):
    # winner-take-all on the matching term for multi-head weak fine-tuning
    P = preds.data
    diff = P[:, :, :, None, :] - batch.future[:, None]
    dist = np.where(batch.future_valid[:, None], np.sqrt((diff * diff).sum(-1)), np.inf).min(-1)
    dist = np.where(np.isfinite(dist), dist, 0.0).sum(-1)
    idx = np.argmin(dist, axis=1)
    return preds[np.arange(len(idx)), idx]


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
