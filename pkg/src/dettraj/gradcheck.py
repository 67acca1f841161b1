"""Finite-difference checks of every autodiff primitive and of the model + losses."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

H = 1e-5


def _leaf(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def _project(rng, out_fn, *leaves):
    # contract the output with fixed random weights so every coordinate matters
    probe = {}

    def f():
        y = out_fn()
        if y.data.ndim == 0:
            return y
        if "w" not in probe:
            probe["w"] = rng.normal(size=y.shape)
        return ad.sum(ad.mul(y, probe["w"]))
    return f, list(leaves)


def primitive_cases(seed=0):
    rng = np.random.default_rng(seed)
    L = lambda *s, **k: _leaf(rng, *s, **k)  # noqa: E731
    cases = {}
    a, b = L(3, 4), L(3, 4)
    cases["add"] = _project(rng, lambda: ad.add(a, b), a, b)
    c, r = L(2, 3, 4), L(4)
    cases["add_broadcast"] = _project(rng, lambda: ad.add(c, r), c, r)
    a2, b2 = L(3, 4), L(1, 4)
    cases["sub"] = _project(rng, lambda: ad.sub(a2, b2), a2, b2)
    a3, b3 = L(3, 4), L(3, 1)
    cases["mul"] = _project(rng, lambda: ad.mul(a3, b3), a3, b3)
    a4 = L(5)
    cases["scale"] = _project(rng, lambda: ad.scale(a4, -2.5), a4)
    a5 = Tensor(rng.choice([-1, 1], size=(4, 5)) * (0.1 + rng.random((4, 5))), requires_grad=True)
    cases["relu"] = _project(rng, lambda: ad.relu(a5), a5)
    a6 = L(6, positive=True)
    cases["sqrt"] = _project(rng, lambda: ad.sqrt(a6), a6)
    m1, m2 = L(3, 4), L(4, 5)
    cases["matmul"] = _project(rng, lambda: ad.matmul(m1, m2), m1, m2)
    m3, m4 = L(2, 3, 4), L(4, 2)
    cases["matmul_weight"] = _project(rng, lambda: ad.matmul(m3, m4), m3, m4)
    m5, m6 = L(2, 2, 3, 4), L(2, 2, 4, 3)
    cases["matmul_batched"] = _project(rng, lambda: ad.matmul(m5, m6), m5, m6)
    t = L(2, 3, 4)
    cases["transpose"] = _project(rng, lambda: ad.transpose(t, (2, 0, 1)), t)
    t2 = L(2, 3, 4)
    cases["reshape"] = _project(rng, lambda: ad.reshape(t2, (4, 6)), t2)
    c1, c2 = L(2, 3), L(2, 2)
    cases["concat"] = _project(rng, lambda: ad.concat([c1, c2], axis=1), c1, c2)
    g = L(4, 5)
    cases["getitem_slice"] = _project(rng, lambda: g[1:3, ::2], g)
    g2 = L(4, 3)
    idx = np.array([0, 2, 2, 3])
    cases["getitem_gather"] = _project(rng, lambda: g2[idx, np.array([1, 0, 0, 2])], g2)
    s = L(3, 4)
    cases["sum"] = _project(rng, lambda: ad.sum(s, axis=0), s)
    s2 = L(3, 4)
    cases["mean"] = _project(rng, lambda: ad.mean(s2, axis=1, keepdims=True), s2)
    sm = L(3, 5)
    cases["softmax"] = _project(rng, lambda: ad.softmax(sm), sm)
    ln = L(3, 6)
    cases["layer_norm"] = _project(rng, lambda: ad.layer_norm(ln), ln)
    nv = L(4, 2)
    cases["norm"] = _project(rng, lambda: ad.norm(nv), nv)
    mp, mt = L(3, 2), rng.normal(size=(3, 2))
    mask = np.array([[True], [False], [True]])
    cases["mse"] = _project(rng, lambda: ad.mse(mp, mt), mp)
    cases["mse_masked"] = _project(rng, lambda: ad.mse(mp, mt, mask), mp)
    return cases


def check_primitives(seed=0, h=H):
    """{primitive name: max relative error}."""
    return {name: ad.grad_check(f, params, h=h) for name, (f, params) in primitive_cases(seed).items()}


def composite_case(seed=0):
    """A tiny model with the full pretraining loss plus the weak fine-tuning loss."""
    from .corruption import corrupt_for_training
    from .model import Det2TrajFormer, ModelConfig
    from .training import IdEmbeddingTable, batch_weak_loss, collate, pretrain_loss
    from .dataio import DetectionWindow

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d=8, layers=2, heads=2, d_id=4, T_obs=3, T_pred=2, n_futures=2)
    model = Det2TrajFormer(cfg, seed=seed)
    # perturb the zero-initialised biases and unit gains so no gradient is degenerate
    for p in model.parameters():
        p.data = p.data + rng.normal(scale=0.1, size=p.data.shape)
    windows = []
    for b, n in enumerate((5, 3)):
        tix = np.sort(rng.integers(1, cfg.T_obs + 1, size=n))
        tix[-1] = cfg.T_obs
        windows.append(DetectionWindow(
            positions=rng.normal(size=(n, 2)), time_index=tix, target_last_position=np.zeros(2),
            T_obs=cfg.T_obs, T_pred=cfg.T_pred, Y=rng.normal(size=(cfg.T_pred, 2)),
            future_detections=[rng.normal(size=(2 + b, 2)) for _ in range(cfg.T_pred)],
            id_labels=rng.integers(0, 3, size=n), target_index=n - 1, seq_name=f"s{b}"))
    batch = collate(windows)
    recs = [corrupt_for_training(w.positions, 0.6, 0.5, rng, protect=w.target_index) for w in windows]
    table = IdEmbeddingTable(cfg.d_id, seed)

    def f():
        total, _ = pretrain_loss(model, batch, recs, (1.0, 100.0, 0.1), table)
        _, Q = model.encode(batch.positions, batch.time_index, batch.valid)
        weak, _, _ = batch_weak_loss(model.forecast(Q)[:, 0], batch, 10.0)
        return ad.add(total, weak)
    return f, model.parameters()


def check_composite(seed=0, h=H, coords=None):
    f, params = composite_case(seed)
    return ad.grad_check(f, params, h=h, coords=coords)


def run_all(seed=0, h=H):
    """Per-check errors and their maximum."""
    errs = check_primitives(seed, h)
    errs["model+loss"] = check_composite(seed, h)
    return errs, max(errs.values())


