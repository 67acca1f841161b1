"""Independent brute-force references used by the tests."""
import numpy as np


def halfplane_violation(V, halfplanes):
    """Largest signed violation (distance outside) over the half-planes for points V (P, 2)."""
    if not halfplanes:
        return np.zeros(len(V))
    P = np.array([h.point for h in halfplanes])
    N = np.array([h.normal for h in halfplanes])
    return np.max(-((V[:, None, :] - P[None]) * N[None]).sum(-1), axis=1)


def _disk_grid(center, half, step, v_max):
    xs = np.arange(center[0] - half, center[0] + half + step / 2, step)
    ys = np.arange(center[1] - half, center[1] + half + step / 2, step)
    G = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    return G[(G * G).sum(1) <= v_max * v_max]


def grid_lp(halfplanes, v_pref, v_max, step=1e-3, coarse=1e-2, window=0.25, polish=1e-4, polish_window=0.03):
    """Grid search for min ||v - v_pref|| over the disk and half-planes.

    A coarse pass over the whole disk locates the optimum; a fine pass at
    ``step`` resolution then covers a ``window`` box around it. For a convex
    feasible set K with optimum p*, every x in K with ||x - v_pref|| <= c
    satisfies ||x - p*||^2 <= c^2 - c*^2 = (c - c*)(c + c*). With the coarse
    gap c - c* <= coarse/sqrt(2) and c + c* < 7.2 for |v_pref| <= 2*sqrt(2),
    v_max <= 1.5, that is below 0.23, inside ``window``. A last pass at
    ``polish`` resolution around the fine optimum handles thin wedges, where
    the nearest feasible step-grid point can sit several steps from the
    vertex. Returns (best objective, best point), or (None, None) when no
    grid point is feasible.
    """
    v_pref = np.asarray(v_pref, dtype=np.float64)
    G = _disk_grid(np.zeros(2), v_max, coarse, v_max)
    ok = halfplane_violation(G, halfplanes) <= 0
    if not ok.any():
        return None, None
    obj = np.hypot(*(G[ok] - v_pref).T)
    center = G[ok][np.argmin(obj)]
    for half, res in ((window, step), (polish_window, polish)):
        F = _disk_grid(center, half, res, v_max)
        F = F[halfplane_violation(F, halfplanes) <= 0]
        obj = np.hypot(*(F - v_pref).T)
        k = np.argmin(obj)
        center = F[k]
    return float(obj[k]), center


def grid_min_violation(halfplanes, v_max, step=2e-3):
    G = _disk_grid(np.zeros(2), v_max, step, v_max)
    return float(halfplane_violation(G, halfplanes).min())


def nearest_scan(p, dets):
    """Index and distance of the detection closest to p, by a plain loop."""
    best, best_d = -1, None
    for m, d in enumerate(dets):
        dx, dy = p[0] - d[0], p[1] - d[1]
        dist = float(np.sqrt(dx * dx + dy * dy))
        if best_d is None or dist < best_d:
            best, best_d = m, dist
    return best, best_d


def pair_events(seq, thresh):
    """(collision events, total (frame, pair) slots) by a pairwise scan per frame."""
    events = slots = 0
    for _, (_, xy) in seq.frame_table().items():
        n = len(xy)
        for i in range(n):
            d = np.hypot(*(xy[i + 1:] - xy[i]).T)
            events += int((d < thresh).sum())
            slots += n - i - 1
    return events, slots
