"""Synthetic crowds from reciprocal collision avoidance (ORCA).

Each agent turns its neighbours and nearby obstacles into velocity-space
half-planes and picks the admissible velocity closest to its preferred one by
solving a small 2D linear program (incremental, with a min-max-violation
fallback when the constraints are infeasible).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import TrajectorySequence

EPS = 1e-9


class ScenarioInfeasible(RuntimeError):
    pass


@dataclass
class Agent:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    radius: float = 0.3
    max_speed: float = 1.8
    pref_speed: float = 1.3


@dataclass
class Obstacle:
    """Convex polygon (or a single segment) given by ordered vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(self.vertices) < 2:
            raise ValueError("obstacle needs at least 2 vertices")
        v = self.vertices
        closing = len(v) > 2
        nxt = np.roll(v, -1, axis=0) if closing else v[1:]
        cur = v if closing else v[:-1]
        if np.any(np.all(cur == nxt, axis=1)):
            raise ValueError("consecutive obstacle vertices must be distinct")


@dataclass
class HalfPlane:
    """Velocities v with (v - point) . normal >= 0."""

    point: np.ndarray
    normal: np.ndarray

    @property
    def direction(self):
        # boundary direction with the feasible side on its left
        return np.array([self.normal[1], -self.normal[0]])


@dataclass
class ScenarioConfig:
    max_agents: int = 40
    min_agents: int = 5
    max_obstacles: int = 20
    bounds: tuple = (0.0, 0.0, 15.0, 15.0)
    dt: float = 0.4
    radius: float = 0.3
    pref_speed: float = 1.3
    pref_speed_jitter: float = 0.0
    max_speed: float = 1.8
    min_goal_dist: float = 3.0
    obstacle_size: tuple = (0.3, 1.0)
    max_attempts: int = 1000


@dataclass
class OrcaParams:
    tau: float = 2.0
    tau_obst: float = 2.0
    neighbor_dist: float = 5.0
    goal_tol: float = 0.1


@dataclass
class Scenario:
    agents: list
    obstacles: list
    bounds: tuple
    dt: float
    seed: int
    params: OrcaParams = field(default_factory=OrcaParams)

    def to_dict(self):
        return {
            "agents": [{k: (v.tolist() if isinstance(v, np.ndarray) else v)
                        for k, v in asdict(a).items()} for a in self.agents],
            "obstacles": [o.vertices.tolist() for o in self.obstacles],
            "bounds": list(self.bounds),
            "dt": self.dt,
            "seed": self.seed,
            "params": asdict(self.params),
        }


# ---------------------------------------------------------------- geometry

def _det(a, b):
    return a[0] * b[1] - a[1] * b[0]


def polygon_query(points, vertices):
    """Closest boundary points, distances and insideness for many points at once."""
    points = np.atleast_2d(points)
    v = np.asarray(vertices)
    n = len(v)
    a = v if n > 2 else v[:1]
    b = np.roll(v, -1, axis=0) if n > 2 else v[1:2]
    ab = b - a                                            # (E, 2)
    ap = points[:, None, :] - a[None]                     # (P, E, 2)
    t = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    q = a[None] + t[..., None] * ab[None]
    d = np.hypot(*(points[:, None, :] - q).transpose(2, 0, 1))
    k = d.argmin(axis=1)
    rows = np.arange(len(points))
    inside = np.zeros(len(points), dtype=bool)
    if n > 2:
        cross = ab[None, :, 0] * ap[..., 1] - ab[None, :, 1] * ap[..., 0]
        inside = np.all(cross > 0, axis=1) | np.all(cross < 0, axis=1)
    return q[rows, k], d[rows, k], inside


def closest_point_on_polygon(p, vertices):
    """Closest boundary point of a convex polygon/segment to ``p`` and whether ``p`` is inside."""
    q, d, inside = polygon_query(np.asarray(p, dtype=np.float64), vertices)
    return q[0], float(d[0]), bool(inside[0])


def _random_obstacle(rng, cfg):
    lo, hi = cfg.obstacle_size
    size = rng.uniform(lo, hi)
    center = rng.uniform([cfg.bounds[0] + 1, cfg.bounds[1] + 1], [cfg.bounds[2] - 1, cfg.bounds[3] - 1])
    kind = rng.integers(3)
    theta = rng.uniform(0, 2 * np.pi)
    if kind == 0:  # segment
        u = np.array([math.cos(theta), math.sin(theta)]) * size / 2
        verts = np.array([center - u, center + u])
    else:  # triangle or square, counter-clockwise
        k = 3 if kind == 1 else 4
        angles = theta + 2 * np.pi * np.arange(k) / k
        verts = center + (size / 2) * np.column_stack([np.cos(angles), np.sin(angles)])
    return Obstacle(verts)


def _clear_of_obstacles(p, r, obstacles):
    for o in obstacles:
        _, d, inside = closest_point_on_polygon(p, o.vertices)
        if inside or d < r:
            return False
    return True


def generate_scenario(seed, config=None):
    """Place agents, goals and obstacles reproducibly from ``seed``."""
    cfg = config or ScenarioConfig()
    if cfg.max_agents < 1 or cfg.dt <= 0 or cfg.radius <= 0 or cfg.max_attempts < 1:
        raise ValueError("scenario config limits must be positive")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = cfg.bounds
    n_agents = int(rng.integers(min(cfg.min_agents, cfg.max_agents), cfg.max_agents + 1))
    n_obst = int(rng.integers(0, cfg.max_obstacles + 1)) if cfg.max_obstacles > 0 else 0
    obstacles = [_random_obstacle(rng, cfg) for _ in range(n_obst)]
    r = cfg.radius
    lo = np.array([x0 + r, y0 + r])
    hi = np.array([x1 - r, y1 - r])

    def sample(accept):
        for _ in range(cfg.max_attempts):
            p = rng.uniform(lo, hi)
            if accept(p):
                return p
        raise ScenarioInfeasible(f"scenario infeasible: placement failed for seed {seed}")

    starts, goals = [], []
    for _ in range(n_agents):
        s = sample(lambda p: _clear_of_obstacles(p, r, obstacles)
                   and all(math.hypot(*(p - q)) >= 2 * r for q in starts))
        g = sample(lambda p: math.hypot(*(p - s)) >= cfg.min_goal_dist
                   and _clear_of_obstacles(p, r, obstacles)
                   and all(math.hypot(*(p - q)) >= 2 * r for q in goals))
        starts.append(s)
        goals.append(g)
    agents = []
    for i, (s, g) in enumerate(zip(starts, goals)):
        pref = cfg.pref_speed
        if cfg.pref_speed_jitter > 0:
            pref = float(rng.uniform(pref - cfg.pref_speed_jitter, pref + cfg.pref_speed_jitter))
        agents.append(Agent(i, s, np.zeros(2), g, r, max(cfg.max_speed, pref), pref))
    return Scenario(agents, obstacles, tuple(cfg.bounds), cfg.dt, int(seed))


# ---------------------------------------------------------------- 2D linear program
# Lines are (px, py, dx, dy) float tuples: the feasible side is left of d.

def _lp1(lines, i, radius, opt, direction_opt):
    px, py, dx, dy = lines[i]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for j in range(i):
        qx, qy, ex, ey = lines[j]
        denom = dx * ey - dy * ex
        numer = ex * (py - qy) - ey * (px - qx)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    ox, oy = opt
    if direction_opt:
        t = t_right if ox * dx + oy * dy > 0.0 else t_left
    else:
        t = min(max(dx * (ox - px) + dy * (oy - py), t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(lines, radius, opt, direction_opt):
    ox, oy = opt
    if direction_opt:
        result = (ox * radius, oy * radius)
    elif ox * ox + oy * oy > radius * radius:
        n = math.hypot(ox, oy)
        result = (ox / n * radius, oy / n * radius)
    else:
        result = (ox, oy)
    for i, (px, py, dx, dy) in enumerate(lines):
        if dx * (py - result[1]) - dy * (px - result[0]) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines, n_fixed, begin, radius, result):
    distance = 0.0
    for i in range(begin, len(lines)):
        px, py, dx, dy = lines[i]
        if dx * (py - result[1]) - dy * (px - result[0]) > distance:
            proj = list(lines[:n_fixed])
            for j in range(n_fixed, i):
                qx, qy, ex, ey = lines[j]
                determinant = dx * ey - dy * ex
                if abs(determinant) <= EPS:
                    if dx * ex + dy * ey > 0.0:
                        continue
                    point = (0.5 * (px + qx), 0.5 * (py + qy))
                else:
                    t = (ex * (py - qy) - ey * (px - qx)) / determinant
                    point = (px + t * dx, py + t * dy)
                nx, ny = ex - dx, ey - dy
                n = math.hypot(nx, ny)
                proj.append((point[0], point[1], nx / n, ny / n))
            fail, new = _lp2(proj, radius, (-dy, dx), True)
            if fail >= len(proj):
                result = new
            distance = dx * (py - result[1]) - dy * (px - result[0])
    return result


def _solve_lines(lines, v_pref, v_max, n_fixed=0):
    opt = (float(v_pref[0]), float(v_pref[1]))
    fail, result = _lp2(lines, v_max, opt, False)
    if fail < len(lines):
        result = _lp3(lines, n_fixed, fail, v_max, result)
    return result


def _line(h):
    return (float(h.point[0]), float(h.point[1]), float(h.normal[1]), float(-h.normal[0]))


def solve_velocity_lp(halfplanes, v_pref, v_max, n_fixed=0):
    """Velocity in the ``v_max`` disk closest to ``v_pref`` satisfying ``halfplanes``.

    When no such velocity exists, returns the one minimizing the largest
    violation among the non-fixed constraints; the first ``n_fixed`` half-planes
    (obstacles) are kept hard throughout.
    """
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    return np.array(_solve_lines([_line(h) for h in halfplanes], v_pref, float(v_max), n_fixed))


# ---------------------------------------------------------------- ORCA

def _agent_line(px, py, vx, vy, radius, qx, qy, wx, wy, oradius, tau, dt):
    rx, ry = qx - px, qy - py
    ux, uy = vx - wx, vy - wy
    if abs(rx * uy - ry * ux) <= 1e-12 and (rx or ry):
        # exact head-on: nudge the neighbour to our left so we keep right
        n = math.hypot(rx, ry)
        rx, ry = rx - 1e-6 * ry / n, ry + 1e-6 * rx / n
    dist_sq = rx * rx + ry * ry
    comb = radius + oradius
    comb_sq = comb * comb
    if dist_sq > comb_sq:
        inv_tau = 1.0 / tau
        w_x, w_y = ux - inv_tau * rx, uy - inv_tau * ry
        w_len_sq = w_x * w_x + w_y * w_y
        dot1 = w_x * rx + w_y * ry
        if dot1 < 0.0 and dot1 * dot1 > comb_sq * w_len_sq:
            w_len = math.sqrt(w_len_sq)
            nx, ny = w_x / w_len, w_y / w_len
            dx, dy = ny, -nx
            s = comb * inv_tau - w_len
            cx, cy = s * nx, s * ny
        else:
            leg = math.sqrt(dist_sq - comb_sq)
            if rx * w_y - ry * w_x > 0.0:
                dx, dy = (rx * leg - ry * comb) / dist_sq, (rx * comb + ry * leg) / dist_sq
            else:
                dx, dy = -(rx * leg + ry * comb) / dist_sq, -(-rx * comb + ry * leg) / dist_sq
            s = ux * dx + uy * dy
            cx, cy = s * dx - ux, s * dy - uy
    else:
        inv_dt = 1.0 / dt
        w_x, w_y = ux - inv_dt * rx, uy - inv_dt * ry
        w_len = math.hypot(w_x, w_y)
        nx, ny = (w_x / w_len, w_y / w_len) if w_len > 0 else (1.0, 0.0)
        dx, dy = ny, -nx
        s = comb * inv_dt - w_len
        cx, cy = s * nx, s * ny
    return (vx + 0.5 * cx, vy + 0.5 * cy, dx, dy)


def _obstacle_line(pos, q, dist, inside, radius, tau_obst, dt):
    if dist <= EPS:
        return None
    nx, ny = (pos[0] - q[0]) / dist, (pos[1] - q[1]) / dist
    if inside:
        nx, ny, dist = -nx, -ny, -dist
    s = -(dist - radius) / tau_obst if dist > radius else (radius - dist) / dt
    return (s * nx, s * ny, ny, -nx)


def agent_halfplane(a, b, tau, dt):
    """ORCA half-plane that agent ``a`` takes on for neighbour ``b``."""
    px, py, dx, dy = _agent_line(*a.position, *a.velocity, a.radius,
                                 *b.position, *b.velocity, b.radius, tau, dt)
    return HalfPlane(np.array([px, py]), np.array([-dy, dx]))


def preferred_velocity(agent, goal_tol, dt):
    to_goal = agent.goal - agent.position
    d = math.hypot(*to_goal)
    if d <= goal_tol:
        return np.zeros(2)
    if d <= agent.pref_speed * dt:
        return to_goal / dt
    return to_goal / d * agent.pref_speed


def orca_step(agents, obstacles, dt, params=None):
    """New velocities for all ``agents`` from the current (synchronous) state."""
    params = params or OrcaParams()
    if params.tau <= 0:
        raise ValueError("tau must be positive")
    for a in agents:
        if not (np.all(np.isfinite(a.position)) and np.all(np.isfinite(a.velocity))):
            raise ValueError(f"corrupt state: non-finite position/velocity for agent {a.id}")
    order = sorted(agents, key=lambda a: a.id)
    state = [(b.id, float(b.position[0]), float(b.position[1]),
              float(b.velocity[0]), float(b.velocity[1]), b.radius) for b in order]
    nd = params.neighbor_dist
    positions = np.array([a.position for a in agents], dtype=np.float64)
    obst = [polygon_query(positions, o.vertices) for o in obstacles]
    out = {}
    for i, a in enumerate(agents):
        px, py = float(a.position[0]), float(a.position[1])
        vx, vy = float(a.velocity[0]), float(a.velocity[1])
        lines = []
        for q, d, inside in obst:
            if d[i] < nd:
                ln = _obstacle_line((px, py), q[i], float(d[i]), bool(inside[i]),
                                    a.radius, params.tau_obst, dt)
                if ln is not None:
                    lines.append(ln)
        n_fixed = len(lines)
        for bid, qx, qy, wx, wy, br in state:
            if bid == a.id or math.hypot(qx - px, qy - py) >= nd:
                continue
            lines.append(_agent_line(px, py, vx, vy, a.radius, qx, qy, wx, wy, br, params.tau, dt))
        v_pref = preferred_velocity(a, params.goal_tol, dt)
        out[a.id] = np.array(_solve_lines(lines, v_pref, a.max_speed, n_fixed))
    return [out[a.id] for a in agents]


def rollout(scenario, steps):
    """Simulate ``steps`` frames (frame 0 is the initial placement)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    agents = [Agent(a.id, a.position.copy(), a.velocity.copy(), a.goal.copy(),
                    a.radius, a.max_speed, a.pref_speed) for a in scenario.agents]
    ids = np.array([a.id for a in agents])
    frames = [np.array([a.position for a in agents])]
    for _ in range(steps - 1):
        vels = orca_step(agents, scenario.obstacles, scenario.dt, scenario.params)
        for a, v in zip(agents, vels):
            a.velocity = v
            a.position = a.position + v * scenario.dt
        frames.append(np.array([a.position for a in agents]))
    pos = np.stack(frames)  # (steps, n, 2)
    n = len(agents)
    return TrajectorySequence(
        frame_ids=np.repeat(np.arange(steps), n),
        ped_ids=np.tile(ids, steps),
        xy=pos.reshape(-1, 2),
        name=f"orca_{scenario.seed}",
    )


def simulate(seed, steps=60, config=None):
    return rollout(generate_scenario(seed, config), steps)
