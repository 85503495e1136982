"""Brownian loop soup: Poisson sampling from the rooted-loop decomposition
dA(z) dt / (2 pi t^2), Monte Carlo hitting masses with window / duration
exhaustion, the log-log-normalized two-set loop mass, restriction weights,
and the Schwarzian loop-mass identity checks.

Bridges are sampled at a fixed number of steps per unit time (capped for
very long loops); hitting and containment tests refine the polyline by
recursive bridge-midpoint sampling, which is exact in law, down to a small
fraction of the target scale, where a half-step overshoot correction
absorbs the residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import spatial

from . import loewner
from .drivers import _gen
from .loewner import CHORDAL, InputError, MapStack, NumericError

# residual half-step Brownian overshoot factor at the refinement floor
OVERSHOOT = 0.5
PRUNE = 4.0  # segments farther than PRUNE * sqrt(h) from the level are left


@dataclass
class BrownianLoop:
    """Closed Brownian bridge rooted at `root` with the given duration."""

    root: complex
    duration: float
    path: np.ndarray

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=complex)
        if self.duration <= 0:
            raise InputError("duration must be positive")
        if self.path[0] != self.root or self.path[-1] != self.root:
            raise InputError("path must start and end at the root")

    @property
    def step(self):
        return self.duration / (len(self.path) - 1)


@dataclass
class LoopSoup:
    window: tuple  # (xmin, xmax, ymin, ymax)
    t_min: float
    t_max: float
    loops: list
    intensity: float = 1.0


def _window_area(window):
    x0, x1, y0, y1 = window
    if not (x1 > x0 and y1 > y0):
        raise InputError("degenerate window")
    return (x1 - x0) * (y1 - y0)


def soup_mean_count(window, t_min, t_max):
    """Closed-form mean loop count of the rooted-loop intensity."""
    if not 0 < t_min < t_max:
        raise InputError("need 0 < t_min < t_max")
    return _window_area(window) * (1.0 / t_min - 1.0 / t_max) / (2.0 * np.pi)


def _draw_durations(t_min, t_max, g, size):
    """Inverse-CDF sample of the density ~ t^{-2} on [t_min, t_max]."""
    u = g.uniform(0.0, 1.0, size)
    return 1.0 / (1.0 / t_min - u * (1.0 / t_min - 1.0 / t_max))


def sample_bridge(root, duration, n, g):
    """Complex Brownian bridge from root back to root in n steps."""
    dt = duration / n
    inc = (g.normal(0.0, 1.0, n) + 1j * g.normal(0.0, 1.0, n)) * np.sqrt(dt)
    w = np.r_[0.0 + 0j, np.cumsum(inc)]
    s = np.linspace(0.0, 1.0, n + 1)
    path = complex(root) + (w - s * w[-1])
    path[0] = path[-1] = complex(root)  # pin against rounding
    return path


def sample_soup(window, t_min, t_max, resolution, rng) -> LoopSoup:
    """Poisson soup of Brownian loops rooted in the window with durations in
    [t_min, t_max]; `resolution` is the bridge step count per unit time."""
    g = _gen(rng)
    mean = soup_mean_count(window, t_min, t_max)
    n_loops = g.poisson(mean)
    x0, x1, y0, y1 = window
    loops = []
    for _ in range(n_loops):
        root = complex(g.uniform(x0, x1), g.uniform(y0, y1))
        t = float(_draw_durations(t_min, t_max, g, None))
        n = max(16, int(np.ceil(resolution * t)))
        loops.append(BrownianLoop(root, t, sample_bridge(root, t, n, g)))
    return LoopSoup(tuple(window), t_min, t_max, loops)


# ---------------------------------------------------------------------------
# refined hitting / containment tests


def _dips_below(path, dt, dfun, level, scale, g):
    """Does the bridge dip to dfun <= level?  dfun must be 1-Lipschitz
    (a distance).  Candidate segments are refined by midpoint sampling down
    to the floor (scale/8)^2, where the residual half-step overshoot is
    absorbed by a small inflation."""
    d = dfun(path)
    if np.min(d) <= level:
        return True
    floor = (scale / 8.0) ** 2
    rt = np.sqrt(dt)
    near = np.minimum(d[:-1], d[1:]) <= level + PRUNE * rt
    if dt <= floor:
        return bool(np.min(d[np.r_[near, False] | np.r_[False, near]],
                           initial=np.inf)
                    <= level + OVERSHOOT * rt)
    stack = [(path[k], path[k + 1], dt) for k in np.flatnonzero(near)]
    while stack:
        a, b, h = stack.pop()
        da, db = dfun(np.array([a, b]))
        if min(da, db) > level + PRUNE * np.sqrt(h):
            continue
        if h <= floor:
            if min(da, db) <= level + OVERSHOOT * np.sqrt(h):
                return True
            continue
        mid = 0.5 * (a + b) + np.sqrt(h / 4.0) * complex(g.normal(),
                                                         g.normal())
        if dfun(np.array([mid]))[0] <= level:
            return True
        stack.append((a, mid, 0.5 * h))
        stack.append((mid, b, 0.5 * h))
    return False


def _refined_min_dist(path, dt, z0, floor, g):
    """Minimum distance of the bridge to z0, refined below the polyline
    resolution by midpoint sampling of segments that could plausibly dip
    closer than the current best."""
    d = np.abs(path - z0)
    best = float(np.min(d))
    near = np.minimum(d[:-1], d[1:]) <= best + PRUNE * np.sqrt(dt)
    stack = [(path[k], path[k + 1], dt) for k in np.flatnonzero(near)]
    while stack:
        a, b, h = stack.pop()
        da, db = abs(a - z0), abs(b - z0)
        best = min(best, da, db)
        if min(da, db) > best + PRUNE * np.sqrt(h) or h <= floor:
            continue
        mid = 0.5 * (a + b) + np.sqrt(h / 4.0) * complex(g.normal(),
                                                         g.normal())
        best = min(best, abs(mid - z0))
        stack.append((a, mid, 0.5 * h))
        stack.append((mid, b, 0.5 * h))
    return best


def _as_set(V):
    if isinstance(V, np.ndarray):
        return ("poly", V)
    if hasattr(V, "points"):
        return ("poly", V.points)
    return V


def _set_hitter(V):
    """Returns hit(path, dt, g) -> bool for a disk or polyline set."""
    V = _as_set(V)
    if V[0] == "disk":
        c, r = complex(V[1]), float(V[2])
        dfun = lambda z: np.abs(z - c)  # noqa: E731
        return lambda path, dt, g: _dips_below(path, dt, dfun, r, r, g)
    if V[0] == "poly":
        pts = np.asarray(V[1], dtype=complex)
        pts = pts[np.isfinite(pts)]
        tree = spatial.cKDTree(np.c_[pts.real, pts.imag])
        segs = np.abs(np.diff(pts))
        own = 0.5 * float(np.median(segs[segs > 0])) if np.any(segs > 0) \
            else 1e-3

        def dfun(z):
            z = np.atleast_1d(z)
            d, _ = tree.query(np.c_[z.real, z.imag], k=1)
            return d

        return lambda path, dt, g: _dips_below(path, dt, dfun, own,
                                               max(own, 1e-3), g)
    raise InputError("unknown set kind: %r" % (V[0],))


def _set_cloud(V):
    V = _as_set(V)
    if V[0] == "disk":
        return np.array([complex(V[1])]), float(V[2])
    pts = np.asarray(V[1], dtype=complex)
    return pts[np.isfinite(pts)], 0.0


def set_separation(V1, V2):
    c1, r1 = _set_cloud(V1)
    c2, r2 = _set_cloud(V2)
    s1 = c1[:: max(1, len(c1) // 400 + 1)]
    s2 = c2[:: max(1, len(c2) // 400 + 1)]
    d = float(np.min(np.abs(s1[:, None] - s2[None, :]))) - r1 - r2
    if d <= 0:
        raise InputError("sets must be disjoint")
    return d


def _domain_tester(D):
    """Returns contained(path, dt, g) -> bool."""
    if D is None or D[0] == "whole":
        return lambda path, dt, g: True
    if D[0] == "complement_disk":
        c, r = complex(D[1]), float(D[2])
        dfun = lambda z: np.abs(z - c)  # noqa: E731
        return lambda path, dt, g: not _dips_below(path, dt, dfun, r, r, g)
    if D[0] == "disk":
        c, r = complex(D[1]), float(D[2])
        dfun = lambda z: r - np.abs(z - c)  # noqa: E731
        return lambda path, dt, g: not _dips_below(path, dt, dfun, 0.0,
                                                   0.25 * r, g)
    if D[0] == "halfplane":
        dfun = lambda z: np.atleast_1d(z).imag  # noqa: E731
        return lambda path, dt, g: not _dips_below(path, dt, dfun, 0.0,
                                                   0.05, g)
    raise InputError("unknown domain kind: %r" % (D[0],))


# ---------------------------------------------------------------------------
# exhaustion Monte Carlo


@dataclass
class SoupConfig:
    window: tuple = (-4.0, 4.0, -4.0, 4.0)
    t_min: float = 0.0  # 0 -> derived from the set separation
    t_max: float = 16.0
    resolution: float = 64.0
    n_samples: int = 1200
    n_stages: int = 9
    tol: float = 0.02
    max_steps: int = 2048


@dataclass
class MassEstimate:
    value: float
    se: float
    increments: list
    stages: list
    converged: bool

    def to_json(self):
        return json.dumps(
            {
                "value": self.value,
                "se": self.se,
                "increments": list(self.increments),
                "stages": [list(s) for s in self.stages],
                "converged": self.converged,
            }
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["value"], d["se"], d["increments"],
                   [(tuple(s[0]), s[1]) for s in d["stages"]],
                   d["converged"])


def _scale_window(window, f):
    x0, x1, y0, y1 = window
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return (cx + f * (x0 - cx), cx + f * (x1 - cx),
            cy + f * (y0 - cy), cy + f * (y1 - cy))


def _draw_roots(outer, inner, n, g):
    """Uniform roots in outer window minus the (optional) inner window."""
    x0, x1, y0, y1 = outer
    out = np.empty(n, dtype=complex)
    got = 0
    while got < n:
        m = 2 * (n - got) + 8
        z = g.uniform(x0, x1, m) + 1j * g.uniform(y0, y1, m)
        if inner is not None:
            ix0, ix1, iy0, iy1 = inner
            keep = ~(
                (z.real >= ix0) & (z.real <= ix1)
                & (z.imag >= iy0) & (z.imag <= iy1)
            )
            z = z[keep]
        take = min(len(z), n - got)
        out[got: got + take] = z[:take]
        got += take
    return out


def _mass_scan(indicator, n_levels, t_min, config, g):
    """Exhaustion Monte Carlo for the rooted-loop measure of an event.

    indicator(path, dt, g) returns an n_levels vector of {0,1}.  Stages
    enlarge the root window (x2) and the duration cap (x4); each stage's
    contribution is sampled on the fresh region only, so the running total
    is a genuine exhaustion.  Stops once a stage adds less than tol.
    """
    masses = np.zeros(n_levels)
    var = np.zeros(n_levels)
    increments = []
    stages = []
    converged = False
    prev_w = None
    prev_t = None
    for s in range(config.n_stages):
        W = _scale_window(config.window, 2.0 ** s)
        t_hi = config.t_max * 4.0 ** s
        if s == 0:
            strata = [(W, None, t_min, t_hi)]
        else:
            strata = [
                (W, prev_w, t_min, t_hi),  # new window shell, all durations
                (prev_w, None, prev_t, t_hi),  # old window, new durations
            ]
        stage_mass = np.zeros(n_levels)
        for outer, inner, t_lo, t_hi_s in strata:
            area = _window_area(outer)
            if inner is not None:
                area -= _window_area(inner)
            n = config.n_samples
            roots = _draw_roots(outer, inner, n, g)
            # importance-sample durations log-uniformly (the raw t^{-2}
            # intensity concentrates at t_min where loops are too small to
            # register) and carry the density ratio in the weight
            L = np.log(t_hi_s / t_lo)
            ts = t_lo * np.exp(L * g.uniform(0.0, 1.0, n))
            scale = area * L / (2.0 * np.pi)
            acc = np.zeros(n_levels)
            acc2 = np.zeros(n_levels)
            for i in range(n):
                # per-loop substream: indicator-internal refinement draws
                # then cannot desynchronize later loops, so runs with a
                # shared master seed stay loop-for-loop comparable
                gi = np.random.default_rng(int(g.integers(1 << 63)))
                steps = max(16, min(int(np.ceil(config.resolution * ts[i])),
                                    config.max_steps))
                path = sample_bridge(roots[i], ts[i], steps, gi)
                v = (scale / ts[i]) * indicator(path, ts[i] / steps, gi)
                acc += v
                acc2 += v * v
            m = acc / n
            stage_mass += m
            var += np.maximum(acc2 / n - m * m, 0.0) / n
        masses += stage_mass
        increments.append(float(np.max(stage_mass)))
        stages.append((W, t_hi))
        prev_w, prev_t = W, t_hi
        if s > 0 and increments[-1] < config.tol:
            converged = True
            break
    return masses, np.sqrt(var), increments, stages, converged


def hitting_mass(V1, V2, D, config=None, rng=0) -> MassEstimate:
    """Rooted-loop-measure mass of loops contained in D that hit both V1 and
    V2, by exhaustion Monte Carlo.  Divergent configurations (for example
    D the whole plane, where arbitrarily large loops contribute a
    log-log-divergent mass) come back with converged=False."""
    config = config or SoupConfig()
    g = _gen(rng)
    sep = set_separation(V1, V2)
    t_min = config.t_min if config.t_min > 0 else (sep / 8.0) ** 2
    hit1 = _set_hitter(V1)
    hit2 = _set_hitter(V2)
    contained = _domain_tester(D)

    def indicator(path, dt, g):
        ok = (
            contained(path, dt, g)
            and hit1(path, dt, g)
            and hit2(path, dt, g)
        )
        return np.array([1.0 if ok else 0.0])

    masses, se, incs, stages, conv = _mass_scan(indicator, 1, t_min, config, g)
    return MassEstimate(float(masses[0]), float(se[0]), incs, stages, conv)


@dataclass
class LambdaStarEstimate:
    value: float
    se: float
    levels: np.ndarray
    estimates: np.ndarray
    increments: np.ndarray
    stabilized: bool
    converged: bool

    def to_json(self):
        return json.dumps(
            {
                "value": self.value,
                "se": self.se,
                "levels": self.levels.tolist(),
                "estimates": self.estimates.tolist(),
                "increments": self.increments.tolist(),
                "stabilized": self.stabilized,
                "converged": self.converged,
            }
        )


def lambda_star(V1, V2, config=None, rng=0, z0=0j,
                k_levels=8) -> LambdaStarEstimate:
    """Normalized two-set loop mass: the r -> 0 limit of the mass of loops
    hitting both sets while avoiding B(z0, r), minus log log(1/r), over
    r = 2^{-k}.  The avoidance distance is refined below the bridge
    resolution by midpoint sampling."""
    config = config or SoupConfig()
    g = _gen(rng)
    z0 = complex(z0)
    sep = set_separation(V1, V2)
    t_min = config.t_min if config.t_min > 0 else (sep / 8.0) ** 2
    rs = 2.0 ** -np.arange(1, k_levels + 1)
    floor = (rs[-1] / 8.0) ** 2
    hit1 = _set_hitter(V1)
    hit2 = _set_hitter(V2)

    def indicator(path, dt, g):
        if not (hit1(path, dt, g) and hit2(path, dt, g)):
            return np.zeros(k_levels)
        dmin = _refined_min_dist(path, dt, z0, floor, g)
        return (dmin > rs).astype(float)

    masses, se, incs, stages, conv = _mass_scan(
        indicator, k_levels, t_min, config, g
    )
    est = masses - np.log(np.log(1.0 / rs))
    level_incs = np.abs(np.diff(est))
    comb_se = float(np.sqrt(se[-1] ** 2 + se[-2] ** 2))
    stabilized = bool(level_incs[-1] <= max(comb_se, 1e-12))
    return LambdaStarEstimate(float(est[-1]), float(se[-1]), rs, est,
                              level_incs, stabilized, conv)


# ---------------------------------------------------------------------------
# restriction weights


def _curve_contained(pts, D):
    """Closed containment of a polyline's vertices (curves may touch the
    boundary, e.g. at a chordal root)."""
    if D is None or D[0] == "whole":
        return True
    if D[0] == "halfplane":
        return bool(np.min(pts.imag) >= -1e-12)
    if D[0] == "disk":
        return bool(np.max(np.abs(pts - complex(D[1]))) <= float(D[2])
                    + 1e-12)
    if D[0] == "complement_disk":
        return bool(np.min(np.abs(pts - complex(D[1]))) >= float(D[2]))
    raise InputError("unknown domain kind: %r" % (D[0],))


def restriction_weight(curve, domain, params, config=None, rng=0):
    """Multiplicative weight exp(c * loop mass) converting a loop/bubble
    ensemble to its subdomain restriction.

    domain: ("whole",) -> 1; ("complement_disk", c, r) -> the weight
    exp(c * Lambda*(curve, disk)) on the containment event, else 0;
    ("chordal", D, U) -> exp(c * mass_D(curve, U)) for curves in D avoiding
    the removed region U.
    """
    pts = np.asarray(curve.points if hasattr(curve, "points") else curve,
                     dtype=complex)
    pts = pts[np.isfinite(pts)]
    if domain is None or domain[0] == "whole":
        return 1.0
    if domain[0] == "complement_disk":
        c, r = complex(domain[1]), float(domain[2])
        if np.min(np.abs(pts - c)) <= r:
            return 0.0
        if params.c == 0.0:
            return 1.0
        lam = lambda_star(pts, ("disk", c, r), config, rng, z0=c)
        if not lam.converged:
            raise NumericError("loop-mass exhaustion did not converge")
        return float(np.exp(params.c * lam.value))
    if domain[0] == "chordal":
        _, D, U = domain
        g = _gen(rng)
        if not _curve_contained(pts, D):
            return 0.0
        cU, rU = _set_cloud(U)
        if float(np.min(np.abs(pts[:, None] - cU[None, :]))) <= rU:
            return 0.0
        if params.c == 0.0:
            return 1.0
        m = hitting_mass(pts, U, D, config, g)
        if not m.converged:
            raise NumericError("loop-mass exhaustion did not converge")
        return float(np.exp(params.c * m.value))
    raise InputError("unknown domain kind: %r" % (domain[0],))


# ---------------------------------------------------------------------------
# Schwarzian identity


@dataclass
class SchwarzianCheck:
    right: float
    left: float
    deriv: np.ndarray
    schwarzian: np.ndarray


def _angle_deriv(W, theta):
    """Derivative of the boundary angle map of a circle-preserving Mobius
    map: e^{i W~(theta)} = W(e^{i theta})."""
    z = np.exp(1j * np.asarray(theta, dtype=float))
    val = z * W.deriv(z) / W(z)
    return val.real


def _mobius_disk(W, c, r):
    """Image of a disk under a Mobius map, as (center, radius)."""
    zs = c + r * np.exp(1j * np.array([0.0, 2.0, 4.0]))
    w1, w2, w3 = W(zs)
    ax, ay = w1.real, w1.imag
    bx, by = w2.real, w2.imag
    cx, cy = w3.real, w3.imag
    dd = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax ** 2 + ay ** 2) * (by - cy) + (bx ** 2 + by ** 2) * (cy - ay)
          + (cx ** 2 + cy ** 2) * (ay - by)) / dd
    uy = ((ax ** 2 + ay ** 2) * (cx - bx) + (bx ** 2 + by ** 2) * (ax - cx)
          + (cx ** 2 + cy ** 2) * (bx - ax)) / dd
    cc = complex(ux, uy)
    return cc, abs(w1 - cc)


def schwarzian_identity_eval(W, stack: MapStack, params, rng=0, config=None,
                             compute_left=False,
                             ref_set=("disk", 5.0 + 0j, 1.0)) -> SchwarzianCheck:
    """Both sides of the loop-mass / Schwarzian identity along a driving
    prefix.

    Right side: for chordal stacks, (1/6) * sum S(W_t)(lambda_t) dt with
    W_t = g_{W(K_t)} o W o g_{K_t}^{-1} evaluated numerically through the
    map stacks; for whole-plane/radial stacks with Mobius W, the closed-form
    reduction S(W~)(lambda) = -(W~'(lambda)^2 - 1)/2 makes the combined
    integrand (1/6) S + (1/12)(W~'^2 - 1) vanish identically.

    Left side (optional, Monte Carlo): difference of normalized loop masses
    between the image and original configurations, with shared seeds so the
    identity-map case is exactly 0.
    """
    if stack.kind == CHORDAL:
        chain = loewner.image_chain(stack, W, want_schwarzian=True)
        sch = chain["schwarzian"]
        dW = chain["dW"]
        right = float(np.sum(sch * stack.deltas) / 6.0)
    else:
        dW = _angle_deriv(W, stack.roots)
        sch = -(dW ** 2 - 1.0) / 2.0
        right = float(np.sum((sch / 6.0 + (dW ** 2 - 1.0) / 12.0)
                             * stack.deltas))
    left = np.nan
    if compute_left:
        seed = int(_gen(rng).integers(1 << 31))
        if stack.kind != CHORDAL:
            pts = stack.inverse(np.exp(1j * stack.roots))
        else:
            pts = loewner.stack_trace(stack)
        c0, r0 = complex(ref_set[1]), float(ref_set[2])
        a = lambda_star(pts, ("disk", c0, r0), config, seed)
        ci, ri = _mobius_disk(W, c0, r0)
        b = lambda_star(np.asarray(W(pts), dtype=complex),
                        ("disk", ci, ri), config, seed)
        left = float(b.value - a.value)
    return SchwarzianCheck(right, left, np.asarray(dW), np.asarray(sch))
