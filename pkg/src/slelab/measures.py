"""Green's functions, Radon-Nikodym weights, and the weighted samplers
realizing the rooted-loop and bubble measures restricted to hitting events.

All shipped weights are chat-free: the unknown normalization chat of the
chordal Green's function cancels in Q-tilde = chat * Q, and every estimator
reports masses in units of chat * mu.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import loewner
from .curves import (
    CurveSample,
    MobiusMap,
    _staged_chordal_leg,
    _whole_plane_driving,
    chordal_return_leg,
)
from .drivers import SleParams, _gen, drive_chordal_sle_rho
from .loewner import (
    CHORDAL,
    DomainError,
    InputError,
    MapStack,
    NumericError,
    radial_gap_step,
)

CHORDAL_KIND = "chordal"
LOOP_ROOTED = "loop-rooted"
BUBBLE = "bubble"


@dataclass
class WeightedLoop:
    loop: CurveSample
    weight: float
    event: str
    chat_free: bool = True

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise InputError("weight must be finite and nonnegative")


@dataclass(frozen=True)
class GreenQuery:
    kind: str
    point: complex
    chart: object = None


def green_eval(query: GreenQuery, params: SleParams):
    """Closed-form Green's functions.

    chordal (units of chat): |z|^(1-8/kappa) (Im z)^(kappa/8+8/kappa-2) in
    (H;0,inf), transported through the chart by |g'|^(2-d) covariance;
    loop-rooted: |w|^(-2(2-d)); bubble: |w|^(2(kappa-8)/kappa) *
    (Im w)^((kappa-8)^2/(8 kappa)).
    """
    k = params.kappa
    d = params.d
    w = complex(query.point)
    if query.kind == LOOP_ROOTED:
        if w == 0:
            raise DomainError("point at the root")
        return abs(w) ** (-2.0 * (2.0 - d))
    if query.kind == BUBBLE:
        if w.imag <= 0:
            raise DomainError("point on the boundary")
        return (
            abs(w) ** (2.0 * (k - 8.0) / k)
            * w.imag ** ((k - 8.0) ** 2 / (8.0 * k))
        )
    if query.kind == CHORDAL_KIND:
        fac = 1.0
        if query.chart is not None:
            g = query.chart
            fac = abs(complex(g.deriv(w))) ** (2.0 - d)
            w = complex(g(np.array([w]))[0])
        if w.imag <= 0:
            raise DomainError("point on the boundary")
        return (
            fac
            * abs(w) ** (1.0 - 8.0 / k)
            * w.imag ** (k / 8.0 + 8.0 / k - 2.0)
        )
    raise InputError("unknown Green kind: %r" % (query.kind,))


def _stopped_chart(stack, w, params):
    gw, dgw, tau = stack.forward(np.array([complex(w)]), want_deriv=True,
                                 want_tau=True)
    if not np.isnan(tau[0]):
        raise DomainError("point swallowed by the hull")
    return complex(gw[0]), complex(dgw[0])


def green_after_stop(stack: MapStack, lam, q, w, params: SleParams):
    """Chordal Green's function (units of chat) of the remaining domain of a
    stopped whole-plane chain, from tip e^{i lam} toward the root prime end
    e^{i q}, evaluated at w."""
    k = params.kappa
    d = params.d
    alpha = 8.0 / k + k / 8.0 - 2.0
    gw, dgw = _stopped_chart(stack, w, params)
    el, eq = np.exp(1j * lam), np.exp(1j * q)
    return (
        params.chat
        * abs(dgw) ** (2.0 - d)
        * abs(el - eq) ** (8.0 / k - 1.0)
        / (abs(gw - el) ** (8.0 / k - 1.0) * abs(gw - eq) ** (8.0 / k - 1.0))
        * ((abs(gw) ** 2 - 1.0) / 2.0) ** alpha
    )


def green_after_stop_bubble(stack: MapStack, lam, q, w, params: SleParams):
    """Chordal Green's function (units of chat) of the remaining domain of a
    stopped chordal chain, from tip lam toward the boundary prime end q."""
    k = params.kappa
    d = params.d
    gw, dgw = _stopped_chart(stack, w, params)
    return (
        params.chat
        * abs(dgw) ** (2.0 - d)
        * abs(q - lam) ** (8.0 / k - 1.0)
        / (abs(gw - q) ** (8.0 / k - 1.0) * abs(gw - lam) ** (8.0 / k - 1.0))
        * gw.imag ** (k / 8.0 + 8.0 / k - 2.0)
    )


def q_weight_whole(lam, q, tau, params: SleParams):
    """Q-tilde = 2^(d-2) |sin_2(lam-q)|^(1-8/kappa) e^((d-2) tau)."""
    x = lam - q
    s = abs(np.sin(0.5 * x))
    if s == 0.0:
        raise NumericError("gap at the boundary: weight diverges")
    d = params.d
    return 2.0 ** (d - 2.0) * s ** (1.0 - 8.0 / params.kappa) * np.exp(
        (d - 2.0) * tau
    )


def q_weight_bubble(lam, q, params: SleParams):
    """Q-tilde = |q - lam|^(1-8/kappa) for the bubble construction."""
    if q <= lam:
        raise NumericError("force-point image at or past the driving")
    return (q - lam) ** (1.0 - 8.0 / params.kappa)


def rn_weight_Rw(stack: MapStack, lam, q, w, params: SleParams, tau=None):
    """Radon-Nikodym weight of the w-targeted whole-plane SLE_kappa(2)
    prefix law against the infinity-targeted one."""
    k = params.kappa
    d = params.d
    alpha = k / 8.0 + 8.0 / k - 2.0
    if tau is None:
        tau = stack.capacity().value
    gw, dgw = _stopped_chart(stack, w, params)
    el, eq = np.exp(1j * lam), np.exp(1j * q)
    return (
        abs(w) ** (2.0 * (2.0 - d))
        * np.exp((d - 2.0) * tau)
        * abs(dgw) ** (2.0 - d)
        * (abs(gw) ** 2 - 1.0) ** alpha
        / (abs(gw - el) ** (8.0 / k - 1.0) * abs(gw - eq) ** (8.0 / k - 1.0))
    )


def rn_weight_bubble(stack: MapStack, lam, q, w, a, params: SleParams):
    """Radon-Nikodym weight of the w-targeted chordal SLE_kappa(2, kappa-8)
    prefix law against chordal SLE_kappa(2); q is the a^+ image."""
    k = params.kappa
    gw, dgw = _stopped_chart(stack, w, params)
    wa = abs(complex(w) - a)
    return (
        abs(dgw) ** ((8.0 - k) / 8.0)
        * (abs(gw - lam) / wa) ** ((k - 8.0) / k)
        * (abs(gw - q) / wa) ** ((k - 8.0) / k)
        * (gw.imag / complex(w).imag) ** ((k - 8.0) ** 2 / (8.0 * k))
    )


# ---------------------------------------------------------------------------
# hitting detection


def _refine_circle_hit(stack, k, radius, dt, tol=1e-6):
    """The trace first leaves {|z| < radius} during step k; refine the
    partial capacity so the tip sits on the circle to within tol (in
    capacity time).  Nested grid search: each stage evaluates the tips of
    all candidate fractions in one vectorized inverse pass through the fixed
    first k steps."""
    fixed = MapStack(stack.kind, stack.roots[:k], stack.deltas[:k],
                     t0=stack.t0)
    u = stack.roots[k]
    delta = stack.deltas[k]
    seed = np.exp(1j * u) if stack.kind != CHORDAL else u + 0j
    lo, hi = 0.0, 1.0
    m = 40
    while (hi - lo) * delta > tol:
        fr = np.linspace(lo, hi, m)
        tips = np.empty(m, dtype=complex)
        for j, f in enumerate(fr):
            if f * delta > 0:
                tips[j] = loewner._radial_map(
                    np.array([seed]), u, -f * delta
                )[0] if stack.kind != CHORDAL else loewner._chordal_map(
                    np.array([seed]), u, -f * delta
                )[0]
            else:
                tips[j] = seed
        tips = fixed.inverse(tips)
        out = np.abs(tips) >= radius
        j = int(np.argmax(out)) if np.any(out) else m - 1
        lo, hi = fr[max(j - 1, 0)], fr[j]
        if j == 0:
            break
    return hi


def sample_rooted_loop(params: SleParams, radius, Tmax=None, dt=0.01, rng=0,
                       prefix_only=False) -> WeightedLoop:
    """Rooted-loop sample restricted to hitting the circle of the given
    radius around the root 0: whole-plane SLE_kappa(2) run to the first hit
    of the circle, weighted by Q-tilde there, then a chordal return leg from
    the tip to 0 in the remaining domain."""
    if radius <= 0:
        raise InputError("radius must be positive")
    g = _gen(rng)
    t0 = np.log(radius) - 8.0
    if Tmax is None:
        # rad(K_T) >= e^T by Koebe: the circle is hit before Tmax
        Tmax = np.log(radius) + 2.0
    dp = _whole_plane_driving(params, t0, Tmax, dt, g)
    pts, ts = loewner.whole_plane_trace(dp)
    hits = np.abs(pts) >= radius
    if not np.any(hits):
        loop = CurveSample(pts, ts, "rooted-loop", marked={"root": 0j},
                           provenance={"resample": True})
        return WeightedLoop(loop, 0.0, "tau_circle_r=%g" % radius)
    k = int(np.argmax(hits)) - 1  # crossing happens during step k
    k = max(k, 0)
    stack = MapStack.from_driving(dp)
    frac = _refine_circle_hit(stack, k, radius, dt)
    sub = stack.truncated(k, frac)
    tau = sub.capacity().value
    lam_tau = float(dp.values[k])
    q_tau = lam_tau - float(
        radial_gap_step(dp.values[k] - dp.companions["q"][k],
                        frac * stack.deltas[k])
    )
    weight = q_weight_whole(lam_tau, q_tau, tau, params)
    event = "tau_circle_r=%g" % radius
    if prefix_only:
        loop = CurveSample(pts[: k + 1], ts[: k + 1], "rooted-loop-prefix",
                           marked={"root": 0j},
                           provenance={"tau": tau, "lam": lam_tau,
                                       "q": q_tau})
        return WeightedLoop(loop, weight, event)
    tol = 1e-3 * radius
    pts3, lab3, _ = chordal_return_leg(
        params, lam_tau, q_tau, dt, g, sub.inverse, 0j, tol
    )
    allpts = np.r_[0j, pts[: k + 1], sub.tip(), pts3]
    times = np.r_[ts[0] - dt, ts[: k + 1], tau, tau + lab3]
    loop = CurveSample(allpts, times, "rooted-loop", marked={"root": 0j},
                       provenance={"tau": tau, "resample": False,
                                   "kappa": params.kappa, "dt": dt})
    return WeightedLoop(loop, weight, event)


def sample_bubble(params: SleParams, a, stop, dt=0.01, rng=0,
                  prefix_only=False) -> WeightedLoop:
    """Bubble sample rooted at a: chordal SLE_kappa(2) from a with force
    point a^+ run to the stopping rule, weighted by Q-tilde there, then a
    chordal return leg from the tip to a^+ in the remaining domain.

    stop: ("capacity", tau) or ("radius", r) for the first exit of
    {|z - a| < r}.
    """
    g = _gen(rng)
    a = float(a)
    eps0 = 1e-3 * np.sqrt(dt)
    mode, val = stop
    if mode == "capacity":
        T = float(val)
    elif mode == "radius":
        # diam(K_t) <= q+ - q- and hcap ~ r^2: generous capacity ceiling
        T = 4.0 * float(val) ** 2
    else:
        raise InputError("unknown stopping rule: %r" % (mode,))
    n = max(int(round(T / dt)), 4)
    dp = drive_chordal_sle_rho(params, [(a + eps0, 2.0)], n * dt, dt, g,
                               lam0=a)
    pts, ts = loewner.chordal_trace(dp)
    if mode == "radius":
        r = float(val)
        hits = np.abs(pts - a) >= r
        if not np.any(hits):
            loop = CurveSample(pts, ts, "bubble", marked={"root": a + 0j},
                               provenance={"resample": True})
            return WeightedLoop(loop, 0.0, "tau_circle_r=%g" % r)
        k = int(np.argmax(hits))
        event = "tau_circle_r=%g" % r
    else:
        k = n
        event = "capacity=%g" % T
    lam_tau = float(dp.values[k])
    q_tau = float(dp.companions["q"][k])
    weight = q_weight_bubble(lam_tau, q_tau, params)
    stack = MapStack(CHORDAL, dp.values[:k], np.full(k, dt),
                     lam_end=lam_tau)
    if prefix_only:
        loop = CurveSample(pts[: k + 1], ts[: k + 1], "bubble-prefix",
                           marked={"root": a + 0j},
                           provenance={"lam": lam_tau, "q": q_tau})
        return WeightedLoop(loop, weight, event)
    # chart (H; lam_tau, q_tau) -> (H; 0, inf): continuation tip -> a^+
    if abs(q_tau - lam_tau) < 1e-12:
        q_tau = lam_tau + 1e-9
    m = MobiusMap(-1.0, lam_tau, 1.0, -q_tau)

    def pull(pts_m):
        # the continuation lives in (H; 0, inf) of the m-chart
        return stack.inverse(m.inverse()(pts_m))

    scale = max(np.max(np.abs(pts[: k + 1] - a)), np.sqrt(dt))
    tol = 1e-3 * scale
    roots, deltas, lam, _ = _staged_chordal_leg(
        params, dt, g, lambda tip: abs(pull(np.array([tip]))[0] - a) < tol
    )
    st3 = MapStack(CHORDAL, roots, deltas, lam_end=lam)
    pts3 = pull(loewner.stack_trace(st3)[1:])
    allpts = np.r_[pts[: k + 1], pts3, a]
    times = np.r_[ts[: k + 1],
                  ts[k] + np.cumsum(deltas),
                  ts[k] + np.sum(deltas) + deltas[-1]]
    loop = CurveSample(allpts, times, "bubble", marked={"root": a + 0j},
                       provenance={"resample": False, "kappa": params.kappa,
                                   "dt": dt})
    return WeightedLoop(loop, weight, event)


# ---------------------------------------------------------------------------
# functional estimator


@dataclass
class EstimatorResult:
    estimate: float
    se: float
    n: int
    rejected: int = 0

    def to_json(self):
        return json.dumps({"estimate": self.estimate, "se": self.se,
                           "n": self.n, "rejected": self.rejected})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["estimate"], d["se"], d["n"], d["rejected"])


def _region_area_and_sampler(K):
    kind = K[0]
    if kind == "disk":
        c, r = complex(K[1]), float(K[2])
        area = np.pi * r * r

        def draw(g):
            while True:
                z = complex(g.uniform(-r, r), g.uniform(-r, r))
                if abs(z) <= r:
                    return c + z

        def member(z):
            return np.abs(z - c) <= r

        return area, draw, member
    if kind == "annulus":
        c, r1, r2 = complex(K[1]), float(K[2]), float(K[3])
        if not 0 <= r1 < r2:
            raise InputError("annulus radii must satisfy 0 <= r1 < r2")
        area = np.pi * (r2 * r2 - r1 * r1)

        def draw(g):
            u = g.uniform(r1 * r1, r2 * r2)
            th = g.uniform(0.0, 2.0 * np.pi)
            return c + np.sqrt(u) * np.exp(1j * th)

        def member(z):
            dd = np.abs(z - c)
            return (r1 <= dd) & (dd <= r2)

        return area, draw, member
    raise InputError("unknown region kind: %r" % (kind,))


def loop_functional_estimator(f, K, params: SleParams, N, rng=0, dt=0.02,
                              content_window=None) -> EstimatorResult:
    """Monte Carlo estimate of int f * 1_{Gamma_K} d(chat * mu_0^1) by the
    two-sided decomposition: draw w uniform on K, gamma two-sided through
    (0, w), and average f(gamma) G_C(w) area(K) / Cont(gamma cap K)."""
    from . import content as ct
    from .curves import sample_two_sided_whole_plane

    if K[0] == "disk" and abs(complex(K[1])) <= float(K[2]):
        raise InputError("region must avoid the root 0")
    area, draw, member = _region_area_and_sampler(K)
    g = _gen(rng)
    vals = []
    rejected = 0
    for _ in range(N):
        w = draw(g)
        gamma = sample_two_sided_whole_plane(params, 0j, w, dt=dt, rng=g)
        cm = ct.content_measure(gamma.points, params, window=content_window)
        inc = np.diff(cm.cumulative)
        cont_K = float(np.sum(inc[member(gamma.points[:-1])]))
        if cont_K <= 1e-12:
            rejected += 1
            continue
        gc = green_eval(GreenQuery(LOOP_ROOTED, w), params)
        vals.append(f(gamma) * gc * area / cont_K)
    vals = np.asarray(vals, dtype=float)
    if len(vals) == 0:
        raise NumericError("all samples rejected")
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else np.inf
    return EstimatorResult(est, se, len(vals), rejected)


# ---------------------------------------------------------------------------
# ensemble persistence


def save_ensemble(dirpath, loops):
    os.makedirs(dirpath, exist_ok=True)
    index = []
    for i, wl in enumerate(loops):
        name = "loop_%05d.csv" % i
        with open(os.path.join(dirpath, name), "w") as fh:
            fh.write(wl.loop.to_csv())
        index.append({"file": name, "weight": wl.weight, "event": wl.event,
                      "chat_free": wl.chat_free, "kind": wl.loop.kind})
    with open(os.path.join(dirpath, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)


def load_ensemble(dirpath):
    with open(os.path.join(dirpath, "index.json")) as fh:
        index = json.load(fh)
    out = []
    for rec in index:
        with open(os.path.join(dirpath, rec["file"])) as fh:
            cur = CurveSample.from_csv(fh.read(), kind=rec["kind"])
        out.append(WeightedLoop(cur, rec["weight"], rec["event"],
                                rec["chat_free"]))
    return out
