"""Curve-family samplers: chordal SLE, whole-plane SLE_kappa(2), and the
two-sided (loop) constructions assembled leg by leg through remaining-domain
charts.

All stitching happens at capacity stopping times via chart images of the tip
and of the marked prime ends; raw boundary coordinates are never used.  Legs
toward a finite target are truncated (geometrically staged capacity for
chordal legs) and closed by appending the exact target point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loewner
from .loewner import (
    CHORDAL,
    RADIAL,
    WHOLE_PLANE,
    DomainError,
    DrivingPath,
    InputError,
    MapStack,
    NumericError,
)
from .drivers import (
    SleParams,
    _gen,
    drive_chordal_sle_rho,
    drive_radial_rho,
    stationary_gap_sample,
)

TWO_SIDED_WP = "two-sided-whole-plane"
TWO_SIDED_RADIAL = "two-sided-radial"
DEGENERATE_RADIAL = "degenerate-two-sided-radial"

STITCH_TOL = 1e-6


@dataclass(eq=False)
class CurveSample:
    """Planar polyline with capacity timestamps.

    For stitched kinds the timestamps of later legs are labels (capacity of
    the leg's own chart), monotone by construction but not capacities of the
    composite hull.
    """

    points: np.ndarray
    times: np.ndarray
    kind: str
    marked: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)
        self.times = np.asarray(self.times, dtype=float)
        if self.points.shape != self.times.shape:
            raise InputError("points and times misaligned")

    def to_csv(self):
        lines = ["index,t,re,im"]
        for k in range(len(self.points)):
            lines.append(
                "%d,%.17g,%.17g,%.17g"
                % (k, self.times[k], self.points[k].real, self.points[k].imag)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, kind="chordal", marked=None, provenance=None):
        rows = text.strip().splitlines()[1:]
        data = np.array([[float(v) for v in r.split(",")] for r in rows])
        return cls(
            points=data[:, 2] + 1j * data[:, 3],
            times=data[:, 1],
            kind=kind,
            marked=marked or {},
            provenance=provenance or {},
        )

    def diameter(self):
        pts = self.points[np.isfinite(self.points)]
        lo = complex(pts.real.min(), pts.imag.min())
        hi = complex(pts.real.max(), pts.imag.max())
        # bounding-box diagonal bounds diam within sqrt(2); exact pairwise
        # diameter for modest sizes
        if len(pts) <= 4000:
            step = 1
        else:
            step = len(pts) // 4000 + 1
        sub = pts[::step]
        return float(np.max(np.abs(sub[:, None] - sub[None, :])))


@dataclass(frozen=True)
class MobiusMap:
    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        if self.a * self.d - self.b * self.c == 0:
            raise InputError("degenerate Mobius coefficients")

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.empty_like(z)
        inf_in = ~np.isfinite(z)
        zs = np.where(inf_in, 0.0, z)
        num = self.a * zs + self.b
        den = self.c * zs + self.d
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den != 0, num / den, np.inf + 0j)
        if self.c != 0:
            out = np.where(inf_in, self.a / self.c, out)
        else:
            out = np.where(inf_in, np.inf + 0j, out)
        return out if out.ndim else complex(out)

    def inverse(self):
        return MobiusMap(self.d, -self.b, -self.c, self.a)

    def compose(self, other):
        """self o other."""
        return MobiusMap(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def deriv(self, z):
        z = np.asarray(z, dtype=complex)
        det = self.a * self.d - self.b * self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            return det / (self.c * z + self.d) ** 2

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0, 1.0)


def mobius_apply(curve: CurveSample, F: MobiusMap) -> CurveSample:
    """Pointwise image; timestamps retained as labels."""
    if F.c != 0:
        pole = -F.d / F.c
        if np.any(np.abs(curve.points - pole) == 0.0):
            raise DomainError("curve vertex at the Mobius pole")
    marked = {k: complex(F(v)) for k, v in curve.marked.items()}
    prov = dict(curve.provenance)
    prov["mobius"] = (F.a, F.b, F.c, F.d)
    return CurveSample(F(curve.points), curve.times.copy(), curve.kind,
                       marked, prov)


def _chart_from(chart, pts):
    if chart is None:
        return np.asarray(pts, dtype=complex)
    if isinstance(chart, MobiusMap):
        return chart.inverse()(pts)
    return chart.from_chart(pts)


def _chart_to(chart, pts):
    if chart is None:
        return np.asarray(pts, dtype=complex)
    if isinstance(chart, MobiusMap):
        return chart(pts)
    return chart.to_chart(pts)


def sample_chordal_sle(params: SleParams, chart, T, dt, rng) -> CurveSample:
    """Chordal SLE_kappa in (D;a,b), sampled in (H;0,infinity) and pulled
    back through the chart (None = identity)."""
    from .drivers import drive_chordal_sle

    dp = drive_chordal_sle(params, T, dt, rng)
    pts, ts = loewner.chordal_trace(dp)
    return CurveSample(
        _chart_from(chart, pts),
        ts,
        CHORDAL,
        marked={"root": complex(_chart_from(chart, np.array([0j]))[0])},
        provenance={"kappa": params.kappa, "T": T, "dt": dt},
    )


def _whole_plane_driving(params, t0, T, dt, rng):
    g = _gen(rng)
    lam0 = g.uniform(0.0, 2.0 * np.pi)
    X0 = float(stationary_gap_sample(params, g))
    return drive_radial_rho(
        params, 2.0, X0, T - t0, dt, g, lam0=lam0, t0=t0, kind=WHOLE_PLANE
    )


def sample_whole_plane_sle2(params: SleParams, target, t0, T, dt, rng) -> CurveSample:
    """Whole-plane SLE_kappa(2) from 0 to `target` (infinity or a point w):
    the infinity-target curve, Mobius-transported when w is finite."""
    dp = _whole_plane_driving(params, t0, T, dt, rng)
    pts, ts = loewner.whole_plane_trace(dp)
    marked = {"root": 0j, "target": np.inf + 0j}
    prov = {"kappa": params.kappa, "t0": t0, "T": T, "dt": dt}
    curve = CurveSample(pts, ts, WHOLE_PLANE, marked, prov)
    curve.driving = dp
    if target is None or np.isinf(target):
        return curve
    w = complex(target)
    if w == 0:
        raise InputError("target must differ from the root 0")
    # W(z) = z/(w - z) maps (0 -> w) to (0 -> infinity); transport back
    Winv = MobiusMap(w, 0.0, 1.0, 1.0)  # zeta -> w*zeta/(zeta + 1)
    out = mobius_apply(curve, Winv)
    out.kind = WHOLE_PLANE
    out.marked = {"root": 0j, "target": w}
    out.driving = dp
    return out


def _exterior_to_half_plane(lam_end, q_end):
    """Mobius chart from the exterior disk to H sending the tip prime end
    e^{i lam} to 0 and the return prime end e^{i q} to infinity."""
    # v = 1/zeta maps D* to D; M(v) = i(e+v)/(e-v), e = e^{-iq}, maps D to H
    # with M(e) = infinity; shift so the tip lands at 0.
    e = np.exp(-1j * q_end)
    M = MobiusMap(1j, 1j * e, -1.0, e)
    J = MobiusMap(0.0, 1.0, 1.0, 0.0)  # zeta -> 1/zeta
    A = M.compose(J)
    off = complex(A(np.exp(1j * lam_end)))
    return MobiusMap(A.a - off * A.c, A.b - off * A.d, A.c, A.d)


def _staged_chordal_leg(params, dt, rng, is_close, stage_T=1.0, n_stages=40,
                        growth=4.0):
    """Chordal SLE_kappa driving from 0 grown in geometrically staged
    capacity; after each stage is_close(tip in H) decides whether to stop.

    Returns (roots, deltas, lam_end, tip).  Staging is exact in law: by the
    CMP, continuing the same driving is the chordal continuation in the
    remaining domain.
    """
    g = _gen(rng)
    roots = np.empty(0)
    deltas = np.empty(0)
    lam = 0.0
    tip = 0j
    for s in range(n_stages):
        dts = dt * growth ** s
        n = max(8, int(round(stage_T * growth ** s / dts)))
        incs = g.normal(0.0, np.sqrt(params.kappa * dts), n)
        roots = np.r_[roots, lam + np.cumsum(np.r_[0.0, incs[:-1]])]
        deltas = np.r_[deltas, np.full(n, dts)]
        lam = roots[-1] + incs[-1]
        st = MapStack(CHORDAL, roots, deltas, lam_end=lam)
        tip = st.tip()
        if is_close(tip):
            break
    return roots, deltas, lam, tip


def chordal_return_leg(params, lam_end, q_end, dt, rng, to_phys, target,
                       tol, stage_T=1.0, n_stages=40):
    """Chordal SLE leg from the tip prime end e^{i lam_end} back to the
    prime end e^{i q_end} of an exterior-disk chart.

    to_phys maps exterior-chart points to the working plane; the leg stops
    once its working-plane tip is within tol of `target` and the exact
    target is appended.  Returns (points, capacity labels) in the working
    plane, excluding the starting tip.
    """
    A = _exterior_to_half_plane(lam_end, q_end)
    Ainv = A.inverse()

    def pull(pts_h):
        return to_phys(Ainv(pts_h))

    def is_close(tip_h):
        return abs(pull(np.array([tip_h]))[0] - target) < tol

    roots, deltas, lam, _ = _staged_chordal_leg(
        params, dt, rng, is_close, stage_T=stage_T, n_stages=n_stages
    )
    st = MapStack(CHORDAL, roots, deltas, lam_end=lam)
    pts_h = loewner.stack_trace(st)
    pts = pull(pts_h[1:])  # drop the duplicate tip at H-origin
    pts = np.r_[pts, target]
    labels = np.r_[np.cumsum(deltas), np.sum(deltas) + deltas[-1]]
    return pts, labels, st


def sample_two_sided_whole_plane(params: SleParams, z, w, t0=-10.0,
                                 Tmax=None, dt=0.01, rng=0,
                                 T_radial=8.0) -> CurveSample:
    """Closed loop through z and w: whole-plane SLE_kappa(2) arm from z
    toward w (with its radial continuation toward w folded into the same
    chart chain), then a chordal SLE leg from w back to z.

    Internally the arm is the infinity-target chain in the chart
    Phi(u) = (u - z)/(w - u); Tmax is the physical leg-1 capacity cutoff,
    default log|w - z| + 4, i.e. chart capacity 4.
    """
    if z == w:
        raise InputError("marked points must differ")
    z, w = complex(z), complex(w)
    g = _gen(rng)
    scale = abs(w - z)
    if Tmax is None:
        Tmax = np.log(scale) + 4.0
    T1 = Tmax - np.log(scale)  # chart capacity of leg 1
    T_end = T1 + T_radial
    dp = _whole_plane_driving(params, t0, T_end, dt, g)
    stack = MapStack.from_driving(dp)
    pts_chart, ts = loewner.whole_plane_trace(dp)
    Phi_inv = MobiusMap(w, z, 1.0, 1.0)  # zeta -> (w zeta + z)/(zeta + 1)
    arm1 = Phi_inv(pts_chart)
    arm1 = np.r_[z, arm1, w]
    t_arm1 = np.r_[ts[0] - dt, ts, ts[-1] + dt]

    lam_end = float(dp.values[-1])
    q_end = float(dp.companions["q"][-1])

    def to_phys(pts_ext):
        return Phi_inv(stack.inverse(pts_ext))

    tol = 1e-3 * scale
    pts3, lab3, st3 = chordal_return_leg(
        params, lam_end, q_end, dt, g, to_phys, z, tol
    )
    pts = np.r_[arm1, pts3]
    times = np.r_[t_arm1, t_arm1[-1] + lab3]
    prov = {
        "kappa": params.kappa,
        "t0": t0,
        "Tmax": Tmax,
        "dt": dt,
        "arm1_len": len(arm1),
        "resample": bool(abs(pts3[-2] - z) > 10 * tol),
    }
    return CurveSample(pts, times, TWO_SIDED_WP,
                       marked={"root": z, "through": w}, provenance=prov)


def _radial_leg_to_interior(params, z0h, dt, rng, T_radial=8.0, lam0=None):
    """Radial SLE_kappa(2) in (H; 0 -> z0h) with force point at infinity,
    run in the exterior chart N(u) = (u - conj(z0h))/(u - z0h) where z0h
    maps to infinity.  Returns (points in H, radial stack, N, lam_end,
    q_end)."""
    if z0h.imag <= 0:
        raise InputError("through-point must be interior")
    N = MobiusMap(1.0, -np.conj(z0h), 1.0, -z0h)
    lam_start = float(np.mod(np.angle(complex(N(0j))), 2.0 * np.pi))
    if lam_start == 0.0:
        lam_start = 2.0 * np.pi - 1e-9
    # force point at the image of b = infinity: angle 0; gap = lam_start
    dp = drive_radial_rho(params, 2.0, lam_start, T_radial, dt, rng,
                          lam0=lam_start, kind=RADIAL)
    st = MapStack.from_driving(dp)
    pts_ext, ts = loewner.radial_trace(dp)
    pts_h = N.inverse()(pts_ext)
    return pts_h, ts, st, N, float(dp.values[-1]), float(dp.companions["q"][-1])


def sample_two_sided_radial(params: SleParams, chart, z0, dt, rng,
                            T_radial=8.0, far_radius=None) -> CurveSample:
    """Two-sided radial SLE in (D;a,b) through z0: radial SLE_kappa(2) leg
    from a to z0 with force point at b, then a chordal leg from z0 toward
    b = infinity, truncated once it escapes past far_radius (in the H
    working coordinates)."""
    g = _gen(rng)
    z0h = complex(_chart_to(chart, np.array([z0]))[0])
    if far_radius is None:
        far_radius = 50.0 * (1.0 + abs(z0h))
    pts_h, ts, st, N, lam_end, q_end = _radial_leg_to_interior(
        params, z0h, dt, g, T_radial=T_radial
    )
    leg1 = np.r_[pts_h, z0h]
    t1 = np.r_[ts, ts[-1] + dt]
    # chordal continuation from the tip to b = infinity (in H coords)
    A = _exterior_to_half_plane(lam_end, q_end)
    Ainv = A.inverse()

    def pull(pts3_chart):
        return N.inverse()(st.inverse(Ainv(pts3_chart)))

    roots, deltas, lam, _ = _staged_chordal_leg(
        params, dt, g, lambda tip: abs(pull(np.array([tip]))[0]) > far_radius
    )
    st3 = MapStack(CHORDAL, roots, deltas, lam_end=lam)
    pts3_h = pull(loewner.stack_trace(st3)[1:])
    pts = np.r_[leg1, pts3_h]
    times = np.r_[t1, t1[-1] + np.cumsum(deltas)]
    pts = _chart_from(chart, pts)
    marked = {
        "root": complex(_chart_from(chart, np.array([0j]))[0]),
        "through": complex(_chart_from(chart, np.array([z0h]))[0]),
        "target": complex(_chart_from(chart, np.array([np.inf + 0j]))[0]),
    }
    prov = {"kappa": params.kappa, "dt": dt, "leg1_len": len(leg1)}
    return CurveSample(pts, times, TWO_SIDED_RADIAL, marked, prov)


def sample_degenerate_two_sided_radial(params: SleParams, a, side, w, dt,
                                       rng, tau=None,
                                       T_radial=8.0) -> CurveSample:
    """Bubble-type curve in H rooted at a: chordal SLE_kappa(2, kappa-8)
    from a with force points (a^side, w) up to a fixed capacity stopping
    time, then a two-sided radial continuation through w back to a^side."""
    if w.imag <= 0:
        raise InputError("through-point w must lie in H")
    g = _gen(rng)
    a = float(a)
    side = 1.0 if side > 0 else -1.0
    if tau is None:
        tau = 0.1 * w.imag ** 2
    eps0 = side * 1e-3 * np.sqrt(dt)
    dp = drive_chordal_sle_rho(
        params,
        [(a + eps0, 2.0), (complex(w), params.kappa - 8.0)],
        tau, dt, g, lam0=a,
    )
    stack = MapStack.from_driving(dp)
    leg1, t1 = loewner.chordal_trace(dp)
    lam_t = float(dp.values[-1])
    q_t = float(dp.companions["q"][-1])
    w_img = complex(dp.force_paths[1, -1])
    if abs(q_t - lam_t) < 1e-12:
        q_t = lam_t + side * 1e-9
    # chart (H; lam_t, q_t) -> (H; 0, infinity), orientation-preserving
    if side > 0:
        m = MobiusMap(-1.0, lam_t, 1.0, -q_t)
    else:
        m = MobiusMap(1.0, -lam_t, 1.0, -q_t)
    z0h = complex(m(w_img))
    pts_h, ts, st_r, N, lam_e, q_e = _radial_leg_to_interior(
        params, z0h, dt, g, T_radial=T_radial
    )

    def to_phys(pts_in_m_chart):
        return stack.inverse(m.inverse()(pts_in_m_chart))

    leg2 = np.r_[to_phys(pts_h), w]
    t2 = t1[-1] + np.r_[ts, ts[-1] + dt]
    # chordal leg from the tip back to a^side = infinity of the m-chart
    A = _exterior_to_half_plane(lam_e, q_e)
    Ainv = A.inverse()

    def pull(pts_h3):
        return to_phys(N.inverse()(st_r.inverse(Ainv(pts_h3))))

    tol = 1e-3 * max(abs(w - a), 1.0)
    roots, deltas, lam, _ = _staged_chordal_leg(
        params, dt, g, lambda tip: abs(pull(np.array([tip]))[0] - a) < tol
    )
    st3 = MapStack(CHORDAL, roots, deltas, lam_end=lam)
    pts3 = pull(loewner.stack_trace(st3)[1:])
    pts3 = np.r_[pts3, a]
    t3 = t2[-1] + np.r_[np.cumsum(deltas), np.sum(deltas) + deltas[-1]]
    pts = np.r_[leg1, leg2, pts3]
    times = np.r_[t1, t2, t3]
    prov = {"kappa": params.kappa, "dt": dt, "tau": tau, "side": side,
            "leg1_len": len(leg1), "leg2_len": len(leg2)}
    return CurveSample(pts, times, DEGENERATE_RADIAL,
                       marked={"root": a + 0j, "through": w}, provenance=prov)
