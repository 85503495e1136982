"""Driving-process generators for the SLE variants used here.

Chordal SLE_kappa driving is sqrt(kappa) * Brownian motion; the rho-variants
add force-point drifts integrated by Euler-Maruyama with drift-limited
adaptive sub-stepping.  The whole-plane SLE_kappa(2) driver has the
gap-stationary law with density proportional to sin(x/2)^(8/kappa), which is
sampled exactly through a Beta transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loewner import (
    CHORDAL,
    RADIAL,
    WHOLE_PLANE,
    DrivingPath,
    InputError,
    NumericError,
    _chordal_map,
)

SUBSTEP_C0 = 0.1  # dt_eff <= c0 * sin_2(X)^2 near the gap boundary
GAP_EPS = 1e-8


@dataclass(frozen=True)
class SleParams:
    """kappa in (0,8) plus the derived exponents; chat is the undetermined
    normalization constant of the chordal Green's function (default 1; all
    shipped statistics are chat-free)."""

    kappa: float
    chat: float = 1.0
    rho: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.kappa < 8.0:
            raise InputError("kappa must lie in (0,8)")
        if self.chat <= 0.0:
            raise InputError("chat must be positive")

    @property
    def d(self):
        return 1.0 + self.kappa / 8.0

    @property
    def c(self):
        k = self.kappa
        return (6.0 - k) * (3.0 * k - 8.0) / (2.0 * k)


@dataclass(frozen=True)
class RngStream:
    """Reproducible Gaussian stream: identical (seed, stream_id) gives an
    identical increment sequence; distinct ids are independent."""

    seed: int
    stream_id: int = 0

    def generator(self):
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        )


def _gen(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def cot2(x):
    return 1.0 / np.tan(0.5 * x)


def sin2(x):
    return np.sin(0.5 * x)


def drive_chordal_sle(params: SleParams, T, dt, rng) -> DrivingPath:
    """lambda(t) = sqrt(kappa) B(t) on the capacity grid."""
    if T <= 0:
        raise InputError("T must be positive")
    g = _gen(rng)
    n = int(round(T / dt))
    incs = g.normal(0.0, np.sqrt(params.kappa * dt), n)
    return DrivingPath(CHORDAL, 0.0, dt, np.cumsum(np.r_[0.0, incs]))


def drive_chordal_sle_rho(params: SleParams, force_points, T, dt, rng,
                          lam0=0.0) -> DrivingPath:
    """Chordal SLE_kappa(rho) driving with force points.

    force_points: list of (position, weight); real positions flow on the line
    by dv = 2/(v - lambda) dt and never cross the driving point, complex
    positions flow in the upper half-plane.  A zero weight gives a passively
    tracked boundary image.  Real force points (then complex ones) are stored
    as companions q, q2, ...

    The drift of lambda is integrated with sub-stepped Euler-Maruyama, but
    the recorded force-point paths are flowed once per grid step by the
    exact elementary slit map rooted at lambda(t_k), so that the recorded
    images stay consistent with the composed discrete map stack (needed
    whenever they are fed back through stack inverses as chart data).
    """
    if T <= 0:
        raise InputError("T must be positive")
    g = _gen(rng)
    n = int(round(T / dt))
    lam = float(lam0)
    vs = [complex(p) for p, _ in force_points]
    ws = [float(w) for _, w in force_points]
    real_mask = [abs(v.imag) == 0.0 for v in vs]
    sides = []
    for v, is_real in zip(vs, real_mask):
        if is_real and v.real == lam:
            # a^+/a^- start: offset by an infinitesimal on the named side
            raise InputError(
                "real force point coincides with the start; offset it by "
                "+/- eps to pick a side"
            )
        sides.append(np.sign(v.real - lam) if is_real else 0.0)
    values = np.empty(n + 1)
    comp = np.empty((len(vs), n + 1), dtype=complex)
    values[0] = lam
    comp[:, 0] = vs
    vx = list(vs)  # exact per-grid-step slit-map images
    h_floor = dt * 1e-4
    for k in range(n):
        lam_k = lam
        vs = list(vx)
        cur_sides = [
            np.sign(v.real - lam) if is_real else 0.0
            for v, is_real in zip(vs, real_mask)
        ]
        s = 0.0
        while s < dt - 1e-15:
            gap2 = min((abs(v - lam) ** 2 for v in vs), default=np.inf)
            for v, is_real in zip(vs, real_mask):
                if not is_real and abs(v - lam) < GAP_EPS:
                    raise NumericError(
                        "interior force point reached the driving (swallowed)"
                    )
            h = min(dt - s, max(SUBSTEP_C0 * gap2, h_floor))
            drift = 0.0
            for v, w in zip(vs, ws):
                if w != 0.0:
                    re = (1.0 / (lam - v)).real
                    # capped like the flow below; relevant only at gap ~ 0
                    drift += w * np.sign(re) * min(abs(re), 2.0 / np.sqrt(h))
            lam_old = lam
            lam += g.normal(0.0, np.sqrt(params.kappa * h)) + drift * h
            for i, v in enumerate(vs):
                flow = 2.0 * h / (v - lam_old)
                # Bessel-type starts have gap ~ 0; cap the flow increment at
                # the sub-step diffusive scale instead of letting it blow up
                fmag = abs(flow)
                if fmag > 2.0 * np.sqrt(h):
                    flow *= 2.0 * np.sqrt(h) / fmag
                vn = v + flow
                if real_mask[i]:
                    # boundary images never cross the driving point: reflect
                    x = vn.real
                    if (x - lam) * cur_sides[i] < 0:
                        x = 2.0 * lam - x
                    vn = complex(x)
                vs[i] = vn
            s += h
        for i in range(len(vx)):
            vn = _chordal_map(np.array([vx[i]]), lam_k, dt)[0]
            if real_mask[i]:
                x = vn.real
                # crossing the driving is a discretization artifact (the gap
                # is a Bessel-type process away from 0 for t > 0): reflect
                if (x - lam) * sides[i] < 0:
                    x = 2.0 * lam - x
                vx[i] = complex(x)
            else:
                vx[i] = complex(vn)
        values[k + 1] = lam
        comp[:, k + 1] = vx
    companions = {}
    qi = 0
    for i in range(len(vs)):
        if real_mask[i]:
            qi += 1
            companions["q" if qi == 1 else "q%d" % qi] = comp[i].real
    dp = DrivingPath(CHORDAL, 0.0, dt, values, companions=companions)
    # full force-point trajectories (complex points included) kept alongside
    dp.force_paths = comp
    return dp


def drive_radial_rho(params: SleParams, rho, X0, T, dt, rng,
                     lam0=0.0, t0=0.0, kind=RADIAL) -> DrivingPath:
    """Radial / whole-plane SLE_kappa(rho) driving (lambda, q) with gap
    X = lambda - q in (0, 2*pi):

        dlambda = sqrt(kappa) dB + (rho/2) cot_2(X) dt,   dq = -cot_2(X) dt.
    """
    if T <= 0:
        raise InputError("T must be positive")
    if not 0.0 < X0 < 2.0 * np.pi:
        raise InputError("X0 must lie in (0, 2*pi)")
    if rho < params.kappa / 2.0 - 2.0:
        raise InputError("rho below kappa/2 - 2: gap would hit the boundary")
    from .loewner import radial_gap_step

    g = _gen(rng)
    n = int(round(T / dt))
    lam = float(lam0)
    q = lam - float(X0)
    values = np.empty(n + 1)
    qs = np.empty(n + 1)
    values[0] = lam
    qs[0] = q
    h_floor = dt * 1e-6
    for k in range(n):
        lam_k = lam
        x = lam_k - q  # in (0, 2*pi)
        s = 0.0
        while s < dt - 1e-15:
            h = min(dt - s, max(SUBSTEP_C0 * sin2(x) ** 2, h_floor))
            ct = cot2(x)
            db = g.normal(0.0, np.sqrt(params.kappa * h))
            lam += db + 0.5 * rho * ct * h
            x += db + 0.5 * (rho + 2.0) * ct * h
            # boundary crossings are discretization artifacts (the gap is a
            # Bessel-type process that never exits (0, 2*pi)): reflect
            x = abs(x)
            if x > 2.0 * np.pi:
                x = 4.0 * np.pi - x
            if not GAP_EPS < x < 2.0 * np.pi - GAP_EPS:
                raise NumericError("gap left (0, 2*pi) despite sub-stepping")
            s += h
        # q is the image of a fixed prime end: flow it by the exact
        # boundary-angle map of the elementary slit map rooted at lam_k, so
        # that e^{iq} stays consistent with the composed map stack
        q = lam_k - radial_gap_step(lam_k - qs[k], dt)
        x = lam - q
        if not 0.0 < x < 2.0 * np.pi:
            x = abs(x) if x <= 0 else x
            x = 4.0 * np.pi - x if x >= 2.0 * np.pi else x
            q = lam - min(max(x, GAP_EPS), 2.0 * np.pi - GAP_EPS)
            x = lam - q
        values[k + 1] = lam
        qs[k + 1] = q
    return DrivingPath(kind, t0, dt, values, companions={"q": qs})


def stationary_gap_sample(params: SleParams, rng, size=None):
    """Exact sample of the stationary gap density ~ sin(x/2)^(8/kappa) on
    (0, 2*pi): with v = cos(x/2), v has the symmetric Beta(a, a) law on
    (-1, 1) with a = 4/kappa + 1/2."""
    g = _gen(rng)
    a = 4.0 / params.kappa + 0.5
    b = g.beta(a, a, size=size)
    return 2.0 * np.arccos(2.0 * b - 1.0)


def evolve_gap_ensemble(params: SleParams, rho, X0, T, rng, dt_max=0.01):
    """Vectorized gap evolution: many independent copies of
    dX = sqrt(kappa) dB + ((rho+2)/2) cot_2(X) dt advanced to time T with the
    per-path adaptive step rule.  Returns X_T."""
    g = _gen(rng)
    x = np.array(X0, dtype=float).copy()
    t = np.zeros_like(x)
    active = t < T
    while np.any(active):
        h = np.minimum(T - t, np.maximum(SUBSTEP_C0 * sin2(x) ** 2, 1e-8))
        h = np.minimum(h, dt_max)
        h = np.where(active, h, 0.0)
        db = g.normal(0.0, 1.0, x.shape) * np.sqrt(params.kappa * h)
        x = x + db + 0.5 * (rho + 2.0) * cot2(x) * h
        x = np.abs(x)  # reflect: crossings are discretization artifacts
        x = np.where(x > 2.0 * np.pi, 4.0 * np.pi - x, x)
        if np.any(active & ~((GAP_EPS < x) & (x < 2.0 * np.pi - GAP_EPS))):
            raise NumericError("gap left (0, 2*pi) despite sub-stepping")
        t = t + h
        active = t < T - 1e-15
    return x
