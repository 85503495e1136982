"""Discretized chordal, radial and whole-plane Loewner evolutions.

The evolution is discretized with piecewise-constant driving: over one step of
capacity length delta the Loewner equation has an exact slit-map solution, and
the time-T map is the composition of these elementary maps.  Elementary maps:

  chordal      g(z) = u + sqrt((z - u)^2 + 4*delta)          (hcap 2*delta)
  disk-exterior w/(1+w)^2 = e^delta * a/(1+a)^2,  a = e^{-i*lam} z
               (capacity delta, slit rooted at e^{i*lam} growing outward)

Both families form a semigroup in delta at fixed root, so partial steps are
exact; inverses are the same formulas with delta negated.  Whole-plane chains
start from the scaling map z -> e^{-t0} z at a finite, very negative t0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

EPS_SWALLOW = 1e-9

CHORDAL = "chordal"
RADIAL = "radial"
WHOLE_PLANE = "whole-plane"
_KINDS = (CHORDAL, RADIAL, WHOLE_PLANE)


class LoewnerError(Exception):
    pass


class InputError(LoewnerError):
    pass


class NumericError(LoewnerError):
    pass


class DomainError(LoewnerError):
    pass


# ---------------------------------------------------------------------------
# driving data


@dataclass(eq=False)
class DrivingPath:
    """Grid of driving values lambda_k at times t0 + k*dt, plus companions.

    companions holds aligned processes such as the force-point image q_k.
    For radial / whole-plane paths lambda is in radians.
    """

    kind: str
    t0: float
    dt: float
    values: np.ndarray
    companions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError("unknown driving kind %r" % (self.kind,))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 1:
            raise InputError("driving values must be a nonempty 1-d array")
        if not np.all(np.isfinite(self.values)):
            raise InputError("non-finite driving value")
        if self.dt <= 0:
            raise InputError("dt must be positive")
        for name, arr in list(self.companions.items()):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != self.values.shape:
                raise InputError("companion %r misaligned with values" % name)
            if not np.all(np.isfinite(arr)):
                raise InputError("non-finite companion %r" % name)
            self.companions[name] = arr
        if self.kind in (RADIAL, WHOLE_PLANE) and "q" in self.companions:
            gap = np.mod(self.values - self.companions["q"], 2.0 * np.pi)
            if np.any(gap <= 0.0) or np.any(gap >= 2.0 * np.pi):
                raise InputError("gap lambda - q left (0, 2*pi)")

    @property
    def n_steps(self):
        return len(self.values) - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def T(self):
        return self.t0 + self.dt * self.n_steps

    def to_csv(self):
        """Serialize to CSV text (index, t, lambda[, q]); bit-exact floats."""
        q = self.companions.get("q")
        cols = "index,t,lambda" + (",q" if q is not None else "")
        lines = [cols]
        t = self.times
        for k in range(len(self.values)):
            row = "%d,%.17g,%.17g" % (k, t[k], self.values[k])
            if q is not None:
                row += ",%.17g" % q[k]
            lines.append(row)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, kind, t0, dt):
        rows = text.strip().splitlines()
        header = rows[0].split(",")
        data = np.loadtxt(io.StringIO("\n".join(rows[1:])), delimiter=",", ndmin=2)
        values = data[:, 2]
        companions = {}
        if "q" in header:
            companions["q"] = data[:, header.index("q")]
        return cls(kind=kind, t0=t0, dt=dt, values=values, companions=companions)


@dataclass(eq=False)
class HullCapacity:
    """Capacity of a hull: hcap for chordal hulls, ccap for interior hulls."""

    value: float
    kind: str = CHORDAL


# ---------------------------------------------------------------------------
# elementary maps (delta > 0 forward, delta < 0 inverse)


def _chordal_map(z, u, delta):
    zc = z - u
    s = np.sqrt(zc * zc + 4.0 * delta)
    flip = (s.imag < 0) | ((s.imag == 0) & (zc.real < 0))
    return u + np.where(flip, -s, s)


def _chordal_map_deriv(z, u, delta):
    zc = z - u
    s = np.sqrt(zc * zc + 4.0 * delta)
    flip = (s.imag < 0) | ((s.imag == 0) & (zc.real < 0))
    s = np.where(flip, -s, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(s != 0, zc / s, np.inf + 0j)
    return u + s, d


def _koebe(a):
    return a / (1.0 + a) ** 2


def _radial_map(z, lam, delta, want_deriv=False):
    """Exterior-disk slit map (forward for delta > 0, inverse for delta < 0)."""
    rot = np.exp(-1j * lam)
    a = np.asarray(z, complex) * rot
    inf_mask = ~np.isfinite(a)
    a = np.where(inf_mask, 2.0, a)  # placeholder, fixed up below
    y = np.exp(delta) * _koebe(a)
    sq = np.sqrt(1.0 - 4.0 * y)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (1.0 - 2.0 * y + sq) / (2.0 * y)
    bad = ~np.isfinite(r1) | (r1 == 0)
    r1 = np.where(bad, -1.0, r1)  # y ~ inf <=> a ~ -1 <=> fixed point -1
    r2 = 1.0 / r1
    pick1 = np.abs(r1) >= np.abs(r2)
    w = np.where(pick1, r1, r2)
    walt = np.where(pick1, r2, r1)
    # conjugate pair on the unit circle: keep the side the input came from
    oncirc = np.abs(np.abs(w) - 1.0) < 1e-9
    swap = oncirc & (w.imag * a.imag < 0)
    w = np.where(swap, walt, w)
    out = np.where(inf_mask, np.inf + 0j, w / rot)
    if not want_deriv:
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.exp(delta) * _dkoebe(a) / _dkoebe(w)
    d = np.where(inf_mask, np.exp(-delta) + 0j, d)
    return out, d


def _dkoebe(a):
    return (1.0 - a) / (1.0 + a) ** 3


def radial_gap_step(X, delta):
    """Exact one-step boundary flow of the gap: a circle point at angle
    lam - X (X in (0, 2*pi)) is mapped by the slit map rooted at lam to
    angle lam - X' with cos(X'/2) = e^{-delta/2} cos(X/2)."""
    return 2.0 * np.arccos(np.exp(-0.5 * delta) * np.cos(0.5 * np.asarray(X)))


def _radial_tip_abs(delta):
    """|tip| of the exterior slit of capacity delta (rooted at 1)."""
    c = 0.25 * np.exp(-delta)
    return (1.0 - 2.0 * c + np.sqrt(1.0 - 4.0 * c)) / (2.0 * c)


# ---------------------------------------------------------------------------
# map stacks


@dataclass(eq=False)
class MapStack:
    """Composition of elementary slit maps (plus base normalization).

    roots[k] is the driving value during step k, deltas[k] its capacity
    increment; for whole-plane stacks the base map is z -> e^{-t0} z.
    lam_end is the driving value at the final time (the tip's chart angle).
    """

    kind: str
    roots: np.ndarray
    deltas: np.ndarray
    t0: float = 0.0
    lam_end: float = 0.0

    def __post_init__(self):
        self.roots = np.asarray(self.roots, dtype=float)
        self.deltas = np.asarray(self.deltas, dtype=float)
        if self.roots.shape != self.deltas.shape:
            raise InputError("roots and deltas misaligned")
        if np.any(self.deltas < 0):
            raise InputError("negative capacity increment")

    @classmethod
    def from_driving(cls, driving: DrivingPath):
        n = driving.n_steps
        return cls(
            kind=driving.kind,
            roots=driving.values[:n],
            deltas=np.full(n, driving.dt),
            t0=driving.t0 if driving.kind == WHOLE_PLANE else 0.0,
            lam_end=float(driving.values[-1]) if n >= 0 else 0.0,
        )

    @property
    def n_steps(self):
        return len(self.roots)

    def capacity(self) -> HullCapacity:
        """Bookkept capacity: hcap = 2*sum(deltas); ccap = t0 + sum(deltas)."""
        s = float(np.sum(self.deltas))
        if self.kind == CHORDAL:
            return HullCapacity(2.0 * s, CHORDAL)
        return HullCapacity(self.t0 + s, self.kind)

    def truncated(self, n_full, frac=0.0):
        """Stack of the first n_full steps plus a frac-fraction of the next."""
        if not 0 <= n_full <= self.n_steps:
            raise InputError("truncation index out of range")
        roots = self.roots[:n_full]
        deltas = self.deltas[:n_full]
        lam_end = self.roots[n_full] if n_full < self.n_steps else self.lam_end
        if frac > 0.0 and n_full < self.n_steps:
            roots = np.append(roots, self.roots[n_full])
            deltas = np.append(deltas, frac * self.deltas[n_full])
        return MapStack(self.kind, roots, deltas, self.t0, float(lam_end))

    # -- point evaluation ---------------------------------------------------

    def forward(self, points, want_deriv=False, want_tau=False):
        """Apply the composed map; returns values, and optionally the
        derivative product and per-point swallow times (nan if alive)."""
        z = np.atleast_1d(np.asarray(points, dtype=complex)).copy()
        deriv = np.ones_like(z)
        tau = np.full(z.shape, np.nan)
        alive = np.ones(z.shape, dtype=bool)
        t = self.t0
        if self.kind == WHOLE_PLANE:
            scale = np.exp(-self.t0)
            z *= scale
            deriv *= scale
        for k in range(self.n_steps):
            u = self.roots[k]
            d = self.deltas[k]
            if self.kind == CHORDAL:
                zc = z - u
                hit = alive & (np.abs(zc) < EPS_SWALLOW)
                onslit = (
                    alive
                    & ~hit
                    & (np.abs(zc.real) < EPS_SWALLOW)
                    & (zc.imag <= 2.0 * np.sqrt(d))
                )
                tau[hit] = t
                tau[onslit] = t + 0.25 * zc.imag[onslit] ** 2
                alive &= ~(hit | onslit)
                if want_deriv:
                    z2, dd = _chordal_map_deriv(z, u, d)
                else:
                    z2 = _chordal_map(z, u, d)
                    dd = 1.0
            else:
                a = z * np.exp(-1j * u)
                hit = alive & (np.abs(a - 1.0) < EPS_SWALLOW)
                real_out = (
                    alive
                    & ~hit
                    & (np.abs(a.imag) < EPS_SWALLOW)
                    & (a.real > 1.0)
                    & (a.real <= _radial_tip_abs(d))
                )
                tau[hit] = t
                if np.any(real_out):
                    s_hit = -np.log(4.0 * _koebe(a.real[real_out]))
                    tau[real_out] = t + s_hit
                alive &= ~(hit | real_out)
                if want_deriv:
                    z2, dd = _radial_map(z, u, d, want_deriv=True)
                else:
                    z2 = _radial_map(z, u, d)
                    dd = 1.0
            z = np.where(alive, z2, z)
            if want_deriv:
                deriv = np.where(alive, deriv * dd, deriv)
            t += d
        out = (z,)
        if want_deriv:
            out += (deriv,)
        if want_tau:
            out += (tau,)
        return out[0] if len(out) == 1 else out

    def inverse(self, points, want_deriv=False):
        """Apply the inverse composed map (elementary inverses in reverse)."""
        z = np.atleast_1d(np.asarray(points, dtype=complex)).copy()
        deriv = np.ones_like(z)
        for k in range(self.n_steps - 1, -1, -1):
            u = self.roots[k]
            d = self.deltas[k]
            if self.kind == CHORDAL:
                if want_deriv:
                    z, dd = _chordal_map_deriv(z, u, -d)
                else:
                    z = _chordal_map(z, u, -d)
                    dd = 1.0
            else:
                if want_deriv:
                    z, dd = _radial_map(z, u, -d, want_deriv=True)
                else:
                    z = _radial_map(z, u, -d)
                    dd = 1.0
            if want_deriv:
                deriv = deriv * dd
        if self.kind == WHOLE_PLANE:
            scale = np.exp(self.t0)
            z = z * scale
            deriv = deriv * scale
        if want_deriv:
            return z, deriv
        return z

    def tip(self):
        """Physical position of the curve tip g_T^{-1}(driving endpoint)."""
        if self.kind == CHORDAL:
            seed = np.array([self.lam_end], dtype=complex)
        else:
            seed = np.array([np.exp(1j * self.lam_end)], dtype=complex)
        return complex(self.inverse(seed)[0])


# ---------------------------------------------------------------------------
# evolution / trace operations


def chordal_evolve(driving: DrivingPath, points):
    """g_T(z) plus swallow times; returns list of (endpoint, tau or None)."""
    if driving.kind != CHORDAL:
        raise InputError("chordal_evolve needs chordal driving")
    stack = MapStack.from_driving(driving)
    z, tau = stack.forward(points, want_tau=True)
    return [
        (complex(z[i]), None if np.isnan(tau[i]) else float(tau[i]))
        for i in range(len(z))
    ]


def _trace_points(values, dt, kind, t0=0.0):
    """gamma(t_k) = inverse stack at the driving point, all k; O(N^2).

    values may be 1-d (one path) or 2-d (batch of paths, one per row).
    dt is a scalar or a per-step array of capacity increments.
    """
    values = np.asarray(values, dtype=float)
    batch = values.ndim == 2
    vals = values if batch else values[None, :]
    n = vals.shape[1] - 1
    deltas = np.broadcast_to(np.asarray(dt, dtype=float), (n,))
    if kind == CHORDAL:
        pts = vals[:, 1:].astype(complex)
    else:
        pts = np.exp(1j * vals[:, 1:])
    for k in range(n, 0, -1):
        u = vals[:, k - 1]
        d = deltas[k - 1]
        if kind == CHORDAL:
            pts[:, k - 1 :] = _chordal_map(pts[:, k - 1 :], u[:, None], -d)
        else:
            seg = pts[:, k - 1 :]
            for i in range(seg.shape[0]):  # rotation differs per row
                seg[i] = _radial_map(seg[i], u[i], -d)
            pts[:, k - 1 :] = seg
    if kind == CHORDAL:
        start = vals[:, :1].astype(complex)
    else:
        start = np.exp(np.full((vals.shape[0], 1), t0)) * np.exp(1j * vals[:, :1])
        pts = np.exp(t0) * pts
    out = np.concatenate([start, pts], axis=1)
    return out if batch else out[0]


def stack_trace(stack: MapStack):
    """Trace points of a stack with (possibly) varying capacity increments."""
    values = np.r_[stack.roots, stack.lam_end]
    return _trace_points(values, stack.deltas, stack.kind, t0=stack.t0)


def chordal_trace(driving: DrivingPath):
    """Polyline gamma(t_k), capacity timestamps, from chordal driving."""
    if driving.kind != CHORDAL:
        raise InputError("chordal_trace needs chordal driving")
    pts = _trace_points(driving.values, driving.dt, CHORDAL)
    if not np.all(np.isfinite(pts)):
        raise NumericError(
            "inverse evaluation diverged at step %d"
            % int(np.argmax(~np.isfinite(pts)))
        )
    return pts, driving.times


def whole_plane_trace(driving: DrivingPath):
    """Polyline for a whole-plane chain (starts within 4*e^{t0} of 0)."""
    if driving.kind != WHOLE_PLANE:
        raise InputError("whole_plane_trace needs whole-plane driving")
    pts = _trace_points(driving.values, driving.dt, WHOLE_PLANE, t0=driving.t0)
    if not np.all(np.isfinite(pts)):
        raise NumericError(
            "inverse evaluation diverged at step %d"
            % int(np.argmax(~np.isfinite(pts)))
        )
    return pts, driving.times


def radial_trace(driving: DrivingPath):
    """Polyline for a disk-exterior radial chain grown from the unit circle."""
    if driving.kind != RADIAL:
        raise InputError("radial_trace needs radial driving")
    pts = _trace_points(driving.values, driving.dt, RADIAL)
    return pts, driving.times


def covering_evolve(driving: DrivingPath, points):
    """Covering map g~_T with e^{i g~_T(z)} = g_T(e^{i z}); 2*pi periodic."""
    if driving.kind != WHOLE_PLANE:
        raise InputError("covering_evolve needs whole-plane driving")
    x = np.atleast_1d(np.asarray(points, dtype=complex)).copy()
    x = x + 1j * driving.t0  # base: g_t0(Z) = e^{-t0} Z downstairs
    n = driving.n_steps
    for k in range(n):
        u = driving.values[k]
        z = np.exp(1j * x)
        w = _radial_map(z, u, driving.dt)
        step = -1j * np.log(w * np.exp(-1j * u)) + u - x
        step = step - 2.0 * np.pi * np.round(step.real / (2.0 * np.pi))
        x = x + step
    return x


def hcap(stack: MapStack) -> HullCapacity:
    """Capacity from the large-|z| expansion of the composed map."""
    if stack.kind == CHORDAL:
        scale = max(1.0, np.max(np.abs(stack.roots), initial=0.0),
                    2.0 * np.sqrt(2.0 * float(np.sum(stack.deltas)) + 1.0))
        # z(g(z)-z) on the imaginary axis is c + a/R^2 + b/R^4 + ... (real
        # coefficients by Schwarz reflection); extrapolate three radii to 0.
        R = 15.0 * scale
        z = 1j * R * np.array([1.0, 2.0, 4.0])
        g = stack.forward(z)
        f1, f2, f3 = (z * (g - z)).real
        g12 = (4.0 * f2 - f1) / 3.0
        g23 = (4.0 * f3 - f2) / 3.0
        val = (16.0 * g23 - g12) / 15.0
        if not np.isfinite(val):
            raise NumericError("capacity expansion did not converge")
        return HullCapacity(float(val), CHORDAL)
    return ccap(stack)


def ccap(stack: MapStack) -> HullCapacity:
    """Whole-plane capacity from the expansion g(z) ~ e^{-ccap} z at infinity."""
    if stack.kind == CHORDAL:
        raise InputError("ccap is for interior (radial/whole-plane) stacks")
    R = 1e5
    z = np.array([R + 0j, 2 * R + 0j])
    g = stack.forward(z)
    lead = ((g[1] - g[0]) / R).real
    if not np.isfinite(lead) or lead <= 0:
        raise NumericError("capacity expansion did not converge")
    return HullCapacity(float(-np.log(lead)), stack.kind)


def hcap_image(stack: MapStack, W, n_points=5, h=None) -> HullCapacity:
    """hcap of the image hull W(K) for a conformal W fixing the real line.

    Integrates the image Loewner chain: d(hcap)/dt = 2 * W_t'(lambda_t)^2 with
    W_t = g_{W(K_t)} o W o g_{K_t}^{-1}, derivatives by real finite differences
    through the map stacks.
    """
    if stack.kind != CHORDAL:
        raise InputError("hcap_image is for chordal stacks")
    chain = image_chain(stack, W) if h is None else image_chain(stack, W, h=h)
    return HullCapacity(2.0 * chain["u"][-1], CHORDAL)


def boundary_map_derivs(pre: MapStack, img: MapStack, W, lam, h=1e-4):
    """Value and first three derivatives at the real point lam of
    f = g_img o W o g_pre^{-1}, which maps reals to reals near lam.

    The stencil sits on the vertical line above lam (the hull sides are
    reached by real offsets, where the slit-map branch is ambiguous); by
    real-analyticity f(lam + i*h) = f + i*h*f' - h^2 f''/2 - i*h^3 f'''/6 ...
    and two heights give Richardson-corrected f', f'', f'''.
    """
    js = np.array([1.0, 2.0, 4.0])
    x = lam + 1j * h * js
    fz = img.forward(np.asarray(W(pre.inverse(x)), dtype=complex))
    # Re f(ijh) = f0 - (jh)^2 f''/2 + (jh)^4 f''''/24 - ...
    # Im f(ijh)/(jh) = f' - (jh)^2 f'''/6 + (jh)^4 f'''''/120 - ...
    M = np.array([[1.0, -j * j, j ** 4] for j in js])
    A = np.linalg.solve(M, fz.real)
    D = np.linalg.solve(M, fz.imag / (h * js))
    f0 = A[0]
    d1 = D[0]
    d2 = 2.0 * A[1] / (h * h)
    d3 = 6.0 * D[1] / (h * h)
    if not np.all(np.isfinite([f0, d1, d2, d3])):
        raise NumericError("finite differences unstable at lam=%g" % lam)
    return float(f0), float(d1), float(d2), float(d3)


def image_chain(stack: MapStack, W, h=1e-4, want_schwarzian=False):
    """Build the Loewner chain of the image hulls W(K_t), W conformal near
    the hull and mapping reals to reals.

    Returns dict with the image driving sigma(u_k), capacity times u_k, the
    image MapStack, W_t'(lambda_t) per step, and optionally S(W_t)(lambda_t).
    """
    n = stack.n_steps
    sig = np.zeros(n + 1)
    u = np.zeros(n + 1)
    dW = np.zeros(n)
    sch = np.zeros(n)
    roots_L = []
    deltas_L = []
    for k in range(n):
        lam = stack.roots[k]
        pre = stack.truncated(k)
        img = MapStack(CHORDAL, np.array(roots_L), np.array(deltas_L))
        # stencil height must not sink below the slit scale: the inverse map
        # compresses quadratically near the tip and the forward pass then
        # amplifies the accumulated delta-estimation error
        hk = max(h, 4.0 * np.sqrt(stack.deltas[k]))
        f0, d1, d2, d3 = boundary_map_derivs(pre, img, W, lam, h=hk)
        sig[k] = f0
        dW[k] = d1
        if want_schwarzian:
            sch[k] = d3 / d1 - 1.5 * (d2 / d1) ** 2
        du = d1 * d1 * stack.deltas[k]
        roots_L.append(f0)
        deltas_L.append(du)
        u[k + 1] = u[k] + du
    img = MapStack(CHORDAL, np.array(roots_L), np.array(deltas_L))
    pre = stack
    f0, _, _, _ = boundary_map_derivs(pre, img, W, stack.lam_end, h=h)
    sig[n] = f0
    img.lam_end = f0
    out = {"sigma": sig, "u": u, "stack": img, "dW": dW}
    if want_schwarzian:
        out["schwarzian"] = sch
    return out


# ---------------------------------------------------------------------------
# remaining-domain charts


class DomainChart:
    """Normalized chart of the unbounded complement component of a hull.

    to_chart sends the remaining domain into the reference domain (upper half
    plane for chordal stacks, exterior disk for radial / whole-plane stacks);
    from_chart is its inverse.  Marked points are mapped at construction.
    """

    def __init__(self, stack: MapStack, marked=()):
        self.stack = stack
        if stack.kind == CHORDAL:
            self.tip_image = complex(stack.lam_end)
        else:
            self.tip_image = complex(np.exp(1j * stack.lam_end))
        self.marked_images = []
        for p in marked:
            if np.isinf(p):
                self.marked_images.append(np.inf + 0j)
                continue
            img, tau = stack.forward([p], want_tau=True)
            if not np.isnan(tau[0]):
                raise DomainError("marked point %r swallowed at t=%g" % (p, tau[0]))
            self.marked_images.append(complex(img[0]))

    def to_chart(self, points):
        return self.stack.forward(points)

    def from_chart(self, points):
        return self.stack.inverse(points)

    def deriv(self, points):
        _, d = self.stack.forward(points, want_deriv=True)
        return d

    def capacity(self):
        return self.stack.capacity()


def remaining_domain_chart(stack: MapStack, marked=()):
    return DomainChart(stack, marked)
