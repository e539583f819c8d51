"""Piecewise homeomorphisms of [-1,1]^n with closed-form values, derivatives and inverses.

Points are float arrays of shape ``(N, n)``; derivatives are ``(N, n, n)`` with
``D[:, i, j] = d y_i / d x_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dyadic import CantorSystem, slot_to_vertex, vertex_to_slot


class DomainError(ValueError):
    pass


class JetSample(NamedTuple):
    value: np.ndarray
    derivative: np.ndarray
    jacobian: np.ndarray


def frobenius(D: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", D, D))


def _as_points(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != n:
        raise ValueError(f"expected points of dimension {n}, got {x.shape[-1]}")
    return x


class PiecewiseHomeo:
    """Base class: subclasses implement ``_forward`` (value + derivative) and ``_inverse``."""

    n: int
    label: str = "map"
    generation: int = 0
    domain_half_side: float = 1.0
    image_half_side: float = 1.0
    _tol = 1e-12

    def _forward(self, x: np.ndarray):
        raise NotImplementedError

    def _inverse(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _forward_jac(self, x: np.ndarray):
        """Value, derivative and Jacobian; overridden where det(D) loses accuracy."""
        y, D = self._forward(x)
        return y, D, np.linalg.det(D)

    def _check(self, x: np.ndarray, half: float, what: str) -> None:
        if np.any(np.abs(x) > half + self._tol):
            raise DomainError(f"{what} outside [-{half},{half}]^{self.n}")

    def jet(self, x) -> JetSample:
        x = _as_points(x, self.n)
        self._check(x, self.domain_half_side, "point")
        return JetSample(*self._forward_jac(x))

    def __call__(self, x) -> np.ndarray:
        return self.jet(x).value

    def inverse(self, y) -> np.ndarray:
        y = _as_points(y, self.n)
        self._check(y, self.image_half_side, "image point")
        return self._inverse(y)

    def inverse_jet(self, y) -> JetSample:
        x = self.inverse(y)
        _, D, J = self._forward_jac(x)
        return JetSample(x, np.linalg.inv(D), 1.0 / J)

    def describe(self) -> dict:
        return {"label": self.label, "n": self.n, "generation": self.generation}


class IdentityMap(PiecewiseHomeo):
    def __init__(self, n: int, half_side: float = 1.0):
        self.n = n
        self.label = "identity"
        self.domain_half_side = self.image_half_side = half_side

    def _forward(self, x):
        return x.copy(), np.broadcast_to(np.eye(self.n), (len(x), self.n, self.n)).copy()

    def _inverse(self, y):
        return y.copy()


class LinearMap(PiecewiseHomeo):
    """x -> A x + b on a cube of the given half side (used as a test fixture)."""

    def __init__(self, A, b=None, half_side: float = 1.0, image_half_side: Optional[float] = None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.n = self.A.shape[0]
        self.b = np.zeros(self.n) if b is None else np.asarray(b, dtype=float)
        self.label = "linear"
        self.domain_half_side = half_side
        self.image_half_side = image_half_side if image_half_side is not None else np.inf
        self._Ainv = np.linalg.inv(self.A)

    def _forward(self, x):
        return x @ self.A.T + self.b, np.broadcast_to(self.A, (len(x), self.n, self.n)).copy()

    def _inverse(self, y):
        return (y - self.b) @ self._Ainv.T


# --- cube annulus transfer ------------------------------------------------------------

@dataclass(frozen=True)
class AnnulusTransfer:
    """Concentric cube pairs: (src_outer, src_inner) is sent onto (dst_outer, dst_inner)."""

    src_center: tuple
    src_outer: float
    src_inner: float
    dst_center: tuple
    dst_outer: float
    dst_inner: float

    def __post_init__(self):
        if not (0 < self.src_inner < self.src_outer and 0 < self.dst_inner < self.dst_outer):
            raise ValueError("inner cubes must be strictly inside the outer cubes")

    def reversed(self) -> "AnnulusTransfer":
        return AnnulusTransfer(self.dst_center, self.dst_outer, self.dst_inner,
                               self.src_center, self.src_outer, self.src_inner)


def _annulus_eval(x, z, zt, r_out, r_in, rt_out, rt_in):
    """Vectorised sup-norm radial interpolation; z, zt broadcast against x (N, n)."""
    N, n = x.shape
    u = x - z
    s = np.max(np.abs(u), axis=1)
    m = np.argmax(np.abs(u), axis=1)
    r_in = np.broadcast_to(r_in, (N,))
    r_out = np.broadcast_to(r_out, (N,))
    rt_in = np.broadcast_to(rt_in, (N,))
    rt_out = np.broadcast_to(rt_out, (N,))
    inner = s <= r_in
    slope = (rt_out - rt_in) / (r_out - r_in)
    s_safe = np.where(inner, 1.0, s)
    rho = rt_in + (s - r_in) * slope
    a = np.where(inner, rt_in / r_in, rho / s_safe)
    y = zt + a[:, None] * u
    D = a[:, None, None] * np.eye(n)
    b = np.where(inner, 0.0, (slope * s - rho) / s_safe**2)
    sgn = np.sign(u[np.arange(N), m])
    D[np.arange(N), :, m] += (b * sgn)[:, None] * u
    return y, D


def annulus_transfer(t: AnnulusTransfer, x) -> JetSample:
    x = _as_points(x, len(t.src_center))
    z = np.asarray(t.src_center, float)
    if np.any(np.max(np.abs(x - z), axis=1) > t.src_outer + 1e-12):
        raise DomainError("point outside the source outer cube")
    y, D = _annulus_eval(x, z, np.asarray(t.dst_center, float),
                         t.src_outer, t.src_inner, t.dst_outer, t.dst_inner)
    return JetSample(y, D, np.linalg.det(D))


# --- the Cantor-to-Cantor maps g_k -----------------------------------------------------

def _child_signs(u: np.ndarray) -> np.ndarray:
    # shared faces resolve to the lexicographically smallest child (-1)
    return np.where(u > 0, 1.0, -1.0)


class GMap(PiecewiseHomeo):
    """g_k: identity for k = 0; maps Q_{v(k)} linearly onto Q~_{v(k)} and frames radially."""

    def __init__(self, k: int, sys: CantorSystem):
        sys.check_generation(k)
        self.k, self.sys, self.n = k, sys, sys.n
        self.generation = k
        self.label = f"g_{k}"
        self.rA = [sys.radius_f(j, "A") for j in range(k + 1)]
        self.rB = [sys.radius_f(j, "B") for j in range(k + 1)]

    def _descend(self, x, rs_src, rs_dst):
        N, n = x.shape
        zc = np.zeros((N, n))
        zt = np.zeros((N, n))
        y = np.empty((N, n))
        D = np.empty((N, n, n))
        active = np.ones(N, bool)
        for j in range(1, self.k + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            xs = x[idx]
            v = _child_signs(xs - zc[idx])
            cs = zc[idx] + 0.5 * rs_src[j - 1] * v
            ct = zt[idx] + 0.5 * rs_dst[j - 1] * v
            in_frame = np.max(np.abs(xs - cs), axis=1) > rs_src[j]
            if np.any(in_frame):
                f = idx[in_frame]
                yy, DD = _annulus_eval(x[f], cs[in_frame], ct[in_frame],
                                       0.5 * rs_src[j - 1], rs_src[j],
                                       0.5 * rs_dst[j - 1], rs_dst[j])
                y[f], D[f] = yy, DD
                active[f] = False
            zc[idx], zt[idx] = cs, ct
        idx = np.flatnonzero(active)
        ratio = rs_dst[self.k] / rs_src[self.k]
        y[idx] = zt[idx] + ratio * (x[idx] - zc[idx])
        D[idx] = ratio * np.eye(n)
        return y, D

    def _forward(self, x):
        return self._descend(x, self.rA, self.rB)

    def _inverse(self, y):
        return self._descend(y, self.rB, self.rA)[0]

    def inverse_jet(self, y) -> JetSample:
        y = _as_points(y, self.n)
        self._check(y, 1.0, "image point")
        x, D = self._descend(y, self.rB, self.rA)
        return JetSample(x, D, np.linalg.det(D))

    def frame_generation(self, x) -> np.ndarray:
        """Generation j of the frame Q'_{v(j)} minus Q_{v(j)} holding x (0 = deepest cube)."""
        x = _as_points(x, self.n)
        N, n = x.shape
        zc = np.zeros((N, n))
        out = np.zeros(N, int)
        active = np.ones(N, bool)
        for j in range(1, self.k + 1):
            v = _child_signs(x - zc)
            zc = zc + 0.5 * self.rA[j - 1] * v
            hit = active & (np.max(np.abs(x - zc), axis=1) > self.rA[j])
            out[hit] = j
            active &= ~hit
        return out


def build_g(k: int, sys: CantorSystem) -> GMap:
    return GMap(k, sys)


# --- rearrangement of corner cubes into a vertical stack -------------------------------

class Slide:
    """Shear-slide along ``axis``: y_axis = x_axis + lam(x_other) (psi(x_axis) - x_axis).

    ``psi`` is the increasing piecewise-linear map through ``knots``; ``lam`` is the
    minimum of tent cutoffs (1 on the core, 0 beyond ``outer``) in the other coordinates.
    """

    def __init__(self, axis: int, knots_x, knots_y, cutoffs):
        self.axis = axis
        self.kx = np.asarray(knots_x, float)
        self.ky = np.asarray(knots_y, float)
        if np.any(np.diff(self.kx) <= 0) or np.any(np.diff(self.ky) <= 0):
            raise ValueError("slide profile must be strictly increasing")
        self.cutoffs = list(cutoffs)  # (coord, center, core, outer)

    def active(self, x):
        """Points where the cutoff is positive; the slide fixes every other point."""
        m = np.ones(len(x), bool)
        for (l, c, _, outer) in self.cutoffs:
            m &= np.abs(x[:, l] - c) < outer
        return m

    def _lam(self, x):
        N = len(x)
        lam = np.ones(N)
        grad = np.zeros_like(x)
        for (l, c, core, outer) in self.cutoffs:
            d = np.abs(x[:, l] - c)
            val = np.clip((outer - d) / (outer - core), 0.0, 1.0)
            g = np.where((d > core) & (d < outer), -np.sign(x[:, l] - c) / (outer - core), 0.0)
            take = val < lam
            lam = np.where(take, val, lam)
            grad[take] = 0.0
            grad[take, l] = g[take]
        return lam, grad

    def _psi(self, t):
        inside = (t >= self.kx[0]) & (t <= self.kx[-1])
        p = np.where(inside, np.interp(t, self.kx, self.ky), t)
        seg = np.clip(np.searchsorted(self.kx, t, side="right") - 1, 0, len(self.kx) - 2)
        slopes = np.diff(self.ky) / np.diff(self.kx)
        dp = np.where(inside, slopes[seg], 1.0)
        return p, dp

    def forward(self, x):
        a = self.axis
        lam, grad = self._lam(x)
        t = x[:, a]
        p, dp = self._psi(t)
        y = x.copy()
        y[:, a] = t + lam * (p - t)
        N, n = x.shape
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        D[:, a, :] = grad * (p - t)[:, None]
        D[:, a, a] = 1.0 - lam + lam * dp
        return y, D

    def inverse(self, y):
        a = self.axis
        lam, _ = self._lam(y)
        s = y[:, a]
        phi = (1.0 - lam)[:, None] * self.kx[None, :] + lam[:, None] * self.ky[None, :]
        t = s.copy()
        for i in range(len(self.kx) - 1):
            lo, hi = phi[:, i], phi[:, i + 1]
            m = (s >= lo) & (s <= hi)
            t[m] = self.kx[i] + (s[m] - lo[m]) * (self.kx[i + 1] - self.kx[i]) / (hi[m] - lo[m])
        x = y.copy()
        x[:, a] = t
        return x


class Rearrangement:
    """Homeomorphism of [-1,1]^n, identity on the boundary, translating the corner cubes
    Q(v/2, eps) onto the stacked cubes Q(c_{w(v)}, eps), c_j = (0,..,0,-1+(2j-1)/2^n)."""

    def __init__(self, n: int, eps: float):
        if not 0 < eps <= 2.0 ** (-n - 2):
            raise ValueError("corner cubes too large to be stacked")
        self.n, self.eps = n, eps
        s = 2.0 ** (-n)
        self.slot_heights = np.array([-1 + (2 * j - 1) * s for j in range(1, 2**n + 1)])
        core = 2 * eps
        slides = []
        # stage 1: inside each column move the two cubes vertically to their slot heights
        for m in range(2 ** (n - 1)):
            vperp = slot_to_vertex(m + 1, n - 1) if n > 1 else ()
            lo = vertex_to_slot(tuple(vperp) + (-1,))
            t1, t2 = self.slot_heights[lo - 1], self.slot_heights[lo]
            cut = [(l, 0.5 * vperp[l], core, 0.5) for l in range(n - 1)]
            slides.append(Slide(n - 1,
                                [-1, -0.5 - eps, -0.5 + eps, 0.5 - eps, 0.5 + eps, 1],
                                [-1, t1 - eps, t1 + eps, t2 - eps, t2 + eps, 1], cut))
        # stage 2: in each horizontal slab move the cube to the vertical axis, one axis at a time
        for j in range(1, 2**n + 1):
            v = slot_to_vertex(j, n)
            pos = [0.5 * v[l] for l in range(n - 1)]
            tj = self.slot_heights[j - 1]
            for i in range(n - 1):
                cut = [(n - 1, tj, core, s)]
                cut += [(l, pos[l], core, 0.5) for l in range(n - 1) if l != i]
                ci = pos[i]
                slides.append(Slide(i, [-1, ci - eps, ci + eps, 1], [-1, -eps, eps, 1], cut))
                pos[i] = 0.0
        self.slides = slides

    def forward(self, u):
        N, n = u.shape
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        y = np.array(u, float)
        for sl in self.slides:
            m = sl.active(y)
            if m.any():
                ys, Ds = sl.forward(y[m])
                y[m] = ys
                D[m] = Ds @ D[m]
        return y, D

    def inverse(self, y):
        x = np.array(y, float)
        for sl in reversed(self.slides):
            m = sl.active(x)
            if m.any():
                x[m] = sl.inverse(x[m])
        return x


class LMap(PiecewiseHomeo):
    """Finite-generation bi-Lipschitz map taking Q~_{v(i)} onto Q^_{w(v(i))} for i <= K."""

    def __init__(self, K: int, sys: CantorSystem):
        sys.check_generation(K)
        self.K, self.sys, self.n = K, sys, sys.n
        self.generation = K
        self.label = f"L_{K}"
        self.eps = 2.0 ** (-sys.beta - 1)
        self.phi = Rearrangement(sys.n, self.eps)
        self.R = [sys.radius_f(j, "B") for j in range(K + 1)]

    def _forward(self, x):
        N, n = x.shape
        zt = np.zeros((N, n))
        zh = np.zeros((N, n))
        y = np.empty((N, n))
        D = np.empty((N, n, n))
        active = np.ones(N, bool)
        heights = self.phi.slot_heights
        pow2 = 2 ** np.arange(n - 1, -1, -1)
        for j in range(1, self.K + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            R = self.R[j - 1]
            u = (x[idx] - zt[idx]) / R
            v = _child_signs(u)
            inside = np.max(np.abs(u - 0.5 * v), axis=1) <= self.eps
            out = idx[~inside]
            if out.size:
                yy, DD = self.phi.forward(u[~inside])
                y[out] = zh[out] + R * yy
                D[out] = DD
                active[out] = False
            ins = idx[inside]
            vin = v[inside]
            slots = ((vin > 0).astype(int) @ pow2)
            zt[ins] += 0.5 * R * vin
            zh[ins, n - 1] += R * heights[slots]
        idx = np.flatnonzero(active)
        y[idx] = zh[idx] + (x[idx] - zt[idx])
        D[idx] = np.eye(n)
        return y, D

    def _inverse(self, y):
        N, n = y.shape
        zt = np.zeros((N, n))
        zh = np.zeros((N, n))
        x = np.empty((N, n))
        active = np.ones(N, bool)
        heights = self.phi.slot_heights
        for j in range(1, self.K + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            R = self.R[j - 1]
            u = (y[idx] - zh[idx]) / R
            slot = np.clip(np.floor((u[:, -1] + 1) * 2 ** (n - 1)).astype(int), 0, 2**n - 1)
            c = np.zeros_like(u)
            c[:, -1] = heights[slot]
            inside = np.max(np.abs(u - c), axis=1) <= self.eps
            out = idx[~inside]
            if out.size:
                x[out] = zt[out] + R * self.phi.inverse(u[~inside])
                active[out] = False
            ins = idx[inside]
            verts = np.array([slot_to_vertex(s + 1, n) for s in range(2**n)], float)
            zt[ins] += 0.5 * R * verts[slot[inside]]
            zh[ins, n - 1] += R * heights[slot[inside]]
        idx = np.flatnonzero(active)
        x[idx] = zt[idx] + (y[idx] - zh[idx])
        return x


def build_L(K: int, sys: CantorSystem) -> LMap:
    return LMap(K, sys)


# --- compositions ----------------------------------------------------------------------

class ComposedMap(PiecewiseHomeo):
    """Composition ``maps[-1] o ... o maps[0]`` (applied left to right)."""

    def __init__(self, maps: Sequence[PiecewiseHomeo], label: str = "composite"):
        self.maps = list(maps)
        self.n = self.maps[0].n
        self.label = label
        self.generation = max(m.generation for m in self.maps)

    def _forward(self, x):
        return self._forward_jac(x)[:2]

    def _forward_jac(self, x):
        N, n = x.shape
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        J = np.ones(N)
        y = x
        for m in self.maps:
            y, Dm, Jm = m._forward_jac(y)
            D = Dm @ D
            J = J * Jm
        return y, D, J

    def _inverse(self, y):
        x = y
        for m in reversed(self.maps):
            x = m._inverse(x)
        return x


class InverseMap(PiecewiseHomeo):
    def __init__(self, base: PiecewiseHomeo):
        self.base = base
        self.n = base.n
        self.label = f"{base.label}^-1"
        self.generation = base.generation

    def _forward(self, y):
        return self._forward_jac(y)[:2]

    def _forward_jac(self, y):
        x = self.base._inverse(y)
        _, D, J = self.base._forward_jac(x)
        return x, np.linalg.inv(D), 1.0 / J

    def _inverse(self, x):
        return self.base._forward(x)[0]


# --- module-level operations ---------------------------------------------------------------

def eval_jet(map_: PiecewiseHomeo, x) -> JetSample:
    return map_.jet(x)


def invert(map_: PiecewiseHomeo, y) -> np.ndarray:
    return map_.inverse(y)


def bilip_estimate(map_: PiecewiseHomeo, samples: int = 20000, seed: int = 0):
    """Empirical (lower, upper) Lipschitz bounds from random pairs at all scales."""
    if samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    n = map_.n
    h = map_.domain_half_side
    x = rng.uniform(-h, h, size=(samples, n))
    scale = 10.0 ** rng.uniform(-7, 0, size=samples)
    dirs = rng.normal(size=(samples, n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    xp = np.clip(x + scale[:, None] * dirs, -h, h)
    ok = np.linalg.norm(xp - x, axis=1) > 0
    x, xp = x[ok], xp[ok]
    ratio = np.linalg.norm(map_(x) - map_(xp), axis=1) / np.linalg.norm(x - xp, axis=1)
    return float(ratio.min()), float(ratio.max())


def continuity_defect(map_: PiecewiseHomeo, x, normals, eps: float = 1e-9) -> np.ndarray:
    """Jump across faces through ``x`` with unit ``normals``.

    Both one-sided limits are extrapolated to first order from ``x -+ eps*normal``, so the
    result is O(eps^2) for a continuous piecewise smooth map and O(1) across a tear.
    """
    x = _as_points(x, map_.n)
    nu = np.asarray(normals, float).reshape(x.shape)
    lo = map_.jet(x - eps * nu)
    hi = map_.jet(x + eps * nu)
    left = lo.value + eps * np.einsum("nij,nj->ni", lo.derivative, nu)
    right = hi.value - eps * np.einsum("nij,nj->ni", hi.derivative, nu)
    return np.max(np.abs(left - right), axis=1)
