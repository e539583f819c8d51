"""Jacobian distributions, Neohookean-type energies, distortion moduli and Orlicz functions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .composite import CompositeMap, support_nodes
from .maps import DomainError, GMap, IdentityMap, LinearMap, PiecewiseHomeo, frobenius


@dataclass
class JacobianHistogram:
    """Atoms (J value, Frobenius norm of Df, domain volume carried)."""

    label: str
    values: np.ndarray
    norms: np.ndarray
    masses: np.ndarray
    domain_volume: float

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        self.norms = np.asarray(self.norms, float)
        self.masses = np.asarray(self.masses, float)
        if np.any(self.masses < -1e-12):
            raise ValueError("negative mass in histogram")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def image_mass(self) -> float:
        return float(np.dot(self.values, self.masses))

    @property
    def min_jacobian(self) -> float:
        live = self.masses > 0
        return float(self.values[live].min())

    @property
    def max_jacobian(self) -> float:
        live = self.masses > 0
        return float(self.values[live].max())

    def conservation_error(self) -> float:
        return abs(self.total_mass - self.domain_volume) / self.domain_volume


def _frame_atoms(g: GMap, order: int):
    """Histogram of g_k from exact geometry: inner cubes plus radial frame shells.

    On a frame J depends on the sup-radius s only; |Dg|_F also depends on the position
    on the sup-sphere, which is integrated with a tensor rule on one face (all 2n faces
    are congruent).
    """
    n = g.n
    vals, norms, masses = [], [], []
    x, w = np.polynomial.legendre.leggauss(order)
    fx = np.stack(np.meshgrid(*([x] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1)
    fw = np.prod(np.stack(np.meshgrid(*([w] * (n - 1)), indexing="ij"), -1).reshape(-1, n - 1), axis=1)
    fw = fw / fw.sum()
    for j in range(1, g.k + 1):
        r, rp = g.rA[j], 0.5 * g.rA[j - 1]
        rt, rtp = g.rB[j], 0.5 * g.rB[j - 1]
        s = (r + rp) / 2 + (rp - r) / 2 * x
        ws = (rp - r) / 2 * w
        slope = (rtp - rt) / (rp - r)
        rho = rt + (s - r) * slope
        a = rho / s
        b = (slope * s - rho) / s**2
        J = a ** (n - 1) * slope
        # |a I + b u sgn(u_m) e_m^T|_F^2 = n a^2 + 2 a b s + b^2 |u|^2 on the face |u_m| = s
        u2 = s[:, None] ** 2 * (1 + np.sum(fx**2, axis=1))[None, :]
        sq = n * a[:, None] ** 2 + 2 * (a * b * s)[:, None] + b[:, None] ** 2 * u2
        shell = 2 * n * (2 * s) ** (n - 1) * ws * 2 ** (j * n)
        vals.append(np.repeat(J, len(fw)))
        norms.append(np.sqrt(sq).ravel())
        masses.append((shell[:, None] * fw[None, :]).ravel())
    cube_ratio = g.rB[g.k] / g.rA[g.k]
    vals.append(np.array([cube_ratio**n]))
    norms.append(np.array([math.sqrt(n) * cube_ratio]))
    masses.append(np.array([2 ** (g.k * n) * (2 * g.rA[g.k]) ** n]))
    return np.concatenate(vals), np.concatenate(norms), np.concatenate(masses)


def jacobian_histogram(map_: PiecewiseHomeo, resolution: int = 6, tube_cap: int = 64,
                       seed: int = 0) -> JacobianHistogram:
    """Histogram of J over the domain.

    ``resolution`` is the Gauss order for quadrature cells (grid points per axis for the
    generic fallback).
    """
    n = map_.n
    vol = (2 * map_.domain_half_side) ** n
    if isinstance(map_, IdentityMap):
        return JacobianHistogram(map_.label, [1.0], [math.sqrt(n)], [vol], vol)
    if isinstance(map_, LinearMap):
        return JacobianHistogram(map_.label, [float(np.linalg.det(map_.A))],
                                 [float(np.linalg.norm(map_.A))], [vol], vol)
    if isinstance(map_, GMap):
        v, nm, m = _frame_atoms(map_, resolution)
        return JacobianHistogram(map_.label, v, nm, m, vol)
    if isinstance(map_, CompositeMap):
        if map_.k == 0:
            return JacobianHistogram(map_.label, [1.0], [math.sqrt(n)], [vol], vol)
        S = support_nodes(map_, resolution, tube_cap, seed)
        jet = map_.jet(S.x)
        rest = vol - S.measure
        return JacobianHistogram(map_.label, np.concatenate([[1.0], jet.jacobian]),
                                 np.concatenate([[math.sqrt(n)], frobenius(jet.derivative)]),
                                 np.concatenate([[rest], S.weight]), vol)
    # generic midpoint grid
    h = map_.domain_half_side
    m = resolution
    ax = -h + (np.arange(m) + 0.5) * (2 * h / m)
    X = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    jet = map_.jet(X)
    return JacobianHistogram(map_.label, jet.jacobian, frobenius(jet.derivative),
                             np.full(len(X), vol / len(X)), vol)


# --- Orlicz functions -------------------------------------------------------------------------

@dataclass
class OrliczFunction:
    """phi = lam*log(1/t) on (0,1) + integral_1^t theta + 1, theta a non-decreasing step function.

    ``knots[i]`` starts the step where theta = ``slopes[i]``; beyond the last knot theta
    increases by one at every doubling of t, so phi(t)/t grows without bound.
    """

    lam: float
    knots: list
    slopes: list

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("blow-up weight must be positive")
        if len(self.knots) != len(self.slopes) or not self.knots:
            raise ValueError("knots and slopes must be non-empty and of equal length")
        if self.knots[0] != 1.0:
            raise ValueError("first knot must be 1")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must increase")
        if any(b < a for a, b in zip(self.slopes, self.slopes[1:])) or self.slopes[0] < 0:
            raise ValueError("slopes must be non-negative and non-decreasing")
        k = np.asarray(self.knots, float)
        s = np.asarray(self.slopes, float)
        self._k, self._s = k, s
        self._acc = np.concatenate([[0.0], np.cumsum(s[:-1] * np.diff(k))])

    def _theta_integral(self, t):
        k, s, acc = self._k, self._s, self._acc
        out = np.zeros_like(t)
        above = t > 1.0
        tt = t[above]
        last = k[-1]
        inner = np.minimum(tt, last)
        i = np.clip(np.searchsorted(k, inner, side="right") - 1, 0, len(k) - 1)
        val = acc[i] + s[i] * (inner - k[i])
        far = tt > last
        if np.any(far):
            # theta = s_last + m on [last*2^m, last*2^(m+1))
            u = tt[far] / last
            m = np.floor(np.log2(u))
            full = last * (2.0**m - 1) * s[-1] + last * ((m - 2) * 2.0**m + 2)
            rest = (s[-1] + m) * (tt[far] - last * 2.0**m)
            val[far] = acc[-1] + full + rest
        out[above] = val
        return out

    def __call__(self, t):
        t = np.asarray(t, float)
        if np.any(t <= 0):
            raise DomainError("Orlicz function evaluated at a non-positive Jacobian")
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        val = 1.0 + np.where(t < 1, self.lam * np.log(1 / np.minimum(t, 1.0)), 0.0)
        val = val + self._theta_integral(t)
        return float(val[0]) if scalar else val

    def to_json(self) -> str:
        return json.dumps({"lambda": self.lam, "knots": list(map(float, self.knots)),
                           "slopes": list(map(float, self.slopes)),
                           "tail": "slope +1 per doubling beyond last knot"}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OrliczFunction":
        d = json.loads(text)
        return cls(d["lambda"], d["knots"], d["slopes"])


class FunctionOrlicz:
    """Wraps a closed-form phi (e.g. t + 1/t)."""

    def __init__(self, fn: Callable, label: str = "phi"):
        self.fn = fn
        self.label = label

    def __call__(self, t):
        t = np.asarray(t, float)
        if np.any(t <= 0):
            raise DomainError("Orlicz function evaluated at a non-positive Jacobian")
        return self.fn(t)


def t_plus_inverse() -> FunctionOrlicz:
    return FunctionOrlicz(lambda t: t + 1.0 / t, "t+1/t")


def build_orlicz(hists: Sequence[JacobianHistogram], max_knots: int = 60) -> OrliczFunction:
    """De la Vallee-Poussin construction from the family's upper tails."""
    if not hists:
        raise ValueError("empty family")
    for h in hists:
        if np.any((h.values <= 0) & (h.masses > 0)):
            raise DomainError("histogram carries mass at non-positive Jacobian")
    # blow-up weight: sup_h sum log(1/J) vol over J < 1 must be <= 1
    low = max(float(np.dot(np.log(1 / h.values[h.values < 1]), h.masses[h.values < 1])) for h in hists)
    lam = 1.0 / low if low > 1.0 else 1.0
    cand = np.unique(np.concatenate([h.values[h.values >= 1] for h in hists] + [np.array([1.0])]))
    tails = []
    for h in hists:
        o = np.argsort(h.values)
        v = h.values[o]
        cum = np.concatenate([np.cumsum((v * h.masses[o])[::-1])[::-1], [0.0]])
        tails.append(cum[np.searchsorted(v, cand, side="left")])
    T = np.max(tails, axis=0)  # non-increasing in cand
    base = max(float(T[0]), 1e-300)
    knots, slopes = [1.0], [0.0]
    for j in range(1, max_knots + 1):
        ok = np.flatnonzero((cand > knots[-1]) & (T <= base * 2.0 ** (-j)))
        if ok.size == 0:
            break  # the doubling tail takes over beyond the data
        knots.append(float(cand[ok[0]]))
        slopes.append(float(j))
    return OrliczFunction(lam, knots, slopes)


def orlicz_sup(phi, hists: Sequence[JacobianHistogram]) -> float:
    return max(float(np.dot(phi(h.values), h.masses)) for h in hists)


def check_orlicz(phi, lo: float = 1e-8, hi: float = 1e8, points: int = 400) -> dict:
    t = np.logspace(math.log10(lo), math.log10(hi), points)
    v = np.asarray(phi(t), float)
    slope = np.diff(v) / np.diff(t)
    scale = np.maximum(1.0, np.abs(slope[:-1]))
    convex = bool(np.all((slope[1:] - slope[:-1]) / scale >= -1e-12))
    small = np.array([phi(10.0 ** (-j)) for j in range(1, 9)], float)
    blow = bool(np.all(np.diff(small) > 0))
    big = np.array([phi(10.0**j) / 10.0**j for j in range(1, 9)], float)
    superlinear = bool(np.all(np.diff(big) > 0))
    positive = bool(np.all(v > 0))
    return {"convex": convex, "blow_up": blow, "superlinear": superlinear, "positive": positive,
            "ok": convex and blow and superlinear and positive}


# --- energies ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    dirichlet: float
    orlicz: float
    perimeter: float
    total: float
    error: float


def energy(map_or_hist, p: float, phi, a: float = 0.0, cavity=None, resolution: int = 6,
           tube_cap: int = 64, seed: int = 0) -> EnergyReport:
    """E = int |Df|^p + int phi(J) (+ a * P(cavity, R^n) when a cavity set is supplied)."""
    if p <= 0:
        raise ValueError("p must be positive")
    if a and cavity is None:
        raise ValueError("perimeter weight given without a cavity set")

    def parts(h):
        if np.any((h.values <= 0) & (h.masses > 0)):
            raise DomainError("non-positive Jacobian: orientation violated")
        return float(np.dot(h.norms**p, h.masses)), float(np.dot(phi(h.values), h.masses))

    if isinstance(map_or_hist, JacobianHistogram):
        d, o = parts(map_or_hist)
        err = 0.0
    else:
        h1 = jacobian_histogram(map_or_hist, resolution, tube_cap, seed)
        h2 = jacobian_histogram(map_or_hist, resolution + 2, tube_cap, seed)
        d1, o1 = parts(h1)
        d, o = parts(h2)
        err = abs(d - d1) + abs(o - o1)
    per = 0.0
    if cavity is not None:
        from .cavity import perimeter
        per = a * perimeter(cavity, whole_space=True)
    return EnergyReport(d, o, per, d + o + per, err)


# --- distortion moduli ------------------------------------------------------------------------

@dataclass
class DistortionModuli:
    """Extremal image measures at prescribed domain measure, from a Jacobian histogram."""

    s_lo: np.ndarray   # cumulative domain mass, ascending-J order
    img_lo: np.ndarray
    s_hi: np.ndarray   # cumulative domain mass, descending-J order
    img_hi: np.ndarray
    domain_volume: float

    def _check(self, s):
        s = np.asarray(s, float)
        if np.any(s < 0) or np.any(s > self.domain_volume * (1 + 1e-12)):
            raise ValueError("measure outside [0, domain volume]")
        return s

    def phi_hat(self, s):
        return np.interp(self._check(s), self.s_lo, self.img_lo)

    def psi_hat(self, s):
        return np.interp(self._check(s), self.s_hi, self.img_hi)


def distortion_moduli(hist: JacobianHistogram) -> DistortionModuli:
    live = hist.masses > 0
    v, m = hist.values[live], hist.masses[live]
    order = np.argsort(v, kind="stable")
    lo_s = np.concatenate([[0.0], np.cumsum(m[order])])
    lo_i = np.concatenate([[0.0], np.cumsum((v * m)[order])])
    rev = order[::-1]
    hi_s = np.concatenate([[0.0], np.cumsum(m[rev])])
    hi_i = np.concatenate([[0.0], np.cumsum((v * m)[rev])])
    return DistortionModuli(lo_s, lo_i, hi_s, hi_i, hist.domain_volume)


@dataclass
class GridSetImage:
    measure: float
    image: float
    grid_error: float


def random_grid_sets(n: int, cells: int, count: int, seed: int = 0):
    """Random unions of grid cells of [-1,1]^n as boolean arrays of shape (cells,)*n."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p = rng.uniform(0.02, 0.98)
        out.append(rng.random((cells,) * n) < p)
    return out


def image_measure(map_: PiecewiseHomeo, sets, samples_per_axis: int = 256) -> list:
    """Image measures |f(A)| by pulling back a midpoint grid of the image cube.

    The grid error counts image samples with a grid neighbour of different membership.
    """
    n = map_.n
    m = samples_per_axis
    ax = -1 + (np.arange(m) + 0.5) * (2 / m)
    Y = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    X = map_.inverse(Y)
    cell_vol = (2 / m) ** n
    out = []
    for A in sets:
        c = A.shape[0]
        idx = np.clip(np.floor((X + 1) / 2 * c).astype(int), 0, c - 1)
        inA = A[tuple(idx.T)].reshape((m,) * n)
        edge = np.zeros_like(inA)
        for d in range(n):
            diff = np.diff(inA, axis=d)
            sl_a = [slice(None)] * n
            sl_b = [slice(None)] * n
            sl_a[d] = slice(0, m - 1)
            sl_b[d] = slice(1, m)
            edge[tuple(sl_a)] |= diff
            edge[tuple(sl_b)] |= diff
        out.append(GridSetImage(float(A.sum()) * (2 / c) ** n, float(inA.sum()) * cell_vol,
                                float(edge.sum()) * cell_vol))
    return out


def moduli_violations(mod: DistortionModuli, images) -> int:
    bad = 0
    for im in images:
        lo = float(mod.phi_hat(im.measure))
        hi = float(mod.psi_hat(im.measure))
        if im.image < lo - im.grid_error or im.image > hi + im.grid_error:
            bad += 1
    return bad
