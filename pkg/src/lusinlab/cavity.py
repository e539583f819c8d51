"""Grid sets of finite perimeter and a synthetic cavitation model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import quad
from skimage import measure as skmeasure

from .maps import JetSample


class GridMismatchError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class GridTooCoarseError(ValueError):
    pass


@dataclass
class GridSet:
    """Union of closed cells of side ``h`` in the box ``lo + [0, shape*h]``."""

    mask: np.ndarray
    lo: tuple
    h: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, bool)
        self.lo = tuple(float(v) for v in self.lo)
        if len(self.lo) != self.mask.ndim:
            raise ValueError("box corner dimension does not match the mask")
        if self.h <= 0:
            raise ValueError("cell size must be positive")

    @property
    def n(self) -> int:
        return self.mask.ndim

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def measure(self) -> float:
        return self.count * self.cell_volume

    def centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.mask.shape[axis]) + 0.5) * self.h

    def grid_points(self) -> np.ndarray:
        axes = [self.centers(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.n)

    def like(self, mask) -> "GridSet":
        return GridSet(mask, self.lo, self.h)

    def compatible(self, other: "GridSet") -> bool:
        return (self.mask.shape == other.mask.shape and self.h == other.h
                and np.allclose(self.lo, other.lo, atol=1e-15 + 1e-12 * self.h))

    @classmethod
    def from_indicator(cls, fn, lo, hi, h) -> "GridSet":
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        shape = tuple(int(round(v)) for v in (hi - lo) / h)
        axes = [lo[i] + (np.arange(shape[i]) + 0.5) * h for i in range(len(shape))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        return cls(fn(pts), tuple(lo), h)

    # run-length encoding: header line (JSON) + alternating run lengths starting with zeros
    def to_rle(self) -> str:
        flat = self.mask.ravel().astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds).tolist()
        if flat.size and flat[0] == 1:
            runs = [0] + runs
        head = json.dumps({"shape": list(self.mask.shape), "lo": list(self.lo), "h": self.h})
        return head + "\n" + " ".join(map(str, runs)) + "\n"

    @classmethod
    def from_rle(cls, text: str) -> "GridSet":
        head, body = text.split("\n", 1)
        meta = json.loads(head)
        runs = [int(v) for v in body.split()]
        vals = np.zeros(sum(runs), bool)
        pos, bit = 0, False
        for r in runs:
            vals[pos:pos + r] = bit
            pos += r
            bit = not bit
        return cls(vals.reshape(meta["shape"]), tuple(meta["lo"]), meta["h"])


def set_metrics(A: GridSet, B: GridSet) -> dict:
    if not A.compatible(B):
        raise GridMismatchError("grid sets live on different grids")
    cv = A.cell_volume
    return {"A": A.measure, "B": B.measure,
            "symdiff": int(np.sum(A.mask ^ B.mask)) * cv,
            "intersection": int(np.sum(A.mask & B.mask)) * cv}


# --- perimeter ---------------------------------------------------------------------------

def perimeter(A: GridSet, whole_space: bool = True, sigma: float = 1.0) -> float:
    """Perimeter from an iso-contour of the lightly smoothed indicator.

    ``whole_space`` pads the box with empty cells (P(A, R^n)); otherwise only the part
    of the boundary inside the open box is measured.
    """
    if A.n not in (2, 3):
        raise ValueError("perimeter estimator supports n = 2 and n = 3")
    if A.count == 0:
        return 0.0
    f = A.mask.astype(float)
    if whole_space:
        pad = int(math.ceil(4 * sigma)) + 2
        f = np.pad(f, pad)
        f = ndimage.gaussian_filter(f, sigma, mode="constant")
    else:
        f = ndimage.gaussian_filter(f, sigma, mode="nearest")
    if A.n == 2:
        total = 0.0
        for c in skmeasure.find_contours(f, 0.5):
            total += float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))
        return total * A.h
    if min(f.shape) < 2 or f.max() < 0.5 or f.min() > 0.5:
        return 0.0
    verts, faces, _, _ = skmeasure.marching_cubes(f, 0.5, spacing=(A.h,) * 3)
    return float(skmeasure.mesh_surface_area(verts, faces))


def isoperimetric_ratio(A: GridSet) -> float:
    if A.count == 0:
        raise ValueError("empty set")
    return A.measure ** ((A.n - 1) / A.n) / perimeter(A, whole_space=True)


def ball_isoperimetric_ratio(n: int) -> float:
    omega = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    return omega ** ((n - 1) / n) / (n * omega)


@dataclass
class LSCReport:
    symdiffs: list
    perimeters: list
    limit_perimeter: float
    liminf: float
    converges: bool
    holds: Optional[bool]
    gap: float


def lsc_perimeter_demo(family: Sequence[GridSet], limit: GridSet, tol: float = 0.03,
                       whole_space: bool = False, conv_tol: Optional[float] = None) -> LSCReport:
    """Perimeters along a family converging in measure against the perimeter of the limit."""
    sd = [set_metrics(A, limit)["symdiff"] for A in family]
    per = [perimeter(A, whole_space) for A in family]
    pl = perimeter(limit, whole_space) if limit.count else 0.0
    half = len(family) // 2
    if conv_tol is not None:
        converges = sd[-1] <= conv_tol
    else:
        # the distance to the limit must have dropped well below its largest value
        converges = sd[-1] == 0 or sd[-1] <= 0.25 * max(sd)
    liminf = min(per[half:]) if per else float("nan")
    holds = (pl <= liminf * (1 + tol) + tol * limit.h) if converges else None
    return LSCReport(sd, per, pl, liminf, converges, holds, liminf - pl)


def oscillating_subgraphs(ks: Sequence[int], h: float):
    """A_k = {y < 1/2 + sin(2 pi k x)/k} in the unit square and the limit lower half."""
    fam = [GridSet.from_indicator(lambda p, k=k: p[..., 1] < 0.5 + np.sin(2 * np.pi * k * p[..., 0]) / k,
                                  (0, 0), (1, 1), h) for k in ks]
    lim = GridSet.from_indicator(lambda p: p[..., 1] < 0.5, (0, 0), (1, 1), h)
    return fam, lim


def oscillation_arclength() -> float:
    return quad(lambda x: math.sqrt(1 + 4 * math.pi**2 * math.cos(2 * math.pi * x) ** 2), 0, 1)[0]


def select_subsequence(family: Sequence[GridSet], limit: GridSet, budget: int):
    """Indices k_l with |A_(k_l) sym-diff A| < 2^-l for l = 1..budget, plus the limsup check.

    Returns (indices, measure of A sym-diff limsup over the selected tail).
    """
    sd = [set_metrics(A, limit)["symdiff"] for A in family]
    half = len(sd) // 2
    if half and max(sd[half:]) > 0 and max(sd[half:]) >= max(sd[:half]):
        raise ConvergenceError("the family does not approach the limit in measure")
    picks = []
    start = 0
    for l in range(1, budget + 1):
        ok = [i for i in range(start, len(family)) if sd[i] < 2.0 ** (-l)]
        if not ok:
            raise ConvergenceError(f"no member within 2^-{l} of the limit after index {start}")
        picks.append(ok[0])
        start = ok[0] + 1
    # limsup of the selected sets over the finite tail: intersection of tail unions
    masks = [family[i].mask for i in picks]
    tails = [np.logical_or.reduce(masks[j:]) for j in range(len(masks))]
    limsup = np.logical_and.reduce(tails)
    ver = int(np.sum(limsup ^ limit.mask)) * limit.cell_volume
    return picks, ver


# --- cavitation maps ------------------------------------------------------------------------

class CavityMap:
    """Radial map x -> z + rho(|x-z|) (x-z)/|x-z| opening the ball B(z, c).

    Free version: rho^n = r^n + c^n on B(z, R).  Pinned version: rho^n = r^n (1 - c^n/R^n)
    + c^n, equal to the identity on the sphere |x - z| = R and extended by the identity.
    """

    def __init__(self, c: float, R: float, n: int, center=None, pinned: bool = False):
        if not 0 < c < R:
            raise ValueError("need 0 < c < R")
        if n < 2:
            raise ValueError("n must be >= 2")
        self.c, self.R, self.n, self.pinned = c, R, n, pinned
        self.center = np.zeros(n) if center is None else np.asarray(center, float)
        self.k = 1 - (c / R) ** n if pinned else 1.0

    @property
    def outer_radius(self) -> float:
        return self.R if self.pinned else (self.R**self.n + self.c**self.n) ** (1 / self.n)

    def _rho(self, r):
        return (self.k * r**self.n + self.c**self.n) ** (1 / self.n)

    def in_domain(self, x) -> np.ndarray:
        r = np.linalg.norm(np.asarray(x, float) - self.center, axis=-1)
        return (r > 0) & ((r <= self.R) | self.pinned)

    def __call__(self, x):
        return self.jet(x)[0]

    def jet(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        u = x - self.center
        r = np.linalg.norm(u, axis=1)
        if np.any(r == 0):
            raise ValueError("the cavitation point itself has no image point")
        inside = r <= self.R
        if not self.pinned and np.any(~inside):
            raise ValueError("point outside the domain ball")
        n = self.n
        rho = np.where(inside, self._rho(np.minimum(r, self.R)), r)
        drho = np.where(inside, self.k * r ** (n - 1) / rho ** (n - 1), 1.0)
        e = u / r[:, None]
        a = rho / r
        D = a[:, None, None] * np.eye(n) + (drho - a)[:, None, None] * e[:, :, None] * e[:, None, :]
        y = self.center + rho[:, None] * e
        J = drho * a ** (n - 1)
        return JetSample(y, D, J)

    def inverse(self, y):
        """Preimage, NaN where y is not an image point (the cavity or beyond the image)."""
        y = np.atleast_2d(np.asarray(y, float))
        v = y - self.center
        s = np.linalg.norm(v, axis=1)
        n = self.n
        out = np.full_like(y, np.nan)
        big = s > self.outer_radius
        ok = (s > self.c) & (~big | self.pinned)
        inner = ok & (s <= self.outer_radius)
        r = ((s[inner] ** n - self.c**n) / self.k) ** (1 / n)
        out[inner] = self.center + (r / s[inner])[:, None] * v[inner]
        if self.pinned:
            out[big] = y[big]
        return out

    def radial_energy(self, p: float, phi, r_max: Optional[float] = None) -> dict:
        """int_B |Df|_F^p and int_B phi(J) over B(z, R) by one-dimensional quadrature."""
        n = self.n
        R = self.R if r_max is None else r_max
        area = n * math.pi ** (n / 2) / math.gamma(n / 2 + 1)  # |S^(n-1)|

        def dens(r, which):
            rho = self._rho(r)
            drho = self.k * r ** (n - 1) / rho ** (n - 1)
            if which == "d":
                return (drho**2 + (n - 1) * (rho / r) ** 2) ** (p / 2) * area * r ** (n - 1)
            return float(phi(np.array([drho * (rho / r) ** (n - 1)]))[0]) * area * r ** (n - 1)

        d = quad(dens, 0, R, args=("d",), limit=400, points=[self.c])[0]
        o = quad(dens, 0, R, args=("o",), limit=200)[0]
        return {"dirichlet": d, "orlicz": o}


class MultiCavityMap:
    """Pinned radial cavitations on disjoint balls, identity elsewhere on the box."""

    def __init__(self, maps: Sequence[CavityMap], half_side: float = 1.0):
        self.maps = list(maps)
        self.n = self.maps[0].n
        self.half_side = half_side
        for m in self.maps:
            if not m.pinned:
                raise ValueError("glued cavities must be pinned to the identity")
            if np.any(np.abs(m.center) + m.R > half_side + 1e-12):
                raise ValueError("cavity ball leaves the box")
        for i, a in enumerate(self.maps):
            for b in self.maps[i + 1:]:
                if np.linalg.norm(a.center - b.center) < a.R + b.R:
                    raise ValueError("cavity balls overlap")

    def jet(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        N, n = x.shape
        y = x.copy()
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        J = np.ones(N)
        for m in self.maps:
            sel = np.linalg.norm(x - m.center, axis=1) < m.R
            if np.any(sel):
                y[sel], D[sel], J[sel] = m.jet(x[sel])
        return JetSample(y, D, J)

    def __call__(self, x):
        return self.jet(x)[0]

    def inverse(self, y):
        y = np.atleast_2d(np.asarray(y, float))
        out = y.copy()
        for m in self.maps:
            sel = np.linalg.norm(y - m.center, axis=1) < m.R
            if np.any(sel):
                out[sel] = m.inverse(y[sel])
        return out

    def restricted(self, i: int):
        return self.maps[i]


# --- cavity extraction ---------------------------------------------------------------------

def _image_box(f, h: float, margin: float = 0.1):
    if isinstance(f, CavityMap):
        c = f.center
        rad = f.outer_radius + margin
        return c - rad, c + rad
    half = getattr(f, "half_side", None) or getattr(f, "domain_half_side", 1.0)
    n = f.n
    return np.full(n, -half), np.full(n, half)


def _snap_box(lo, hi, h):
    lo = np.floor(np.asarray(lo) / h) * h
    hi = np.ceil(np.asarray(hi) / h) * h
    return lo, hi


def hit_mask(f, lo, hi, h: float, domain=None) -> GridSet:
    """Image-grid cells whose centre has a preimage (inside ``domain`` when given)."""
    lo, hi = _snap_box(lo, hi, h)
    G = GridSet.from_indicator(lambda p: np.zeros(p.shape[:-1], bool), lo, hi, h)
    Y = G.grid_points()
    X = f.inverse(Y)
    ok = np.all(np.isfinite(X), axis=1)
    if domain is not None:
        ok &= domain(np.where(np.isfinite(X), X, 0.0))
    return G.like(ok.reshape(G.mask.shape))


def extract_cavity(f, h: float, lo=None, hi=None, domain=None, min_cells: int = 5,
                   min_thickness: int = 3) -> GridSet:
    """Cavities: image-box cells enclosed by the image but not hit by it.

    Components of at most ``min_cells`` cells are discarded; a surviving component thinner
    than ``min_thickness`` cells means the grid is too coarse.  A sequence of maps yields
    per-map cavities combined by a majority vote over the last third.
    """
    if isinstance(f, (list, tuple)):
        parts = [extract_cavity(g, h, lo, hi, domain, min_cells, min_thickness) for g in f]
        tail = parts[len(parts) - max(1, len(parts) // 3):]
        votes = np.sum([p.mask for p in tail], axis=0)
        return tail[-1].like(votes * 2 > len(tail))
    if lo is None or hi is None:
        lo, hi = _image_box(f, h)
    hit = hit_mask(f, lo, hi, h, domain)
    holes = ndimage.binary_fill_holes(hit.mask) & ~hit.mask
    lab, k = ndimage.label(holes)
    keep = np.zeros_like(holes)
    for i in range(1, k + 1):
        comp = lab == i
        if comp.sum() <= min_cells:
            continue
        core = ndimage.binary_erosion(comp, iterations=(min_thickness - 1) // 2)
        if not core.any():
            raise GridTooCoarseError("cavity thinner than the minimum resolvable thickness")
        keep |= comp
    return hit.like(keep)


def forward_image(f, A: GridSet, lo, hi, h: float, oversample: int = 2, domain=None) -> GridSet:
    """Image cells hit by pushing forward an oversampled grid of ``lo..hi``."""
    lo_s, hi_s = _snap_box(lo, hi, h / oversample)
    D = GridSet.from_indicator(lambda p: np.ones(p.shape[:-1], bool), lo_s, hi_s, h / oversample)
    X = D.grid_points()
    ok = np.ones(len(X), bool) if domain is None else domain(X)
    Y = f(X[ok])
    idx = np.floor((Y - np.asarray(A.lo)) / A.h).astype(int)
    inside = np.all((idx >= 0) & (idx < np.array(A.mask.shape)), axis=1)
    m = np.zeros(A.mask.shape, bool)
    m[tuple(idx[inside].T)] = True
    return A.like(m)


def overlap_violations(cav: GridSet, img: GridSet, layer: int = 3) -> int:
    """Cells in both the cavity and the sampled image further than ``layer`` cells from the
    cavity boundary."""
    if not cav.count:
        return 0
    inner = ndimage.binary_erosion(cav.mask, iterations=layer)
    return int(np.sum(inner & img.mask))


def topological_image_cavity(f: MultiCavityMap, i: int, h: float, lo, hi) -> GridSet:
    """Cavity part of the topological image of the ball carrying cavity ``i``."""
    m = f.maps[i]
    dom = lambda X: np.linalg.norm(X - m.center, axis=1) < m.R
    return extract_cavity(f, h, lo, hi, domain=dom)


def disk(center, radius, h, lo, hi) -> GridSet:
    c = np.asarray(center, float)
    return GridSet.from_indicator(lambda p: np.linalg.norm(p - c, axis=-1) < radius, lo, hi, h)


@dataclass
class CavityReport:
    cavity: GridSet
    perimeter: float
    dirichlet: float
    orlicz: float
    perimeter_term: float
    total: float
    overlap_violations: int
    components: int
    disjointness: list = field(default_factory=list)
    union_symdiff: Optional[float] = None


def cavity_energy_report(f, p: float, phi, a: float, h: float) -> CavityReport:
    """E_c = int |Df|^p + int phi(J) + a P(A(f), R^n) for radial and glued-radial maps."""
    if isinstance(f, CavityMap):
        lo, hi = _image_box(f, h)
        parts = f.radial_energy(p, phi)
        dom = lambda X: np.linalg.norm(X - f.center, axis=1) <= f.R
    else:
        lo = np.full(f.n, -f.half_side)
        hi = np.full(f.n, f.half_side)
        n = f.n
        box = (2 * f.half_side) ** n
        ball = lambda m: math.pi ** (n / 2) / math.gamma(n / 2 + 1) * m.R**n
        parts = {"dirichlet": 0.0, "orlicz": 0.0}
        rest = box - sum(ball(m) for m in f.maps)
        parts["dirichlet"] = rest * n ** (p / 2)
        parts["orlicz"] = rest * float(phi(np.array([1.0]))[0])
        for m in f.maps:
            e = m.radial_energy(p, phi)
            parts["dirichlet"] += e["dirichlet"]
            parts["orlicz"] += e["orlicz"]
        dom = None
    cav = extract_cavity(f, h, lo, hi)
    per = perimeter(cav, whole_space=True) if cav.count else 0.0
    img = forward_image(f, cav, lo, hi, h, domain=dom)
    _, ncomp = ndimage.label(cav.mask)
    rep = CavityReport(cav, per, parts["dirichlet"], parts["orlicz"], a * per,
                       parts["dirichlet"] + parts["orlicz"] + a * per,
                       overlap_violations(cav, img), ncomp)
    if isinstance(f, MultiCavityMap):
        tops = [topological_image_cavity(f, i, h, lo, hi) for i in range(len(f.maps))]
        mat = [[set_metrics(s, t)["intersection"] for t in tops] for s in tops]
        union = np.logical_or.reduce([t.mask for t in tops])
        rep.disjointness = mat
        rep.union_symdiff = int(np.sum(union ^ cav.mask)) * cav.cell_volume
    return rep


def radial_energy_closed_form(c: float, R: float, n: int, p: float, phi, a: float) -> float:
    """Oracle for the free radial family: 1-D quadrature plus a * |S^(n-1)| c^(n-1)."""
    f = CavityMap(c, R, n)
    e = f.radial_energy(p, phi)
    area = n * math.pi ** (n / 2) / math.gamma(n / 2 + 1)
    return e["dirichlet"] + e["orlicz"] + a * area * c ** (n - 1)
