"""Tentacles attached to the cubes of the Cantor tower and the squeeze maps h_k.

A generation-j tentacle is a head cube Q(z, r_j) (tower radii) plus a *graph tube*
body ``{t = x_1 in [r_j, end), |x_l| < w (1 < l < n), |x_n - prof(t)| < w}`` whose
centre line ``prof`` is piecewise linear.  The shear ``(t, u) -> (t, prof(t) + u)`` is
volume preserving, so a routed body has exactly the volume of the straight one.

Children leave their head horizontally, ramp inside the parent head to a reserved lane
of the parent body and then follow the parent centre line, so that primed child bodies
sit inside the unprimed parent body.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dyadic import CantorSystem, DyadicRational, ONE
from .maps import DomainError, PiecewiseHomeo, IdentityMap, JetSample, frobenius

MIN_WIDTH = 1e-13  # below this the cross-section is not resolved by float coordinates


class BudgetUnreachableError(RuntimeError):
    pass


class RoutingError(ValueError):
    pass


def default_axis_params(k: int, sys: CantorSystem):
    """(a_k, c_k, a~_k, c~_k) as exact dyadic rationals."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rh = lambda i: sys.radius(i, "tower")
    c = ONE
    for i in range(0, k):
        c = c - rh(i + 2)
    a = c - rh(k + 2)
    return a, c, rh(k).scale2(1), rh(k - 1).scale2(1)


def energy_budget(k: int, sys: CantorSystem) -> float:
    return 2.0 ** (-k * sys.beta * (2 * sys.n - 1)) / k**2


@dataclass
class TentacleParams:
    sys: CantorSystem
    K: int
    b: List[float]
    d: List[float]
    cutoff: str = "log"
    measured_energy: List[Optional[float]] = field(default_factory=list)
    energy_error: List[Optional[float]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.b) != self.K or len(self.d) != self.K:
            raise ValueError("need one width pair per generation")
        if self.cutoff not in ("log", "linear"):
            raise ValueError("cutoff must be 'log' or 'linear'")
        if not self.measured_energy:
            self.measured_energy = [None] * self.K
            self.energy_error = [None] * self.K

    def axis(self, k: int):
        return tuple(float(v) for v in default_axis_params(k, self.sys))

    def bk(self, k):
        return self.b[k - 1]

    def dk(self, k):
        return self.d[k - 1]

    def delta(self, k):
        return energy_budget(k, self.sys)

    def budget_met(self, k) -> Optional[bool]:
        e = self.measured_energy[k - 1]
        return None if e is None else e <= self.delta(k)

    def violations(self) -> List[str]:
        """Hard constraints; an empty list means the geometry can be built."""
        out = []
        n = self.sys.n
        for k in range(1, self.K + 1):
            a, c, _, _ = self.axis(k)
            b, d = self.bk(k), self.dk(k)
            rk = self.sys.radius_f(k, "tower")
            if not (0 < b < d < a < c):
                out.append(f"k={k}: need 0 < b < d < a < c")
            if not d < rk:
                out.append(f"k={k}: d_k must be below the head radius")
            if not b < 8.0 ** (-k):
                out.append(f"k={k}: b_k must be below 8^-k")
            if b < MIN_WIDTH:
                out.append(f"k={k}: b_k below resolvable width {MIN_WIDTH}")
            if k < self.K:
                dn = self.dk(k + 1)
                if not dn < 4.0**n * b:
                    out.append(f"k={k + 1}: d_(k+1) < 4^n b_k fails")
                if not dn < 2.0 ** (-n) * b:
                    out.append(f"k={k + 1}: child lanes need d_(k+1) < 2^-n b_k")
        return out

    def table(self):
        rows = []
        for k in range(1, self.K + 1):
            a, c, at, ct = self.axis(k)
            rows.append(dict(k=k, a=a, b=self.bk(k), c=c, d=self.dk(k), a_sq=at, c_sq=ct,
                             delta=self.delta(k), energy=self.measured_energy[k - 1],
                             energy_err=self.energy_error[k - 1], budget_met=self.budget_met(k)))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["k", "a", "b", "c", "d", "a_sq", "c_sq", "delta", "energy", "energy_err", "budget_met"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.table():
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


def seed_params(K: int, sys: CantorSystem, ratio: float = 2.0, cutoff: str = "log") -> TentacleParams:
    """Admissible starting widths: d_k = min(r_k, 8^-k)/4 capped by the lane condition."""
    b, d = [], []
    for k in range(1, K + 1):
        dk = min(sys.radius_f(k, "tower"), 8.0 ** (-k)) / 4
        if b:
            dk = min(dk, 2.0 ** (-sys.n) * b[-1] / 2)
        d.append(dk)
        b.append(dk / ratio)
    return TentacleParams(sys, K, b, d, cutoff)


# --- geometry ----------------------------------------------------------------------------

class TentacleForest:
    """All tentacles of generations 1..K with vectorised centre-line profiles."""

    def __init__(self, params: TentacleParams):
        bad = params.violations()
        if bad:
            raise RoutingError("; ".join(bad))
        self.params = params
        self.sys = params.sys
        self.n = n = self.sys.n
        self.K = params.K
        self.rh = [self.sys.radius_f(j, "tower") for j in range(self.K + 2)]
        fr = -1 + (2 * np.arange(2**n) + 1) / 2.0**n
        self.slot_frac = fr
        self.heights = []  # head centre heights per generation
        self.knots = []    # common profile abscissae per generation
        self.H = []        # profile ordinates (tubes x knots)
        h = fr * self.rh[0]
        xs = np.array([0.0, self.rh[1], 1.0])
        H = np.repeat(h[:, None], 3, axis=1)
        self.heights.append(h)
        self.knots.append(xs)
        self.H.append(H)
        for j in range(1, self.K):
            hp, xp, Hp = self.heights[-1], self.knots[-1], self.H[-1]
            bj = params.bk(j)
            hc = (hp[:, None] + self.rh[j] * fr[None, :]).ravel()
            off = np.tile(bj * fr, len(hp))
            keep = xp > self.rh[j] / 2
            xs = np.concatenate([[0.0, self.rh[j + 1], self.rh[j] / 2], xp[keep]])
            Hpar = np.repeat(Hp, 2**n, axis=0)
            Hc = np.empty((len(hc), len(xs)))
            Hc[:, 0] = Hc[:, 1] = hc
            Hc[:, 2] = np.repeat(hp, 2**n) + off
            Hc[:, 3:] = Hpar[:, keep] + off[:, None]
            self.heights.append(hc)
            self.knots.append(xs)
            self.H.append(Hc)

    def count(self, j: int) -> int:
        return 2 ** (self.n * j)

    def width(self, j: int, primed: bool = True) -> float:
        return self.params.dk(j) if primed else self.params.bk(j)

    def profile(self, j: int, ids: np.ndarray, t: np.ndarray):
        xs = self.knots[j - 1]
        H = self.H[j - 1]
        seg = np.clip(np.searchsorted(xs, t, side="right") - 1, 0, len(xs) - 2)
        x0, x1 = xs[seg], xs[seg + 1]
        h0, h1 = H[ids, seg], H[ids, seg + 1]
        slope = (h1 - h0) / (x1 - x0)
        return h0 + slope * (t - x0), slope

    def _step(self, x: np.ndarray, parent: np.ndarray, j: int):
        """Tube id of generation j holding each point (-1 if none) and region (1 head, 2 body)."""
        N, n = x.shape
        ids = np.full(N, -1)
        region = np.zeros(N, int)
        r = self.rh[j]
        w = self.params.dk(j)
        _, c, _, _ = self.params.axis(j)
        live = parent >= 0 if j > 1 else np.ones(N, bool)
        # cheap bounds shared by every child of the generation
        live &= (x[:, 0] >= -r) & (x[:, 0] < c)
        if n > 2:
            live &= np.max(np.abs(x[:, 1:n - 1]), axis=1) <= max(r, w)
        live = np.flatnonzero(live)
        if live.size == 0:
            return ids, region
        xs = x[live]
        base = parent[live] * 2**n if j > 1 else np.zeros(live.size, int)
        perp = np.max(np.abs(xs[:, 1:n - 1]), axis=1) if n > 2 else np.zeros(live.size)
        t = xs[:, 0]
        for i in range(2**n):
            cid = base + i
            hz = self.heights[j - 1][cid]
            head = (np.abs(t) <= r) & (perp <= r) & (np.abs(xs[:, -1] - hz) <= r)
            prof, _ = self.profile(j, cid, t)
            body = (t > r) & (t < c) & (perp < w) & (np.abs(xs[:, -1] - prof) < w)
            hit = head | body
            ids[live[hit]] = cid[hit]
            region[live[head]] = 1
            region[live[body & ~head]] = 2
        return ids, region

    def locate(self, x: np.ndarray, k: int):
        """Per generation 1..k: (ids, region) of the tentacle holding each point."""
        out = []
        parent = np.zeros(len(x), int)
        for j in range(1, k + 1):
            ids, reg = self._step(x, parent, j)
            out.append((ids, reg))
            parent = ids
        return out

    def head_mask(self, x: np.ndarray, k: int) -> np.ndarray:
        """Points in some generation-k head cube."""
        loc = self.locate(x, k)
        return loc[-1][1] == 1 if k else np.ones(len(x), bool)

    def tentacle_mask(self, x: np.ndarray, k: int, primed: bool = False) -> np.ndarray:
        """Points in the union of generation-k tentacles (head plus body of width b or d)."""
        if k == 0:
            return np.ones(len(x), bool)
        loc = self.locate(x, k)
        ids, reg = loc[-1]
        m = reg == 1
        if primed:
            return m | (reg == 2)
        body = np.flatnonzero(reg == 2)
        a, _, _, _ = self.params.axis(k)
        b = self.params.bk(k)
        xs = x[body]
        prof, _ = self.profile(k, ids[body], xs[:, 0])
        perp = np.max(np.abs(xs[:, 1:self.n - 1]), axis=1) if self.n > 2 else 0.0
        ok = (xs[:, 0] < a) & (np.abs(xs[:, -1] - prof) < b) & (perp < b)
        m[body[ok]] = True
        return m


@dataclass(frozen=True)
class BodySegment:
    t0: float
    t1: float
    h0: float
    h1: float
    half_width: float

    def volume(self, n: int) -> float:
        return (2 * self.half_width) ** (n - 1) * (self.t1 - self.t0)


@dataclass(frozen=True)
class TentacleRegion:
    generation: int
    index: tuple
    head_center: tuple
    head_radius: float
    segments: tuple
    squeezed: bool
    primed: bool

    @property
    def n(self):
        return len(self.head_center)

    def body_volume(self) -> float:
        return sum(s.volume(self.n) for s in self.segments)

    def axis_extent(self) -> float:
        return self.segments[-1].t1 if self.segments else self.head_radius

    def volume(self) -> float:
        return (2 * self.head_radius) ** self.n + self.body_volume()

    def height_at(self, t: float) -> float:
        for s in self.segments:
            if s.t0 <= t <= s.t1:
                return s.h0 + (s.h1 - s.h0) * (t - s.t0) / (s.t1 - s.t0)
        raise ValueError("abscissa outside the body")


def tube_id(idx, n: int) -> int:
    tid = 0
    for s in idx:
        if not 1 <= s <= 2**n:
            raise ValueError("tower slot out of range")
        tid = tid * 2**n + (s - 1)
    return tid


def tentacle_region(idx, forest: TentacleForest, squeezed: bool = False,
                    primed: bool = False) -> TentacleRegion:
    k = len(idx)
    if k < 1:
        raise ValueError("tentacles start at generation 1")
    if k > forest.K:
        raise ValueError("generation beyond the built forest")
    n = forest.n
    tid = tube_id(idx, n)
    r = forest.rh[k]
    a, c, at, _ = forest.params.axis(k)
    end = at if squeezed else (c if primed else a)
    w = forest.width(k, primed)
    if w >= r:
        raise RoutingError("body wider than the head; re-tune widths")
    xs = forest.knots[k - 1]
    H = forest.H[k - 1][tid]
    pts = [r] + [x for x in xs if r < x < end] + [end]
    hs = list(np.interp(pts, xs, H))
    segs = tuple(BodySegment(pts[i], pts[i + 1], hs[i], hs[i + 1], w) for i in range(len(pts) - 1))
    center = (0.0,) * (n - 1) + (float(forest.heights[k - 1][tid]),)
    return TentacleRegion(k, tuple(idx), center, r, segs, squeezed, primed)


def _lane_ok(child: TentacleRegion, parent: TentacleRegion) -> bool:
    """Child primed body inside parent head union unprimed body (checked at all knots)."""
    pr = parent.head_radius
    ph = parent.head_center[-1]
    pts = sorted({s.t0 for s in child.segments} | {child.segments[-1].t1}
                 | {s.t0 for s in parent.segments if s.t0 > child.segments[0].t0}
                 | {pr})
    w = child.segments[0].half_width
    eps = 1e-15
    for t in pts:
        if t > child.segments[-1].t1:
            continue
        h = child.height_at(t)
        head_side = t <= pr
        if head_side and abs(h - ph) + w <= pr + eps and w <= pr:
            continue
        if t >= pr and t <= parent.segments[-1].t1:
            if abs(h - parent.height_at(t)) + w <= parent.segments[0].half_width + eps:
                continue
        return False
    return child.segments[-1].t1 <= parent.segments[-1].t1 + eps


def verify_nesting(K: int, params: TentacleParams, max_pairs: int = 4096) -> dict:
    viol = [v for v in params.violations()]
    report = {"constraint_violations": viol, "containment_violations": [], "overlap_violations": []}
    if viol:
        return report
    forest = TentacleForest(params)
    n = forest.n
    from itertools import product
    checked = 0
    for k in range(1, K):
        for path in product(range(1, 2**n + 1), repeat=k):
            parent = tentacle_region(path, forest)
            kids = [tentacle_region(path + (s,), forest, primed=True) for s in range(1, 2**n + 1)]
            for kid in kids:
                if not _lane_ok(kid, parent):
                    report["containment_violations"].append("/".join(map(str, kid.index)))
            for a_, b_ in zip(kids, kids[1:]):
                if not _disjoint(a_, b_):
                    report["overlap_violations"].append(f"{a_.index}|{b_.index}")
            checked += 1
            if checked >= max_pairs:
                break
    for k in range(1, K + 1):
        if k == 1:
            sib = [tentacle_region((s,), forest, primed=True) for s in range(1, 2**n + 1)]
            for a_, b_ in zip(sib, sib[1:]):
                if not _disjoint(a_, b_):
                    report["overlap_violations"].append(f"{a_.index}|{b_.index}")
    report["ok"] = not any(report[key] for key in report if key.endswith("violations"))
    return report


def _disjoint(p: TentacleRegion, q: TentacleRegion) -> bool:
    pts = sorted({s.t0 for s in p.segments} | {s.t0 for s in q.segments}
                 | {p.segments[-1].t1, q.segments[-1].t1})
    hi = min(p.segments[-1].t1, q.segments[-1].t1)
    w = p.segments[0].half_width + q.segments[0].half_width
    for t in pts:
        if t > hi:
            continue
        if abs(p.height_at(t) - q.height_at(t)) < w:
            return False
    heads = abs(p.head_center[-1] - q.head_center[-1]) >= p.head_radius + q.head_radius
    return heads


# --- squeeze maps --------------------------------------------------------------------------

class SqueezeMap(PiecewiseHomeo):
    """h_k = s_1 o ... o s_k; s_j compresses each primed body of generation j along its axis."""

    def __init__(self, k: int, forest: TentacleForest):
        if k > forest.K:
            raise ValueError("generation beyond the built forest")
        self.k, self.forest, self.n = k, forest, forest.n
        self.generation = k
        self.label = f"h_{k}"
        p = forest.params
        self.stage = []
        for j in range(1, k + 1):
            a, c, at, _ = p.axis(j)
            r = forest.rh[j]
            self.stage.append(dict(j=j, kx=np.array([r, a, c]), ky=np.array([r, at, c]),
                                   b=p.bk(j), d=p.dk(j)))

    # cutoff in the sup-norm transverse radius
    def _lam(self, st, rho):
        b, d = st["b"], st["d"]
        if self.forest.params.cutoff == "log":
            L = math.log(d / b)
            lam = np.clip(np.log(d / np.maximum(rho, 1e-300)) / L, 0.0, 1.0)
            dl = np.where((rho > b) & (rho < d), -1.0 / (np.maximum(rho, 1e-300) * L), 0.0)
        else:
            lam = np.clip((d - rho) / (d - b), 0.0, 1.0)
            dl = np.where((rho > b) & (rho < d), -1.0 / (d - b), 0.0)
        return lam, dl

    def _psi(self, st, t):
        kx, ky = st["kx"], st["ky"]
        inside = (t >= kx[0]) & (t <= kx[-1])
        p = np.where(inside, np.interp(t, kx, ky), t)
        seg = np.where(t < kx[1], 0, 1)
        slopes = np.diff(ky) / np.diff(kx)
        return p, np.where(inside, slopes[seg], 1.0)

    def _transverse(self, x, prof):
        n = self.n
        un = x[:, -1] - prof
        cols = [np.abs(x[:, l]) for l in range(1, n - 1)] + [np.abs(un)]
        A = np.stack(cols, axis=1)
        m = np.argmax(A, axis=1)
        return un, A[np.arange(len(x)), m], m

    def _stage_forward(self, st, x, ids):
        j = st["j"]
        n = self.n
        t = x[:, 0]
        prof, slope = self.forest.profile(j, ids, t)
        un, rho, m = self._transverse(x, prof)
        lam, dl = self._lam(st, rho)
        psi, dpsi = self._psi(st, t)
        tp = t + lam * (psi - t)
        prof2, slope2 = self.forest.profile(j, ids, tp)
        y = x.copy()
        y[:, 0] = tp
        y[:, -1] = prof2 + un
        N = len(x)
        # gradient of rho in x
        grho = np.zeros((N, n))
        ar = np.arange(N)
        last = m == n - 2  # argmax is the u_n column
        sg = np.where(last, np.sign(un), 0.0)
        grho[ar[last], n - 1] = sg[last]
        grho[ar[last], 0] = -sg[last] * slope[last]
        oth = ~last
        if np.any(oth):
            cols = m[oth] + 1
            grho[ar[oth], cols] = np.sign(x[ar[oth], cols])
        gt = (dl * (psi - t))[:, None] * grho
        gt[:, 0] += 1.0 - lam + lam * dpsi
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        D[:, 0, :] = gt
        D[:, n - 1, :] = slope2[:, None] * gt
        D[:, n - 1, n - 1] += 1.0
        D[:, n - 1, 0] -= slope
        # in sheared coordinates the stage is triangular, so this is the exact determinant
        J = 1.0 - lam + lam * dpsi
        return y, D, J

    def _stage_inverse(self, st, y, ids):
        j = st["j"]
        tp = y[:, 0]
        prof2, _ = self.forest.profile(j, ids, tp)
        un, rho, _ = self._transverse(y, prof2)
        lam, _ = self._lam(st, rho)
        kx, ky = st["kx"], st["ky"]
        phi = (1 - lam)[:, None] * kx[None, :] + lam[:, None] * ky[None, :]
        t = tp.copy()
        for i in range(2):
            lo, hi = phi[:, i], phi[:, i + 1]
            msk = (tp >= lo) & (tp <= hi)
            t[msk] = kx[i] + (tp[msk] - lo[msk]) * (kx[i + 1] - kx[i]) / (hi[msk] - lo[msk])
        prof, _ = self.forest.profile(j, ids, t)
        x = y.copy()
        x[:, 0] = t
        x[:, -1] = prof + un
        return x

    def _forward(self, x):
        return self._forward_jac(x)[:2]

    def _forward_jac(self, x):
        N, n = x.shape
        y = x.copy()
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        J = np.ones(N)
        if self.k == 0:
            return y, D, J
        loc = self.forest.locate(x, self.k)
        for st in reversed(self.stage):
            ids, reg = loc[st["j"] - 1]
            sel = np.flatnonzero(reg == 2)
            if sel.size:
                yy, Ds, Js = self._stage_forward(st, y[sel], ids[sel])
                y[sel] = yy
                D[sel] = Ds @ D[sel]
                J[sel] *= Js
        return y, D, J

    def _inverse(self, y):
        x = y.copy()
        parent = np.zeros(len(y), int)
        for st in self.stage:
            ids, reg = self.forest._step(x, parent, st["j"])
            sel = np.flatnonzero(reg == 2)
            if sel.size:
                x[sel] = self._stage_inverse(st, x[sel], ids[sel])
            parent = ids
        return x

    def support_mask(self, x) -> np.ndarray:
        """Points of M_k (primed bodies of generation k)."""
        if self.k == 0:
            return np.zeros(len(x), bool)
        return self.forest.locate(np.asarray(x, float), self.k)[-1][1] == 2


def build_squeeze(k: int, params_or_forest) -> SqueezeMap:
    forest = params_or_forest if isinstance(params_or_forest, TentacleForest) else TentacleForest(params_or_forest)
    return SqueezeMap(k, forest)


# --- quadrature over tentacle bodies ---------------------------------------------------------

@dataclass
class Estimate:
    value: float
    error: float
    nodes: int
    tubes_used: int
    tubes_total: int


def _gauss(p):
    x, w = np.polynomial.legendre.leggauss(p)
    return x, w


def _panels(a, b, p):
    x, w = _gauss(p)
    return (a + b) / 2 + (b - a) / 2 * x, (b - a) / 2 * w


def body_nodes(forest: TentacleForest, j: int, ids: np.ndarray, order: int = 4,
               part: str = "primed", t_end: Optional[float] = None):
    """Quadrature nodes and weights on generation-j bodies (sheared coordinates, unit Jacobian).

    ``part``: 'primed' integrates |u| < d (core |u| < b plus log-graded collar);
    'core' integrates |u| < b only.  Returns (points, weights, tube ids).
    """
    n = forest.n
    p = forest.params
    a, c, at, _ = p.axis(j)
    r = forest.rh[j]
    end = t_end if t_end is not None else (c if part == "primed" else a)
    brk = [r, end] + [x for x in forest.knots[j - 1] if r < x < end]
    for jj in range(1, j + 1):
        aj, cj, atj, _ = p.axis(jj)
        brk += [v for v in (aj, cj, atj, 2 * forest.rh[jj]) if r < v < end]
    brk = np.unique(brk)
    # grade towards the head where the ramps and the compressed image live
    extra = [r + (brk[1] - r) * 2.0 ** (-i) for i in range(1, 4)]
    brk = np.unique(np.concatenate([brk, extra]))
    ts, tw = [], []
    for t0, t1 in zip(brk[:-1], brk[1:]):
        x, w = _panels(t0, t1, order)
        ts.append(x)
        tw.append(w)
    ts = np.concatenate(ts)
    tw = np.concatenate(tw)
    b, d = p.bk(j), p.dk(j)
    m = n - 1
    gx, gw = _gauss(order)
    # core: tensor rule on (-b, b)^m
    core_u = np.stack(np.meshgrid(*([b * gx] * m), indexing="ij"), -1).reshape(-1, m)
    core_w = np.prod(np.stack(np.meshgrid(*([b * gw] * m), indexing="ij"), -1).reshape(-1, m), axis=1)
    us, uw = [core_u], [core_w]
    if part == "primed":
        # collar: rho in (b, d) graded in log rho, omega on the unit sup-sphere of R^m
        npan = 4
        s_edges = np.linspace(math.log(b), math.log(d), npan + 1)
        rs, rw = [], []
        for s0, s1 in zip(s_edges[:-1], s_edges[1:]):
            sx, sw = _panels(s0, s1, order)
            rs.append(np.exp(sx))
            rw.append(sw * np.exp(sx) ** m)  # du = rho^(m-1) d rho d sigma = rho^m ds d sigma
        rs = np.concatenate(rs)
        rw = np.concatenate(rw)
        om, ow = [], []
        for ax in range(m):
            for sg in (-1.0, 1.0):
                if m == 1:
                    om.append(np.array([[sg]]))
                    ow.append(np.array([1.0]))
                    continue
                fx = np.stack(np.meshgrid(*([gx] * (m - 1)), indexing="ij"), -1).reshape(-1, m - 1)
                fw = np.prod(np.stack(np.meshgrid(*([gw] * (m - 1)), indexing="ij"), -1).reshape(-1, m - 1), axis=1)
                pts = np.insert(fx, ax, sg, axis=1)
                om.append(pts)
                ow.append(fw)
        om = np.concatenate(om)
        ow = np.concatenate(ow)
        us.append((rs[:, None, None] * om[None, :, :]).reshape(-1, m))
        uw.append((rw[:, None] * ow[None, :]).reshape(-1))
    U = np.concatenate(us)
    UW = np.concatenate(uw)
    nt, nu, nid = len(ts), len(U), len(ids)
    T = np.repeat(ts, nu)
    Uu = np.tile(U, (nt, 1))
    W = np.repeat(tw, nu) * np.tile(UW, nt)
    ids_all = np.repeat(ids, nt * nu)
    T = np.tile(T, nid)
    Uu = np.tile(Uu, (nid, 1))
    W = np.tile(W, nid)
    prof, _ = forest.profile(j, ids_all, T)
    X = np.empty((len(T), n))
    X[:, 0] = T
    X[:, 1:n - 1] = Uu[:, :m - 1]
    X[:, -1] = prof + Uu[:, -1]
    return X, W, ids_all


def sample_tubes(forest: TentacleForest, j: int, cap: int, seed: int = 0) -> np.ndarray:
    total = forest.count(j)
    if total <= cap:
        return np.arange(total)
    rng = np.random.default_rng(seed + 7919 * j)
    return np.sort(rng.choice(total, size=cap, replace=False))


def integrate_over_bodies(fn, forest: TentacleForest, j: int, order: int = 4, tube_cap: int = 64,
                          seed: int = 0, part: str = "primed", chunk: int = 200000) -> Estimate:
    """Integral of ``fn(points, tube_ids) -> values`` over all generation-j bodies.

    Error = difference between Gauss orders ``order`` and ``order + 2`` plus the sampling
    standard error when only ``tube_cap`` tubes are integrated.
    """
    ids = sample_tubes(forest, j, tube_cap, seed)
    total = forest.count(j)
    per = []
    for p in (order, order + 2):
        X, W, I = body_nodes(forest, j, ids, p, part)
        vals = np.empty(len(X))
        for s in range(0, len(X), chunk):
            vals[s:s + chunk] = fn(X[s:s + chunk], I[s:s + chunk])
        sums = np.bincount(np.searchsorted(ids, I), weights=W * vals, minlength=len(ids))
        per.append(sums)
    hi, lo = per[1], per[0]
    scale = total / len(ids)
    value = float(hi.sum() * scale)
    err = float(abs(hi.sum() - lo.sum()) * scale)
    if len(ids) < total:
        sd = float(np.std(hi, ddof=1)) if len(ids) > 1 else abs(value)
        err += total * sd / math.sqrt(len(ids)) * math.sqrt(1 - len(ids) / total)
    return Estimate(value, err, int(len(X)), len(ids), total)


def squeeze_energy(h: SqueezeMap, q: Optional[float] = None, order: int = 4, tube_cap: int = 64,
                   seed: int = 0) -> Estimate:
    """Integral of |Dh_k|^q over M_k (Frobenius norm, default q = n - 1)."""
    if h.k == 0:
        return Estimate(0.0, 0.0, 0, 0, 0)
    q = h.n - 1 if q is None else q
    if q < 1:
        raise ValueError("q must be >= 1")

    def fn(X, I):
        _, D = h._forward(X)
        return frobenius(D) ** q

    return integrate_over_bodies(fn, h.forest, h.k, order, tube_cap, seed)


def tentacle_volume(forest: TentacleForest, k: int, primed: bool = False) -> float:
    """Exact measure of the union of generation-k tentacles (heads plus bodies)."""
    if k == 0:
        return 2.0**forest.n
    n = forest.n
    a, c, _, _ = forest.params.axis(k)
    r = forest.rh[k]
    w = forest.width(k, primed)
    end = c if primed else a
    return forest.count(k) * ((2 * r) ** n + (2 * w) ** (n - 1) * (end - r))


# --- tuning ------------------------------------------------------------------------------

def autotune_widths(K: int, sys: CantorSystem, strict: bool = False, cutoff: str = "log",
                    tube_cap: int = 16, order: int = 3, max_halvings: int = 6) -> TentacleParams:
    """Choose (b_k, d_k) generation by generation to minimise the squeeze energy.

    Widths start at the seed d_k = min(r_k, 8^-k)/4 with b_k = d_k/2 and are halved while
    the energy is above budget.  With the logarithmic cutoff the ratio d_k/b_k is then
    enlarged as far as the remaining generations and float resolution allow.  The best
    admissible pair is kept; ``strict`` raises if any budget stays out of reach.
    """
    sys.check_generation(K)
    params = seed_params(K, sys, 2.0, cutoff)
    n = sys.n
    for k in range(1, K + 1):
        delta = energy_budget(k, sys)

        def trial(dk, ratio):
            b = list(params.b)
            d = list(params.d)
            d[k - 1], b[k - 1] = dk, dk / ratio
            for jj in range(k, K):  # keep later seeds admissible
                d[jj] = min(d[jj], 2.0 ** (-n) * b[jj - 1] / 2)
                b[jj] = d[jj] / 2
            tp = TentacleParams(sys, K, b, d, cutoff, list(params.measured_energy),
                                list(params.energy_error))
            if tp.violations():
                return None, tp
            e = squeeze_energy(build_squeeze(k, TentacleForest(tp)), order=order, tube_cap=tube_cap)
            return e, tp

        best_e, best_p = trial(params.dk(k), 2.0)
        if best_e is None:
            raise RoutingError("seed widths violate the constraints")
        dk = params.dk(k)
        for _ in range(max_halvings):
            if best_e.value <= delta:
                break
            e, tp = trial(dk / 2, 2.0)
            if e is None or e.value >= best_e.value * 0.999:
                break
            dk /= 2
            best_e, best_p = e, tp
        if cutoff == "log" and best_e.value > delta:
            dk = best_p.dk(k)
            # leave room for the later generations: b_K must stay resolvable
            room = math.log(dk / MIN_WIDTH) - (K - k) * (n + 2) * math.log(2)
            lmax = max(math.log(2), room / (K - k + 1))
            ratio = 4.0
            while math.log(ratio) <= lmax:
                e, tp = trial(dk, ratio)
                if e is not None and e.value < best_e.value:
                    best_e, best_p = e, tp
                if best_e.value <= delta:
                    break
                ratio = ratio**2
            if best_e.value > delta and math.log(best_p.dk(k) / best_p.bk(k)) < lmax:
                e, tp = trial(dk, math.exp(lmax))
                if e is not None and e.value < best_e.value:
                    best_e, best_p = e, tp
        params = best_p
        params.measured_energy[k - 1] = best_e.value
        params.energy_error[k - 1] = best_e.error
        if strict and best_e.value > delta:
            raise BudgetUnreachableError(
                f"generation {k}: energy {best_e.value:.3e} exceeds budget {delta:.3e}")
    return params
