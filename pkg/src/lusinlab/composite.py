"""The stage maps f_k = g_k^-1 o L^-1 o h_k o L o g_k and their measure-theoretic reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .dyadic import CantorSystem, all_indices, center, generation_volume
from .maps import GMap, LMap, PiecewiseHomeo, frobenius
from .tentacles import (Estimate, SqueezeMap, TentacleForest, TentacleParams, body_nodes,
                        sample_tubes, tentacle_volume)


class CompositeMap(PiecewiseHomeo):
    def __init__(self, k: int, forest: TentacleForest, L: Optional[LMap] = None):
        sys = forest.sys
        sys.check_generation(k)
        if k > forest.K:
            raise ValueError("stage beyond the built tentacle forest")
        self.k, self.sys, self.n, self.forest = k, sys, sys.n, forest
        self.generation = k
        self.label = f"f_{k}"
        self.g = GMap(k, sys)
        self.L = L if L is not None else LMap(forest.K, sys)
        if self.L.sys != sys:
            raise ValueError("factor maps built for different systems")
        if self.L.K < k:
            raise ValueError("tower map too shallow for this stage")
        self.h = SqueezeMap(k, forest)

    def moved_mask(self, y: np.ndarray) -> np.ndarray:
        """Tower points where some squeeze stage acts (inside a primed body of generation <= k)."""
        if self.k == 0:
            return np.zeros(len(y), bool)
        loc = self.forest.locate(y, self.k)
        m = np.zeros(len(y), bool)
        for _, reg in loc:
            m |= reg == 2
        return m

    def _forward(self, x):
        return self._forward_jac(x)[:2]

    def _forward_jac(self, x):
        N, n = x.shape
        out = x.copy()
        D = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        J = np.ones(N)
        if self.k == 0:
            return out, D, J
        y1, D1 = self.g._forward(x)
        y2, D2 = self.L._forward(y1)
        sel = np.flatnonzero(self.moved_mask(y2))
        if sel.size == 0:
            return out, D, J
        y3, D3, J3 = self.h._forward_jac(y2[sel])
        x4 = self.L._inverse(y3)
        _, DL4 = self.L._forward(x4)
        x5, Dg5 = self.g._descend(x4, self.g.rB, self.g.rA)
        out[sel] = x5
        D[sel] = Dg5 @ np.linalg.solve(DL4, D3 @ D2[sel] @ D1[sel])
        # the squeeze derivative is badly conditioned near the body walls; multiply the
        # factor determinants instead of taking det(D)
        det = np.linalg.det
        J[sel] = det(Dg5) / det(DL4) * J3 * det(D2[sel]) * det(D1[sel])
        return out, D, J

    def _inverse(self, y):
        out = y.copy()
        if self.k == 0:
            return out
        y1, _ = self.g._forward(y)
        y2, _ = self.L._forward(y1)
        # h_k^-1 moves exactly the points of the primed bodies, which h_k preserves
        sel = np.flatnonzero(self.moved_mask(y2))
        if sel.size == 0:
            return out
        y3 = self.h._inverse(y2[sel])
        out[sel] = self.g._inverse(self.L._inverse(y3))
        return out

    def pullback(self, Y: np.ndarray):
        """x = (L g_k)^-1(Y) and |det D(L g_k)^-1| at Y."""
        x1 = self.L._inverse(Y)
        _, DL = self.L._forward(x1)
        x0, Dg = self.g._descend(x1, self.g.rB, self.g.rA)
        return x0, np.abs(np.linalg.det(Dg) / np.linalg.det(DL))


def build_f_tilde(k: int, sys: CantorSystem, params, L: Optional[LMap] = None) -> CompositeMap:
    forest = params if isinstance(params, TentacleForest) else TentacleForest(params)
    if forest.sys != sys:
        raise ValueError("factor maps built for different systems")
    return CompositeMap(k, forest, L)


# --- quadrature on the support -------------------------------------------------------------

@dataclass
class SupportNodes:
    """Domain-space nodes covering (L g_k)^-1(union of primed bodies, generations <= k)."""

    x: np.ndarray
    weight: np.ndarray
    generation: np.ndarray
    tube: np.ndarray
    measure: float


def support_nodes(f: CompositeMap, order: int = 4, tube_cap: int = 64, seed: int = 0,
                  part: str = "primed", gens=None) -> SupportNodes:
    """Tower-space body quadrature pulled back to the domain.

    Nodes of a generation-j body that fall into a deeper primed body are dropped, so the
    nested supports are counted once.
    """
    n = f.n
    xs, ws, gs, ts = [], [], [], []
    gens = range(1, f.k + 1) if gens is None else gens
    for j in gens:
        ids = sample_tubes(f.forest, j, tube_cap, seed)
        Y, W, I = body_nodes(f.forest, j, ids, order, part)
        W = W * f.forest.count(j) / len(ids)
        if j < f.k:
            loc = f.forest.locate(Y, f.k)
            deeper = np.zeros(len(Y), bool)
            for jj in range(j + 1, f.k + 1):
                deeper |= loc[jj - 1][1] == 2
            keep = ~deeper
            Y, W, I = Y[keep], W[keep], I[keep]
        X, J = f.pullback(Y)
        xs.append(X)
        ws.append(W * J)
        gs.append(np.full(len(X), j))
        ts.append(I)
    if not xs:
        e = np.empty((0, n))
        return SupportNodes(e, np.empty(0), np.empty(0, int), np.empty(0, int), 0.0)
    w = np.concatenate(ws)
    return SupportNodes(np.concatenate(xs), w, np.concatenate(gs), np.concatenate(ts), float(w.sum()))


def integrate_support(fn, f: CompositeMap, order: int = 4, tube_cap: int = 64, seed: int = 0,
                      gens=None) -> Estimate:
    """Integral of ``fn(x)`` over the support with a two-order error estimate."""
    vals = []
    nodes = 0
    for p in (order, order + 2):
        S = support_nodes(f, p, tube_cap, seed, gens=gens)
        vals.append(float(np.dot(S.weight, fn(S.x))) if len(S.x) else 0.0)
        nodes = len(S.x)
    used = min(tube_cap, f.forest.count(f.k)) if f.k else 0
    return Estimate(vals[1], abs(vals[1] - vals[0]), nodes, used,
                    f.forest.count(f.k) if f.k else 0)


# --- reports ----------------------------------------------------------------------------

@dataclass
class TubeSet:
    k: int
    measure: float
    bound: float
    preimage_measure: float
    preimage_error: float


def tube_set(k: int, forest: TentacleForest, L: Optional[LMap] = None, order: int = 4,
             tube_cap: int = 64, seed: int = 0) -> TubeSet:
    """Union of the generation-k tentacles in the tower and the measure of its pull-back."""
    n = forest.n
    if k == 0:
        full = 2.0**n
        return TubeSet(0, full, full, full, 0.0)
    sys = forest.sys
    b = forest.params.bk(k)
    bound = 2.0**n * 2 ** (k * n) * (forest.rh[k] ** n + b ** (n - 1))
    f = CompositeMap(k, forest, L)
    heads = float(generation_volume(k, "A", sys))
    vals = []
    for p in (order, order + 2):
        ids = sample_tubes(forest, k, tube_cap, seed)
        Y, W, _ = body_nodes(forest, k, ids, p, part="core")
        _, J = f.pullback(Y)
        vals.append(float(np.dot(W, J)) * forest.count(k) / len(ids))
    return TubeSet(k, tentacle_volume(forest, k), bound, heads + vals[1], abs(vals[1] - vals[0]))


@dataclass
class LusinRow:
    k: int
    upsilon: float
    image: float
    ratio: float
    image_error: float
    cube_volume: float


def lusin_report(k: int, forest: TentacleForest, L: Optional[LMap] = None,
                 grid_resolution: int = 4, tube_cap: int = 64, seed: int = 0,
                 max_error: float = 0.02) -> LusinRow:
    """|tentacle union| in the tower against the measure of its image under f_k.

    The image of the tentacle preimages is g_k^-1 L^-1 of (head cubes union squeezed
    bodies): the head part is the union of generation-k cubes (exact), the squeezed part
    is integrated.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution (Gauss order) must be at least 2")
    sys = forest.sys
    n = forest.n
    cube_vol = float(generation_volume(k, "A", sys))
    if k == 0:
        full = 2.0**n
        return LusinRow(0, full, full, 1.0, 0.0, full)
    f = CompositeMap(k, forest, L)
    _, _, at, _ = forest.params.axis(k)
    vals = []
    for p in (grid_resolution, grid_resolution + 2):
        ids = sample_tubes(forest, k, tube_cap, seed)
        Y, W, _ = body_nodes(forest, k, ids, p, part="core", t_end=at)
        _, J = f.pullback(Y)
        vals.append(float(np.dot(W, J)) * forest.count(k) / len(ids))
    err = abs(vals[1] - vals[0])
    if err > max_error:
        raise ValueError(f"quadrature error {err:.3g} above {max_error}; raise grid_resolution")
    ups = tentacle_volume(forest, k)
    image = cube_vol + vals[1]
    return LusinRow(k, ups, image, image / ups, err, cube_vol)


@dataclass
class CauchyRow:
    k: int
    value: float
    error: float
    scaled: float
    support_measure: float


def cauchy_difference(k: int, forest: TentacleForest, L: Optional[LMap] = None,
                      q: Optional[float] = None, order: int = 4, tube_cap: int = 64,
                      seed: int = 0) -> CauchyRow:
    """Integral of |Df_k - Df_(k-1)|^q; the integrand lives on (L g_k)^-1(M_k)."""
    n = forest.n
    q = n - 1 if q is None else q
    if k < 1:
        raise ValueError("k must be >= 1")
    L = L if L is not None else LMap(forest.K, forest.sys)
    fk = CompositeMap(k, forest, L)
    fp = CompositeMap(k - 1, forest, L)
    vals, meas = [], 0.0
    for p in (order, order + 2):
        S = support_nodes(fk, p, tube_cap, seed, gens=[k])
        if len(S.x) == 0:
            vals.append(0.0)
            continue
        _, Dk = fk._forward(S.x)
        _, Dp = fp._forward(S.x)
        vals.append(float(np.dot(S.weight, frobenius(Dk - Dp) ** q)))
        meas = S.measure
    return CauchyRow(k, vals[1], abs(vals[1] - vals[0]), k * k * vals[1], meas)


def envelope_violations(rows, start: int = 2):
    """Stages whose k^2-scaled difference exceeds every earlier one (from ``start``) by more
    than its error bar."""
    out = []
    best = None
    for r in rows:
        if r.k < start:
            continue
        if best is not None and r.scaled - r.k**2 * r.error > best:
            out.append(r.k)
        best = r.scaled if best is None else max(best, r.scaled)
    return out


def fixed_point_check(f: CompositeMap, samples: int = 1000, seed: int = 0, tol: float = 1e-10) -> int:
    """Count points of the cube boundary, the generation-k cubes and their centres that move."""
    rng = np.random.default_rng(seed)
    n = f.n
    pts = rng.uniform(-1, 1, size=(samples, n))
    ax = rng.integers(0, n, size=samples)
    pts[np.arange(samples), ax] = rng.choice([-1.0, 1.0], size=samples)
    cubes = [pts]
    if f.k:
        idx = list(all_indices(f.k, "A", n))
        r = f.sys.radius_f(f.k, "A")
        cs = np.array([center(i, "A", f.sys).to_floats() for i in idx])
        cubes.append(cs)
        pick = cs[rng.integers(0, len(cs), size=samples)]
        loc = rng.uniform(-1, 1, size=(samples, n))
        ax = rng.integers(0, n, size=samples)
        loc[np.arange(samples), ax] = rng.choice([-1.0, 1.0], size=samples)
        cubes.append(pick + r * loc)
    X = np.concatenate(cubes)
    Y = f(X)
    return int(np.sum(np.max(np.abs(Y - X), axis=1) > tol))


def stage_rows(K: int, forest: TentacleForest, order: int = 4, tube_cap: int = 64, seed: int = 0):
    """Per-stage table for the CLI."""
    L = LMap(forest.K, forest.sys)
    rows = []
    for k in range(1, K + 1):
        lr = lusin_report(k, forest, L, order, tube_cap, seed, max_error=math.inf)
        cr = cauchy_difference(k, forest, L, order=order, tube_cap=tube_cap, seed=seed)
        rows.append(dict(k=k, upsilon=lr.upsilon, image=lr.image, ratio=lr.ratio,
                         image_err=lr.image_error, cauchy=cr.value, cauchy_scaled=cr.scaled,
                         cauchy_err=cr.error))
    return rows
