"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion."""
import math
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from faces import body_walls, cube_faces
from lusinlab.cli import ExperimentConfig, cmd_cavity, cmd_perimeter, frame_ratios
from lusinlab.composite import (CompositeMap, cauchy_difference, envelope_violations, lusin_report,
                                support_nodes)
from lusinlab.dyadic import CantorSystem, generation_volume
from lusinlab.energy import (build_orlicz, check_orlicz, distortion_moduli, image_measure,
                             jacobian_histogram, moduli_violations, orlicz_sup, random_grid_sets)
from lusinlab.maps import GMap, LMap, continuity_defect
from lusinlab.tentacles import SqueezeMap, TentacleForest, autotune_widths

PROFILES = {2: (3, 6), 3: (4, 4)}  # n -> (beta, K)


def record(num, ok, detail, t0):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail} [{time.time() - t0:.1f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def tuned():
    out = {}
    for n, (beta, K) in PROFILES.items():
        s = CantorSystem(n, beta, 10)
        t0 = time.time()
        p = autotune_widths(K, s)
        out[n] = dict(sys=s, K=K, params=p, forest=TentacleForest(p), L=LMap(K, s),
                      tune_time=time.time() - t0)
    return out


def test_criterion_01_exact_geometry():
    t0 = time.time()
    ok = True
    for n in (2, 3):
        s = CantorSystem(n, n + 1, 10)
        for k in range(0, 9):
            ok &= generation_volume(k, "A", s) == (s.alpha(k) ** n).scale2(n)
    gaps = {n: abs(generation_volume(10, "A", CantorSystem(n, n + 1, 10)).to_fraction() - 1)
            for n in (2, 3)}
    ok &= gaps[3] <= Fraction(1, 2**35)
    ok &= time.time() - t0 < 10
    record(1, ok, f"volumes exact k<=8 n=2,3; |C_A| gap at k=10: n=3 2^{math.log2(gaps[3]):.2f}"
                  f" (n=2 2^{math.log2(gaps[2]):.2f})", t0)


def _body_points(forest, k, m, rng):
    _, c, _, _ = forest.params.axis(k)
    ids = rng.integers(0, forest.count(k), m)
    t = rng.uniform(forest.rh[k], c, m)
    u = rng.uniform(-1, 1, (m, forest.n - 1)) * forest.params.dk(k)
    prof, _ = forest.profile(k, ids, t)
    x = np.empty((m, forest.n))
    x[:, 0] = t
    x[:, 1:-1] = u[:, :-1]
    x[:, -1] = prof + u[:, -1]
    return x


def _eps(scale):
    return np.minimum(1e-9, 1e-6 * scale)[:, None]


def test_criterion_02_homeomorphisms(tuned):
    t0 = time.time()
    N = 100_000
    worst = {}
    jac_ok = True
    for n, T in tuned.items():
        s, K, F, L = T["sys"], T["K"], T["forest"], T["L"]
        rng = np.random.default_rng(n)
        X = rng.uniform(-1, 1, (N, n))
        for k in range(1, K + 1):
            g = GMap(k, s)
            j = g.jet(X)
            worst[f"g n={n}"] = max(worst.get(f"g n={n}", 0), np.abs(g.inverse(j.value) - X).max())
            jac_ok &= bool(j.jacobian.min() > 0)
            x, nu, sc = cube_faces(s, k, "A", 2000, rng)
            worst[f"g-face n={n}"] = max(worst.get(f"g-face n={n}", 0),
                                         continuity_defect(g, x, nu, _eps(sc)).max())
        j = L.jet(X)
        worst[f"L n={n}"] = np.abs(L.inverse(j.value) - X).max()
        jac_ok &= bool(j.jacobian.min() > 0)
        x, nu, sc = cube_faces(s, K, "B", 4000, rng)
        worst[f"L-face n={n}"] = continuity_defect(L, x, nu, _eps(sc)).max()
        for k in range(1, K + 1):
            h = SqueezeMap(k, F)
            Y = np.concatenate([X[: N // 2]] + [_body_points(F, j, N // (2 * k), rng)
                                                for j in range(1, k + 1)])
            jh = h.jet(Y)
            worst.setdefault(f"h n={n}", {})[k] = np.abs(h.inverse(jh.value) - Y).max()
            jac_ok &= bool(jh.jacobian.min() > 0)
            x, nu, sc = body_walls(F, k, 2000, rng)
            worst.setdefault(f"h-face n={n}", {})[k] = continuity_defect(h, x, nu, _eps(sc)).max()
            f = CompositeMap(k, F, L)
            S = support_nodes(f, 3, tube_cap=64, seed=k)
            Z = np.concatenate([X[: N // 2], S.x[: N // 2]])
            jf = f.jet(Z)
            worst.setdefault(f"f n={n}", {})[k] = np.abs(f.inverse(jf.value) - Z).max()
            jac_ok &= bool(jf.jacobian.min() > 0)
            xw, nuw, scw = body_walls(F, k, 2000, rng)
            Xw, _ = f.pullback(xw)
            Xp, _ = f.pullback(xw + 1e-9 * nuw)
            nv = Xp - Xw
            nv /= np.linalg.norm(nv, axis=1)[:, None]
            worst.setdefault(f"f-face n={n}", {})[k] = continuity_defect(f, Xw, nv, 1e-2 * _eps(scw)).max()
    flat = {key: (max(v.values()) if isinstance(v, dict) else v) for key, v in worst.items()}
    ok = jac_ok and max(flat.values()) <= 1e-10 and time.time() - t0 < 120
    bad = {key: v for key, v in worst.items() if (max(v.values()) if isinstance(v, dict) else v) > 1e-10}
    detail = "max errors " + ", ".join(f"{k} {v:.1e}" for k, v in flat.items())
    if bad:
        detail += "; per-stage above 1e-10: " + "; ".join(
            f"{k} " + " ".join(f"k{kk}={vv:.1e}" for kk, vv in v.items()) for k, v in bad.items()
            if isinstance(v, dict))
    record(2, ok, detail + f"; jacobians positive={jac_ok}", t0)


def test_criterion_03_derivative_comparability():
    t0 = time.time()
    res = {}
    for n in (2, 3):
        s = CantorSystem(n, n + 1, 10)
        res[n] = max(max(frame_ratios(GMap(k, s), np.random.default_rng(k), 4000)) for k in range(1, 5))
    ok = all(res[n] <= 4**n for n in res) and time.time() - t0 < 60
    record(3, ok, "worst frame ratio " + ", ".join(f"n={n} {v:.2f} (limit {4**n})" for n, v in res.items()), t0)


def test_criterion_04_squeeze_budget(tuned):
    t0 = time.time()
    ok = True
    parts = []
    for n, T in tuned.items():
        p = T["params"]
        cons = True
        for k in range(1, T["K"] + 1):
            if k < T["K"]:
                cons &= Fraction(p.dk(k + 1)) < 4**n * Fraction(p.bk(k))
            cons &= Fraction(p.bk(k)) < Fraction(1, 8**k)
        ok &= cons
        met = [bool(p.budget_met(k)) for k in range(1, T["K"] + 1)]
        ok &= all(met)
        ok &= T["tune_time"] < 120
        ratios = " ".join(f"{p.measured_energy[k - 1] / p.delta(k):.1e}" for k in range(1, T["K"] + 1))
        parts.append(f"n={n} constraints={cons} energy/delta: {ratios}")
    record(4, ok, "; ".join(parts), t0)


def test_criterion_05_cauchy(tuned):
    t0 = time.time()
    ok = True
    parts = []
    for n, T in tuned.items():
        rows = [cauchy_difference(k, T["forest"], T["L"], order=4, tube_cap=32, seed=0)
                for k in range(1, T["K"] + 1)]
        bad = envelope_violations(rows)
        ok &= not bad
        parts.append(f"n={n} k^2*value " + " ".join(f"{r.scaled:.3g}(+-{r.k**2 * r.error:.2g})" for r in rows)
                     + f" violations at k={bad}")
    ok &= time.time() - t0 < 300
    record(5, ok, "; ".join(parts), t0)


def test_criterion_06_lusin(tuned):
    t0 = time.time()
    ok = True
    parts = []
    for n, T in tuned.items():
        rows = [lusin_report(k, T["forest"], T["L"], 4, 64, 0, max_error=math.inf)
                for k in range(1, T["K"] + 1)]
        ok &= all(b.upsilon <= a.upsilon / 2 for a, b in zip(rows, rows[1:]))
        ok &= all(r.image >= r.cube_volume - 0.02 for r in rows)
        ok &= all(b.ratio > a.ratio for a, b in zip(rows, rows[1:]))
        parts.append(f"n={n} ratio " + " ".join(f"{r.ratio:.3g}" for r in rows))
    ok &= time.time() - t0 < 300
    record(6, ok, "; ".join(parts), t0)


@pytest.fixture(scope="module")
def histograms(tuned):
    out = {}
    for n, T in tuned.items():
        maps = [CompositeMap(k, T["forest"], T["L"]) for k in range(0, T["K"] + 1)]
        out[n] = (maps, [jacobian_histogram(m, 4, 32, 0) for m in maps])
    return out


def test_criterion_07_orlicz(histograms):
    t0 = time.time()
    ok = True
    parts = []
    for n, (_, hists) in histograms.items():
        phi = build_orlicz(hists)
        chk = check_orlicz(phi)
        sup = orlicz_sup(phi, hists)
        ok &= chk["ok"] and math.isfinite(sup)
        parts.append(f"n={n} checks={chk['ok']} sup_k int phi(J)={sup:.6g}")
    ok &= time.time() - t0 < 60
    record(7, ok, "; ".join(parts), t0)


def test_criterion_08_moduli(histograms):
    t0 = time.time()
    ok = True
    parts = []
    for n, (maps, hists) in histograms.items():
        sets = random_grid_sets(n, 16 if n == 2 else 8, 100, seed=n)
        viol = 0
        for m, h in zip(maps, hists):
            imgs = image_measure(m, sets, 256 if n == 2 else 64)
            viol += moduli_violations(distortion_moduli(h), imgs)
        ok &= viol == 0
        parts.append(f"n={n} violations={viol} over {len(maps)} stages")
    ok &= time.time() - t0 < 120
    record(8, ok, "; ".join(parts), t0)


def test_criterion_09_perimeter():
    t0 = time.time()
    res = cmd_perimeter(ExperimentConfig(n=2, beta=3, perimeter_h=1 / 512))
    ok = all(res.checks.values()) and time.time() - t0 < 60
    cal = res.tables[0]
    detail = " ".join(f"{r[0]} {r[4]:.2%}" for r in cal.rows)
    record(9, ok, f"calibration {detail}; limit {res.info['limit_perimeter']:.3f} "
                  f"liminf {res.info['liminf']:.3f}; checks {res.checks}", t0)


def test_criterion_10_cavity():
    t0 = time.time()
    res = cmd_cavity(ExperimentConfig(n=2, beta=3, cavity_h=1 / 512))
    ok = all(res.checks.values()) and time.time() - t0 < 120
    per = res.tables[0].rows[0][3]
    record(10, ok, f"perimeter/pi {per / math.pi:.4f}; checks {res.checks}", t0)


def test_criterion_11_determinism(tmp_path):
    t0 = time.time()
    outs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        subprocess.run([sys.executable, "-m", "lusinlab.cli", "all", "--n", "2", "--beta", "3",
                        "--K", "3", "--out", str(d)], check=False, capture_output=True)
        outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    ok = bool(outs[0]) and outs[0] == outs[1]
    record(11, ok, f"{len(outs[0])} CSV files byte-identical={outs[0] == outs[1]}", t0)
