import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lusinlab.composite import CompositeMap
from lusinlab.dyadic import CantorSystem
from lusinlab.energy import (FunctionOrlicz, JacobianHistogram, OrliczFunction, build_orlicz,
                             check_orlicz, distortion_moduli, energy, image_measure,
                             jacobian_histogram, moduli_violations, orlicz_sup, random_grid_sets,
                             t_plus_inverse)
from lusinlab.maps import DomainError, GMap, IdentityMap, LinearMap


def test_identity_energy_n3():
    e = energy(IdentityMap(3), 2, t_plus_inverse())
    assert e.total == pytest.approx(40.0)


@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_linear_energy(c):
    m = LinearMap(c * np.eye(2), half_side=0.5, image_half_side=0.5 * c)
    e = energy(m, 2, t_plus_inverse())
    assert e.total == pytest.approx(2 * c**2 + c**2 + c**-2)


def test_identity_histogram():
    h = jacobian_histogram(IdentityMap(2))
    assert list(h.values) == [1.0] and list(h.masses) == [4.0]


def test_g_histogram_masses():
    s = CantorSystem(2, 3, 10)
    g = GMap(2, s)
    h = jacobian_histogram(g, 4)
    assert h.total_mass == pytest.approx(4.0, rel=1e-12)
    assert h.image_mass == pytest.approx(4.0, rel=1e-12)
    assert h.values.min() == pytest.approx((s.radius_f(2, "B") / s.radius_f(2, "A")) ** 2)


def test_g_histogram_against_sampling():
    s = CantorSystem(2, 3, 10)
    g = GMap(1, s)
    h = jacobian_histogram(g, 6)
    x = np.random.default_rng(0).uniform(-1, 1, (400000, 2))
    j = g.jet(x)
    mc = 4 * np.mean(np.sqrt(np.einsum("nij,nij->n", j.derivative, j.derivative)) ** 1.5)
    quad = float(np.dot(h.masses, h.norms**1.5))
    assert quad == pytest.approx(mc, rel=1e-2)


def test_composite_histogram(forest2, L2):
    f = CompositeMap(2, forest2, L2)
    h = jacobian_histogram(f, 4, tube_cap=16)
    assert h.conservation_error() < 1e-6
    assert h.min_jacobian > 0


def test_two_atom_moduli():
    h = JacobianHistogram("two", [0.5, 1.5], [1, 1], [0.5, 0.5], 1.0)
    m = distortion_moduli(h)
    assert m.psi_hat(0.25) == pytest.approx(0.375)
    assert m.phi_hat(0.25) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        m.psi_hat(2.0)


def test_identity_moduli():
    m = distortion_moduli(jacobian_histogram(IdentityMap(2)))
    s = np.linspace(0, 4, 9)
    assert np.allclose(m.phi_hat(s), s) and np.allclose(m.psi_hat(s), s)


def test_moduli_sandwich_g():
    s = CantorSystem(2, 3, 10)
    g = GMap(2, s)
    m = distortion_moduli(jacobian_histogram(g, 6))
    imgs = image_measure(g, random_grid_sets(2, 16, 20, seed=1), 256)
    assert moduli_violations(m, imgs) == 0


def test_orlicz_checks():
    good = FunctionOrlicz(lambda t: t**2 + 1 / t)
    assert check_orlicz(good)["ok"]
    lin = check_orlicz(FunctionOrlicz(lambda t: t))
    assert not lin["superlinear"] and not lin["ok"]


def test_build_orlicz_identity():
    h = jacobian_histogram(IdentityMap(2))
    phi = build_orlicz([h])
    assert check_orlicz(phi)["ok"]
    assert orlicz_sup(phi, [h]) == pytest.approx(float(phi(np.array([1.0]))[0]) * 4)


def test_build_orlicz_two_atom_family():
    hs = []
    for m in range(1, 9):
        w = 2.0**-m
        hs.append(JacobianHistogram(f"m{m}", [w, 2.0**m, 1.0], [1, 1, 1], [w, w, 4 - 2 * w], 4.0))
    phi = build_orlicz(hs)
    assert check_orlicz(phi)["ok"]
    sup = orlicz_sup(phi, hs)
    assert np.isfinite(sup)
    # superlinear but no faster than t log t times a constant on the sampled range
    t = np.array([2.0**6, 2.0**8])
    assert phi(t)[1] / t[1] > phi(t)[0] / t[0]


def test_orlicz_json_roundtrip():
    phi = OrliczFunction(1.0, [1.0, 2.0, 4.0], [0.0, 1.0, 2.0])
    back = OrliczFunction.from_json(phi.to_json())
    t = np.geomspace(1e-3, 1e3, 50)
    assert np.allclose(phi(t), back(t))


def test_orlicz_rejects_nonconvex():
    with pytest.raises(ValueError):
        OrliczFunction(1.0, [1.0, 2.0], [2.0, 1.0])


def test_energy_rejects_bad_jacobian():
    h = JacobianHistogram("bad", [-1.0, 1.0], [1, 1], [1, 3], 4.0)
    with pytest.raises(DomainError):
        energy(h, 2, t_plus_inverse())


def test_energy_family_bounded(forest2, L2):
    phi = t_plus_inverse()
    vals = [energy(jacobian_histogram(CompositeMap(k, forest2, L2), 4, 16), 1.5, phi).orlicz
            for k in range(4)]
    assert max(vals) < 2 * vals[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-3, 1e3), st.floats(1e-3, 1.0)), min_size=1, max_size=8),
       st.floats(0.0, 1.0))
def test_moduli_sandwich_property(atoms, frac):
    v = np.array([a for a, _ in atoms])
    m = np.array([b for _, b in atoms])
    h = JacobianHistogram("p", v, np.ones_like(v), m, float(m.sum()))
    mod = distortion_moduli(h)
    s = frac * h.total_mass
    # any sub-collection of atoms (partially used) lies between the extremes
    rng = np.random.default_rng(0)
    take = rng.random(len(v))
    take *= s / max(float(np.dot(take, m)), 1e-300)
    take = np.minimum(take, 1.0)
    meas = float(np.dot(take, m))
    img = float(np.dot(take, v * m))
    assert mod.phi_hat(meas) <= img * (1 + 1e-9) + 1e-12
    assert img <= mod.psi_hat(meas) * (1 + 1e-9) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=10))
def test_built_orlicz_valid_property(values):
    v = np.array(values)
    h = JacobianHistogram("p", v, np.ones_like(v), np.full(len(v), 1.0 / len(v)), 1.0)
    phi = build_orlicz([h])
    chk = check_orlicz(phi)
    assert chk["convex"] and chk["positive"]
    assert math.isfinite(orlicz_sup(phi, [h]))
