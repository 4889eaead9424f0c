"""Norm layer: fundamental tensor values against independent finite
differences and hand calculations, validation verdicts on good and broken
norms, densities against polar quadrature, product norms and distances."""

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import optimize

from finslerlab import connection as cn
from finslerlab import expr as E
from finslerlab import modelfile, norms

# module-level instance so hypothesis examples share the cached pipelines
QUARTIC = modelfile.load_gallery("quartic_minkowski")


def hessian_fd(f, v, h=1e-5):
    """Hessian of a plain callable by central differences."""
    n = len(v)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            vs = [np.array(v, float) for _ in range(4)]
            vs[0][i] += h; vs[0][j] += h
            vs[1][i] += h; vs[1][j] -= h
            vs[2][i] -= h; vs[2][j] += h
            vs[3][i] -= h; vs[3][j] -= h
            H[i, j] = (f(vs[0]) - f(vs[1]) - f(vs[2]) + f(vs[3])) / (4 * h * h)
    return H


# ---------------------------------------------------------------------------
# fundamental tensor


def test_gallery_models_validate(gallery):
    for name, M in gallery.items():
        rep = norms.validate_model(M, samples=100, seed=3)
        assert rep.passed, (name, rep.checks)


def test_flat_tensor_is_identity(flat):
    s = norms.fundamental_tensor(flat, [0.2, -0.5], [0.3, 1.1])
    assert np.abs(s.g - np.eye(2)).max() < 1e-12
    assert s.min_eigenvalue > 0.999999


def test_sphere_tensor_is_the_metric(sphere):
    th = 0.9
    want = np.diag([1.0, math.sin(th) ** 2])
    for v in ([1.0, 0.0], [0.4, -2.0]):  # Riemannian: no fiber dependence
        s = norms.fundamental_tensor(sphere, [th, 0.7], v)
        assert np.abs(s.g - want).max() < 1e-12


def test_quartic_tensor_hand_value(quartic_minkowski):
    # F² = v1² + v2² + sqrt(v1⁴ + v2⁴); at (1,0) the fiber Hessian is diag(4,2)
    s = norms.fundamental_tensor(quartic_minkowski, [0.0, 0.0], [1.0, 0.0])
    assert np.abs(s.g - np.diag([2.0, 1.0])).max() < 1e-12


def test_quartic_tensor_matches_finite_differences(quartic_minkowski):
    def F2(v):
        return v[0] ** 2 + v[1] ** 2 + math.sqrt(v[0] ** 4 + v[1] ** 4)

    v = np.array([0.7, -0.4])
    s = norms.fundamental_tensor(quartic_minkowski, [0.1, 0.2], v)
    assert np.abs(s.g - 0.5 * hessian_fd(F2, v)).max() < 1e-5


def test_tensor_rejects_zero_vector(flat):
    with pytest.raises(norms.ModelError):
        norms.fundamental_tensor(flat, [0.0, 0.0], [0.0, 0.0])


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_quartic_euler_identity(v1, v2):
    # Σ g_ij v^i v^j = F² for a 1-homogeneous norm
    assume(v1 * v1 + v2 * v2 > 1e-2)
    v = np.array([v1, v2])
    s = norms.fundamental_tensor(QUARTIC, [0.0, 0.0], v)
    F2 = QUARTIC.F_value([0.0, 0.0], v) ** 2
    assert abs(v @ s.g @ v - F2) < 1e-9 * (1.0 + F2)


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.1, 9.0))
def test_quartic_tensor_zero_homogeneity(v1, v2, lam):
    assume(v1 * v1 + v2 * v2 > 1e-2)
    v = np.array([v1, v2])
    g1 = norms.fundamental_tensor(QUARTIC, [0.0, 0.0], v).g
    g2 = norms.fundamental_tensor(QUARTIC, [0.0, 0.0], lam * v).g
    assert np.abs(g1 - g2).max() < 1e-9


# ---------------------------------------------------------------------------
# validation verdicts


def box2():
    return [(-1.0, 1.0), (-1.0, 1.0)]


def test_pure_quartic_fails_strong_convexity():
    # (v1⁴+v2⁴)^(1/4) is 1-homogeneous and positive but its indicatrix has
    # flat spots on the axes
    F = E.parse_expression("(v1^4 + v2^4)^0.25", 2)
    M = norms.FinslerModel.raw(F, 2, box2(), name="pure_quartic")
    rep = norms.validate_model(M, samples=50, seed=1)
    by_name = {c.name: c for c in rep.checks}
    assert not rep.passed
    assert by_name["homogeneity"].passed
    assert not by_name["strong_convexity"].passed
    assert by_name["strong_convexity"].witness is not None


def test_two_homogeneous_raw_fails_homogeneity():
    F = E.parse_expression("v1^2 + v2^2", 2)
    M = norms.FinslerModel.raw(F, 2, box2())
    rep = norms.validate_model(M, samples=50, seed=1)
    by_name = {c.name: c for c in rep.checks}
    assert not by_name["homogeneity"].passed


def test_sign_changing_raw_fails_positivity():
    F = E.parse_expression("v1", 2)
    M = norms.FinslerModel.raw(F, 2, box2())
    rep = norms.validate_model(M, samples=50, seed=1)
    by_name = {c.name: c for c in rep.checks}
    assert not by_name["positivity"].passed
    assert not rep.passed


def test_randers_with_large_drift_is_rejected():
    one = E.const(1.0)
    zero = E.const(0.0)
    alpha = [[one, zero], [zero, one]]
    beta = [zero, E.parse_expression("1.2", 2)]
    # constant drift of alpha-norm 1.2 cannot be fixed by shrinking the chart
    with pytest.raises(norms.ModelError):
        norms.FinslerModel.randers(alpha, beta, 2, box2())


def test_riemannian_rejects_asymmetric_entries():
    one = E.const(1.0)
    a = E.parse_expression("x1", 2)
    b = E.parse_expression("x1 + 1", 2)
    with pytest.raises(norms.ModelError):
        norms.FinslerModel.riemannian([[one, a], [b, one]], 2, box2())


def test_minkowski_rejects_position_dependence():
    F2 = E.parse_expression("x1^2 * v1^2 + v2^2", 2)
    with pytest.raises(norms.ModelError):
        norms.FinslerModel.minkowski(F2, 2)


# ---------------------------------------------------------------------------
# Busemann-Hausdorff density


def test_flat_density_is_one(flat):
    est = norms.bh_density(flat, [0.1, -0.2], seed=5)
    assert est.std_error < 0.01
    assert abs(est.value - 1.0) < 3.0 * est.std_error


def test_sphere_density_is_volume_factor(sphere):
    # for a Riemannian metric the density is sqrt(det g) = sin(theta)
    th = 0.8
    est = norms.bh_density(sphere, [th, 0.0], seed=7)
    assert abs(est.value - math.sin(th)) < 3.0 * est.std_error


def test_hyperbolic_density(hyperbolic):
    est = norms.bh_density(hyperbolic, [0.0, 0.5], seed=9)
    assert abs(est.value - 4.0) < 3.0 * est.std_error  # sqrt(det g) = 1/y²


def test_quartic_density_matches_polar_quadrature(quartic_minkowski):
    # area of {F<1} = ½∮ dφ / F(cos φ, sin φ)², independent of the package
    phi = np.linspace(0.0, 2.0 * np.pi, 400_001)
    area = 0.5 * np.trapezoid(1.0 / (1.0 + np.sqrt(np.cos(phi) ** 4 + np.sin(phi) ** 4)), phi)
    oracle = np.pi / area
    assert abs(oracle - 1.8540746773013732) < 1e-9
    est = norms.bh_density(quartic_minkowski, [0.0, 0.0], seed=11)
    assert abs(est.value - oracle) < 3.0 * est.std_error


def test_density_is_seed_deterministic(quartic_minkowski):
    a = norms.bh_density(quartic_minkowski, [0.0, 0.0], samples=20_000, seed=42)
    b = norms.bh_density(quartic_minkowski, [0.0, 0.0], samples=20_000, seed=42)
    assert a.value == b.value and a.hits == b.hits
    c = norms.bh_density(quartic_minkowski, [0.0, 0.0], samples=20_000, seed=43)
    assert c.hits != a.hits


# ---------------------------------------------------------------------------
# products


def test_product_norm_value(quartic_product):
    # flat component 1, factor component 0: F = G(1, 0) = sqrt(1 + 1) = sqrt 2
    x = [0.0, 1.2, 0.5]
    assert abs(quartic_product.F_value(x, [1.0, 0.0, 0.0]) - math.sqrt(2.0)) < 1e-12
    # factor-only component: G(0, s) where s is the sphere norm of (0, 1)
    s = math.sin(1.2)
    assert abs(quartic_product.F_value(x, [0.0, 0.0, 1.0]) - math.sqrt(2.0) * s) < 1e-12


def test_product_blocks(quartic_product):
    assert norms.product_blocks(quartic_product) == [(0, 1), (1, 3)]


def test_product_tensor_block_structure(riemannian_product, quartic_product):
    # Euclidean combiner: F² splits additively, so g is block diagonal at
    # every vector
    s = norms.fundamental_tensor(riemannian_product, [0.1, 1.1, 0.4], [0.5, 0.3, -0.2])
    assert abs(s.g[0, 1]) < 1e-12 and abs(s.g[0, 2]) < 1e-12
    assert s.min_eigenvalue > 1e-4
    # quartic combiner couples the blocks at generic vectors, but not on the
    # flat axis
    th = 1.1
    s2 = norms.fundamental_tensor(quartic_product, [0.1, th, 0.4], [1.0, 0.0, 0.0])
    assert np.abs(s2.g - np.diag([2.0, 1.0, math.sin(th) ** 2])).max() < 1e-10


def test_product_norm_rejects_sign_asymmetric_combiner():
    G = E.parse_expression("v1 + v2", 2)
    with pytest.raises(norms.ModelError):
        norms.make_product_norm(G, 1, [modelfile.load_gallery("sphere")],
                                flat_box=[(-1.0, 1.0)])


def test_product_norm_rejects_inhomogeneous_combiner():
    G = E.parse_expression("v1^2 + v2^2", 2)
    with pytest.raises(norms.ModelError):
        norms.make_product_norm(G, 1, [modelfile.load_gallery("sphere")],
                                flat_box=[(-1.0, 1.0)])


def test_product_distance_closed_form(riemannian_product):
    # Euclidean combiner: d = sqrt(Δx² + d_sphere²)
    a = [0.0, math.pi / 2.0, 0.0]
    b = [1.0, math.pi / 2.0, math.pi / 2.0]
    d = norms.product_distance(riemannian_product, a, b, [math.pi / 2.0])
    assert abs(d - math.sqrt(1.0 + (math.pi / 2.0) ** 2)) < 1e-12


def test_product_distance_rejects_negative_factor_distance(riemannian_product):
    a = [0.0, 1.0, 0.0]
    with pytest.raises(norms.ModelError):
        norms.product_distance(riemannian_product, a, a, [-0.1])


def test_product_distance_rejects_non_product(flat):
    with pytest.raises(norms.ModelError):
        norms.product_distance(flat, [0.0, 0.0], [0.1, 0.1], [])


def test_product_distance_matches_geodesic_shooting(quartic_product):
    """Two-point boundary value check: solve for the initial velocity whose
    geodesic reaches b at t=1; its norm is the distance."""
    C = cn.connection(quartic_product)
    a = np.array([0.0, 1.2, 0.3])
    b = np.array([0.4, 1.0, 0.8])
    d_sphere = math.acos(math.cos(1.2) * math.cos(1.0)
                         + math.sin(1.2) * math.sin(1.0) * math.cos(0.5))
    d_formula = norms.product_distance(quartic_product, a, b, [d_sphere])

    def resid(v0):
        rec = cn.integrate_geodesic(C, a, v0, 1.0, rtol=1e-9, atol=1e-11)
        if rec.chart_exit:
            return rec.x[-1] - b + 10.0  # push the solver back inside
        return rec.x[-1] - b

    sol = optimize.root(resid, b - a, tol=1e-10)
    assert sol.success and np.abs(sol.fun).max() < 1e-8
    assert abs(quartic_product.F_value(a, sol.x) - d_formula) < 1e-6
