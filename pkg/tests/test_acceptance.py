"""End-to-end acceptance checks.

One test per advertised guarantee, each printing a single verdict line; run
with `pytest tests/test_acceptance.py -s` to see them all.
"""

import math

import numpy as np
import pytest

from finslerlab import expr as E
from finslerlab.connection import (
    berwald_test,
    connection,
    connections_agree,
    curve_from_samples,
    overlap_probes,
    transport_matrix,
)
from finslerlab.curvature import (
    WeightSpec,
    bianchi_defect,
    curvature_tensor,
    einstein_check,
    flag_curvature,
    ricci,
    ricci_invariance_check,
    sectional_curvature,
    weighted_invariance_check,
    weighted_ricci,
)
from finslerlab.holonomy import (
    de_rham_split,
    holonomy_samples,
    rotation_angle,
    szabo_metrize,
)
from finslerlab.norms import FinslerModel, ModelError, _rng, _unit_rows


def _verdict(num, label, ok, detail):
    print(f"[{num:2d}] {label}: {'PASS' if ok else 'FAIL'}  ({detail})")
    assert ok, f"{label}: {detail}"


def test_01_berwald_detection(quartic_product, randers):
    pos = berwald_test(quartic_product, probe_points=25, seed=0)
    neg = berwald_test(randers, probe_points=25, seed=0)
    ok = pos.is_berwald and pos.max_deviation <= 1e-8 and neg.max_deviation >= 1e-3
    _verdict(1, "berwald detection", ok,
             f"product {pos.max_deviation:.1e}, randers {neg.max_deviation:.1e}")


def test_02_transport_preserves_norm(quartic_product):
    C = connection(quartic_product)
    B = holonomy_samples(C, [0.2, 1.1, 0.5], loop_count=30, seed=0)
    worst = B.norm_preservation(vectors=50, seed=0)
    _verdict(2, "norm preservation around 30 loops", worst <= 1e-6, f"max {worst:.1e}")


def test_03_ricci_is_affine_invariant(quartic_product, riemannian_product):
    agree = connections_agree(quartic_product, riemannian_product, probes=40, seed=0)
    rep = ricci_invariance_check(quartic_product, riemannian_product,
                                 probes=100, seed=0)
    ok = agree.agree and rep.passed and rep.max_deviation <= 1e-8
    _verdict(3, "ricci agreement at 100 probes", ok, f"max {rep.max_deviation:.1e}")


def test_04_analytic_curvature_values(sphere, hyperbolic, quartic_product):
    rng = _rng(0)
    worst_ric = worst_flag = 0.0
    Cs = connection(sphere)
    X = sphere.sample_points(rng, 10)
    for x in X:
        for v in _unit_rows(rng, 3, 2):
            u = v / sphere.F_value(x, v)
            worst_ric = max(worst_ric, abs(ricci(Cs, x, u) - 1.0))
            w = _unit_rows(rng, 1, 2)[0]
            if abs(u[0] * w[1] - u[1] * w[0]) > 1e-2:
                worst_flag = max(worst_flag, abs(flag_curvature(sphere, x, u, w) - 1.0))
    worst_sec = 0.0
    for x in hyperbolic.sample_points(rng, 10):
        worst_sec = max(worst_sec, abs(sectional_curvature(hyperbolic, x,
                                                           [1.0, 0.0], [0.0, 1.0]) + 1.0))
    worst_mixed = 0.0
    for x in quartic_product.sample_points(rng, 5):
        for v, w in (([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
                     ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])):
            worst_mixed = max(worst_mixed, abs(flag_curvature(quartic_product, x, v, w)))
    ok = worst_ric <= 1e-7 and worst_flag <= 1e-7 and worst_sec <= 1e-7 \
        and worst_mixed <= 1e-9
    _verdict(4, "analytic curvature values", ok,
             f"sphere ric {worst_ric:.1e}, flag {worst_flag:.1e}, "
             f"half-plane {worst_sec:.1e}, mixed {worst_mixed:.1e}")


def test_05_metrization_keeps_connection(quartic_product, sphere):
    match = szabo_metrize(quartic_product, probes=10, seed=0).connection_match()
    SM = szabo_metrize(sphere, probes=5, seed=0)
    own = max(np.abs(hv - sphere.g_batch([x], [[0.3, 0.7]])[0]).max()
              for x, hv in zip(SM.probes, SM.h_values))
    ok = match <= 1e-6 and own <= 1e-10
    _verdict(5, "averaged metric keeps the connection", ok,
             f"christoffel gap {match:.1e}, riemannian self-match {own:.1e}")


def test_06_de_rham_split(quartic_product, sphere):
    Bq = holonomy_samples(connection(quartic_product), [0.2, 1.1, 0.5],
                          loop_count=12, seed=2)
    Sq = de_rham_split(Bq, szabo_metrize(quartic_product, probes=2, seed=2), seed=2)
    by_dim = {B.shape[1]: (B, f) for B, f in zip(Sq.subspaces, Sq.flat_flags)}
    angles = 0.0
    for d, cols in ((1, [0]), (2, [1, 2])):
        Qa = np.linalg.qr(by_dim[d][0])[0]
        Qb = np.eye(3)[:, cols]
        s = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
        angles = max(angles, float(np.arccos(np.clip(s, -1, 1)).max()))
    Bs = holonomy_samples(connection(sphere), [1.1, 0.4], loop_count=12, seed=1)
    Ss = de_rham_split(Bs, szabo_metrize(sphere, probes=2, seed=1), seed=1)
    ok = sorted(Sq.dimensions) == [1, 2] and by_dim[1][1] and not by_dim[2][1] \
        and angles <= 1e-6 and Ss.dimensions == (2,)
    _verdict(6, "splitting into flat and irreducible parts", ok,
             f"dims {Sq.dimensions}, angles {angles:.1e}, sphere {Ss.dimensions}")


def test_07_latitude_holonomy_angle(sphere):
    th = math.pi / 3
    ts = np.linspace(0.0, 2.0 * math.pi, 9)
    xs = np.column_stack([np.full_like(ts, th), ts])
    vs = np.column_stack([np.zeros_like(ts), np.ones_like(ts)])
    P = transport_matrix(connection(sphere), curve_from_samples(sphere, ts, xs, vs))
    g = sphere.g_batch([[th, 0.0]], [[0.3, 1.0]])[0]
    gap = abs(abs(rotation_angle(P, g)) - math.pi)
    _verdict(7, "latitude loop rotation angle", gap <= 1e-5, f"|angle - pi| {gap:.1e}")


def test_08_weighted_ricci(sphere, quartic_product, riemannian_product):
    rng = _rng(0)
    zero = E.parse_expression("0", 2)
    Cs = connection(sphere)
    worst_zero = 0.0
    for x in sphere.sample_points(rng, 5):
        v = _unit_rows(rng, 1, 2)[0]
        base = ricci(Cs, x, v)
        for N in (2.0, 3.0, math.inf):
            val = weighted_ricci(sphere, WeightSpec(psi=zero, N=N), x, v)
            worst_zero = max(worst_zero, abs(val - base))
    line = FinslerModel.riemannian([[E.parse_expression("1", 1)]], 1,
                                   [[-2.0, 2.0]], name="line")
    psi_x = E.parse_expression("x1", 1)
    two = weighted_ricci(line, WeightSpec(psi=psi_x, N=2.0), [0.0], [1.0])
    sentinel = weighted_ricci(line, WeightSpec(psi=psi_x, N=1.0), [0.0], [1.0])
    shared = WeightSpec(psi=E.parse_expression("x1^2", 3))
    inv = weighted_invariance_check(quartic_product, riemannian_product, shared,
                                    probes=30, seed=0)
    ok = worst_zero <= 1e-9 and abs(two - 1.0) <= 1e-9 \
        and sentinel == -math.inf and inv.passed
    _verdict(8, "weighted ricci", ok,
             f"zero-weight gap {worst_zero:.1e}, line N=2 {two:.3f}, "
             f"sentinel {sentinel}, invariance {inv.max_deviation:.1e}")


def test_09_einstein_classification(gallery):
    sphere_rep = einstein_check(gallery["sphere"], probes=12, seed=0)
    mink_rep = einstein_check(gallery["quartic_minkowski"], probes=12, seed=0)
    prod_rep = einstein_check(gallery["quartic_product"], probes=8, seed=0)
    rigidity_ok = True
    for name, M in gallery.items():
        try:
            rep = einstein_check(M, probes=8, seed=0)
        except ModelError:
            continue  # non-Berwald models are refused by design
        rigidity_ok = rigidity_ok and not rep.rigidity_flag
    ok = sphere_rep.verdict == "Einstein" and sphere_rep.lambda_hat is not None \
        and abs(sphere_rep.lambda_hat - 1.0) <= 1e-6 \
        and mink_rep.verdict == "Ricci-flat" \
        and prod_rep.verdict == "not-Einstein" and rigidity_ok
    _verdict(9, "einstein classification", ok,
             f"sphere {sphere_rep.verdict} λ̂={sphere_rep.lambda_hat}, "
             f"minkowski {mink_rep.verdict}, product {prod_rep.verdict}, "
             f"rigidity never flagged {rigidity_ok}")


def test_10_numerical_hygiene(gallery):
    rng = _rng(0)
    worst_anti = worst_bianchi = worst_fd = 0.0
    for name, M in gallery.items():
        C = connection(M)
        n = M.dim
        for x in M.sample_points(rng, 4):
            v = _unit_rows(rng, 1, n)[0]
            R = curvature_tensor(C, x, v)
            anti = np.abs(R + R.transpose(0, 1, 3, 2)).max()
            worst_anti = max(worst_anti, float(anti))
            worst_bianchi = max(worst_bianchi, bianchi_defect(R))
            # rebuild R from centered differences of the coefficients
            h = 1e-6
            D = np.empty((n, n, n, n))
            for m in range(n):
                xp, xm = x.copy(), x.copy()
                xp[m] += h
                xm[m] -= h
                D[m] = (C.gamma(xp, v) - C.gamma(xm, v)) / (2.0 * h)
            G = C.gamma(x, v)
            first = np.einsum("kilj->ijkl", D)
            quad = np.einsum("ikm,mlj->ijkl", G, G)
            R_fd = first - first.transpose(0, 1, 3, 2) + quad - quad.transpose(0, 1, 3, 2)
            worst_fd = max(worst_fd, float(np.abs(R - R_fd).max()))
    ok = worst_anti <= 1e-10 and worst_bianchi <= 1e-9 and worst_fd <= 1e-6
    _verdict(10, "numerical hygiene across the gallery", ok,
             f"antisymmetry {worst_anti:.1e}, bianchi {worst_bianchi:.1e}, "
             f"fd agreement {worst_fd:.1e}")
