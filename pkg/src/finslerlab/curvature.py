"""Curvature layer.

Riemann tensor of the induced connection, sectional and flag curvature,
Ricci and weighted Ricci evaluation, Einstein verdicts, and the checks that
these quantities depend only on the connection.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import expr as E
from .connection import ConnectionField, connection, connections_agree, overlap_probes
from .norms import FinslerModel, ModelError, _rng, _unit_rows, fundamental_tensor

EINSTEIN_TOL = 1e-7
RICCI_AGREE_TOL = 1e-8
WEIGHTED_AGREE_TOL = 1e-7
_FLAT_DENOM_TOL = 1e-14
_DERIV_ZERO_TOL = 1e-10


@dataclass(frozen=True)
class CurvatureSample:
    """Curvature data at one point, with optional flag evaluations.

    Invariants (used as test properties): R^i_{jkl} = -R^i_{jlk} and the
    cyclic sum over (j,k,l) vanishes, since the connection is torsion-free.
    """

    x: tuple
    R: np.ndarray
    v: tuple | None = None
    w: tuple | None = None
    sectional: float | None = None
    flag: float | None = None
    ric: float | None = None
    ric_N: tuple = ()  # pairs (N, value)

    def to_report(self) -> dict:
        rep = {
            "x": list(self.x),
            "R": self.R.tolist(),
            "antisymmetry_defect": float(np.abs(self.R + self.R.transpose(0, 1, 3, 2)).max()),
            "bianchi_defect": bianchi_defect(self.R),
        }
        if self.v is not None:
            rep["v"] = list(self.v)
        if self.w is not None:
            rep["w"] = list(self.w)
        for key in ("sectional", "flag", "ric"):
            val = getattr(self, key)
            if val is not None:
                rep[key] = val
        if self.ric_N:
            rep["ric_N"] = [{"N": n_label(N), "value": n_label(val)}
                            for N, val in self.ric_N]
        return rep

    def csv_columns(self):
        n = len(self.x)
        names = [f"x{i + 1}" for i in range(n)]
        vals = list(self.x)
        names += [f"v{i + 1}" for i in range(n)]
        vals += list(self.v) if self.v is not None else [""] * n
        for key in ("sectional", "flag", "ric"):
            names.append(key)
            val = getattr(self, key)
            vals.append("" if val is None else val)
        for N, val in self.ric_N:
            names.append(f"ric_{n_label(N)}")
            vals.append(n_label(val))
        return names, vals


def n_label(value):
    """JSON/CSV-safe rendering of values that may be infinite."""
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return value


@dataclass(frozen=True)
class WeightSpec:
    """Weight Ψ(x) of the measure e^(-Ψ) vol_F plus the dimension parameter.

    ``psi=None`` means: use the model's declared weight, or zero if it has
    none. N may be any real ≥ the model dimension, or inf.
    """

    psi: E.Expr | None = None
    N: float = math.inf

    def __post_init__(self):
        N = self.N
        if N != math.inf and not (isinstance(N, (int, float)) and math.isfinite(N)):
            raise ModelError("dimension parameter N must be finite or inf")

    def weight_for(self, M: FinslerModel) -> E.Expr:
        psi = self.psi if self.psi is not None else M.weight
        if psi is None:
            return E.const(0.0)
        allowed = set(M.params) | {f"x{i}" for i in range(1, M.dim + 1)}
        extra = E.free_symbols(psi) - allowed
        if extra:
            raise ModelError(f"weight must depend on position only; found {sorted(extra)}")
        return psi


@dataclass(frozen=True)
class EinsteinReport:
    verdict: str  # "Einstein" | "Ricci-flat" | "not-Einstein"
    lambda_hat: float | None
    lambdas: np.ndarray
    max_residual: float
    lambda_spread: float
    rigidity_flag: bool
    probes: int


@dataclass(frozen=True)
class InvarianceReport:
    max_deviation: float
    passed: bool
    probes: int


# ---------------------------------------------------------------------------
# the tensor


def _curvature_program(C: ConnectionField):
    n = C.dim
    roots = []
    for m in range(n):
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    roots.append(E.differentiate(C.gamma_exprs[k][i][j], f"x{m + 1}"))
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                roots.append(C.gamma_exprs[k][i][j])
    return C.model.program("curv_R", roots)


def curvature_tensor(C: ConnectionField, x, v=None) -> np.ndarray:
    """R^i_{jkl} defined by R(∂_k, ∂_l)∂_j = R^i_{jkl} ∂_i.

    The connection coefficients are evaluated at the reference vector v; for
    a fiber-independent (Berwald) connection the result does not depend on it.
    """
    n = C.dim
    if v is None:
        v = np.ones(n)
    v = np.asarray(v, float)
    if not np.any(v):
        raise ModelError("curvature needs a nonzero reference vector")
    vals = np.array(_curvature_program(C).run_scalar(x, v))
    if not np.all(np.isfinite(vals)):
        raise ModelError(f"curvature evaluation failed at x={tuple(np.asarray(x, float))}")
    D = np.empty((n, n, n, n))  # D[m, k, i, j] = ∂_m Γ^k_{ij}
    G = np.empty((n, n, n))
    col = 0
    for m in range(n):
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    D[m, k, i, j] = D[m, k, j, i] = vals[col]
                    col += 1
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                G[k, i, j] = G[k, j, i] = vals[col]
                col += 1
    # R^i_{jkl} = ∂_k Γ^i_{lj} − ∂_l Γ^i_{kj} + Γ^i_{km} Γ^m_{lj} − Γ^i_{lm} Γ^m_{kj}
    first = np.einsum("kilj->ijkl", D)
    quad = np.einsum("ikm,mlj->ijkl", G, G)
    R = first - first.transpose(0, 1, 3, 2) + quad - quad.transpose(0, 1, 3, 2)
    return R


def bianchi_defect(R: np.ndarray) -> float:
    """Max entry of the cyclic (j,k,l) sum; zero for torsion-free connections."""
    cyc = R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2)
    return float(np.abs(cyc).max())


# ---------------------------------------------------------------------------
# scalar curvatures


def _flag_value(R, g, v, w):
    num = np.einsum("ijkl,j,k,l->i", R, w, v, w) @ g @ v
    den = (v @ g @ v) * (w @ g @ w) - (v @ g @ w) ** 2
    if abs(den) <= _FLAT_DENOM_TOL:
        raise ModelError("degenerate flag: v and w do not span a plane")
    return float(num / den)


def sectional_curvature(g: FinslerModel, x, v, w) -> float:
    """K(v ∧ w) for a Riemannian model."""
    if g.kind != "riemannian":
        raise ModelError("sectional curvature is defined for Riemannian models; "
                         "use flag_curvature otherwise")
    v = np.asarray(v, float)
    w = np.asarray(w, float)
    C = connection(g)
    R = curvature_tensor(C, x, v)
    gmat = fundamental_tensor(g, x, v).g
    return _flag_value(R, gmat, v, w)


def flag_curvature(M: FinslerModel, x, v, w) -> float:
    """K^V for the flag with pole v and edge w, using g_v as inner product."""
    C = connection(M)
    if not C.is_berwald:
        raise ModelError(
            "flag curvature by this formula needs a fiber-independent connection; "
            f"max fiber deviation {C.berwald_deviation:.2e}")
    v = np.asarray(v, float)
    if not np.any(v):
        raise ModelError("flag pole must be nonzero")
    w = np.asarray(w, float)
    R = curvature_tensor(C, x, v)
    g_v = fundamental_tensor(M, x, v).g
    return _flag_value(R, g_v, v, w)


def ricci(C: ConnectionField, x, v) -> float:
    """Ric(v) = R^i_{jik} vʲ v^k (contraction over the 1st and 3rd slots)."""
    v = np.asarray(v, float)
    R = curvature_tensor(C, x, v)
    ric_jk = np.einsum("ijik->jk", R)
    return float(v @ ric_jk @ v)


def ricci_invariance_check(M1: FinslerModel, M2: FinslerModel, probes: int = 50,
                           seed: int = 0) -> InvarianceReport:
    """Ricci depends only on the connection: compare Ric over shared probes.

    Refuses when the connections themselves differ, since nothing is asserted
    in that case.
    """
    agree = connections_agree(M1, M2, probes, seed)
    if not agree.agree:
        raise ModelError(
            f"connections differ (max deviation {agree.max_deviation:.2e}); "
            "Ricci comparison is only meaningful for matching connections")
    X, V = overlap_probes(M1, M2, probes, seed)
    C1, C2 = connection(M1), connection(M2)
    dev = 0.0
    for x, v in zip(X, V):
        dev = max(dev, abs(ricci(C1, x, v) - ricci(C2, x, v)))
    return InvarianceReport(dev, dev <= RICCI_AGREE_TOL, probes)


def curvature_sample(M: FinslerModel, x, v=None, w=None, N_list=(),
                     W: WeightSpec | None = None) -> CurvatureSample:
    """Assemble the full curvature record at one point.

    Sectional curvature is filled for Riemannian models with a flag given,
    flag curvature whenever the model is Berwald and a flag is given.
    """
    C = connection(M)
    R = curvature_tensor(C, x, v)
    sec = flag = ric_v = None
    if v is not None:
        ric_v = ricci(C, x, v)
    if v is not None and w is not None:
        if M.kind == "riemannian":
            sec = sectional_curvature(M, x, v, w)
        if C.is_berwald:
            flag = flag_curvature(M, x, v, w)
    ric_N = []
    if v is not None:
        for N in N_list:
            spec = WeightSpec(W.psi if W is not None else None, float(N))
            ric_N.append((float(N), weighted_ricci(M, spec, x, v)))
    return CurvatureSample(
        x=tuple(float(c) for c in np.asarray(x, float)),
        R=R,
        v=None if v is None else tuple(float(c) for c in np.asarray(v, float)),
        w=None if w is None else tuple(float(c) for c in np.asarray(w, float)),
        sectional=sec,
        flag=flag,
        ric=ric_v,
        ric_N=tuple(ric_N),
    )


# ---------------------------------------------------------------------------
# weighted Ricci


def weighted_ricci(M: FinslerModel, W: WeightSpec, x, v) -> float:
    """Ric_N(v) along the geodesic η with η(0)=x, η̇(0)=v.

    With ψ(t) = Ψ(η(t)):
      Ric_N  = Ric + ψ''(0) + ψ'(0)² / (N − n)   for n < N < ∞,
      Ric_∞  = Ric + ψ''(0),
      Ric_n  = Ric + ψ''(0) if ψ'(0) = 0, else −∞.
    """
    n = M.dim
    if W.N != math.inf and W.N < n:
        raise ModelError(f"dimension parameter N={W.N} is below the dimension {n}")
    v = np.asarray(v, float)
    if not np.any(v):
        raise ModelError("weighted Ricci needs a nonzero vector")
    psi = W.weight_for(M)
    C = connection(M)
    bind = M.bindings(x, v)
    dpsi = np.array([E.evaluate(E.differentiate(psi, f"x{i + 1}"), bind) for i in range(n)])
    hess = np.array(
        [[E.evaluate(E.differentiate(E.differentiate(psi, f"x{i + 1}"), f"x{j + 1}"), bind)
          for j in range(n)] for i in range(n)]
    )
    first = float(dpsi @ v)
    # chain rule with the geodesic equation η̈ = −2G(η, η̇)
    second = float(v @ hess @ v - 2.0 * dpsi @ C.spray(x, v))
    ric_v = ricci(C, x, v)
    if W.N == math.inf:
        return ric_v + second
    if W.N == n:
        if abs(first) > _DERIV_ZERO_TOL:
            return -math.inf
        return ric_v + second
    return ric_v + second + first * first / (W.N - n)


def weighted_invariance_check(M1: FinslerModel, M2: FinslerModel, W: WeightSpec,
                              probes: int = 30, seed: int = 0) -> InvarianceReport:
    """Weighted Ricci depends only on the connection and the weight: compare
    Ric_N for N ∈ {n, n+1, ∞} over shared probes."""
    agree = connections_agree(M1, M2, probes, seed)
    if not agree.agree:
        raise ModelError(
            f"connections differ (max deviation {agree.max_deviation:.2e}); "
            "weighted Ricci comparison is only meaningful for matching connections")
    n = M1.dim
    X, V = overlap_probes(M1, M2, probes, seed)
    dev = 0.0
    for N in (float(n), float(n + 1), math.inf):
        spec = WeightSpec(W.psi, N)
        for x, v in zip(X, V):
            a = weighted_ricci(M1, spec, x, v)
            b = weighted_ricci(M2, spec, x, v)
            if a == -math.inf or b == -math.inf:
                if a != b:
                    return InvarianceReport(math.inf, False, probes)
                continue  # both hit the sentinel: equal by convention
            dev = max(dev, abs(a - b))
    return InvarianceReport(dev, dev <= WEIGHTED_AGREE_TOL, probes)


# ---------------------------------------------------------------------------
# Einstein verdicts


def _fiber_dependent(M: FinslerModel, X, seed: int) -> bool:
    """Detectably non-Riemannian: the fundamental tensor varies with v."""
    rng = _rng(seed)
    n = M.dim
    for x in X[: min(len(X), 5)]:
        V = _unit_rows(rng, 4, n)
        gs = np.stack([fundamental_tensor(M, x, v).g for v in V])
        if np.abs(gs - gs[0]).max() > 1e-8:
            return True
    return False


def einstein_check(M: FinslerModel, probes: int = 20, seed: int = 0) -> EinsteinReport:
    """Fit Ric(v) = λ(x) F(v)² per probe point over ≥ 4n F-unit vectors."""
    C = connection(M)
    if not C.is_berwald:
        raise ModelError(
            "Einstein verdicts are defined for fiber-independent connections; "
            f"max fiber deviation {C.berwald_deviation:.2e}")
    if probes < 2:
        raise ModelError("need at least 2 probe points")
    rng = _rng(seed)
    X = M.sample_points(rng, probes)
    per_point = 4 * M.dim
    lambdas = np.empty(probes)
    max_residual = 0.0
    for p, x in enumerate(X):
        V = _unit_rows(rng, per_point, M.dim)
        vals = np.empty(per_point)
        for q, v in enumerate(V):
            u = v / M.F_value(x, v)  # F-unit, so Ric(u) estimates λ directly
            vals[q] = ricci(C, x, u)
        lam = float(vals.mean())  # least-squares fit of a constant
        lambdas[p] = lam
        max_residual = max(max_residual, float(np.abs(vals - lam).max()) / max(1.0, abs(lam)))
    spread = float(lambdas.max() - lambdas.min())
    lam_hat = float(lambdas.mean())
    fits = max_residual <= EINSTEIN_TOL and spread <= EINSTEIN_TOL
    if fits and abs(lam_hat) <= EINSTEIN_TOL:
        verdict = "Ricci-flat"
    elif fits:
        verdict = "Einstein"
    else:
        verdict = "not-Einstein"
    rigidity = bool(
        verdict == "Einstein" and abs(lam_hat) > EINSTEIN_TOL and _fiber_dependent(M, X, seed)
    )
    return EinsteinReport(
        verdict=verdict,
        lambda_hat=lam_hat if fits else None,
        lambdas=lambdas,
        max_residual=max_residual,
        lambda_spread=spread,
        rigidity_flag=rigidity,
        probes=probes,
    )
