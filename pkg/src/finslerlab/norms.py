"""Finsler norm catalog: model construction, fundamental tensor, validation
checks, Busemann-Hausdorff density and product norms.

A model lives on a single coordinate chart (a closed box). The smooth data is
a norm expression F(x, v); every derived object (fundamental tensor, spray,
curvature) is produced by symbolic fiber/position differentiation of F².
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as E

DEFAULT_MC_SAMPLES = 200_000
CONVEXITY_TOL = 1e-9
HOMOGENEITY_TOL = 1e-10

KINDS = ("riemannian", "minkowski", "randers", "product", "raw")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    witness: tuple | None = None


@dataclass(frozen=True)
class FundamentalTensorSample:
    x: tuple
    v: tuple
    g: np.ndarray
    min_eigenvalue: float


@dataclass(frozen=True)
class ValidationReport:
    model: str
    checks: tuple
    passed: bool


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    std_error: float
    samples: int
    hits: int
    bounding_radius: float


def _rng(seed: int) -> np.random.Generator:
    # counter-based generator: identical streams on every platform
    return np.random.Generator(np.random.Philox(seed))


def _unit_rows(rng, count, n):
    v = rng.standard_normal((count, n))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


class FinslerModel:
    """A Finsler norm on a coordinate chart box.

    Stores the norm F as an expression; F² is derived (power folding keeps it
    in the smooth form, e.g. sqrt(q)^2 collapses back to q). Derived symbolic
    pipelines are cached on the instance.
    """

    def __init__(
        self,
        dim: int,
        kind: str,
        F_expr: E.Expr,
        *,
        chart_box,
        params: dict | None = None,
        weight: E.Expr | None = None,
        metric=None,
        factors=(),
        flat_dim: int = 0,
        G: E.Expr | None = None,
        name: str = "",
    ):
        if kind not in KINDS:
            raise ModelError(f"unknown model kind '{kind}'")
        if dim < 1:
            raise ModelError("dimension must be >= 1")
        box = tuple((float(lo), float(hi)) for lo, hi in chart_box)
        if len(box) != dim or any(lo >= hi for lo, hi in box):
            raise ModelError("chart box must give one nonempty interval per coordinate")
        self.dim = dim
        self.kind = kind
        self.F_expr = F_expr
        self.F2_expr = E.power(F_expr, E.const(2.0))
        self.chart_box = box
        self.params = dict(params or {})
        self.weight = weight  # Psi(x); measure is e^(-Psi) * vol_F
        self.metric = metric
        self.factors = tuple(factors)
        self.flat_dim = flat_dim
        self.G = G
        self.name = name or kind
        self._programs: dict = {}
        self._g_exprs = None
        allowed = self._allowed_symbols()
        for label, e in (("norm", F_expr), ("weight", weight)):
            if e is None:
                continue
            extra = E.free_symbols(e) - allowed
            if extra:
                raise ModelError(f"{label} expression references unknown symbols {sorted(extra)}")

    def _allowed_symbols(self):
        names = set(self.params)
        for i in range(1, self.dim + 1):
            names.add(f"x{i}")
            names.add(f"v{i}")
        return names

    # -- constructors -------------------------------------------------------

    @classmethod
    def riemannian(cls, entries, dim, chart_box, *, params=None, weight=None, name=""):
        """Model from a symmetric matrix of metric entry expressions g_ij(x)."""
        if len(entries) != dim or any(len(row) != dim for row in entries):
            raise ModelError("metric entries must form a dim x dim matrix")
        for i in range(dim):
            for j in range(i):
                if entries[i][j] is not entries[j][i]:
                    raise ModelError(f"metric entries not symmetric at ({i + 1},{j + 1})")
        quad = E.const(0.0)
        for i in range(dim):
            quad = E.add(quad, E.mul(entries[i][i], E.power(E.vvar(i + 1), E.const(2.0))))
            for j in range(i + 1, dim):
                term = E.mul(entries[i][j], E.mul(E.vvar(i + 1), E.vvar(j + 1)))
                quad = E.add(quad, E.mul(E.const(2.0), term))
        F = E.power(quad, E.const(0.5))
        metric = tuple(tuple(row) for row in entries)
        return cls(dim, "riemannian", F, chart_box=chart_box, params=params,
                   weight=weight, metric=metric, name=name)

    @classmethod
    def minkowski(cls, F2, dim, *, chart_box=None, params=None, weight=None, name=""):
        """Model from a fiber-only squared norm F²(v)."""
        allowed = set(params or ()) | {f"v{i}" for i in range(1, dim + 1)}
        extra = E.free_symbols(F2) - allowed
        if extra:
            raise ModelError(f"Minkowski norm must be fiber-only; found {sorted(extra)}")
        box = chart_box or tuple((-1.0, 1.0) for _ in range(dim))
        F = E.power(F2, E.const(0.5))
        return cls(dim, "minkowski", F, chart_box=box, params=params, weight=weight, name=name)

    @classmethod
    def randers(cls, alpha_entries, beta_entries, dim, chart_box, *, params=None,
                weight=None, name=""):
        """F = sqrt(alpha_ij v^i v^j) + b_i v^i; the chart box is shrunk until
        the alpha-norm of beta stays below 0.99 so F is positive."""
        if len(beta_entries) != dim:
            raise ModelError("beta must have one entry per coordinate")
        for i in range(dim):
            for j in range(i):
                if alpha_entries[i][j] is not alpha_entries[j][i]:
                    raise ModelError("alpha entries must be symmetric")
        quad = E.const(0.0)
        for i in range(dim):
            quad = E.add(quad, E.mul(alpha_entries[i][i], E.power(E.vvar(i + 1), E.const(2.0))))
            for j in range(i + 1, dim):
                term = E.mul(alpha_entries[i][j], E.mul(E.vvar(i + 1), E.vvar(j + 1)))
                quad = E.add(quad, E.mul(E.const(2.0), term))
        lin = E.const(0.0)
        for i in range(dim):
            lin = E.add(lin, E.mul(beta_entries[i], E.vvar(i + 1)))
        F = E.add(E.power(quad, E.const(0.5)), lin)
        box = _shrink_randers_box(alpha_entries, beta_entries, dim, chart_box, params or {})
        model = cls(dim, "randers", F, chart_box=box, params=params, weight=weight, name=name)
        model.alpha = tuple(tuple(row) for row in alpha_entries)
        model.beta = tuple(beta_entries)
        return model

    @classmethod
    def raw(cls, F, dim, chart_box, *, params=None, weight=None, name=""):
        """Model from an arbitrary norm candidate F(x, v); validation decides
        whether it is actually a Finsler norm."""
        return cls(dim, "raw", F, chart_box=chart_box, params=params, weight=weight, name=name)

    # -- cached symbolic pipelines -----------------------------------------

    def program(self, key: str, roots) -> E.ExprProgram:
        prog = self._programs.get(key)
        if prog is None:
            prog = E.ExprProgram(roots, self.dim, self.params)
            self._programs[key] = prog
        return prog

    def g_exprs(self):
        """Fundamental tensor entries g_ij = 1/2 d²(F²)/dv_i dv_j as
        expressions; the matrix is symmetric by sharing nodes."""
        if self._g_exprs is None:
            n = self.dim
            first = [E.differentiate(self.F2_expr, f"v{i}") for i in range(1, n + 1)]
            g = [[None] * n for _ in range(n)]
            for i in range(n):
                for j in range(i, n):
                    g[i][j] = E.mul(E.const(0.5), E.differentiate(first[i], f"v{j + 1}"))
                    g[j][i] = g[i][j]
            self._g_exprs = tuple(tuple(row) for row in g)
        return self._g_exprs

    def _g_program(self) -> E.ExprProgram:
        g = self.g_exprs()
        n = self.dim
        roots = [g[i][j] for i in range(n) for j in range(i, n)]
        return self.program("g_upper", roots)

    def bindings(self, x, v) -> dict:
        b = dict(self.params)
        for i, xi in enumerate(x, start=1):
            b[f"x{i}"] = float(xi)
        for i, vi in enumerate(v, start=1):
            b[f"v{i}"] = float(vi)
        return b

    def F_value(self, x, v) -> float:
        return E.evaluate(self.F_expr, self.bindings(x, v))

    def F_batch(self, X, V) -> np.ndarray:
        prog = self.program("F2", [self.F2_expr])
        out = prog.run_batch(X, V)[:, 0]
        return np.sqrt(out)

    def g_batch(self, X, V) -> np.ndarray:
        """Fundamental tensor at a batch of (x, v); returns (m, n, n)."""
        n = self.dim
        flat = self._g_program().run_batch(X, V)
        m = flat.shape[0]
        g = np.empty((m, n, n))
        k = 0
        for i in range(n):
            for j in range(i, n):
                g[:, i, j] = flat[:, k]
                g[:, j, i] = flat[:, k]
                k += 1
        return g

    def sample_points(self, rng, count: int) -> np.ndarray:
        lo = np.array([b[0] for b in self.chart_box])
        hi = np.array([b[1] for b in self.chart_box])
        # stay strictly inside the closed box: boundary values are legal but
        # derived quantities are probed in the interior
        margin = 0.02 * (hi - lo)
        return rng.uniform(lo + margin, hi - margin, size=(count, self.dim))

    def box_center(self) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.chart_box])


def _shrink_randers_box(alpha, beta, dim, chart_box, params):
    a_prog = E.ExprProgram([alpha[i][j] for i in range(dim) for j in range(dim)], dim, params)
    b_prog = E.ExprProgram(list(beta), dim, params)
    box = [(float(lo), float(hi)) for lo, hi in chart_box]
    V0 = np.zeros((1, dim))
    for _ in range(200):
        grids = [np.linspace(lo, hi, 9) for lo, hi in box]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*grids, indexing="ij")], axis=1)
        V = np.zeros_like(mesh)
        A = a_prog.run_batch(mesh, V).reshape(-1, dim, dim)
        b = b_prog.run_batch(mesh, V)
        beta_norm2 = np.einsum("pi,pi->p", b, np.linalg.solve(A, b[:, :, None])[:, :, 0])
        if np.sqrt(beta_norm2.max()) < 0.99:
            return tuple(box)
        box = [
            (c - 0.8 * (c - lo), c + 0.8 * (hi - c))
            for (lo, hi), c in zip(box, [(lo + hi) / 2 for lo, hi in box])
        ]
    raise ModelError("could not shrink chart box to keep the Randers norm positive")


# ---------------------------------------------------------------------------
# operations


def fundamental_tensor(M: FinslerModel, x, v) -> FundamentalTensorSample:
    """g_ij(x, v) = half the fiber Hessian of F² at (x, v); v must be nonzero."""
    v = np.asarray(v, float)
    if not np.any(v):
        raise ModelError("fundamental tensor is undefined on the zero section")
    x = np.asarray(x, float)
    g = np.empty((M.dim, M.dim))
    gx = M.g_exprs()
    bind = M.bindings(x, v)
    for i in range(M.dim):
        for j in range(i, M.dim):
            g[i, j] = g[j, i] = E.evaluate(gx[i][j], bind)
    return FundamentalTensorSample(tuple(x), tuple(v), g, float(np.linalg.eigvalsh(g)[0]))


def _probe_rows(M: FinslerModel, samples: int, seed: int):
    """Sampled (x, v) rows: axis directions at the box center first, then
    random interior points with +/- unit vectors (asymmetric norms see both)."""
    rng = _rng(seed)
    n = M.dim
    xc = M.box_center()
    axes = np.vstack([np.eye(n), -np.eye(n)])
    X = [np.tile(xc, (2 * n, 1)), ]
    V = [axes]
    if samples > 0:
        Xr = M.sample_points(rng, samples)
        Vr = _unit_rows(rng, samples, n)
        X += [Xr, Xr]
        V += [Vr, -Vr]
    return np.vstack(X), np.vstack(V)


def _surface_batch_error(M, X, V, rows):
    # re-run the first offending row strictly so the error names the subexpression
    i = int(rows[0])
    E.evaluate(M.F2_expr, M.bindings(X[i], V[i]))
    for row in M.g_exprs():
        for e in row:
            E.evaluate(e, M.bindings(X[i], V[i]))
    raise ModelError("non-finite evaluation that strict evaluation did not reproduce")


def strong_convexity_check(M: FinslerModel, samples: int = 200, seed: int = 0) -> CheckResult:
    """Minimum eigenvalue of g over sampled (x, v); pass iff > 1e-9."""
    if samples < 1:
        raise ModelError("samples must be >= 1")
    X, V = _probe_rows(M, samples, seed)
    g = M.g_batch(X, V)
    bad = np.where(~np.isfinite(g).all(axis=(1, 2)))[0]
    if bad.size:
        _surface_batch_error(M, X, V, bad)
    eigs = np.linalg.eigvalsh(g)[:, 0]
    k = int(np.argmin(eigs))
    return CheckResult(
        name="strong_convexity",
        value=float(eigs[k]),
        tolerance=CONVEXITY_TOL,
        passed=bool(eigs[k] > CONVEXITY_TOL),
        witness=(tuple(X[k]), tuple(V[k])),
    )


def homogeneity_check(M: FinslerModel, samples: int = 200, seed: int = 0) -> CheckResult:
    """Max relative deviation of F(x, lam*v) from lam*F(x, v), lam in {0.5, 2, 7}."""
    X, V = _probe_rows(M, samples, seed)
    F1 = M.F_batch(X, V)
    worst = 0.0
    witness = None
    for lam in (0.5, 2.0, 7.0):
        Fl = M.F_batch(X, lam * V)
        dev = np.abs(Fl - lam * F1) / np.maximum(lam * np.abs(F1), 1e-300)
        k = int(np.argmax(dev))
        if dev[k] > worst:
            worst = float(dev[k])
            witness = (tuple(X[k]), tuple(V[k]), lam)
    return CheckResult("homogeneity", worst, HOMOGENEITY_TOL, worst <= HOMOGENEITY_TOL, witness)


def positivity_check(M: FinslerModel, samples: int = 200, seed: int = 0) -> CheckResult:
    """F(x, v) > 0 for sampled v != 0 (evaluates F itself, not sqrt(F²))."""
    X, V = _probe_rows(M, samples, seed)
    worst = math.inf
    witness = None
    for i in range(X.shape[0]):
        val = M.F_value(X[i], V[i])
        if val < worst:
            worst = val
            witness = (tuple(X[i]), tuple(V[i]))
    return CheckResult("positivity", worst, 0.0, worst > 0.0, witness)


def make_product_norm(G: E.Expr, flat_dim: int, factors, *, flat_box=None, name="") -> FinslerModel:
    """Compose F(v0, v1, ..., vm) = G(v0, F1(v1), ..., Fm(vm)).

    ``G`` is an expression in fiber symbols v1..v(k+m): the first k slots are
    the flat directions, slot k+j receives the j-th factor norm. G must be
    positively 1-homogeneous and symmetric under sign flip of each factor
    slot (checked by sampling); factor charts are appended after the flat
    block, with symbol indices shifted.
    """
    factors = list(factors)
    k, m = flat_dim, len(factors)
    if m == 0 and k == 0:
        raise ModelError("product needs a flat block or at least one factor")
    slots = k + m
    extra = E.free_symbols(G) - {f"v{i}" for i in range(1, slots + 1)}
    if extra:
        raise ModelError(f"G must use fiber symbols v1..v{slots} only; found {sorted(extra)}")
    rng = _rng(987654321)
    U = _unit_rows(rng, 32, slots)
    Z = np.zeros((32, slots))
    gprog = E.ExprProgram([G], slots)
    base = gprog.run_batch(Z, U)[:, 0]
    for lam in (0.5, 2.0):
        scaled = gprog.run_batch(Z, lam * U)[:, 0]
        if np.max(np.abs(scaled - lam * base) / np.maximum(lam * np.abs(base), 1e-300)) > 1e-8:
            raise ModelError("G is not positively 1-homogeneous")
    for j in range(m):
        flipped = U.copy()
        flipped[:, k + j] *= -1.0
        vals = gprog.run_batch(Z, flipped)[:, 0]
        if np.max(np.abs(vals - base)) > 1e-10 * max(1.0, np.max(np.abs(base))):
            raise ModelError(f"G is not symmetric under sign flip of factor slot {j + 1}")

    mapping = {}
    boxes = list(flat_box) if flat_box is not None else [(-1.0, 1.0)] * k
    params: dict = {}
    offset = k
    for j, fac in enumerate(factors):
        shift = {}
        for i in range(1, fac.dim + 1):
            shift[f"x{i}"] = E.xvar(offset + i)
            shift[f"v{i}"] = E.vvar(offset + i)
        F2_shifted = E.substitute(fac.F2_expr, shift)
        mapping[f"v{k + j + 1}"] = E.power(F2_shifted, E.const(0.5))
        boxes.extend(fac.chart_box)
        for pname, pval in fac.params.items():
            if pname in params and params[pname] != pval:
                raise ModelError(f"conflicting values for parameter '{pname}' across factors")
            params[pname] = pval
        offset += fac.dim
    composed = E.substitute(G, mapping)
    return FinslerModel(
        offset,
        "product",
        composed,
        chart_box=boxes,
        params=params,
        factors=factors,
        flat_dim=k,
        G=G,
        name=name or "product",
    )


def product_blocks(P: FinslerModel):
    """Coordinate index ranges (start, stop) for the flat block and each factor."""
    if P.kind != "product":
        raise ModelError("not a product model")
    blocks = []
    if P.flat_dim:
        blocks.append((0, P.flat_dim))
    offset = P.flat_dim
    for fac in P.factors:
        blocks.append((offset, offset + fac.dim))
        offset += fac.dim
    return blocks


def bh_density(M: FinslerModel, x, samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> DensityEstimate:
    """Busemann-Hausdorff density: Lebesgue volume of the Euclidean unit
    ball divided by the volume of {v : F(x, v) < 1}, by rejection sampling.

    The hit counter is an exact integer sum, so the reduction order cannot
    perturb the estimate.
    """
    n = M.dim
    x = np.asarray(x, float)
    rng = _rng(seed)
    dirs = np.vstack([np.eye(n), -np.eye(n), _unit_rows(rng, 512, n)])
    Xd = np.tile(x, (dirs.shape[0], 1))
    Fd = M.F_batch(Xd, dirs)
    if not np.all(np.isfinite(Fd)) or Fd.min() <= 1e-9:
        raise ModelError("degenerate norm: unit ball is unbounded in some direction")
    R = 1.05 / Fd.min()
    pts = rng.uniform(-R, R, size=(samples, n))
    Fp = M.F_batch(np.tile(x, (samples, 1)), pts)
    hits = int(np.count_nonzero(Fp < 1.0))
    if hits == 0:
        raise ModelError("degenerate norm: unit ball volume estimate is zero")
    p = hits / samples
    box_vol = (2.0 * R) ** n
    ball_vol = box_vol * p
    eucl = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
    sigma = eucl / ball_vol
    se = sigma * math.sqrt(max(1.0 - p, 0.0) / (p * samples))
    return DensityEstimate(sigma, se, samples, hits, R)


def product_distance(P: FinslerModel, a, b, factor_distances) -> float:
    """Distance on a metric product: G(y0 - x0, d_1, ..., d_m) where the d_j
    are the factor distances supplied by the caller."""
    if P.kind != "product":
        raise ModelError("product_distance requires a product model")
    k, m = P.flat_dim, len(P.factors)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != (P.dim,) or b.shape != (P.dim,):
        raise ModelError("endpoints must be full product-chart points")
    dists = [float(d) for d in factor_distances]
    if len(dists) != m:
        raise ModelError("need one factor distance per factor")
    if any(d < 0 for d in dists):
        raise ModelError("factor distances must be nonnegative")
    bind = {}
    for i in range(k):
        bind[f"v{i + 1}"] = b[i] - a[i]
    for j, d in enumerate(dists):
        bind[f"v{k + j + 1}"] = d
    return E.evaluate(P.G, bind)


def validate_model(M: FinslerModel, samples: int = 200, seed: int = 0) -> ValidationReport:
    """Homogeneity, positivity and strong convexity, plus kind-specific checks."""
    checks = [
        homogeneity_check(M, samples, seed),
        positivity_check(M, samples, seed),
        strong_convexity_check(M, samples, seed),
    ]
    if M.kind == "randers":
        sup = _randers_beta_sup(M, samples, seed)
        checks.append(CheckResult("randers_beta_bound", sup, 0.99, sup < 0.99))
    return ValidationReport(M.name, tuple(checks), all(c.passed for c in checks))


def _randers_beta_sup(M: FinslerModel, samples: int, seed: int) -> float:
    rng = _rng(seed)
    n = M.dim
    X = M.sample_points(rng, max(samples, 64))
    Z = np.zeros_like(X)
    aprog = M.program("alpha", [M.alpha[i][j] for i in range(n) for j in range(n)])
    bprog = M.program("beta", list(M.beta))
    A = aprog.run_batch(X, Z).reshape(-1, n, n)
    b = bprog.run_batch(X, Z)
    bn2 = np.einsum("pi,pi->p", b, np.linalg.solve(A, b[:, :, None])[:, :, 0])
    return float(np.sqrt(bn2.max()))
