"""Geodesic spray and Berwald connection: coefficients, Berwald verdict,
Riemannian Christoffel symbols, geodesic integration, parallel transport and
affine-equivalence comparison.

The spray is Gⁱ(x, v) = ¼ gⁱˡ(∂²F²/∂vˡ∂xᵏ vᵏ − ∂F²/∂xˡ); geodesics solve
ẍ = −2G(x, ẋ) and the connection coefficients are Γᵏᵢⱼ = ∂²Gᵏ/∂vⁱ∂vʲ, which
are reference-vector-independent exactly when the model is Berwald.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as E
from . import rk
from .norms import FinslerModel, ModelError, _rng, _unit_rows

BERWALD_TOL = 1e-8
AGREE_TOL = 1e-8
DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
# transport solves run tighter: the linearity budget (1e-9) leaves no room
# for the ~steps * local-tolerance drift of the default setting
TRANSPORT_RTOL = 1e-12
TRANSPORT_ATOL = 1e-13


@dataclass(frozen=True)
class BerwaldReport:
    max_deviation: float
    is_berwald: bool
    probe_points: int
    probe_vectors: int
    witness: tuple | None


@dataclass(frozen=True)
class AgreeReport:
    max_deviation: float
    agree: bool
    probes: int


@dataclass(frozen=True)
class TransportResult:
    X: np.ndarray
    t: np.ndarray
    F_values: np.ndarray


def _det_expr(m):
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return E.sub(E.mul(m[0][0], m[1][1]), E.mul(m[0][1], m[1][0]))
    total = E.const(0.0)
    for j in range(n):
        minor = [[m[r][c] for c in range(n) if c != j] for r in range(1, n)]
        term = E.mul(m[0][j], _det_expr(minor))
        total = E.add(total, term) if j % 2 == 0 else E.sub(total, term)
    return total


def _inverse_exprs(m):
    """Symbolic inverse by adjugate over determinant; fine for chart dims <= 4."""
    n = len(m)
    if n > 4:
        raise ModelError("symbolic metric inversion supports dimension <= 4")
    det = _det_expr(m)
    if n == 1:
        return [[E.div(E.const(1.0), m[0][0])]], det
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[m[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            cof = _det_expr(minor)
            if (i + j) % 2:
                cof = E.neg(cof)
            inv[j][i] = E.div(cof, det)
    return inv, det


class ConnectionField:
    """Symbolic spray/connection pipeline for one model.

    Immutable after construction; numeric evaluators are pure. Obtain via
    :func:`connection` so the pipeline is built once per model.
    """

    def __init__(self, model: FinslerModel):
        self.model = model
        n = model.dim
        self.dim = n
        F2 = model.F2_expr
        dF2dv = [E.differentiate(F2, f"v{l}") for l in range(1, n + 1)]
        W = []
        for l in range(n):
            acc = E.const(0.0)
            for k in range(n):
                mixed = E.differentiate(dF2dv[l], f"x{k + 1}")
                acc = E.add(acc, E.mul(mixed, E.vvar(k + 1)))
            W.append(E.sub(acc, E.differentiate(F2, f"x{l + 1}")))
        g = [list(row) for row in model.g_exprs()]
        ginv, det = _inverse_exprs(g)
        self.det_expr = det
        spray = []
        for i in range(n):
            acc = E.const(0.0)
            for l in range(n):
                acc = E.add(acc, E.mul(ginv[i][l], W[l]))
            spray.append(E.mul(E.const(0.25), acc))
        self.spray_exprs = tuple(spray)
        self.dGdv_exprs = tuple(
            tuple(E.differentiate(spray[i], f"v{k + 1}") for k in range(n)) for i in range(n)
        )
        gamma = [[[None] * n for _ in range(n)] for _ in range(n)]
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    # torsion-free by construction: both slots share one node
                    gamma[k][i][j] = gamma[k][j][i] = E.differentiate(
                        self.dGdv_exprs[k][i], f"v{j + 1}"
                    )
        self.gamma_exprs = gamma
        self._berwald_report = None

    # -- programs -----------------------------------------------------------

    def _spray_program(self):
        return self.model.program("conn_spray", list(self.spray_exprs) + [self.det_expr])

    def _dGdv_program(self):
        roots = [self.dGdv_exprs[i][k] for i in range(self.dim) for k in range(self.dim)]
        return self.model.program("conn_dGdv", roots)

    def _gamma_program(self):
        n = self.dim
        roots = [self.gamma_exprs[k][i][j] for k in range(n) for i in range(n) for j in range(i, n)]
        return self.model.program("conn_gamma", roots)

    # -- numeric evaluation -------------------------------------------------

    def _check_nonzero(self, v):
        v = np.asarray(v, float)
        if not np.any(v):
            raise ModelError("connection data needs a nonzero reference vector")
        return v

    def spray(self, x, v) -> np.ndarray:
        v = self._check_nonzero(v)
        out = np.array(self._spray_program().run_scalar(x, v))
        det = out[-1]
        if not np.isfinite(det) or abs(det) < 1e-14:
            raise ModelError(f"singular fundamental tensor at x={tuple(x)}, v={tuple(v)}")
        G = out[:-1]
        if not np.all(np.isfinite(G)):
            for e in self.spray_exprs:  # surface the precise domain error
                E.evaluate(e, self.model.bindings(x, v))
            raise ModelError("non-finite spray")
        return G

    def dGdv(self, x, v) -> np.ndarray:
        v = self._check_nonzero(v)
        n = self.dim
        return np.array(self._dGdv_program().run_scalar(x, v)).reshape(n, n)

    def gamma(self, x, v) -> np.ndarray:
        return self.gamma_batch(np.asarray(x, float)[None, :], self._check_nonzero(v)[None, :])[0]

    def gamma_batch(self, X, V) -> np.ndarray:
        n = self.dim
        flat = self._gamma_program().run_batch(X, V)
        out = np.empty((flat.shape[0], n, n, n))
        col = 0
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    out[:, k, i, j] = flat[:, col]
                    out[:, k, j, i] = flat[:, col]
                    col += 1
        return out

    # -- berwald verdict ----------------------------------------------------

    @property
    def berwald_report(self) -> BerwaldReport:
        if self._berwald_report is None:
            self._berwald_report = berwald_test(self.model)
        return self._berwald_report

    @property
    def is_berwald(self) -> bool:
        return self.berwald_report.is_berwald

    @property
    def berwald_deviation(self) -> float:
        return self.berwald_report.max_deviation


def connection(M: FinslerModel) -> ConnectionField:
    field = getattr(M, "_connection_field", None)
    if field is None:
        field = ConnectionField(M)
        M._connection_field = field
    return field


def spray_coefficients(M: FinslerModel, x, v) -> np.ndarray:
    return connection(M).spray(x, v)


def berwald_coefficients(M: FinslerModel, x, v) -> np.ndarray:
    return connection(M).gamma(x, v)


def berwald_test(M: FinslerModel, probe_points: int = 20, probe_vectors: int = 6,
                 seed: int = 0) -> BerwaldReport:
    """Max over probe points of the spread of Γ(x, ·) across reference
    vectors; Berwald iff the spread stays below 1e-8."""
    if probe_vectors < 2:
        raise ModelError("berwald_test needs at least 2 probe vectors per point")
    rng = _rng(seed)
    n = M.dim
    C = connection(M)
    X = M.sample_points(rng, probe_points)
    V = np.vstack([np.eye(n), _unit_rows(rng, max(probe_vectors - n, 0), n)])[:probe_vectors]
    rows_x = np.repeat(X, probe_vectors, axis=0)
    rows_v = np.tile(V, (probe_points, 1))
    gam = C.gamma_batch(rows_x, rows_v).reshape(probe_points, probe_vectors, n, n, n)
    spread = gam.max(axis=1) - gam.min(axis=1)
    per_point = spread.reshape(probe_points, -1).max(axis=1)
    worst = int(np.argmax(per_point))
    dev = float(per_point[worst])
    return BerwaldReport(dev, dev <= BERWALD_TOL, probe_points, probe_vectors, tuple(X[worst]))


def _christoffel_exprs(M: FinslerModel):
    cached = getattr(M, "_christoffel_exprs", None)
    if cached is not None:
        return cached
    if M.kind != "riemannian" or M.metric is None:
        raise ModelError("christoffel requires a Riemannian model")
    n = M.dim
    g = [list(row) for row in M.metric]
    ginv, det = _inverse_exprs(g)
    dg = [[[E.differentiate(g[i][j], f"x{k + 1}") for k in range(n)] for j in range(n)] for i in range(n)]
    gamma = [[[None] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                acc = E.const(0.0)
                for m in range(n):
                    inner = E.sub(E.add(dg[m][i][j], dg[m][j][i]), dg[i][j][m])
                    acc = E.add(acc, E.mul(ginv[k][m], inner))
                gamma[k][i][j] = gamma[k][j][i] = E.mul(E.const(0.5), acc)
    M._christoffel_exprs = (gamma, det)
    return gamma, det


def christoffel(M: FinslerModel, x) -> np.ndarray:
    """Levi-Civita Christoffel symbols ½ gᵏᵐ(∂ⱼg_mi + ∂ᵢg_mj − ∂_m g_ij)."""
    gamma, det = _christoffel_exprs(M)
    n = M.dim
    roots = [gamma[k][i][j] for k in range(n) for i in range(n) for j in range(i, n)] + [det]
    prog = M.program("christoffel", roots)
    vals = prog.run_scalar(x, np.zeros(n))
    if not np.isfinite(vals[-1]) or abs(vals[-1]) < 1e-14:
        raise ModelError(f"singular metric at x={tuple(x)}")
    out = np.empty((n, n, n))
    col = 0
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                out[k, i, j] = out[k, j, i] = vals[col]
                col += 1
    return out


def covariant_derivative(C: ConnectionField, X_exprs, V, x) -> np.ndarray:
    """(D_V X)ⁱ = vʲ ∂ⱼXⁱ + Γⁱⱼₖ(x, V) vʲ Xᵏ for a position vector field X."""
    n = C.dim
    V = np.asarray(V, float)
    x = np.asarray(x, float)
    bind = C.model.bindings(x, np.zeros(n))
    Xval = np.array([E.evaluate(e, bind) for e in X_exprs])
    dX = np.array(
        [[E.evaluate(E.differentiate(X_exprs[i], f"x{j + 1}"), bind) for j in range(n)]
         for i in range(n)]
    )
    gam = C.gamma(x, V)
    return dX @ V + np.einsum("ijk,j,k->i", gam, V, Xval)


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurveRecord:
    """A stored curve with velocities: strictly increasing grid, positions
    inside the chart box, per-step F(γ̇), and integrator statistics."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    F_values: np.ndarray
    steps: int
    rejected: int
    max_error_estimate: float
    chart_exit: bool
    _path: rk.HermitePath

    def eval(self, t):
        """Dense (position, velocity) by cubic Hermite between stored steps."""
        y, _ = self._path(t)
        n = self.x.shape[1]
        return y[:n], y[n:]

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def to_csv(self, path):
        n = self.x.shape[1]
        cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["F"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self.t)):
                row = [self.t[i], *self.x[i], *self.v[i], self.F_values[i]]
                fh.write(",".join(repr(float(c)) for c in row) + "\n")


def _inside_box(box, x, slack=0.0):
    return all(lo - slack <= xi <= hi + slack for (lo, hi), xi in zip(box, x))


def curve_from_samples(M: FinslerModel, t, x, v, accel=None) -> CurveRecord:
    """Wrap an explicitly given path (e.g. a coordinate loop edge) as a
    CurveRecord; ``accel`` supplies d²x/dt² for the Hermite velocity channel
    (defaults to zero, exact for segments linear in t)."""
    t = np.asarray(t, float)
    x = np.atleast_2d(np.asarray(x, float))
    v = np.atleast_2d(np.asarray(v, float))
    if np.any(np.diff(t) <= 0):
        raise ModelError("curve grid must be strictly increasing")
    for row in x:
        if not _inside_box(M.chart_box, row, slack=1e-12):
            raise ModelError("curve leaves the chart box")
    a = np.zeros_like(v) if accel is None else np.atleast_2d(np.asarray(accel, float))
    y = np.hstack([x, v])
    f = np.hstack([v, a])
    F = M.F_batch(x, v)
    return CurveRecord(t, x, v, F, len(t) - 1, 0, 0.0, False, rk.HermitePath(t, y, f))


def integrate_geodesic(C: ConnectionField, x0, v0, T: float, *, rtol=DEFAULT_RTOL,
                       atol=DEFAULT_ATOL) -> CurveRecord:
    """Integrate ẍ = −2G(x, ẋ) from (x0, v0) for time T; stops with a
    chart_exit flag if the solution would leave the chart box."""
    M = C.model
    n = C.dim
    x0 = np.asarray(x0, float)
    v0 = np.asarray(v0, float)
    if not _inside_box(M.chart_box, x0):
        raise ModelError("geodesic start lies outside the chart box")
    if not np.any(v0):
        raise ModelError("geodesic needs a nonzero initial velocity")
    prog = C._spray_program()

    def fun(t, y):
        G = prog.run_scalar(y[:n], y[n:])[:-1]
        out = np.empty(2 * n)
        out[:n] = y[n:]
        out[n:] = -2.0 * np.asarray(G)
        return out

    def stop(y):
        return not _inside_box(M.chart_box, y[:n])

    res = rk.integrate(fun, 0.0, np.hstack([x0, v0]), T, rtol=rtol, atol=atol, stop=stop)
    X = res.y[:, :n]
    V = res.y[:, n:]
    F = M.F_batch(X, V)
    return CurveRecord(res.t, X, V, F, res.steps, res.rejected, res.max_error_estimate,
                       not res.reached_end, rk.HermitePath(res.t, res.y, res.f))


def parallel_transport(C: ConnectionField, curve: CurveRecord, X0, *, rtol=TRANSPORT_RTOL,
                       atol=TRANSPORT_ATOL) -> TransportResult:
    """Solve Ẋⁱ + Γⁱⱼₖ(γ, γ̇) γ̇ʲ Xᵏ = 0 along the curve.

    Because ∂Gⁱ/∂vᵏ is 1-homogeneous in v, the contraction Γⁱⱼₖ(γ,γ̇)γ̇ʲ equals
    ∂Gⁱ/∂vᵏ(γ, γ̇), so the right-hand side only needs the spray Jacobian.
    """
    n = C.dim
    prog = C._dGdv_program()

    def fun(t, X):
        xt, vt = curve.eval(t)
        A = np.array(prog.run_scalar(xt, vt)).reshape(n, n)
        return -A @ X

    res = rk.integrate(fun, float(curve.t[0]), np.asarray(X0, float), curve.t_end,
                       rtol=rtol, atol=atol)
    pos = np.array([curve.eval(t)[0] for t in res.t])
    F = C.model.F_batch(pos, res.y)
    return TransportResult(res.y[-1], res.t, F)


def transport_matrix(C: ConnectionField, curve: CurveRecord, *, rtol=TRANSPORT_RTOL,
                     atol=TRANSPORT_ATOL) -> np.ndarray:
    """Full transport operator along the curve (transports all of T_xM at once)."""
    n = C.dim
    prog = C._dGdv_program()

    def fun(t, Y):
        xt, vt = curve.eval(t)
        A = np.array(prog.run_scalar(xt, vt)).reshape(n, n)
        return (-A @ Y.reshape(n, n)).ravel()

    res = rk.integrate(fun, float(curve.t[0]), np.eye(n).ravel(), curve.t_end,
                       rtol=rtol, atol=atol)
    return res.y[-1].reshape(n, n)


def overlap_probes(M1: FinslerModel, M2: FinslerModel, probes: int, seed: int):
    """Seeded (x, v) probes in the overlap of the two chart boxes."""
    if M1.dim != M2.dim:
        raise ModelError("models live on charts of different dimension")
    n = M1.dim
    lo = [max(a[0], b[0]) for a, b in zip(M1.chart_box, M2.chart_box)]
    hi = [min(a[1], b[1]) for a, b in zip(M1.chart_box, M2.chart_box)]
    if any(l >= h for l, h in zip(lo, hi)):
        raise ModelError("chart boxes do not overlap")
    rng = _rng(seed)
    span = np.array(hi) - np.array(lo)
    X = rng.uniform(np.array(lo) + 0.02 * span, np.array(hi) - 0.02 * span, size=(probes, n))
    V = _unit_rows(rng, probes, n)
    return X, V


def connections_agree(M1: FinslerModel, M2: FinslerModel, probes: int = 50,
                      seed: int = 0) -> AgreeReport:
    """Affine-equivalence test: max |Γ₁ − Γ₂| over probes in the overlap of
    the two chart boxes; agree iff ≤ 1e-8."""
    X, V = overlap_probes(M1, M2, probes, seed)
    g1 = connection(M1).gamma_batch(X, V)
    g2 = connection(M2).gamma_batch(X, V)
    dev = float(np.max(np.abs(g1 - g2)))
    return AgreeReport(dev, dev <= AGREE_TOL, probes)
