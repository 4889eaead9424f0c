"""Holonomy layer.

Samples parallel-transport matrices around closed chart loops, averages the
fundamental tensor over the indicatrix into a Riemannian metric with the
same connection, splits the tangent space into holonomy-invariant subspaces,
and tests fiber functions for transport invariance.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import expr as E
from .connection import ConnectionField, connection, curve_from_samples, transport_matrix
from .norms import FinslerModel, ModelError, _rng, _unit_rows

FLAT_TOL = 1e-6
INVARIANT_TOL = 1e-6
_DET_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# holonomy sampling


@dataclass(frozen=True)
class HolonomyBundle:
    """Transport matrices around chart loops anchored at one base point."""

    x: tuple
    model: FinslerModel
    loops: tuple      # per loop: (scale, u, w, a, b) parallelogram data
    matrices: tuple   # direct loop transports
    products: tuple   # pairwise composition samples (group closure)

    @property
    def all_matrices(self):
        return self.matrices + self.products

    @property
    def dim(self) -> int:
        return len(self.x)

    def norm_preservation(self, vectors: int = 50, seed: int = 0) -> float:
        """Worst relative change of F under the sampled transports."""
        x = np.array(self.x)
        rng = _rng(seed)
        V = rng.standard_normal((vectors, self.dim))
        worst = 0.0
        for P in self.all_matrices:
            for v in V:
                f = self.model.F_value(x, v)
                worst = max(worst, abs(self.model.F_value(x, P @ v) - f) / f)
        return worst

    def to_report(self) -> dict:
        dets = [float(np.linalg.det(P)) for P in self.all_matrices]
        return {
            "x": list(self.x),
            "loop_count": len(self.matrices),
            "product_count": len(self.products),
            "scales": sorted({round(s, 12) for s, *_ in self.loops}),
            "min_abs_det": min(abs(d) for d in dets),
            "max_identity_distance": float(
                max(np.abs(P - np.eye(self.dim)).max() for P in self.all_matrices)
            ),
        }

    def matrices_to_csv(self, path):
        n = self.dim
        cols = ["loop"] + [f"P{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for k, P in enumerate(self.all_matrices):
                fh.write(",".join([str(k)] + [repr(float(c)) for c in P.ravel()]) + "\n")


def _plaquette_transport(C: ConnectionField, x, u, w, a, b):
    """Transport around the parallelogram x → x+au → x+au+bw → x+bw → x
    (chart-straight sides; any closed loop yields a holonomy element)."""
    corners = [x, x + a * u, x + a * u + b * w, x + b * w, x]
    P = np.eye(C.dim)
    for start, end in zip(corners[:-1], corners[1:]):
        vel = end - start
        seg = curve_from_samples(C.model, np.array([0.0, 1.0]),
                                 np.vstack([start, end]), np.vstack([vel, vel]))
        P = transport_matrix(C, seg) @ P
    return P


def holonomy_samples(C: ConnectionField, x, loop_count: int = 12,
                     loop_scale=(0.1, 0.3, 0.6), seed: int = 0) -> HolonomyBundle:
    """Sample loop transports at x over the given scales (fractions of the
    chart size), plus pairwise products of the sampled matrices."""
    n = C.dim
    if n < 2:
        raise ModelError("holonomy loops need at least a 2-dimensional chart")
    if loop_count < 1:
        raise ModelError("loop_count must be >= 1")
    x = np.asarray(x, float)
    box = C.model.chart_box
    span = np.array([hi - lo for lo, hi in box])
    room = np.minimum([x[i] - box[i][0] for i in range(n)],
                      [box[i][1] - x[i] for i in range(n)])
    if np.any(room <= 0):
        raise ModelError("holonomy base point must lie inside the chart box")
    scales = tuple(loop_scale) if np.iterable(loop_scale) else (float(loop_scale),)
    rng = _rng(seed)
    loops = []
    matrices = []
    for k in range(loop_count):
        scale = scales[k % len(scales)]
        while True:
            u, w = _unit_rows(rng, 2, n)
            cross = np.linalg.norm(np.outer(u, w) - np.outer(w, u)) / math.sqrt(2.0)
            if cross > 0.1:  # skip nearly collinear direction pairs
                break
        a = scale * span.min() * rng.uniform(0.6, 1.0)
        b = scale * span.min() * rng.uniform(0.6, 1.0)
        # shrink both sides together until every corner stays inside
        shrink = 1.0
        for d in (a * u, a * u + b * w, b * w):
            with np.errstate(divide="ignore"):
                f = np.where(np.abs(d) > 0, 0.95 * room / np.abs(d), np.inf)
            shrink = min(shrink, float(f.min()))
        a *= shrink
        b *= shrink
        P = _plaquette_transport(C, x, u, w, a, b)
        if abs(np.linalg.det(P)) <= _DET_FLOOR:
            raise ModelError(f"loop {k}: transport matrix is numerically singular")
        loops.append((float(scale), tuple(u), tuple(w), float(a), float(b)))
        matrices.append(P)
    products = []
    for _ in range(loop_count):
        i, j = rng.integers(0, loop_count, 2)
        products.append(matrices[i] @ matrices[j])
    return HolonomyBundle(tuple(float(c) for c in x), C.model,
                          tuple(loops), tuple(matrices), tuple(products))


def rotation_angle(P, h) -> float:
    """Rotation angle of a 2×2 transport in an h-orthonormal frame."""
    if P.shape != (2, 2):
        raise ModelError("rotation angle is defined for 2-dimensional charts")
    L = np.linalg.cholesky(h)
    R = L.T @ P @ np.linalg.inv(L.T)
    return math.atan2(R[1, 0], R[0, 0])


# ---------------------------------------------------------------------------
# indicatrix averaging


def _sphere_rule(n: int, resolution, seed: int):
    """Unit directions and weights for averaging over S^(n-1): exact in 1D,
    spectrally convergent product rules in 2D/3D, Monte Carlo above."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    if n == 2:
        N = int(resolution or 256)
        phi = 2.0 * np.pi * np.arange(N) / N
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(N, 1.0 / N)
    if n == 3:
        if resolution is None:
            Nt, Np = 48, 96
        else:
            Nt, Np = resolution
        mu, wmu = np.polynomial.legendre.leggauss(int(Nt))
        phi = 2.0 * np.pi * np.arange(int(Np)) / int(Np)
        st = np.sqrt(1.0 - mu ** 2)
        U = np.empty((int(Nt) * int(Np), 3))
        Wq = np.empty(int(Nt) * int(Np))
        k = 0
        for i in range(int(Nt)):
            for j in range(int(Np)):
                U[k] = (st[i] * np.cos(phi[j]), st[i] * np.sin(phi[j]), mu[i])
                Wq[k] = wmu[i] / int(Np) / 2.0
                k += 1
        return U, Wq
    N = int(resolution or 4096)
    return _unit_rows(_rng(seed + 101), N, n), np.full(N, 1.0 / N)


def _halved(resolution, n):
    if n == 2:
        return (resolution or 256) // 2
    if n == 3:
        Nt, Np = resolution or (48, 96)
        return (Nt // 2, Np // 2)
    return (resolution or 4096) // 2


class SzaboMetric:
    """Riemannian metric h_ij(x): the fundamental tensor averaged over the
    indicatrix {F(x,·)=1} with the cone measure (radial pushforward of
    Lebesgue measure on the unit F-ball).

    In polar form h is a ratio of direction integrals weighted by F^(-n);
    x-derivatives pass under the quadrature sum node by node, so the
    Levi-Civita connection of h is available without finite differencing.
    """

    def __init__(self, model: FinslerModel, probes=10, *, resolution=None, seed: int = 0):
        C = connection(model)
        if not C.is_berwald:
            raise ModelError(
                "indicatrix averaging yields an affine metric only for "
                f"fiber-independent connections; max deviation {C.berwald_deviation:.2e}")
        self.model = model
        n = model.dim
        self._nodes, self._weights = _sphere_rule(n, resolution, seed)
        coarse = _sphere_rule(n, _halved(resolution, n), seed)
        self._coarse_nodes, self._coarse_weights = coarse
        self._upper = [(i, j) for i in range(n) for j in range(i, n)]
        if np.isscalar(probes) or isinstance(probes, int):
            X = model.sample_points(_rng(seed), int(probes))
        else:
            X = np.atleast_2d(np.asarray(probes, float))
        self.probes = X
        h_vals = np.stack([self.h(x) for x in X])
        for p, hp in enumerate(h_vals):
            eig = np.linalg.eigvalsh(hp)
            if eig[0] <= 1e-9:
                raise ModelError(f"averaged metric not positive definite at probe {p}")
        self.h_values = h_vals
        coarse_vals = np.stack([self._h_at(x, *coarse) for x in X])
        self.quadrature_error = float(np.abs(h_vals - coarse_vals).max())

    # -- pipelines ----------------------------------------------------------

    def _program(self):
        M = self.model
        n = M.dim
        g = M.g_exprs()
        z = E.power(M.F2_expr, E.const(-n / 2.0))
        roots = [E.mul(g[i][j], z) for i, j in self._upper] + [z]
        base = list(roots)
        for k in range(n):
            roots += [E.differentiate(e, f"x{k + 1}") for e in base]
        return M.program("szabo_avg", roots)

    def _batch(self, x, nodes):
        X = np.tile(np.asarray(x, float), (len(nodes), 1))
        return self._program().run_batch(X, nodes)

    def _assemble(self, sums):
        n = self.model.dim
        m = len(self._upper)
        A = np.empty((n, n))
        for col, (i, j) in enumerate(self._upper):
            A[i, j] = A[j, i] = sums[col]
        return A / sums[m]

    def _h_at(self, x, nodes, weights):
        vals = self._batch(x, nodes)
        m = len(self._upper)
        sums = weights @ vals[:, : m + 1]
        return self._assemble(np.concatenate([sums[:m], [sums[m]]]))

    # -- evaluation ---------------------------------------------------------

    def h(self, x) -> np.ndarray:
        return self._h_at(x, self._nodes, self._weights)

    def dh(self, x) -> np.ndarray:
        """∂_k h_ij as array D[k, i, j]."""
        n = self.model.dim
        m = len(self._upper)
        vals = self._batch(x, self._nodes)
        sums = self._weights @ vals
        Z = sums[m]
        h = self._assemble(sums[: m + 1])
        D = np.empty((n, n, n))
        for k in range(n):
            off = (m + 1) * (k + 1)
            dZ = sums[off + m]
            for col, (i, j) in enumerate(self._upper):
                D[k, i, j] = D[k, j, i] = (sums[off + col] - h[i, j] * dZ) / Z
        return D

    def christoffel(self, x) -> np.ndarray:
        """Levi-Civita coefficients of the averaged metric at x."""
        h = self.h(x)
        D = self.dh(x)
        hinv = np.linalg.inv(h)
        # Γ^k_ij = ½ h^{km} (∂_i h_mj + ∂_j h_mi − ∂_m h_ij), with D[k] = ∂_k h
        W = D + D.transpose(2, 1, 0) - D.transpose(1, 0, 2)
        return 0.5 * np.einsum("km,imj->kij", hinv, W)

    def connection_match(self) -> float:
        """Worst gap between the Levi-Civita coefficients of the averaged
        metric and the model's own connection, over the stored probes."""
        C = connection(self.model)
        vref = np.ones(self.model.dim)
        worst = 0.0
        for x in self.probes:
            worst = max(worst, float(np.abs(self.christoffel(x) - C.gamma(x, vref)).max()))
        return worst

    def to_report(self) -> dict:
        return {
            "model": self.model.name,
            "probes": self.probes.tolist(),
            "h": self.h_values.tolist(),
            "quadrature_error": self.quadrature_error,
            "quadrature_nodes": int(len(self._nodes)),
        }


def szabo_metrize(M: FinslerModel, probes=10, *, resolution=None, seed: int = 0) -> SzaboMetric:
    return SzaboMetric(M, probes, resolution=resolution, seed=seed)


# ---------------------------------------------------------------------------
# invariant subspace splitting


@dataclass(frozen=True)
class SplitResult:
    subspaces: tuple      # h-orthonormal basis matrices (n, d_k), original coords
    flat_flags: tuple     # restricted holonomy ≈ identity per subspace
    residual: float       # worst commutator norm among the kept commutant basis
    commutant_dim: int

    @property
    def dimensions(self):
        return tuple(B.shape[1] for B in self.subspaces)

    def to_report(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "flat_flags": list(self.flat_flags),
            "residual": self.residual,
            "commutant_dim": self.commutant_dim,
            "subspaces": [B.tolist() for B in self.subspaces],
        }


def _sym_basis(n):
    out = []
    for i in range(n):
        for j in range(i, n):
            B = np.zeros((n, n))
            if i == j:
                B[i, i] = 1.0
            else:
                B[i, j] = B[j, i] = math.sqrt(0.5)
            out.append(B)
    return out


def _cluster(eigs, gap_tol):
    groups = [[0]]
    for k in range(1, len(eigs)):
        if eigs[k] - eigs[k - 1] > gap_tol:
            groups.append([])
        groups[-1].append(k)
    return groups


def de_rham_split(H: HolonomyBundle, h: SzaboMetric, seed: int = 0) -> SplitResult:
    """Split the tangent space at H.x into holonomy-invariant, pairwise
    h-orthogonal subspaces.

    Works in an h-orthonormal frame where transports are near-orthogonal:
    solves for the symmetric commutant of the sampled matrices, then takes
    eigenspaces of a generic commutant element.
    """
    mats = H.all_matrices
    if len(mats) < 10:
        raise ModelError("need at least 10 holonomy samples to split")
    n = H.dim
    hm = h.h(np.array(H.x))
    L = np.linalg.cholesky(hm)
    Linv_T = np.linalg.inv(L.T)
    Q = [L.T @ P @ Linv_T for P in mats]
    basis = _sym_basis(n)
    cols = []
    for B in basis:
        cols.append(np.concatenate([(B @ q - q @ B).ravel() for q in Q]))
    K = np.column_stack(cols)
    s = np.linalg.svd(K, compute_uv=False)
    Vt = np.linalg.svd(K)[2]
    tol = 1e-7 * max(1.0, s[0])
    null = s < tol
    kept = s[~null]
    if kept.size and s[null].size:
        floor = max(float(s[null].max()), 1e-300)
        if float(kept.min()) / floor < 100.0:
            raise ModelError(
                "ill-conditioned commutant: singular values have no clear gap "
                f"(condition {s[0] / max(s[-1], 1e-300):.2e})")
    d = int(null.sum())
    commutant = []
    for row in Vt[len(s) - d:]:
        S = sum(c * B for c, B in zip(row, basis))
        commutant.append(S)
    residual = float(s[null].max()) if d else 0.0

    # pick the commutant element whose spectrum separates best
    rng = _rng(seed)
    best = None
    for trial in range(8):
        coeff = rng.standard_normal(d)
        S = sum(c * B for c, B in zip(coeff, commutant))
        S = S / max(np.abs(S).max(), 1e-300)
        eigs, vecs = np.linalg.eigh(S)
        gap_tol = 1e-6 * max(1.0, eigs[-1] - eigs[0])
        groups = _cluster(eigs, gap_tol)
        gaps = [eigs[g2[0]] - eigs[g1[-1]] for g1, g2 in zip(groups, groups[1:])]
        score = (len(groups), min(gaps) if gaps else 0.0)
        if best is None or score > best[0]:
            best = (score, groups, vecs)
    _, groups, vecs = best

    subspaces = []
    flat_flags = []
    for g in groups:
        frame_basis = vecs[:, g]                      # orthonormal in the frame
        restricted = [frame_basis.T @ q @ frame_basis for q in Q]
        flat = all(np.abs(r - np.eye(len(g))).max() <= FLAT_TOL for r in restricted)
        subspaces.append(Linv_T @ frame_basis)        # h-orthonormal, chart coords
        flat_flags.append(bool(flat))
    return SplitResult(tuple(subspaces), tuple(flat_flags), residual, d)


# ---------------------------------------------------------------------------
# invariant fiber functions


@dataclass(frozen=True)
class InvariantFunctionReport:
    invariant: bool
    radial: bool
    max_deviation: float       # worst |G(Pv) − G(v)| over loops and vectors
    indicatrix_spread: float   # worst spread of G over F-unit vectors
    witness: tuple | None      # (loop index, v, G(v), G(Pv)) when not invariant

    def to_report(self) -> dict:
        rep = {
            "invariant": self.invariant,
            "radial": self.radial,
            "max_deviation": self.max_deviation,
            "indicatrix_spread": self.indicatrix_spread,
        }
        if self.witness is not None:
            k, v, gv, gpv = self.witness
            rep["witness"] = {"loop": k, "v": list(v), "G(v)": gv, "G(Pv)": gpv}
        return rep


def invariant_function_test(Gfun: E.Expr, M: FinslerModel, H: HolonomyBundle,
                            samples: int = 50, seed: int = 0) -> InvariantFunctionReport:
    """Is the fiber function G invariant under the sampled holonomy, and if
    so, is it constant on the indicatrix (G = φ∘F)?"""
    n = M.dim
    allowed = set(M.params) | {f"v{i}" for i in range(1, n + 1)} \
        | {f"x{i}" for i in range(1, n + 1)}
    extra = E.free_symbols(Gfun) - allowed
    if extra:
        raise ModelError(f"unknown symbols in fiber function: {sorted(extra)}")
    x = np.array(H.x)  # x-symbols are frozen at the bundle's base point

    def geval(v):
        return E.evaluate(Gfun, M.bindings(x, v))

    rng = _rng(seed)
    V = _unit_rows(rng, samples, n) * rng.uniform(0.5, 2.0, size=(samples, 1))
    max_dev = 0.0
    witness = None
    for k, P in enumerate(H.all_matrices):
        for v in V:
            gv = geval(v)
            gpv = geval(P @ v)
            dev = abs(gpv - gv)
            if dev > max_dev:
                max_dev = dev
                if dev > INVARIANT_TOL and witness is None:
                    witness = (k, tuple(v), gv, gpv)
    invariant = max_dev <= INVARIANT_TOL
    unit = np.array([v / M.F_value(x, v) for v in V])
    on_ind = np.array([geval(u) for u in unit])
    spread = float(on_ind.max() - on_ind.min())
    radial = bool(invariant and spread <= INVARIANT_TOL)
    return InvariantFunctionReport(invariant, radial, max_dev, spread,
                                   witness if not invariant else None)
