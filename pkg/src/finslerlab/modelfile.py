"""Model files: TOML documents declaring a chart, a norm, an optional
measure weight and named parameters.

Sections::

    name = "sphere"            # optional; defaults to the file stem
    [chart]
    dim = 2
    box = [[0.3, 2.84], [-6.4, 6.4]]
    [norm]
    kind = "riemannian"        # riemannian | minkowski | randers | raw | product
    metric = [["1", "0"], ["0", "sin(x1)^2"]]
    [measure]                  # optional: psi = "x1^2"  or  density = "exp(-x1^2)"
    [params]                   # optional named constants usable in expressions

Kind-specific [norm] keys: ``metric`` (riemannian), ``F2`` (minkowski, fiber
only), ``alpha``/``beta`` (randers), ``F`` (raw), and for products ``G``
(expression in fiber slots v1..v(k+m): first k flat, then one slot per factor
norm), ``flat_dim``, ``factors`` (gallery names or file paths), optional
``flat_box``.
"""

from __future__ import annotations

import hashlib
import importlib.resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import expr as E
from .norms import FinslerModel, ModelError, make_product_norm

GALLERY = (
    "flat",
    "sphere",
    "hyperbolic",
    "quartic_minkowski",
    "quartic_product",
    "randers",
    "riemannian_product",
)


def gallery_text(name: str) -> str:
    resource = importlib.resources.files("finslerlab") / "models" / f"{name}.model"
    return resource.read_text(encoding="utf-8")


def load_gallery(name: str) -> FinslerModel:
    if name not in GALLERY:
        raise ModelError(f"unknown gallery model '{name}'; available: {', '.join(GALLERY)}")
    return parse_model_text(gallery_text(name), name=name)


def load_model(spec: str) -> FinslerModel:
    """Load from a gallery name ('sphere') or a filesystem path ('foo.model')."""
    if spec in GALLERY:
        return load_gallery(spec)
    path = Path(spec)
    if not path.exists():
        raise ModelError(f"model '{spec}' is neither a gallery name nor an existing file")
    return parse_model_text(path.read_text(encoding="utf-8"), name=path.stem,
                            base_dir=path.parent)


def parse_model_text(text: str, *, name: str | None = None, base_dir: Path | None = None) -> FinslerModel:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ModelError(f"model file is not valid TOML: {err}")
    chart = doc.get("chart")
    norm = doc.get("norm")
    if not isinstance(chart, dict) or not isinstance(norm, dict):
        raise ModelError("model file needs [chart] and [norm] sections")
    dim = chart.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise ModelError("[chart] dim must be a positive integer")
    box = chart.get("box")
    params = doc.get("params", {})
    for key, val in params.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ModelError(f"[params] {key} must be a number")
    params = {k: float(v) for k, v in params.items()}
    pnames = tuple(params)
    model_name = doc.get("name") or name or "model"

    kind = norm.get("kind")
    if kind == "product":
        # box and dim come from the flat block plus the factor charts
        model = _build_product(norm, params, pnames, base_dir, model_name)
        if model.dim != dim:
            raise ModelError(f"[chart] dim {dim} does not match composed dimension {model.dim}")
    else:
        if box is None:
            if kind != "minkowski":
                raise ModelError("[chart] box is required for position-dependent norms")
            box = [[-1.0, 1.0]] * dim
        box = _parse_box(box, dim)
        model = _build_simple(kind, norm, dim, box, params, pnames, model_name)

    measure = doc.get("measure")
    if measure:
        model.weight = _parse_measure(measure, model.dim, pnames)
    return model


def _parse_box(box, dim):
    if not isinstance(box, list) or len(box) != dim:
        raise ModelError("[chart] box must list one [lo, hi] pair per coordinate")
    out = []
    for pair in box:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ModelError("each box entry must be a [lo, hi] pair")
        out.append((float(pair[0]), float(pair[1])))
    return tuple(out)


def _parse_expr(src, dim, pnames, what):
    if not isinstance(src, str):
        raise ModelError(f"{what} must be an expression string")
    try:
        return E.parse_expression(src, dim, pnames)
    except E.ParseError as err:
        d = err.diagnostic
        raise ModelError(f"{what}: parse error at offset {d.offset}: {d.message}")


def _parse_matrix(rows, dim, pnames, what):
    if not (isinstance(rows, list) and len(rows) == dim):
        raise ModelError(f"{what} must be a {dim}x{dim} matrix of expression strings")
    out = []
    for r, row in enumerate(rows):
        if not (isinstance(row, list) and len(row) == dim):
            raise ModelError(f"{what} row {r + 1} must have {dim} entries")
        out.append([_parse_expr(s, dim, pnames, f"{what}[{r + 1}]") for s in row])
    for i in range(dim):
        for j in range(i):
            if out[i][j] is not out[j][i]:
                raise ModelError(f"{what} must be symmetric; entries ({i + 1},{j + 1}) differ")
    return out


def _build_simple(kind, norm, dim, box, params, pnames, name):
    if kind == "riemannian":
        entries = _parse_matrix(norm.get("metric"), dim, pnames, "metric")
        return FinslerModel.riemannian(entries, dim, box, params=params, name=name)
    if kind == "minkowski":
        F2 = _parse_expr(norm.get("F2"), dim, pnames, "F2")
        return FinslerModel.minkowski(F2, dim, chart_box=box, params=params, name=name)
    if kind == "randers":
        alpha = _parse_matrix(norm.get("alpha"), dim, pnames, "alpha")
        beta_src = norm.get("beta")
        if not (isinstance(beta_src, list) and len(beta_src) == dim):
            raise ModelError("beta must list one expression per coordinate")
        beta = [_parse_expr(s, dim, pnames, "beta") for s in beta_src]
        return FinslerModel.randers(alpha, beta, dim, box, params=params, name=name)
    if kind == "raw":
        F = _parse_expr(norm.get("F"), dim, pnames, "F")
        return FinslerModel.raw(F, dim, box, params=params, name=name)
    raise ModelError(f"unknown norm kind '{kind}'")


def _build_product(norm, params, pnames, base_dir, name):
    flat_dim = norm.get("flat_dim", 0)
    if not isinstance(flat_dim, int) or flat_dim < 0:
        raise ModelError("flat_dim must be a nonnegative integer")
    factor_specs = norm.get("factors", [])
    factors = []
    for spec in factor_specs:
        if spec in GALLERY:
            factors.append(load_gallery(spec))
        else:
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ModelError(f"factor model '{spec}' not found")
            factors.append(load_model(str(path)))
    slots = flat_dim + len(factors)
    G = _parse_expr(norm.get("G"), slots, pnames, "G")
    flat_box = None
    if "flat_box" in norm:
        flat_box = _parse_box(norm["flat_box"], flat_dim)
    model = make_product_norm(G, flat_dim, factors, flat_box=flat_box, name=name)
    model.params.update(params)
    return model


def _parse_measure(measure, dim, pnames):
    if "psi" in measure and "density" in measure:
        raise ModelError("[measure] takes either psi or density, not both")
    xonly = {f"x{i}" for i in range(1, dim + 1)} | set(pnames)
    if "psi" in measure:
        psi = _parse_expr(measure["psi"], dim, pnames, "psi")
    elif "density" in measure:
        rho = _parse_expr(measure["density"], dim, pnames, "density")
        psi = E.neg(E.call("log", rho))
    else:
        raise ModelError("[measure] needs a psi or density key")
    extra = E.free_symbols(psi) - xonly
    if extra:
        raise ModelError(f"measure weight must depend on positions only; found {sorted(extra)}")
    return psi


# ---------------------------------------------------------------------------
# hashing


def canonical_serialization(M: FinslerModel) -> str:
    lines = [
        f"kind={M.kind}",
        f"dim={M.dim}",
        f"box={[list(b) for b in M.chart_box]!r}",
        f"F={E.to_string(M.F_expr)}",
        f"params={sorted(M.params.items())!r}",
        f"weight={E.to_string(M.weight) if M.weight is not None else None}",
    ]
    if M.kind == "product":
        lines.append(f"flat_dim={M.flat_dim}")
        lines.append(f"G={E.to_string(M.G)}")
    return "\n".join(lines)


def model_hash(M: FinslerModel) -> str:
    return hashlib.sha256(canonical_serialization(M).encode("utf-8")).hexdigest()[:16]
