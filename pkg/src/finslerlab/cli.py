"""Command-line surface.

Each subcommand wraps one module operation and reports per-check results;
no geometry lives here. Exit codes: 0 all checks pass, 1 a check failed,
2 usage or model-loading error.

Numeric modules are imported inside handlers so the FINSLERLAB_THREADS cap
is in place before the BLAS thread pools initialize.
"""

import argparse
import math
import os
import sys
import time

from .reporting import RunCheck, RunReport, write_csv


class UsageError(Exception):
    pass


def _apply_thread_cap():
    cap = os.environ.get("FINSLERLAB_THREADS", "")
    if cap.isdigit() and int(cap) > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _vec(text, n, what):
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers, got '{text}'")
    if n is not None and len(vals) != n:
        raise UsageError(f"{what} needs {n} components, got {len(vals)}")
    return vals


def _parse_N(text):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"--N must be a number or 'inf', got '{text}'")


def _gate(args, name, value, default_tol, note=""):
    tol = args.tol if args.tol is not None else default_tol
    value = float(value)
    return RunCheck(name, value, tol, value <= tol, note)


def _value_check(name, value, note=""):
    return RunCheck(name, value, None, not (isinstance(value, float) and math.isnan(value)),
                    note)


def _info(name, value, note=""):
    return RunCheck(name, value, None, True, note)


# ---------------------------------------------------------------------------
# handlers: each returns (checks, csv_writer or None)


def _fmt_witness(v):
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "(" + ", ".join(_fmt_witness(c) for c in v) + ")"
    return str(v)


def _cmd_validate(args, M):
    from .norms import validate_model
    rep = validate_model(M, samples=args.probes or 200, seed=args.seed)
    checks = [RunCheck(c.name, c.value, c.tolerance, c.passed,
                       f"witness {_fmt_witness(c.witness)}"
                       if not c.passed and c.witness is not None else "")
              for c in rep.checks]
    return checks, None


def _cmd_berwald(args, M):
    from .connection import berwald_test
    rep = berwald_test(M, probe_points=args.probes or 20, seed=args.seed)
    note = "" if rep.is_berwald else "not Berwald"
    return [_gate(args, "berwald_deviation", rep.max_deviation, 1e-8, note)], None


def _cmd_geodesic(args, M):
    import numpy as np
    from .connection import connection, integrate_geodesic
    x = _vec(args.point, M.dim, "--point")
    v = _vec(args.vector, M.dim, "--vector")
    rec = integrate_geodesic(connection(M), x, v, args.time)
    drift = float(np.max(np.abs(rec.F_values - rec.F_values[0])) / rec.F_values[0])
    checks = [
        _gate(args, "speed_drift", drift, 1e-8),
        _info("t_end", rec.t_end),
        _info("chart_exit", rec.chart_exit),
    ]
    return checks, rec.to_csv


def _cmd_transport(args, M):
    from .connection import connection
    from .holonomy import holonomy_samples
    x = _vec(args.point, M.dim, "--point")
    B = holonomy_samples(connection(M), x, loop_count=args.probes or 12, seed=args.seed)
    checks = [
        _gate(args, "norm_preservation", B.norm_preservation(seed=args.seed), 1e-6),
        _info("loops", len(B.all_matrices)),
        _info("min_abs_det", B.to_report()["min_abs_det"]),
    ]
    return checks, B.matrices_to_csv


def _cmd_curvature(args, M):
    from .curvature import curvature_sample
    x = _vec(args.point, M.dim, "--point")
    v = _vec(args.vector, M.dim, "--vector") if args.vector else None
    sample = curvature_sample(M, x, v)
    rep = sample.to_report()
    checks = [
        _gate(args, "antisymmetry_defect", rep["antisymmetry_defect"], 1e-10),
        _gate(args, "bianchi_defect", rep["bianchi_defect"], 1e-9),
    ]
    for key in ("sectional", "flag", "ric"):
        if rep.get(key) is not None:
            checks.append(_info(key, rep[key]))

    def dump(path):
        n = M.dim
        rows = [(i, j, k, l, sample.R[i, j, k, l])
                for i in range(n) for j in range(n)
                for k in range(n) for l in range(n)]
        write_csv(path, ["i", "j", "k", "l", "R"], rows)

    return checks, dump


def _cmd_ricci(args, M):
    from .connection import connection
    from .curvature import ricci
    x = _vec(args.point, M.dim, "--point")
    v = _vec(args.vector, M.dim, "--vector")
    return [_value_check("ricci", ricci(connection(M), x, v))], None


def _cmd_flag(args, M):
    from .curvature import flag_curvature
    x = _vec(args.point, M.dim, "--point")
    v = _vec(args.vector, M.dim, "--vector")
    w = _vec(args.w, M.dim, "--w")
    return [_value_check("flag", flag_curvature(M, x, v, w))], None


def _cmd_weighted_ricci(args, M):
    from . import expr as E
    from .curvature import WeightSpec, weighted_ricci
    x = _vec(args.point, M.dim, "--point")
    v = _vec(args.vector, M.dim, "--vector")
    psi = None
    if args.psi:
        try:
            psi = E.parse_expression(args.psi, M.dim, params=tuple(M.params))
        except Exception as err:
            raise UsageError(f"--psi does not parse: {err}")
    W = WeightSpec(psi=psi, N=_parse_N(args.N))
    return [_value_check("weighted_ricci", weighted_ricci(M, W, x, v))], None


def _cmd_einstein(args, M):
    from .curvature import einstein_check
    rep = einstein_check(M, probes=args.probes or 20, seed=args.seed)
    checks = [
        _info("verdict", rep.verdict),
        _info("lambda_hat", rep.lambda_hat),
        _info("max_residual", rep.max_residual),
        _info("lambda_spread", rep.lambda_spread),
        _info("rigidity_candidate", rep.rigidity_flag),
    ]
    return checks, None


def _cmd_metrize(args, M):
    from .holonomy import szabo_metrize
    SM = szabo_metrize(M, probes=args.probes or 10, seed=args.seed)
    checks = [
        _gate(args, "christoffel_match", SM.connection_match(), 1e-6),
        _info("quadrature_error", SM.quadrature_error),
    ]
    n = M.dim

    def dump(path):
        header = [f"x{i + 1}" for i in range(n)] + \
            [f"h{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        rows = [list(x) + list(h.ravel()) for x, h in zip(SM.probes, SM.h_values)]
        write_csv(path, header, rows)

    return checks, dump


def _cmd_split(args, M):
    from .connection import connection
    from .holonomy import de_rham_split, holonomy_samples, szabo_metrize
    x = _vec(args.point, M.dim, "--point") if args.point else M.box_center()
    B = holonomy_samples(connection(M), x, loop_count=args.probes or 12, seed=args.seed)
    S = de_rham_split(B, szabo_metrize(M, probes=4, seed=args.seed), seed=args.seed)
    checks = [
        _info("dimensions", "+".join(str(d) for d in S.dimensions)),
        _info("flat_flags", ",".join(str(f).lower() for f in S.flat_flags)),
        _gate(args, "commutant_residual", S.residual, 1e-8),
    ]

    def dump(path):
        rows = []
        for si, basis in enumerate(S.subspaces):
            for ci in range(basis.shape[1]):
                rows.append([si, ci] + list(basis[:, ci]))
        header = ["subspace", "column"] + [f"e{i + 1}" for i in range(M.dim)]
        write_csv(path, header, rows)

    return checks, dump


def _cmd_invariance(args, M, M2):
    from . import expr as E
    from .curvature import WeightSpec, ricci_invariance_check, weighted_invariance_check
    r1 = ricci_invariance_check(M, M2, probes=args.probes or 50, seed=args.seed)
    psi = None
    if args.psi:
        try:
            psi = E.parse_expression(args.psi, M.dim, params=tuple(M.params))
        except Exception as err:
            raise UsageError(f"--psi does not parse: {err}")
    r2 = weighted_invariance_check(M, M2, WeightSpec(psi=psi),
                                   probes=args.probes or 30, seed=args.seed)
    checks = [
        _gate(args, "ricci_invariance", r1.max_deviation, 1e-8),
        _gate(args, "weighted_invariance", r2.max_deviation, 1e-7),
    ]
    return checks, None


def _cmd_distance(args, M):
    from .norms import product_distance
    a = _vec(args.src, M.dim, "--from")
    b = _vec(args.dst, M.dim, "--to")
    dists = _vec(args.factor_distances, None, "--factor-distances") \
        if args.factor_distances else []
    return [_value_check("distance", product_distance(M, a, b, dists))], None


# ---------------------------------------------------------------------------
# wiring

_HANDLERS = {
    "validate": (_cmd_validate, 1),
    "berwald": (_cmd_berwald, 1),
    "geodesic": (_cmd_geodesic, 1),
    "transport": (_cmd_transport, 1),
    "curvature": (_cmd_curvature, 1),
    "ricci": (_cmd_ricci, 1),
    "flag": (_cmd_flag, 1),
    "weighted-ricci": (_cmd_weighted_ricci, 1),
    "einstein": (_cmd_einstein, 1),
    "metrize": (_cmd_metrize, 1),
    "split": (_cmd_split, 1),
    "invariance": (_cmd_invariance, 2),
    "distance": (_cmd_distance, 1),
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="finslerlab",
        description="Finsler geometry checks on declared coordinate models. "
                    "Models are gallery names (e.g. 'sphere') or .model file paths.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, models=1):
        sp.add_argument("model", help="gallery name or model file path")
        if models == 2:
            sp.add_argument("model_b", help="second model for the comparison")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--probes", type=int, default=None,
                        help="sample count (command-specific default)")
        sp.add_argument("--tol", type=float, default=None,
                        help="override the command's check tolerance")
        sp.add_argument("--csv", default=None, help="write tabular output here")
        sp.add_argument("--json", default=None, help="write the run report here")

    common(sub.add_parser("validate", help="norm axioms: homogeneity, positivity, convexity"))
    common(sub.add_parser("berwald", help="is the connection fiber-independent"))

    sp = sub.add_parser("geodesic", help="integrate a geodesic, check constant speed")
    common(sp)
    sp.add_argument("--point", required=True)
    sp.add_argument("--vector", required=True)
    sp.add_argument("--time", type=float, default=1.0)

    sp = sub.add_parser("transport", help="norm preservation around sampled loops")
    common(sp)
    sp.add_argument("--point", required=True)

    sp = sub.add_parser("curvature", help="curvature tensor defects at a point")
    common(sp)
    sp.add_argument("--point", required=True)
    sp.add_argument("--vector", default=None)

    sp = sub.add_parser("ricci", help="Ricci curvature at (point, vector)")
    common(sp)
    sp.add_argument("--point", required=True)
    sp.add_argument("--vector", required=True)

    sp = sub.add_parser("flag", help="flag curvature of a flag (vector, w)")
    common(sp)
    sp.add_argument("--point", required=True)
    sp.add_argument("--vector", required=True)
    sp.add_argument("--w", required=True)

    sp = sub.add_parser("weighted-ricci", help="measure-weighted Ricci curvature")
    common(sp)
    sp.add_argument("--point", required=True)
    sp.add_argument("--vector", required=True)
    sp.add_argument("--N", required=True, help="effective dimension, a number or 'inf'")
    sp.add_argument("--psi", default=None, help="log-density expression (overrides the model's)")

    common(sub.add_parser("einstein", help="Einstein / Ricci-flat classification"))
    common(sub.add_parser("metrize", help="indicatrix-averaged metric and its connection"))

    sp = sub.add_parser("split", help="holonomy-invariant subspace decomposition")
    common(sp)
    sp.add_argument("--point", default=None)

    sp = sub.add_parser("invariance", help="curvature agreement of two models sharing a connection")
    common(sp, models=2)
    sp.add_argument("--psi", default=None, help="shared log-density for the weighted check")

    sp = sub.add_parser("distance", help="product-metric distance from factor distances")
    common(sp)
    sp.add_argument("--from", dest="src", required=True)
    sp.add_argument("--to", dest="dst", required=True)
    sp.add_argument("--factor-distances", default=None,
                    help="comma-separated distance per factor")

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = _build_parser().parse_args(argv)
    handler, model_count = _HANDLERS[args.command]
    t0 = time.perf_counter()

    from .modelfile import load_model, model_hash
    from .norms import ModelError
    specs = [args.model] + ([args.model_b] if model_count == 2 else [])
    try:
        models = [load_model(s) for s in specs]
    except (ModelError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    hashes = [model_hash(m) for m in models]
    mh = hashes[0] if len(hashes) == 1 else hashes

    csv_writer = None
    try:
        checks, csv_writer = handler(args, *models)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ModelError as err:
        checks = [RunCheck("error", str(err), None, False)]

    report = RunReport(args.command, mh, args.seed, checks,
                       wall_time=time.perf_counter() - t0)
    print(report.summary())
    if args.json:
        report.write_json(args.json)
    if args.csv:
        if csv_writer is None:
            print("note: this command has no csv output", file=sys.stderr)
        else:
            csv_writer(args.csv)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
