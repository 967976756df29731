"""Command-line entry point. Every command prints one JSON object on stdout.

Exit codes: 0 success, 2 usage error, 3 data error, 4 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings

import numpy as np

from . import counters, synthetic
from .errors import ContractError, KdeGraphError
from .kde import build_multilevel
from .kernels import FAMILIES, KernelSpec, load_dataset, median_pair_distance
from .parallel import resolve_threads
from .sampling import (
    approx_degrees,
    make_rng,
    random_walks,
    sample_edges,
    sample_vertex,
)

USAGE_ERROR = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p):
    g = p.add_argument_group("data and kernel")
    g.add_argument("--data", help="CSV or KGD1 binary dataset")
    g.add_argument("--format", choices=["csv", "binary-f64"], default=None)
    g.add_argument("--synthetic", choices=["gaussian", "blobs", "nested", "identical"],
                   help="generate the dataset instead of reading one")
    g.add_argument("--n", type=int, default=200, help="size for --synthetic")
    g.add_argument("--d", type=int, default=2, help="dimension for --synthetic")
    g.add_argument("--kernel", choices=sorted(FAMILIES), default="gaussian")
    g.add_argument("--sigma", default="1.0", help="bandwidth or 'median'")
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--tau", type=float, default=None,
                   help="declared minimum pair weight (default: measured when n <= 2000)")
    g = p.add_argument_group("estimation")
    g.add_argument("--kde", choices=["exact", "sampling"], default="exact")
    g.add_argument("--eps", type=float, default=0.1, help="algorithm precision")
    g.add_argument("--kde-eps", type=float, default=None,
                   help="per-node KDE precision (default: --eps)")
    g.add_argument("--delta", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None, help="default: $KG_THREADS or 1")
    g.add_argument("--reference", action="store_true", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kdegraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        return p

    p = add("degrees", "approximate weighted degrees")
    p.add_argument("--out", help="write degrees as CSV")
    p = add("sample-vertex", "draw vertices proportional to degree")
    p.add_argument("--count", type=int, default=10)
    p = add("sample-edge", "draw edges proportional to weight")
    p.add_argument("--count", type=int, default=10)
    p = add("walk", "random walks on the kernel graph")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mode", choices=["approx", "exact-neighbor"], default="approx")
    p = add("sparsify", "spectral sparsifier")
    p.add_argument("--edges", type=int, default=None, help="draws t (default from theory)")
    p.add_argument("--const", type=float, default=1.0)
    p.add_argument("--out", help="write u,v,weight rows")
    p = add("solve", "Laplacian solve on a sparsifier")
    p.add_argument("--b", help="right-hand side CSV (default: random mean-zero)")
    p.add_argument("--alpha", type=float, default=1e-6)
    p.add_argument("--edges", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--out", help="write x as CSV")
    p = add("lra", "additive-error low-rank approximation")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--v-method", choices=["sketch", "columns", "dense"], default="sketch")
    p.add_argument("--out", help="prefix for U/V CSV factors")
    p = add("eig1", "top eigenvalue of the kernel matrix")
    p.add_argument("--sample-const", type=float, default=1.0)
    p = add("spectrum", "normalized Laplacian spectrum via walk moments")
    p.add_argument("--moments", type=int, default=None, help="default: ceil(1/eps)")
    p.add_argument("--walks", type=int, default=10000)
    p.add_argument("--grid", type=int, default=None)
    p = add("local-cluster", "same-cluster test for two vertices")
    p.add_argument("--u", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--phi-in", type=float, default=0.5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--r", type=int, default=None, help="walks per vertex")
    p.add_argument("--steps", type=int, default=None)
    p = add("spectral-cluster", "spectral clustering on a sparsifier")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--edges", type=int, default=None)
    p.add_argument("--out", help="write labels as CSV")
    p = add("arboricity", "densest-subgraph density estimate")
    p.add_argument("--m", type=int, default=None, help="edge draws")
    p.add_argument("--method", choices=["exact", "peel"], default="exact")
    p = add("triangles", "total triangle weight estimate")
    p.add_argument("--edges", type=int, default=500, help="pairs R per group")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--groups", type=int, default=5)
    p = add("bench", "numba vs numpy timings of the hot loops")
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    return parser


# ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _dataset(args):
    if args.data:
        return load_dataset(args.data, args.format)
    rng = np.random.default_rng(args.seed)
    kind = args.synthetic or "gaussian"
    if kind == "gaussian":
        return synthetic.gaussian_cloud(args.n, args.d, rng)
    if kind == "blobs":
        return synthetic.blobs(args.n, rng=rng)[0]
    if kind == "nested":
        return synthetic.nested(args.n, rng=rng)[0]
    return synthetic.identical(args.n, args.d)


def _spec(args, data):
    if args.sigma == "median":
        probe = KernelSpec(args.kernel, 1.0, 0.5, args.beta)
        sigma = median_pair_distance(data, probe, np.random.default_rng(args.seed))
        if sigma <= 0:
            sigma = 1.0
    else:
        try:
            sigma = float(args.sigma)
        except ValueError:
            raise ContractError(f"--sigma must be a number or 'median', got {args.sigma!r}")
    tau = args.tau
    if tau is None:
        if data.n > 2000:
            raise ContractError("--tau is required when n > 2000")
        from .reference import measured_tau

        tau = measured_tau(data, KernelSpec(args.kernel, sigma, 0.5, args.beta)) if data.n > 1 else 0.5
        tau = min(max(tau, 1e-300), 1 - 1e-12)
    return KernelSpec(args.kernel, sigma, tau, args.beta)


def _tree(args, data, spec, eps=None):
    if args.kde == "exact":
        return build_multilevel(data, spec, 0.0, "exact")
    e = args.kde_eps if args.kde_eps is not None else (eps if eps is not None else args.eps)
    return build_multilevel(data, spec, e, "sampling", args.delta)


def _cmd_degrees(args, data, spec, rng):
    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    if args.out:
        np.savetxt(args.out, table.p, fmt="%.17g")
    res = {"n": data.n, "min": table.p.min(), "max": table.p.max(), "sum": table.total,
           "clamped": int(table.clamped.sum())}
    if data.n <= 1000:
        res["degrees"] = table.p
    if args.reference:
        from .reference import dense_matrix, exact_distributions

        deg = exact_distributions(dense_matrix(data, spec)).degrees
        res["reference_max_rel_error"] = float(np.max(np.abs(table.p / deg - 1)))
    return res


def _cmd_sample_vertex(args, data, spec, rng):
    table = approx_degrees(_tree(args, data, spec), rng=rng)
    idx = sample_vertex(table, rng, args.count)
    return {"samples": idx, "probs": table.probs[idx]}


def _cmd_sample_edge(args, data, spec, rng):
    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    b = sample_edges(table, tree, args.count, rng, args.threads)
    return {"edges": [[int(x), int(y), float(p)] for x, y, p in zip(b.u, b.v, b.prob)]}


def _cmd_walk(args, data, spec, rng):
    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng) if args.mode != "approx" else None
    b = random_walks(tree, np.full(args.count, args.start), args.steps, rng, args.mode,
                     table, args.threads)
    res = {"endpoints": b.endpoints, "rejection_rounds": b.rounds}
    if args.count <= 100:
        res["traces"] = b.trace
    return res


def _sparsifier(args, data, spec, rng):
    from .sparsify import spectral_sparsify

    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    return spectral_sparsify(table, tree, args.eps, spec.tau, rng, args.edges,
                             getattr(args, "const", 1.0), args.threads)


def _cmd_sparsify(args, data, spec, rng):
    g = _sparsifier(args, data, spec, rng)
    if args.out:
        np.savetxt(args.out, np.column_stack([g.u, g.v, g.w]), delimiter=",",
                   fmt=["%d", "%d", "%.17g"])
    res = {"n": g.n, "draws": g.t, "edges": g.num_edges,
           "edge_fraction": g.num_edges / (g.n * (g.n - 1) / 2), "total_weight": g.w.sum()}
    if args.reference:
        from .reference import dense_matrix, laplacian

        L = laplacian(dense_matrix(data, spec))
        Lp = g.laplacian().toarray()
        X = rng.standard_normal((data.n, 100))
        X -= X.mean(axis=0)
        ratio = np.einsum("ij,ij->j", X, Lp @ X) / np.einsum("ij,ij->j", X, L @ X)
        res["reference_max_quad_error"] = float(np.max(np.abs(ratio - 1)))
    return res


def _cmd_solve(args, data, spec, rng):
    from .sparsify import LaplacianOperator, solve_laplacian

    g = _sparsifier(args, data, spec, rng)
    if args.b:
        b = np.loadtxt(args.b, delimiter=",", ndmin=1).ravel()
        if b.shape[0] != data.n:
            raise ContractError(f"--b has {b.shape[0]} entries, dataset has {data.n}")
    else:
        b = rng.standard_normal(data.n)
    out = solve_laplacian(LaplacianOperator.from_graph(g), b, args.alpha, args.max_iter)
    if args.out:
        np.savetxt(args.out, out.x, fmt="%.17g")
    res = {"iterations": out.iterations, "residual": out.residual,
           "projection_residual": out.projection_residual, "edges": g.num_edges,
           "x_norm": float(np.linalg.norm(out.x))}
    if data.n <= 200:
        res["x"] = out.x
    return res


def _cmd_lra(args, data, spec, rng):
    from .linalg import lra_additive

    kde_eps = args.kde_eps if args.kde_eps is not None else args.eps
    f = lra_additive(data, spec, args.rank, None, rng, args.rows, args.kde, kde_eps,
                     args.delta, args.v_method)
    if args.out:
        np.savetxt(f"{args.out}_U.csv", f.U, delimiter=",", fmt="%.17g")
        np.savetxt(f"{args.out}_V.csv", f.V, delimiter=",", fmt="%.17g")
    res = {"rank": f.k, "rows_sampled": f.s, "unique_rows": int(f.rows.shape[0]),
           "dense_evaluations": data.n * data.n}
    if args.reference:
        from .reference import best_rank_k_error, dense_matrix

        K = dense_matrix(data, spec)
        res["reference_excess_error"] = float(
            (np.sum((K - f.approx()) ** 2) - best_rank_k_error(K, args.rank))
            / np.sum(K ** 2))
    return res


def _cmd_eig1(args, data, spec, rng):
    from .linalg import top_eigenvalue

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        e = top_eigenvalue(data, spec, args.eps, spec.tau, rng, args.sample_const)
    res = {"lambda_hat": e.lambda_hat, "t": e.t, "iterations": e.iterations,
           "dense_fallback": e.dense_fallback,
           "notices": [str(w.message) for w in caught]}
    if args.reference:
        from .reference import dense_matrix, dense_top_eig

        res["reference_lambda1"] = dense_top_eig(dense_matrix(data, spec))[0]
    return res


def _cmd_spectrum(args, data, spec, rng):
    from .linalg import emd_1d, spectral_moments, spectrum_emd

    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    moments = args.moments or int(math.ceil(1.0 / args.eps))
    mom = spectral_moments(tree, table, moments, args.walks, rng, args.threads)
    summ = spectrum_emd(mom.moments, data.n, args.grid, eps_target=args.eps)
    res = {"moments": mom.moments, "lambda_tilde": summ.lambda_tilde,
           "moment_residual": summ.moment_residual, "notes": summ.notes}
    if args.reference:
        from .reference import dense_laplacian_eig, dense_matrix

        exact = dense_laplacian_eig(dense_matrix(data, spec))[1]
        res["reference_emd_normalized"] = emd_1d(summ.lambda_tilde, exact, normalized=True)
    return res


def _cmd_local_cluster(args, data, spec, rng):
    from .graph import local_cluster_test

    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    v = local_cluster_test(tree, table, args.u, args.w, args.phi_in, args.k, args.eps,
                           spec.tau, rng, args.r, args.steps, threads=args.threads)
    return {"same_cluster": v.same_cluster, "statistic": v.statistic,
            "threshold": v.threshold, "xi": v.xi, "r": v.samples, "t": v.walk_length}


def _cmd_spectral_cluster(args, data, spec, rng):
    from .graph import cluster_graph

    g = _sparsifier(args, data, spec, rng)
    c = cluster_graph(g, args.k, rng)
    if args.out:
        np.savetxt(args.out, c.labels, fmt="%d")
    res = {"sizes": np.bincount(c.labels, minlength=args.k), "inertia": c.inertia,
           "eigenvalues": c.eigenvalues, "edges": g.num_edges,
           "edge_fraction": g.num_edges / (g.n * (g.n - 1) / 2)}
    if data.n <= 1000:
        res["labels"] = c.labels
    return res


def _cmd_arboricity(args, data, spec, rng):
    from .graph import arboricity_estimate

    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    a = arboricity_estimate(table, tree, args.eps, spec.tau, rng, args.m,
                            method=args.method, threads=args.threads)
    res = {"alpha_hat": a.alpha_hat, "witness": a.witness, "m_samples": a.m_samples,
           "Delta": a.Delta, "edges": a.graph.num_edges}
    if args.reference:
        from .graph import densest_subgraph_exact
        from .reference import dense_matrix

        K = dense_matrix(data, spec)
        iu, ju = np.triu_indices(data.n, 1)
        res["reference_alpha"] = densest_subgraph_exact(data.n, iu, ju, K[iu, ju])[0]
    return res


def _cmd_triangles(args, data, spec, rng):
    from .graph import triangle_weight_estimate

    tree = _tree(args, data, spec)
    table = approx_degrees(tree, rng=rng)
    t = triangle_weight_estimate(table, tree, args.edges, args.reps, rng, args.groups)
    res = {"w_hat": t.w_hat, "R_size": t.R_size, "reps": t.reps_per_edge,
           "group_estimates": t.group_estimates}
    if args.reference:
        from .reference import dense_matrix, exact_triangle_weight

        res["reference_w"] = exact_triangle_weight(dense_matrix(data, spec))
    return res


COMMANDS = {
    "degrees": _cmd_degrees,
    "sample-vertex": _cmd_sample_vertex,
    "sample-edge": _cmd_sample_edge,
    "walk": _cmd_walk,
    "sparsify": _cmd_sparsify,
    "solve": _cmd_solve,
    "lra": _cmd_lra,
    "eig1": _cmd_eig1,
    "spectrum": _cmd_spectrum,
    "local-cluster": _cmd_local_cluster,
    "spectral-cluster": _cmd_spectral_cluster,
    "arboricity": _cmd_arboricity,
    "triangles": _cmd_triangles,
}


def execute(argv) -> tuple[int, dict | None]:
    """Run one command; returns (exit code, JSON payload or None)."""
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return USAGE_ERROR, None
    params = {k: v for k, v in vars(args).items() if k != "reference" or v}
    try:
        args.threads = resolve_threads(args.threads)
        params["threads"] = args.threads
        t0 = time.perf_counter()
        with counters.track() as cost:
            if args.command == "bench":
                from .bench import run_benchmark

                result = run_benchmark(n=args.n, d=args.d, draws=args.draws,
                                       backend=args.kde if args.kde != "exact" else "sampling",
                                       repeat=args.repeat, seed=args.seed)
            else:
                data = _dataset(args)
                spec = _spec(args, data)
                params["sigma_used"] = spec.sigma
                params["tau_used"] = spec.tau
                rng = make_rng(args.seed)
                result = COMMANDS[args.command](args, data, spec, rng)
        wall = (time.perf_counter() - t0) * 1000.0
    except KdeGraphError as exc:
        print(f"kdegraph {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code, None
    except (OSError, ValueError) as exc:
        print(f"kdegraph {args.command}: {exc}", file=sys.stderr)
        return 3, None
    payload = {
        "command": args.command,
        "params": params,
        "result": result,
        "kernel_evaluations": cost.kernel_evaluations,
        "kde_queries": cost.kde_queries,
        "kde_kernel_evaluations": cost.kde_kernel_evaluations,
        "wall_ms": wall,
    }
    return 0, _jsonable(payload)


def run(argv=None) -> int:
    code, payload = execute(sys.argv[1:] if argv is None else argv)
    if payload is not None:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main():  # pragma: no cover
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
