"""Command line entry points: simulate | fit | metrics | rate-study.

Every output embeds the fully resolved configuration and a content hash of
its file inputs; reruns with identical seeds and configs are byte-identical
(wall-clock timings are only written when --timing is passed). Exit codes:
0 success, 2 validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .metrics import certify_divergence_bounds, check_data_processing, \
    run_certification_sweep
from .model import CppModel, Grid, NormalMixture, gaussian
from .posterior import ChainAbortError, ChainConfig, posterior_mean_density, run_chain
from .prior import Priors, default_priors
from .rng import rng_stream, substream
from .simulate import read_increments_csv, simulate_increments, write_increments_csv


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hash_file(path) -> str:
    return _hash_bytes(Path(path).read_bytes())


def _dump_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def parse_jumps(spec: str, dim: int) -> NormalMixture:
    """Jump-density shorthand: ``gauss:mu,var`` or ``mix:file.json``."""
    if spec.startswith("gauss:"):
        try:
            mu_s, var_s = spec[len("gauss:"):].split(",")
            mu, var = float(mu_s), float(var_s)
        except ValueError as exc:
            raise ValueError(f"cannot parse jump shorthand {spec!r}") from exc
        if var <= 0:
            raise ValueError("jump variance must be positive")
        return gaussian(np.full(dim, mu), var * np.eye(dim))
    if spec.startswith("mix:"):
        with open(spec[len("mix:"):]) as fh:
            return NormalMixture.from_json(json.load(fh))
    raise ValueError(f"unknown jump spec {spec!r} (use gauss:mu,var or mix:file.json)")


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.lam <= 0:
        raise ValueError("--lambda must be positive")
    jumps = parse_jumps(args.jumps, args.dim)
    model = CppModel(args.lam, jumps)
    rng = rng_stream(args.seed, 0)
    sample = simulate_increments(model, args.n, args.mesh, rng)
    sidecar = {
        "lambda_true": args.lam,
        "mesh": args.mesh,
        "seed": args.seed,
        "n": args.n,
        "model": model.to_json(),
        "config": {"jumps": args.jumps, "dim": args.dim},
    }
    write_increments_csv(sample, args.out, sidecar)
    return 0


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------

def _load_sample(path, mesh):
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) <= 1:
        return None  # header only: prior-reproduction mode
    return read_increments_csv(path, mesh=mesh)


def cmd_fit(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample = _load_sample(args.data, args.mesh)
    if sample is not None and args.zero_tol > 0:
        from .simulate import IncrementSample
        z = sample.z.copy()
        z[np.abs(z).max(axis=1) <= args.zero_tol] = 0.0
        sample = IncrementSample(sample.dim, sample.mesh, z, meta=sample.meta)
    data_hash = _hash_file(args.data)
    if args.prior:
        with open(args.prior) as fh:
            priors = Priors.from_json(json.load(fh))
        prior_hash = _hash_file(args.prior)
    else:
        priors = default_priors(args.dim if sample is None else sample.dim,
                                truncation_k=args.truncation)
        prior_hash = None
    if sample is None:
        from .simulate import IncrementSample
        sample = IncrementSample(args.dim, args.mesh or 1.0, np.zeros((0, args.dim)))
    config = ChainConfig(iterations=args.iterations, burn_in=args.burn_in,
                         thin=args.thin, seed=args.seed)
    if args.warm_start is not None:
        if not (priors.lam.lo <= args.warm_start <= priors.lam.hi):
            raise ValueError("warm-start lambda lies outside the prior support")

    resolved = {
        "data": str(args.data), "data_sha256": data_hash,
        "prior": priors.to_json(), "prior_sha256": prior_hash,
        "chain": config.to_json(), "mesh": sample.mesh,
    }
    try:
        output = run_chain(sample, priors, config)
    except ChainAbortError as exc:
        _dump_json({"error": str(exc), "dump": exc.dump, "resolved": resolved},
                   out_dir / "diagnostics.json.partial")
        print(f"chain aborted: {exc}", file=sys.stderr)
        return 3

    with open(out_dir / "chain.jsonl", "w") as fh:
        for rec in output.retained:
            row = {"iter": rec["iter"], "lambda": rec["lambda"],
                   "jump_count_total": rec["jump_count_total"],
                   "mixture": rec["mixture"].to_json(), "log_post": rec["log_post"]}
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    diagnostics = {
        "acceptance": output.acceptance,
        "ess_lambda": output.ess_lambda,
        "runtime_seconds": output.runtime_seconds if args.timing else None,
        "retained": len(output.retained),
        "resolved": resolved,
    }
    _dump_json(diagnostics, out_dir / "diagnostics.json")

    if sample.n > 0 and output.retained:
        grid = _fit_grid(args, sample)
        dens = posterior_mean_density(output, grid)
        nodes = grid.nodes()
        with open(out_dir / "posterior_density.csv", "w") as fh:
            cols = [f"x{a + 1}" for a in range(grid.dim)]
            fh.write(",".join(cols + ["mean", "q05", "q95"]) + "\n")
            for row in range(nodes.shape[0]):
                vals = [*nodes[row], dens["mean"][row], dens["q05"][row],
                        dens["q95"][row]]
                fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
    return 0


def _fit_grid(args, sample) -> Grid:
    if args.grid_lo is not None and args.grid_hi is not None:
        lo = tuple(float(v) for v in args.grid_lo.split(","))
        hi = tuple(float(v) for v in args.grid_hi.split(","))
        return Grid(sample.dim, lo, hi, args.grid_points)
    span = np.abs(sample.z).max(axis=0) + 4.0
    return Grid(sample.dim, tuple(-span), tuple(span), args.grid_points)


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------

_CSV_COLS = ("pair", "dim", "inequality", "lhs", "rhs", "margin", "mc_error",
             "tightness", "pass")


def _write_rows(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_CSV_COLS) + "\n")
        for r in rows:
            fh.write(",".join(
                f"{r[c]:.17g}" if isinstance(r[c], float) else str(r[c])
                for c in _CSV_COLS) + "\n")


def cmd_metrics(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.pair is None and args.sweep is None:
        raise ValueError("metrics needs either --pair A B or --sweep N")
    if args.pair:
        path0, path1 = args.pair
        m0, m1 = CppModel.load(path0), CppModel.load(path1)
        rng = rng_stream(args.seed, 0)
        lam_int = (min(m0.lambda_, m1.lambda_, 0.5), max(m0.lambda_, m1.lambda_, 2.0))
        if args.suite == "bounds":
            rep = certify_divergence_bounds(m0, m1, lambda_interval=lam_int,
                                            mc_draws=args.mc_draws, rng=rng)
        else:
            rep = check_data_processing(m0, m1, mc_draws=args.mc_draws, rng=rng)
        rows = [{"pair": 0, "dim": m0.dim, "inequality": r.inequality, "lhs": r.lhs,
                 "rhs": r.rhs, "margin": r.margin, "mc_error": r.mc_error,
                 "tightness": r.tightness, "pass": r.passed} for r in rep.records]
        report = rep.to_json()
        report["inputs_sha256"] = [_hash_file(path0), _hash_file(path1)]
    else:
        rows = run_certification_sweep(
            args.sweep, args.dim, args.seed, mc_draws=args.mc_draws,
            data_processing=(args.suite == "data-processing"))
        report = {
            "pairs": args.sweep, "dim": args.dim, "seed": args.seed,
            "suite": args.suite, "all_pass": all(r["pass"] for r in rows),
            "max_tightness": max((r["tightness"] for r in rows
                                  if np.isfinite(r["tightness"])), default=None),
        }
    _write_rows(rows, out_dir / "inequalities.csv")
    _dump_json(report, out_dir / "metrics_report.json")
    if not all(r["pass"] for r in rows):
        print("warning: some inequalities failed", file=sys.stderr)
    return 0


# ----------------------------------------------------------------------
# rate study
# ----------------------------------------------------------------------

def _rate_cell(payload: dict) -> dict:
    """One (n, replicate) cell: simulate, fit, report errors (worker-safe)."""
    truth = CppModel.from_json(payload["truth"])
    n, n_ix, rep = payload["n"], payload["n_ix"], payload["rep"]
    seed = payload["seed"]
    sim_rng = substream(seed, n_ix, rep, 0)
    sample = simulate_increments(truth, n, payload["mesh"], sim_rng)
    priors = Priors.from_json(payload["priors"])
    config = ChainConfig.from_json(payload["chain"])
    output = run_chain(sample, priors, config, rng=substream(seed, n_ix, rep, 1))
    grid = Grid(truth.dim, tuple(payload["grid_lo"]), tuple(payload["grid_hi"]),
                payload["grid_points"])
    dens = posterior_mean_density(output, grid)
    nodes = grid.nodes()
    truth_vals = np.exp(truth.jumps.logpdf(nodes))
    h2 = grid.integrate((np.sqrt(dens["mean"]) - np.sqrt(truth_vals)) ** 2)
    lam_hat = float(output.retained_lambdas().mean())
    return {"n": n, "replicate": rep, "hellinger": float(np.sqrt(max(h2, 0.0))),
            "lambda_post_mean": lam_hat,
            "lambda_abs_err": abs(lam_hat - truth.lambda_),
            "ess_lambda": output.ess_lambda}


def cmd_rate_study(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = CppModel(args.lam, parse_jumps(args.jumps, args.dim))
    ns = [int(v) for v in args.n_list.split(",")]
    priors = default_priors(args.dim, truncation_k=args.truncation)
    chain = ChainConfig(iterations=args.iterations, burn_in=args.burn_in,
                        thin=args.thin, seed=args.seed)
    span = 6.0 * float(np.sqrt(np.max(np.linalg.eigvalsh(truth.jumps.cov())))) \
        + float(np.abs(truth.jumps.means).max()) + 2.0
    payloads = [{
        "truth": truth.to_json(), "n": n, "n_ix": ix, "rep": rep, "seed": args.seed,
        "mesh": args.mesh, "priors": priors.to_json(), "chain": chain.to_json(),
        "grid_lo": [-span] * args.dim, "grid_hi": [span] * args.dim,
        "grid_points": args.grid_points,
    } for ix, n in enumerate(ns) for rep in range(args.replicates)]

    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_rate_cell, payloads))
    else:
        rows = [_rate_cell(p) for p in payloads]
    rows.sort(key=lambda r: (r["n"], r["replicate"]))

    cols = ("n", "replicate", "hellinger", "lambda_post_mean", "lambda_abs_err",
            "ess_lambda")
    with open(out_dir / "rate_study.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(f"{r[c]:.17g}" if isinstance(r[c], float) else str(r[c])
                              for c in cols) + "\n")

    medians = {n: float(np.median([r["hellinger"] for r in rows if r["n"] == n]))
               for n in ns}
    lam_medians = {n: float(np.median([r["lambda_abs_err"] for r in rows
                                       if r["n"] == n])) for n in ns}
    if len(ns) > 1:
        slope = float(np.polyfit(np.log(ns), np.log([medians[n] for n in ns]), 1)[0])
    else:
        slope = None
    summary = {
        "n_values": ns, "replicates": args.replicates,
        "median_hellinger": {str(n): medians[n] for n in ns},
        "median_lambda_abs_err": {str(n): lam_medians[n] for n in ns},
        "loglog_slope": slope,
        "truth": truth.to_json(), "priors": priors.to_json(),
        "chain": chain.to_json(), "seed": args.seed, "mesh": args.mesh,
    }
    _dump_json(summary, out_dir / "rate_summary.json")
    return 0


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decompound",
        description="Bayesian decompounding of discretely observed compound "
                    "Poisson processes")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="explicit RNG seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock timings in outputs")

    p = sub.add_parser("simulate", parents=[common], help="simulate increments")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--jumps", default="gauss:0,1")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mesh", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="posterior sampling")
    p.add_argument("--data", required=True, help="increments CSV")
    p.add_argument("--prior", default=None, help="prior JSON (defaults used if absent)")
    p.add_argument("--dim", type=int, default=1, help="dimension for empty data")
    p.add_argument("--mesh", type=float, default=None)
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--burn-in", type=int, default=5_000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--truncation", type=int, default=50)
    p.add_argument("--warm-start", type=float, default=None,
                   help="starting lambda; must lie in the prior support")
    p.add_argument("--grid-lo", default=None)
    p.add_argument("--grid-hi", default=None)
    p.add_argument("--grid-points", type=int, default=512)
    p.add_argument("--zero-tol", type=float, default=0.0,
                   help="treat |z| <= tol as the atom (default exact zeros)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", parents=[common], help="divergence certification")
    p.add_argument("--pair", nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--sweep", type=int, default=None)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--suite", choices=("bounds", "data-processing"), default="bounds")
    p.add_argument("--mc-draws", type=int, default=200_000)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("rate-study", parents=[common],
                       help="error-vs-n contraction experiment")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--jumps", default="gauss:0,1")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--mesh", type=float, default=1.0)
    p.add_argument("--n-list", default="50,200,800")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--iterations", type=int, default=4_000)
    p.add_argument("--burn-in", type=int, default=1_500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--truncation", type=int, default=50)
    p.add_argument("--grid-points", type=int, default=1024)
    p.set_defaults(func=cmd_rate_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChainAbortError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
