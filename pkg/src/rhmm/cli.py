"""Command line: ``rhmm {simulate, fit, mc-study, oracle}``.

Exit codes: 0 success, 1 usage, 2 data or parse error, 3 numerical failure
(degenerate recursion or mean, solver non-convergence, failed oracle).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from rhmm import io
from rhmm.errors import ConvergenceError, DegenerateMeanError, NumericalDegeneracyError
from rhmm.geometry.families import DiskGaussian, family_from_name
from rhmm.hmm import HmmParams, align_labels, em_fit, screened_init
from rhmm.mrf import field_em_fit
from rhmm.numerics import weighted_frechet_mean
from rhmm.oracles import SUITES, run_suite
from rhmm.sampling import simulate_field, simulate_hmm

log = logging.getLogger("rhmm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def paper_face_preset() -> HmmParams:
    """Three disk-Gaussian states arranged as a face: a tight centre and two wider 'eyes'."""
    return HmmParams(P=[[0.4, 0.3, 0.3], [0.2, 0.6, 0.2], [0.1, 0.1, 0.8]],
                     pi1=[1.0, 0.0, 0.0],
                     locations=np.array([0.0, 0.29 + 0.82j, -0.29 + 0.82j]),
                     sigmas=[0.1, 0.4, 0.4], family=DiskGaussian())


PRESETS = {"paper-face": paper_face_preset}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rhmm", description="Hidden Markov chains and fields with manifold-valued observations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(sp, required=True):
        g = sp.add_mutually_exclusive_group(required=required)
        g.add_argument("--model", type=Path, help="model JSON (chain or field)")
        g.add_argument("--preset", choices=sorted(PRESETS))

    s = sub.add_parser("simulate", parents=[common], help="simulate hidden states and observations")
    model_args(s)
    s.add_argument("--T", type=_positive_int, default=10_000, help="chain length (ignored for fields)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma-scale", type=_positive_float, default=1.0, help="multiply every scale")
    s.add_argument("--out", type=Path, required=True, help="output directory")

    f = sub.add_parser("fit", parents=[common], help="fit by EM")
    model_args(f, required=False)
    f.add_argument("--states", type=_positive_int, help="state count for the default initializer")
    f.add_argument("--family", default="disk_gaussian", help="family for the default initializer")
    f.add_argument("--obs", type=Path, required=True, help="observations CSV")
    f.add_argument("--n-em", type=_positive_int, default=300)
    f.add_argument("--tol", type=_positive_float, default=1e-6)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--n-init", type=_positive_int, default=8,
                   help="random-partition candidates screened by the default initializer")
    f.add_argument("--out", type=Path, required=True, help="output directory")

    m = sub.add_parser("mc-study", parents=[common], help="Monte-Carlo study: re-simulate and refit N times")
    model_args(m)
    m.add_argument("--T", type=_positive_int, default=10_000)
    m.add_argument("--n-mc", type=_positive_int, default=5)
    m.add_argument("--n-em", type=_positive_int, default=300)
    m.add_argument("--tol", type=_positive_float, default=1e-6)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--sigma-scale", type=_positive_float, default=1.0)
    m.add_argument("--n-init", type=_positive_int, default=8,
                   help="random-partition candidates screened for the shared initial guess")
    m.add_argument("--workers", type=_positive_int, default=1)
    m.add_argument("--out", type=Path, required=True)

    o = sub.add_parser("oracle", parents=[common], help="run a self-check suite")
    o.add_argument("suite", choices=SUITES)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", type=Path, help="also write the report JSON to this directory")
    return p


# -- helpers -------------------------------------------------------------------

def _load_any(args):
    """Returns ``(model, grid)``; ``grid`` is None for chains."""
    if getattr(args, "preset", None):
        return PRESETS[args.preset](), None
    obj = io.read_json(args.model)
    if "grid" in obj:
        return io.field_from_json(obj, args.model)
    return io.model_from_json(obj, args.model), None


def _scaled(model, factor: float):
    return model if factor == 1.0 else model.replace(sigmas=np.asarray(model.sigmas) * factor)


def _outdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise io.ParseError(f"cannot create output directory: {exc.strerror}", path) from exc
    return path


def _write_scatter(path, manifold, obs, states):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(manifold.coord_names() + ["state"])
        for c, q in zip(manifold.to_coords(obs), states):
            w.writerow([repr(float(v)) for v in c] + [int(q)])


def _model_json(model, grid, **extra):
    if grid is not None:
        return io.field_to_json(model, grid, **extra)
    return io.model_to_json(model, **extra)


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    model, grid = _load_any(args)
    model = _scaled(model, args.sigma_scale)
    out = _outdir(args.out)
    m = model.family.manifold
    if grid is None:
        states, obs = simulate_hmm(model, args.T, args.seed)
    else:
        states, obs = simulate_field(model, grid, args.seed)
    io.write_observations(out / "observations.csv", m, obs, states, grid=grid)
    _write_scatter(out / "scatter.csv", m, obs, states)
    io.write_json(_model_json(model, grid), out / "model.json")
    log.info("wrote %d observations to %s", len(obs), out)
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.model is None and args.preset is None and args.states is None:
        raise UsageError("give --model/--preset for the initial parameters, or --states")
    out = _outdir(args.out)
    if args.model is not None or args.preset is not None:
        init, grid = _load_any(args)
        family = init.family
    else:
        family, grid, init = family_from_name(args.family), None, None
    obs, _, _ = io.read_observations(args.obs, family.manifold)

    if grid is not None:
        if len(obs) != grid.n_sites:
            raise io.ParseError(f"field has {grid.n_sites} sites but {len(obs)} observations", args.obs)
        res = field_em_fit(init, grid, obs, max_iter=args.n_em, tol=args.tol)
        payload = io.field_to_json(res.field, grid, loglik_trace=res.loglik_trace,
                                   iterations=res.iterations, converged=res.converged, flags=res.flags)
    else:
        if init is None:
            init = screened_init(family, obs, args.states, seed=args.seed, n_candidates=args.n_init)
        res = em_fit(init, obs, max_iter=args.n_em, tol=args.tol)
        fitted, perm = align_labels(res.params, init.locations)
        payload = io.model_to_json(fitted, loglik_trace=res.loglik_trace, iterations=res.iterations,
                                   converged=res.converged, flags=res.flags,
                                   label_permutation=[int(i) for i in perm])
    io.write_json(payload, out / "fitted.json")
    log.info("EM: %d iterations, loglik %.6f -> %.6f", res.iterations,
             res.loglik_trace[0], res.loglik_trace[-1])
    return EXIT_OK


def _mc_run(job):
    run, model, init, T, n_em, tol, seed_seq = job
    t0 = time.perf_counter()
    try:
        _, obs = simulate_hmm(model, T, seed_seq)
        res = em_fit(init, obs, max_iter=n_em, tol=tol)
    except (NumericalDegeneracyError, DegenerateMeanError, ConvergenceError) as exc:
        return {"run": run, "error": f"{type(exc).__name__}: {exc}"}
    fitted, _ = align_labels(res.params, model.locations)
    return {"run": run, "params": io.model_to_json(fitted), "iterations": res.iterations,
            "converged": res.converged, "loglik_init": res.loglik_trace[0],
            "loglik_final": res.loglik_trace[-1], "flags": res.flags,
            "seconds": time.perf_counter() - t0}


def summarize_runs(model: HmmParams, runs: list[dict]) -> dict:
    ok = sorted((r for r in runs if "error" not in r), key=lambda r: r["run"])
    failed = sorted((r for r in runs if "error" in r), key=lambda r: r["run"])
    summary = {"n_runs": len(runs), "n_failed": len(failed),
               "failures": [{"run": r["run"], "error": r["error"]} for r in failed]}
    if not ok:
        return summary
    fits = [io.model_from_json(r["params"]) for r in ok]
    m = model.family.manifold
    P = np.stack([f.P for f in fits])
    sig = np.stack([f.sigmas for f in fits])
    locs = np.stack([f.locations for f in fits])
    centres, loc_var = [], []
    for a in range(model.n_states):
        pts = locs[:, a]
        c = weighted_frechet_mean(m, pts, np.ones(len(pts)))
        centres.append(c)
        loc_var.append(float(np.mean(m.dist(c, pts) ** 2)))
    summary.update({
        "E_mc": {"P": P.mean(axis=0).tolist(), "sigmas": sig.mean(axis=0).tolist(),
                 "locations": [m.to_json(c) for c in centres]},
        "V_mc": {"P": P.var(axis=0).tolist(), "sigmas": sig.var(axis=0).tolist(),
                 "locations": loc_var},
        "max_V_mc": {"P": float(P.var(axis=0).max()), "sigmas": float(sig.var(axis=0).max()),
                     "locations": float(max(loc_var))},
        "location_error": [float(m.dist(c, y0)) for c, y0 in zip(centres, model.locations)],
        "runs": [{k: r[k] for k in ("run", "iterations", "converged", "loglik_init",
                                    "loglik_final", "seconds")} for r in ok],
    })
    return summary


def mc_study(model: HmmParams, T: int, n_mc: int, n_em: int, tol: float, seed: int,
             workers: int = 1, n_init: int = 8) -> dict:
    """Re-simulate and refit ``n_mc`` times from one shared initial guess.

    The initial guess comes from :func:`screened_init` on an extra pilot
    simulation drawn from its own stream, so every run starts from the same
    parameters and no run's data influences the start.
    """
    streams = np.random.SeedSequence(seed).spawn(n_mc + 1)
    _, pilot = simulate_hmm(model, T, streams[0])
    init = screened_init(model.family, pilot, model.n_states, seed=seed, n_candidates=n_init)
    jobs = [(r, model, init, T, n_em, tol, streams[r + 1]) for r in range(n_mc)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(_mc_run, jobs))
    else:
        runs = [_mc_run(j) for j in jobs]
    summary = summarize_runs(model, runs)
    summary["init"] = io.model_to_json(init)
    summary["truth"] = io.model_to_json(model)
    summary["config"] = {"T": T, "n_mc": n_mc, "n_em": n_em, "tol": tol, "seed": seed,
                         "n_init": n_init}
    return summary


def cmd_mc_study(args) -> int:
    model, grid = _load_any(args)
    if grid is not None:
        raise UsageError("mc-study runs on chain models only")
    model = _scaled(model, args.sigma_scale)
    out = _outdir(args.out)
    summary = mc_study(model, args.T, args.n_mc, args.n_em, args.tol, args.seed, args.workers,
                       args.n_init)
    io.write_json(summary, out / "summary.json")
    print(json.dumps({k: summary[k] for k in ("n_runs", "n_failed", "max_V_mc", "location_error")
                      if k in summary}, indent=2))
    return EXIT_OK


def cmd_oracle(args) -> int:
    report = run_suite(args.suite, args.seed)
    text = json.dumps(report.to_json(), indent=2)
    print(text)
    if args.out is not None:
        (_outdir(args.out) / f"oracle-{args.suite}.json").write_text(text + "\n")
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "mc-study": cmd_mc_study, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rhmm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalDegeneracyError as exc:
        where = f" (EM iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"rhmm: numerical degeneracy{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DegenerateMeanError, ConvergenceError) as exc:
        print(f"rhmm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"rhmm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
