"""Command-line front end: batch inference over gridboxes and validation reports."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .diagnostics import summarize
from .gibbs import ChainConfig, ConvergenceFailure, PosteriorSample, run_until_converged
from .io import (
    GridboxDataset,
    InputError,
    RunConfig,
    fmt,
    load_config,
    load_ensemble_csv,
    load_reanalysis_csv,
    pair_gridboxes,
    write_ensemble_csv,
    write_reanalysis_csv,
)
from .model import CoexModel, InadequacyConfig, PriorConfig, validate
from .validation import (
    SyntheticTruth,
    dilution_expectation,
    generate_synthetic,
    ks_statistic,
    ks_uniform,
    loo_cv_pit,
    simulate_dilution,
)

log = logging.getLogger("coexchange")

SUMMARY_HEADER = ("gridbox_id", "quantity", "mean", "sd", "q05", "q25", "q50", "q75", "q95", "mcse", "psrf", "status")
ACCEPT_HEADER = ("gridbox_id", "nu_h_accept", "nu_f_accept", "total_iters")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3, 4

OK, NOT_CONVERGED, INVALID, ERROR = "ok", "not_converged", "invalid", "error"


def gridbox_seed(base_seed: int, gridbox_id: str) -> int:
    """64-bit seed that depends only on the base seed and this gridbox's id."""
    digest = hashlib.sha256(f"{base_seed}\x1f{gridbox_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class GridboxResult:
    gridbox_id: str
    status: str
    rows: tuple[tuple[str, ...], ...]
    accept: tuple[str, ...] | None
    message: str = ""


def _summary_rows(gid: str, sample: PosteriorSample, status: str) -> list[tuple[str, ...]]:
    rows = []
    for q in sorted(sample.quantities()):
        s = summarize(sample[q])
        stats = (s.mean, s.sd, s.q05, s.q25, s.q50, s.q75, s.q95, s.mcse, sample.window_psrf(q))
        rows.append((gid, q, *(fmt(v) for v in stats), status))
    return rows


def _empty_row(gid: str, status: str) -> tuple[str, ...]:
    return (gid, "", *([""] * 9), status)


def fit_gridbox(
    ds: GridboxDataset,
    priors: PriorConfig,
    inadequacy: InadequacyConfig,
    chains: ChainConfig,
) -> GridboxResult:
    """Fit one gridbox; every failure is turned into a status instead of an exception."""
    gid = ds.gridbox_id
    problems = validate(ds.data, ds.rean)
    if problems:
        return GridboxResult(gid, INVALID, (_empty_row(gid, INVALID),), None, "; ".join(problems))
    cfg = replace(chains, base_seed=gridbox_seed(chains.base_seed, gid))
    try:
        model = CoexModel(ds.data, ds.rean, priors, inadequacy)
        sample = run_until_converged(model, cfg, raise_on_failure=False)
        status = OK if sample.converged else NOT_CONVERGED
        message = "" if sample.converged else f"psrf above {cfg.psrf_threshold} after {sample.total_iters} iterations"
        rows = _summary_rows(gid, sample, status)
        accept = (gid, fmt(sample.accept_rate_h), fmt(sample.accept_rate_f), str(sample.total_iters))
        return GridboxResult(gid, status, tuple(rows), accept, message)
    except ValueError as exc:
        return GridboxResult(gid, INVALID, (_empty_row(gid, INVALID),), None, str(exc))
    except Exception as exc:  # numerical breakdown; isolate it to this gridbox
        return GridboxResult(gid, ERROR, (_empty_row(gid, ERROR),), None, f"{type(exc).__name__}: {exc}")


def _fit_job(args):
    return fit_gridbox(*args)


def _pool_map(fn: Callable, jobs: Sequence, parallelism: int) -> list:
    if parallelism <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def run_gridboxes(
    datasets: Iterable[GridboxDataset],
    priors: PriorConfig = PriorConfig(),
    inadequacy: InadequacyConfig = InadequacyConfig(),
    chains: ChainConfig = ChainConfig(),
    parallelism: int = 1,
) -> list[GridboxResult]:
    """Fit every gridbox independently; results are sorted by gridbox id."""
    datasets = list(datasets)
    ids = [d.gridbox_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError("gridbox ids must be unique")
    jobs = [(d, priors, inadequacy, chains) for d in sorted(datasets, key=lambda d: d.gridbox_id)]
    return _pool_map(_fit_job, jobs, parallelism)


def exit_code(results: Iterable[GridboxResult]) -> int:
    statuses = {r.status for r in results}
    if INVALID in statuses:
        return EXIT_VALIDATION
    if statuses & {NOT_CONVERGED, ERROR}:
        return EXIT_CONVERGENCE
    return EXIT_OK


def write_summary(path, results: Sequence[GridboxResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in results:
            w.writerows(r.rows)


def write_acceptance(path, results: Sequence[GridboxResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCEPT_HEADER)
        for r in results:
            w.writerow(r.accept if r.accept else (r.gridbox_id, "", "", ""))


# ---------------------------------------------------------------- subcommands

def _load_inputs(args) -> tuple[RunConfig, list[GridboxDataset]]:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, chains=replace(cfg.chains, base_seed=args.seed))
    subset = args.models.split(",") if getattr(args, "models", None) else cfg.model_subset
    ens = load_ensemble_csv(args.ensemble, subset)
    rean = load_reanalysis_csv(args.reanalysis)
    return cfg, pair_gridboxes(ens, rean)


def cmd_run(args) -> int:
    cfg, datasets = _load_inputs(args)
    results = run_gridboxes(datasets, cfg.priors, cfg.inadequacy, cfg.chains, args.jobs)
    for r in results:
        if r.status != OK:
            log.warning("gridbox %s: %s (%s)", r.gridbox_id, r.status, r.message)
    write_summary(args.out, results)
    accept_path = args.accept_out or str(Path(args.out).with_suffix("")) + ".accept.csv"
    write_acceptance(accept_path, results)
    log.info("%d gridboxes written to %s", len(results), args.out)
    return exit_code(results)


def cmd_synth(args) -> int:
    overrides = {}
    if args.truth:
        try:
            overrides = json.loads(Path(args.truth).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.truth}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    for key in ("r_hist", "r_fut", "model_ids"):
        if key in overrides and overrides[key] is not None:
            overrides[key] = tuple(overrides[key])
    try:
        truth = SyntheticTruth(**overrides)
    except TypeError as exc:
        raise InputError(f"truth: {exc}") from None
    ensembles, reanalyses, latents = {}, {}, {}
    width = len(str(args.gridboxes - 1))
    for g in range(args.gridboxes):
        gid = f"g{g:0{width}d}"
        data, rean, latent = generate_synthetic(truth, [args.seed, g])
        ensembles[gid], reanalyses[gid] = data, rean
        latents[gid] = {k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in latent.items()}
    write_ensemble_csv(args.out_ensemble, ensembles)
    write_reanalysis_csv(args.out_reanalysis, reanalyses)
    if args.out_truth:
        payload = {"truth": truth.to_dict(), "seed": args.seed, "latent": latents}
        Path(args.out_truth).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return EXIT_OK


def _cv_job(args):
    ds, cfg, mode = args
    problems = validate(ds.data, ds.rean)
    if problems:
        return ds.gridbox_id, INVALID, [], "; ".join(problems)
    if ds.data.n_models < 3:
        return ds.gridbox_id, INVALID, [], "leave-one-out needs at least 3 models"
    chains = replace(cfg.chains, base_seed=gridbox_seed(cfg.chains.base_seed, ds.gridbox_id))
    try:
        pits = loo_cv_pit(ds.data, ds.rean, cfg.priors, cfg.inadequacy, chains, mode)
    except ConvergenceFailure as exc:
        return ds.gridbox_id, NOT_CONVERGED, [], str(exc)
    return ds.gridbox_id, OK, pits, ""


def cmd_cv(args) -> int:
    cfg, datasets = _load_inputs(args)
    mode = {"all": "all_data", "future": "future_only"}[args.mode]
    results = _pool_map(_cv_job, [(d, cfg, mode) for d in datasets], args.jobs)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("gridbox_id", "model_id", "pit"))
        for gid, _, pits, _ in results:
            w.writerows((gid, mid, fmt(p)) for mid, p in pits)
    ks_path = args.ks_out or str(Path(args.out).with_suffix("")) + ".ks.csv"
    with open(ks_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("gridbox_id", "mode", "n_models", "ks_statistic", "ks_pvalue", "status"))
        for gid, status, pits, message in results:
            if status != OK:
                log.warning("gridbox %s: %s (%s)", gid, status, message)
                w.writerow((gid, args.mode, "", "", "", status))
                continue
            values = [p for _, p in pits]
            w.writerow((gid, args.mode, len(values), fmt(ks_statistic(values)), fmt(ks_uniform(values)), status))
    n_low = sum(1 for _, s, p, _ in results if s == OK and ks_uniform([v for _, v in p]) < 0.10)
    n_ok = sum(1 for r in results if r[1] == OK)
    print(f"{n_low} of {n_ok} gridboxes have KS p < 0.10 ({args.mode} mode)")
    return exit_code(GridboxResult(g, s, (), None) for g, s, _, _ in results)


DILUTION_CASES = (
    (0.5, 1.0, 1.0, 1),
    (0.0, 1.0, 1.0, 1),
    (0.5, 1.0, 1.0, 4),
    (0.5, 1.0, 0.25, 1),
    (1.0, 1.0, 1.0, 1),
    (0.5, 1.0, 0.0, 1),
)


def cmd_dilution(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("beta_prime", "sigma_H2", "sigma2", "R", "n_models", "analytic", "mc_mean", "mc_se", "z"))
    for k, (bp, sh2, s2, r) in enumerate(DILUTION_CASES):
        analytic = dilution_expectation(bp, sh2, s2, r)
        mean, se = simulate_dilution(bp, sh2, s2, r, n_models=args.models, n_reps=args.reps, seed=[args.seed, k])
        z = (mean - analytic) / se if se > 0 else 0.0
        w.writerow((bp, sh2, s2, r, args.models, fmt(analytic), fmt(mean), fmt(se), f"{z:.2f}"))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import geweke_test, grid_oracle, mh_gamma_target_check

    ok = True
    oracle = grid_oracle(n_problems=args.states, seed=args.seed)
    worst: dict[str, float] = {}
    for r in oracle:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    for name, err in sorted(worst.items()):
        passed = err < 1e-6
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} conditional {name}: max relative error {err:.2e}")
    mh = mh_gamma_target_check(seed=args.seed)
    passed = mh.chi2_pvalue > 0.01
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} nu MH on Gamma target: chi-square p = {mh.chi2_pvalue:.3f}, "
          f"acceptance {mh.accept_rate:.4f} (expected {mh.expected_accept_rate:.4f})")
    g = geweke_test(n_draws=args.geweke_draws, seed=args.seed)
    passed = g.max_abs_z < 4.0
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} Geweke joint test: max |z| = {g.max_abs_z:.2f} over {len(g.z)} moments")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coexchange", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("--ensemble", required=True, help="ensemble runs CSV")
        sp.add_argument("--reanalysis", required=True, help="reanalysis CSV")
        sp.add_argument("--config", help="JSON configuration")
        sp.add_argument("--models", help="comma-separated model ids to keep (overrides config)")
        sp.add_argument("--seed", type=int, help="base seed (overrides config)")
        sp.add_argument("-j", "--jobs", type=int, default=1, help="worker processes")

    sp = sub.add_parser("run", help="fit every gridbox and write posterior summaries")
    inputs(sp)
    sp.add_argument("--out", required=True, help="summary CSV")
    sp.add_argument("--accept-out", help="acceptance-rate CSV (default: <out>.accept.csv)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("synth", help="simulate a synthetic dataset from the model")
    sp.add_argument("--gridboxes", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--truth", help="JSON with SyntheticTruth overrides")
    sp.add_argument("--out-ensemble", required=True)
    sp.add_argument("--out-reanalysis", required=True)
    sp.add_argument("--out-truth", help="JSON file for the truth and latent values")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("cv", help="leave-one-out PIT and KS uniformity report")
    inputs(sp)
    sp.add_argument("--mode", choices=("all", "future"), default="all")
    sp.add_argument("--out", required=True, help="per-model PIT CSV")
    sp.add_argument("--ks-out", help="per-gridbox KS CSV (default: <out>.ks.csv)")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("dilution", help="Monte Carlo vs analytic regression dilution table")
    sp.add_argument("--reps", type=int, default=10000)
    sp.add_argument("--models", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_dilution)

    sp = sub.add_parser("check", help="conditional grid oracle, MH rig and Geweke test")
    sp.add_argument("--states", type=int, default=20)
    sp.add_argument("--geweke-draws", type=int, default=10000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
