"""Command-line entry point: ``efbv tune | run | certify | shapes``.

Reports go to stdout, logs (loguru) to stderr. Exit codes: 0 on
success, 1 when a certification fails, 2 on configuration or
parse errors, 3 when a run diverges.
"""

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import (
    Dict,
    List,
    Optional,
    Sequence,
    TextIO,
    Tuple,
)

from dotenv import load_dotenv
from loguru import logger

from . import __version__
from .certifier import certify, reference_solution
from .compressors import CompressorSpec, catalog, theoretical_params
from .config import (
    ExperimentManifest,
    SyntheticSpec,
    default_bits_per_coordinate,
    default_log_level,
    default_output_dir,
    load_manifest,
    parse_seeds,
)
from .engine import Simulator, average_records, bits_to_target
from .errors import (
    ConfigurationError,
    DivergenceError,
    EFBVError,
    LibSVMParseError,
)
from .problems import LogisticProblem, smoothness
from .tuning import shapes_report, tuning_report, validate_mode
from .types import (
    Algorithm,
    CertificationRow,
    ReferenceSolution,
    RoundRecord,
    SmoothnessProfile,
    TuningRow,
)

EXIT_OK = 0
EXIT_CERTIFICATION_FAILED = 1
EXIT_CONFIGURATION = 2
EXIT_DIVERGED = 3

_REPORT_ROWS = (
    ("eta", "eta"),
    ("omega", "omega"),
    ("omega_av", "omega_av"),
    ("lambda", "lam"),
    ("nu", "nu"),
    ("r", "r"),
    ("r_av", "r_av"),
    ("sqrt(r_av/r)", "sqrt_ratio"),
    ("s*", "s"),
    ("gamma", "gamma"),
)


def _fmt(value: Optional[float]) -> str:
    """17 significant digits, round-trip exact for float64."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def _short(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return format(float(value), ".3g")


# -- output helpers -------------------------------------------------


def write_trace(path: Path, records: Sequence[RoundRecord]) -> None:
    """CSV with header ``t,bits_per_node,f_gap,...``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RoundRecord.CSV_FIELDS)
        for rec in records:
            writer.writerow(
                [rec.t]
                + [
                    _fmt(getattr(rec, name))
                    for name in RoundRecord.CSV_FIELDS[1:]
                ]
            )


def write_gnuplot(
    path: Path, summaries: Dict[str, str]
) -> None:
    """gnuplot script plotting f_gap against bits per node."""
    plots = ", ".join(
        f"'{csv_name}' using 2:3 with lines title '{alg}'"
        for alg, csv_name in summaries.items()
    )
    path.write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set logscale y\n"
        "set xlabel 'bits per node'\n"
        "set ylabel 'f(x^t) - f*'\n"
        f"plot {plots}\n",
        encoding="utf-8",
    )


def write_report(
    out: TextIO, rows: Sequence[CertificationRow]
) -> None:
    """Certification rows as CSV, floats at full precision."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(rows[0].keys()))
    for row in rows:
        writer.writerow(
            [
                _fmt(v) if isinstance(v, float) else v
                for v in row.values()
            ]
        )


def print_tuning(rows: List[TuningRow], out: TextIO) -> None:
    """Table with one column per (label, algorithm)."""
    headers = [
        f"{r['label']} {r['algorithm']}".strip() for r in rows
    ]
    width = max([14] + [len(h) for h in headers]) + 2
    out.write(
        "".ljust(14) + "".join(h.rjust(width) for h in headers) + "\n"
    )
    for name, key in _REPORT_ROWS:
        values = [r[key] for r in rows]  # type: ignore[literal-required]
        if key == "gamma" and all(v is None for v in values):
            out.write(
                "gamma".ljust(14)
                + "  (needs L, L_tilde and mu; omitted)\n"
            )
            continue
        out.write(
            name.ljust(14)
            + "".join(_short(v).rjust(width) for v in values)
            + "\n"
        )


# -- subcommands ----------------------------------------------------


def _manifest_from_args(
    args: argparse.Namespace,
) -> Optional[ExperimentManifest]:
    if not args.config:
        given = [
            flag
            for flag, value in (
                ("--dataset", args.dataset),
                ("--synthetic", args.synthetic),
                ("--seeds", args.seeds),
            )
            if value
        ]
        if given:
            raise ConfigurationError(
                f"{', '.join(given)} only apply with --config"
            )
        return None
    manifest = load_manifest(args.config)
    synthetic = (
        SyntheticSpec.from_value(args.synthetic)
        if args.synthetic
        else None
    )
    seeds = parse_seeds(args.seeds) if args.seeds else None
    return manifest.with_overrides(
        dataset=args.dataset, synthetic=synthetic, seeds=seeds
    )


def cmd_tune(args: argparse.Namespace) -> int:
    """Print the tuning report for a manifest or explicit shape."""
    manifest = _manifest_from_args(args)
    mode_value = args.mode
    if mode_value is None and manifest is not None:
        mode_value = manifest.run.get("mode")
    mode = validate_mode(mode_value or "pl")
    profile: Optional[SmoothnessProfile] = None
    if manifest is not None:
        problem = manifest.build_problem()
        spec = manifest.run_config(
            manifest.algorithms[0], manifest.seeds[0], problem.dim
        ).compressor
        n = problem.n_workers
        profile = smoothness(problem, manifest.root_sum_L)
        algorithms = manifest.algorithms
    else:
        if None in (args.d, args.n, args.k, args.k_prime):
            raise ConfigurationError(
                "tune needs --config or all of --d, --n, --k, "
                "--k-prime"
            )
        spec = CompressorSpec.comp(args.d, args.k, args.k_prime)
        n = args.n
        algorithms = (Algorithm.EF_BV, Algorithm.EF21)
        if None not in (args.L, args.mu):
            L_tilde = args.L_tilde if args.L_tilde else args.L
            profile = SmoothnessProfile(
                L_list=(L_tilde,),
                L_tilde=L_tilde,
                L=args.L,
                mu=args.mu,
            )
    params = theoretical_params(spec, n)
    rows = tuning_report(
        params, profile, algorithms, mode, label=spec.label
    )
    print_tuning(rows, sys.stdout)
    return EXIT_OK


def cmd_shapes(args: argparse.Namespace) -> int:
    """Print EF-BV and EF21 constants for the four dataset shapes."""
    rows = shapes_report(mode=validate_mode(args.mode))
    for i in range(0, len(rows), 4):
        print_tuning(rows[i : i + 4], sys.stdout)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    """Certify the built-in catalog; exit 1 if anything fails."""
    reports = certify(
        catalog(args.d, args.n),
        args.n,
        probes=args.probes,
        samples=args.samples,
        seed=args.seed,
    )
    rows = [rep.to_row() for rep in reports]
    write_report(sys.stdout, rows)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(
            out_dir / "certification.csv",
            "w",
            newline="",
            encoding="utf-8",
        ) as fh:
            write_report(fh, rows)
    failed = [r["compressor"] for r in rows if not r["passed"]]
    if failed:
        logger.error(f"Certification FAILED for {failed}")
        return EXIT_CERTIFICATION_FAILED
    logger.success(f"All {len(rows)} compressors PASS")
    return EXIT_OK


RunJob = Tuple[
    Algorithm,
    int,
    ExperimentManifest,
    LogisticProblem,
    ReferenceSolution,
    Optional[int],
]
RunOutcome = Tuple[Algorithm, int, List[RoundRecord], Optional[str]]


def _run_job(job: RunJob) -> RunOutcome:
    algorithm, seed, manifest, problem, reference, bpc = job
    config = manifest.run_config(
        algorithm, seed, problem.dim, bits_per_coordinate=bpc
    )
    sim = Simulator(config, problem, reference)
    try:
        return algorithm, seed, sim.run(), None
    except DivergenceError as exc:
        return algorithm, seed, list(exc.records), str(exc)


def cmd_run(args: argparse.Namespace) -> int:
    """Run every (algorithm, seed) pair and write the CSV traces."""
    manifest = _manifest_from_args(args)
    if manifest is None:
        raise ConfigurationError("run needs --config")
    out_dir = Path(args.out) if args.out else default_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)

    bpc = args.bits_per_coord
    if bpc is None and "bits_per_coordinate" not in manifest.run:
        bpc = default_bits_per_coordinate()
    problem = manifest.build_problem()
    reference = reference_solution(problem)
    jobs: List[RunJob] = [
        (alg, seed, manifest, problem, reference, bpc)
        for alg in manifest.algorithms
        for seed in manifest.seeds
    ]
    logger.info(
        f"Running {len(jobs)} jobs with {args.jobs} processes; "
        f"writing to {out_dir}"
    )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(job) for job in jobs]

    diverged = False
    traces: Dict[Algorithm, List[List[RoundRecord]]] = {}
    for algorithm, seed, records, error in outcomes:
        write_trace(
            out_dir / f"{algorithm.value}_seed{seed}.csv", records
        )
        if error is not None:
            logger.error(
                f"{algorithm.value} seed {seed} diverged: {error}"
            )
            diverged = True
            continue
        traces.setdefault(algorithm, []).append(records)

    summaries: Dict[str, str] = {}
    with open(
        out_dir / "bits_to_target.csv",
        "w",
        newline="",
        encoding="utf-8",
    ) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "target", "bits_per_node"])
        for algorithm, runs in traces.items():
            name = f"summary_{algorithm.value}.csv"
            write_trace(out_dir / name, average_records(runs))
            summaries[algorithm.value] = name
            hits = [bits_to_target(r, manifest.target) for r in runs]
            mean = (
                math.inf
                if any(h is None for h in hits)
                else sum(hits) / len(hits)  # type: ignore[arg-type]
            )
            writer.writerow(
                [algorithm.value, _fmt(manifest.target), _fmt(mean)]
            )
            sys.stdout.write(
                f"{algorithm.value}: bits to f_gap <= "
                f"{manifest.target:g}: {_short(mean)}\n"
            )
    if args.gnuplot and summaries:
        write_gnuplot(out_dir / "plot.gp", summaries)
    if diverged:
        return EXIT_DIVERGED
    logger.success(f"Wrote {len(outcomes)} traces to {out_dir}")
    return EXIT_OK


# -- parser ---------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--log-level",
        default=None,
        help="loguru level (default EFBV_LOG_LEVEL or INFO)",
    )
    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--out", help="output directory")
    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", help="JSON experiment manifest")
    experiment.add_argument("--seeds", help="comma-separated seeds")
    source = experiment.add_mutually_exclusive_group()
    source.add_argument("--dataset", help="LibSVM data file")
    source.add_argument(
        "--synthetic", metavar="d,N,sep", help="synthetic data"
    )

    parser = argparse.ArgumentParser(
        prog="efbv",
        description=(
            "Simulate EF-BV, EF21 and DIANA with compressed "
            "communication."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=__version__
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tune_p = sub.add_parser(
        "tune", parents=[common, experiment], help="print derived constants"
    )
    tune_p.add_argument("--d", type=int)
    tune_p.add_argument("--n", type=int)
    tune_p.add_argument("--k", type=int)
    tune_p.add_argument("--k-prime", type=int)
    tune_p.add_argument("--L", type=float)
    tune_p.add_argument("--L-tilde", type=float)
    tune_p.add_argument("--mu", type=float)
    tune_p.add_argument(
        "--mode", choices=["pl", "kl", "nonconvex"]
    )
    tune_p.set_defaults(func=cmd_tune)

    run_p = sub.add_parser(
        "run",
        parents=[common, experiment, output],
        help="run and write CSV traces",
    )
    run_p.add_argument(
        "--bits-per-coord",
        type=int,
        default=None,
        help="wire bits per coordinate (default 64)",
    )
    run_p.add_argument(
        "--jobs", type=int, default=min(4, os.cpu_count() or 1)
    )
    run_p.add_argument(
        "--gnuplot", action="store_true", help="also write plot.gp"
    )
    run_p.set_defaults(func=cmd_run)

    cert_p = sub.add_parser(
        "certify", parents=[common, output], help="certify the catalog"
    )
    cert_p.add_argument("--d", type=int, default=16)
    cert_p.add_argument("--n", type=int, default=8)
    cert_p.add_argument("--samples", type=int, default=100_000)
    cert_p.add_argument("--probes", type=int, default=4)
    cert_p.add_argument("--seed", type=int, default=0)
    cert_p.set_defaults(func=cmd_certify)

    shapes_p = sub.add_parser(
        "shapes",
        aliases=["table10"],
        parents=[common],
        help="constants for the LibSVM dataset shapes",
    )
    shapes_p.add_argument(
        "--mode", default="pl", choices=["pl", "kl", "nonconvex"]
    )
    shapes_p.set_defaults(func=cmd_shapes)
    return parser


def configure_logging(level: Optional[str]) -> None:
    """Send loguru output to stderr at *level*."""
    level = (level or default_log_level()).upper()
    logger.remove()
    try:
        logger.add(sys.stderr, level=level)
    except ValueError as exc:
        logger.add(sys.stderr, level="INFO")
        raise ConfigurationError(
            f"unknown log level {level!r}"
        ) from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.log_level)
        return int(args.func(args))
    except DivergenceError as exc:
        logger.error(str(exc))
        return EXIT_DIVERGED
    except (ConfigurationError, LibSVMParseError) as exc:
        logger.error(str(exc))
        return EXIT_CONFIGURATION
    except EFBVError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_CONFIGURATION


if __name__ == "__main__":
    sys.exit(main())
