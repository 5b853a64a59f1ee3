########################
# Command-Line Surface #
########################

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app.color import Color
from app.exceptions import ConfigurationError, ConvergenceError, OperationError, ValidationError
from app.exports import (
    batch_frame,
    read_batch_csv,
    read_runtime_cdf,
    trajectory_frame,
    write_csv,
    write_json,
    write_kernel,
    write_metadata,
    write_plot_data,
)
from app.g_function import build_g_approx
from app.lab_config import LabConfig
from app.logger import Logger
from app.observers import LoggingObserver, SummaryObserver
from app import oracle
from app.protocols import ProtocolFactory, ProtocolSpec
from app.simulation import AdversaryPolicy, SimConfig, batch, x0_from_d
from app.stats import (
    MEAN_RUNTIME_TOL,
    ORACLE_SUP_CDF_TOL,
    SUP_CDF_TOL,
    WINNER_TOL,
    EmpiricalDist,
    compare_report,
)
from app.theory import runtime_cdf_prediction, z_density
from app.update_function import f_grid, validate

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

THEORY_MODES = ("emit_f_grid", "emit_z_density", "emit_g", "emit_runtime_cdf", "emit_axioms")


def _seed(text: str) -> int:
    # accepts 12648430 as well as 0xC0FFEE
    return int(text, 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consensus-lab",
        description="Simulate majority-type consensus protocols and compute their runtime limit laws.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, help="JSON file of flag values; explicit flags win")
        sub.add_argument("--out", type=Path, help="output file (default: stdout)")
        sub.add_argument("--protocol", action="append",
                         help='JSON spec or shorthand such as "kmaj:3" or "randkmaj:3=0.5,5=0.5"')

    simulate = subparsers.add_parser("simulate", help="run a seeded Monte Carlo batch")
    common(simulate)
    simulate.add_argument("--n", type=int)
    simulate.add_argument("--runs", type=int)
    simulate.add_argument("--d", type=float, help="initial bias: x0 = n/2 + d sqrt(n)")
    simulate.add_argument("--x0", type=int, help="initial X-count")
    simulate.add_argument("--adversary", help='"direction:budget", e.g. "toward_minority:sqrt_over_log"')
    simulate.add_argument("--seed", type=_seed)
    simulate.add_argument("--max-rounds", type=int)
    simulate.add_argument("--trajectories", type=Path, help="also write (run_index, t, x_t) rows here")
    simulate.add_argument("--cdf-out", type=Path, help="also write the sample survival function here")

    theory = subparsers.add_parser("theory", help="emit limit-law curves and plot data")
    common(theory)
    theory.add_argument("--emit-f-grid", action="store_true")
    theory.add_argument("--emit-z-density", action="store_true")
    theory.add_argument("--emit-g", action="store_true")
    theory.add_argument("--emit-runtime-cdf", action="store_true")
    theory.add_argument("--emit-axioms", action="store_true")
    theory.add_argument("--points", type=int, help="grid points of the f table")
    theory.add_argument("--d", type=float)
    theory.add_argument("--n", type=int)
    theory.add_argument("--tol", type=float)
    theory.add_argument("--grid-size", type=int)

    exact = subparsers.add_parser("oracle", help="exact Markov-chain answers for small n")
    common(exact)
    exact.add_argument("--n", type=int)
    exact.add_argument("--x0", type=int)
    exact.add_argument("--t-max", type=int)
    exact.add_argument("--dominance", action="store_true")
    exact.add_argument("--x", type=float)
    exact.add_argument("--xprime", type=float)
    exact.add_argument("--linear", action="store_true", help="cross-check winner probability by linear solve")
    exact.add_argument("--kernel-out", type=Path, help="dump the kernel as binary float64; relative paths land in the output directory")

    compare = subparsers.add_parser("compare", help="compare a batch with a prediction and the oracle")
    common(compare)
    compare.add_argument("--batch", type=Path)
    compare.add_argument("--prediction", type=Path)
    compare.add_argument("--oracle", type=Path)
    compare.add_argument("--sup-tol", type=float)
    compare.add_argument("--winner-tol", type=float)
    compare.add_argument("--mean-tol", type=float)
    compare.add_argument("--oracle-tol", type=float)
    return parser


def merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """
    Fill unset flags from the --config JSON file.

    Keys use the flag names with dashes or underscores. Flags given on the
    command line are never overridden.

    Raises:
        ValidationError: On an unreadable file or a key that names no flag.
    """
    if args.config is None:
        return args
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"Could not read config file {args.config}: {e}") from e
    if not isinstance(data, dict):
        raise ValidationError(f"Config file {args.config} must hold a JSON object")
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest in ("command", "config") or not hasattr(args, dest):
            raise ValidationError(f"Unknown config key '{key}' for {args.command}")
        current = getattr(args, dest)
        if current is not None and current is not False:
            continue
        if dest == "protocol":
            items = value if isinstance(value, list) else [value]
            value = [item if isinstance(item, str) else json.dumps(item) for item in items]
        elif dest in ("out", "trajectories", "cdf_out", "batch", "prediction", "oracle", "kernel_out"):
            value = Path(value)
        elif dest == "seed" and isinstance(value, str):
            value = _seed(value)
        setattr(args, dest, value)
    Logger.infoLog(f"Merged {len(data)} keys from {args.config}")
    return args


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = ["--" + name.replace("_", "-") for name in names if getattr(args, name) is None]
    if missing:
        raise ValidationError(f"{args.command} needs {', '.join(missing)}")


def _protocols(args: argparse.Namespace) -> List[ProtocolSpec]:
    _require(args, "protocol")
    return [ProtocolFactory.parse(text) for text in args.protocol]


def _protocol(args: argparse.Namespace) -> ProtocolSpec:
    specs = _protocols(args)
    if len(specs) != 1:
        raise ValidationError(f"{args.command} takes exactly one --protocol, got {len(specs)}")
    return specs[0]


def cmd_simulate(args: argparse.Namespace, config: LabConfig) -> int:
    _require(args, "n", "runs")
    spec = _protocol(args)
    if args.d is not None and args.x0 is not None:
        raise ValidationError("--d and --x0 are mutually exclusive")
    x0 = args.x0 if args.x0 is not None else x0_from_d(args.n, args.d or 0.0)
    adversary = AdversaryPolicy.parse(args.adversary) if args.adversary else AdversaryPolicy.none()
    sim_config = SimConfig(
        n=args.n,
        x0=x0,
        protocol=spec,
        adversary=adversary,
        max_rounds=args.max_rounds,
        master_seed=args.seed if args.seed is not None else config.seed,
        record_trajectory=args.trajectories is not None,
    )
    summary = SummaryObserver()
    outcomes = batch(sim_config, args.runs, observers=[LoggingObserver(), summary], threads=config.threads)
    write_csv(batch_frame(outcomes), args.out, config.default_encoding)
    if args.trajectories is not None:
        write_csv(trajectory_frame(outcomes), args.trajectories, config.default_encoding)
    if args.cdf_out is not None:
        sample = EmpiricalDist.from_outcomes(outcomes, spec.shorthand())
        write_csv(sample.to_frame(), args.cdf_out, config.default_encoding)
        write_metadata(args.cdf_out, {"protocol": spec.to_dict(), "n": sim_config.n, "x0": sim_config.x0},
                       config.default_encoding)
    Color.printColorOutput(summary.summary(), "green")
    return EXIT_OK


def cmd_theory(args: argparse.Namespace, config: LabConfig) -> int:
    modes = [mode for mode in THEORY_MODES if getattr(args, mode)]
    if len(modes) != 1:
        raise ValidationError("theory needs exactly one of " + ", ".join(
            "--" + mode.replace("_", "-") for mode in THEORY_MODES))
    mode = modes[0]
    encoding = config.default_encoding

    if mode == "emit_f_grid":
        write_plot_data(f_grid(_protocols(args), points=args.points or 101), args.out, encoding)
        return EXIT_OK

    spec = _protocol(args)
    if mode == "emit_axioms":
        report = validate(spec)
        write_json(report.to_dict(), args.out, encoding)
        return EXIT_OK if report.passed else EXIT_FAILED_CHECK
    if mode == "emit_z_density":
        _require(args, "d")
        write_plot_data(z_density(spec, args.d), args.out, encoding)
        return EXIT_OK

    tol = args.tol if args.tol is not None else config.g_tol
    grid_size = args.grid_size if args.grid_size is not None else config.g_grid_size
    if mode == "emit_g":
        approx = build_g_approx(spec, grid_size, tol)
        write_plot_data(approx.to_frame(), args.out, encoding)
        if args.out is not None:
            write_metadata(args.out, approx.metadata(), encoding)
        Color.printColorOutput(f"g(0) = {approx.g0:.6f}, a_used={approx.a_used}, b_used={approx.b_used}", "green")
        return EXIT_OK

    _require(args, "n", "d")
    approx = build_g_approx(spec, grid_size, tol)
    law = runtime_cdf_prediction(spec, args.n, args.d, approx)
    write_csv(law.to_frame(), args.out, encoding)
    if args.out is not None:
        metadata = law.metadata()
        metadata.update({"g0": approx.g0, "a_used": approx.a_used, "b_used": approx.b_used, "tol": approx.tol})
        write_metadata(args.out, metadata, encoding)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace, config: LabConfig) -> int:
    _require(args, "n")
    spec = _protocol(args)
    chain = oracle.build(args.n, spec, max_n=config.exact_max_n)
    if args.kernel_out is not None:
        kernel_path = Path(args.kernel_out)
        if not kernel_path.is_absolute():
            kernel_path = config.output_dir / kernel_path
        write_kernel(chain.kernel, kernel_path)

    if args.dominance:
        _require(args, "x", "xprime")
        result = oracle.dominance_check(chain, args.x, args.xprime)
        line = result.verdict() + "\n"
        if args.out is None:
            print(line, end="")
        else:
            Path(args.out).write_text(line, encoding=config.default_encoding)
        return EXIT_OK if result.holds else EXIT_FAILED_CHECK

    _require(args, "x0")
    exact = oracle.runtime_distribution(chain, args.x0, args.t_max)
    win_x, _ = oracle.winner_probability_exact(chain, args.x0)
    if args.linear:
        solved = float(oracle.winner_probability_linear(chain)[args.x0])
        Logger.infoLog(f"Winner probability: propagation {win_x!r}, linear solve {solved!r}")
        Color.printColorOutput(f"P(X wins): propagation {win_x:.12f}, linear {solved:.12f}", "green")
    write_csv(exact.to_frame(), args.out, config.default_encoding)
    if args.out is not None:
        write_metadata(args.out, {
            "protocol": spec.to_dict(),
            "n": chain.n,
            "x0": exact.x0,
            "win_probability": win_x,
            "mean_runtime": exact.mean(),
            "residual": exact.residual,
        }, config.default_encoding)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, config: LabConfig) -> int:
    _require(args, "batch", "prediction")
    encoding = config.default_encoding
    prediction = read_runtime_cdf(args.prediction, encoding)
    sample = EmpiricalDist.from_outcomes(read_batch_csv(args.batch, encoding), prediction.label)
    exact = read_runtime_cdf(args.oracle, encoding) if args.oracle is not None else None
    report = compare_report(
        sample,
        prediction,
        oracle=exact,
        oracle_win_probability=exact.win_probability() if exact is not None else None,
        sup_tol=args.sup_tol if args.sup_tol is not None else SUP_CDF_TOL,
        winner_tol=args.winner_tol if args.winner_tol is not None else WINNER_TOL,
        mean_tol=args.mean_tol if args.mean_tol is not None else MEAN_RUNTIME_TOL,
        oracle_tol=args.oracle_tol if args.oracle_tol is not None else ORACLE_SUP_CDF_TOL,
    )
    write_json(report.to_dict(), args.out, encoding)
    if not report.passed:
        failed = [criterion.name for criterion in report.criteria if not criterion.passed]
        Color.printError(f"compare: failed criteria {failed}")
        return EXIT_FAILED_CHECK
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "theory": cmd_theory,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the consensus-lab command line.

    Returns 0 on success, 1 when a requested check fails, 2 on invalid input
    and 3 when a numerical computation cannot be completed. Data goes to stdout
    or --out; every diagnostic goes to stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    try:
        config = LabConfig()
        config.validate()
        Logger._setup_logging(config)
        merge_config(args)
        Logger.infoLog(f"Running {args.command}")
        return COMMANDS[args.command](args, config)
    except (ValidationError, ConfigurationError) as e:
        Color.printError(f"error: {type(e).__name__}: {e}")
        Logger.errorLog(f"{args.command} rejected its input: {e}")
        return EXIT_INVALID
    except ConvergenceError as e:
        Color.printError(f"error: {type(e).__name__}: {e} [{e.diagnostics()}]")
        Logger.errorLog(f"{args.command} did not converge: {e} [{e.diagnostics()}]")
        return EXIT_NUMERICAL
    except OperationError as e:
        Color.printError(f"error: {type(e).__name__}: {e}")
        Logger.errorLog(f"{args.command} failed: {e}")
        return EXIT_NUMERICAL
