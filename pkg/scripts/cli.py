"""
Command-line front end for the pan-private uniformity testing toolkit.

Usage:
    python -m scripts.cli test --tester simple --k 4 --m 400 --noiseless --instance exact-uniform
    python -m scripts.cli power --k 64 --m 2000 --trials 500 --threads 4
    python -m scripts.cli complexity --config configs/complexity_simple.conf
    python -m scripts.cli audit --mechanism randomized-response --epsilon 1 --claimed-epsilon 0.5

Exit codes: 0 success, 1 audit failure, 2 configuration error, 3 input-data error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

# Add the repository root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.config import settings
from app.models import ErrorResponse, NeighborPair, RunConfig, TesterConfig, TestVerdict
from app.services.core_prob import draw_entropy_seed, stream_budget
from app.services.experiments import (
    complexity_rows,
    estimate_power,
    export_csv,
    format_table,
    partition_distance_experiment,
    persist_results,
    power_rows,
    resolve_tester,
    sample_complexity_search,
    scaling_curve,
)
from app.services.hard_instances import StreamSource, UniformSource, build_source, far_source
from app.services.model_bridge import bridge_demo
from app.services.privacy_audit import build_mechanism, empirical_epsilon
from app.services.testers import REFERENCE_SAMPLE_SIZES, amplify
from app.utils.exceptions import PanPrivacyError, PersistenceError
from app.utils.validation import COMMAND_KEYS, RunConfigValidator

logger = logging.getLogger(__name__)

FLAG_TYPES: Dict[str, Callable[[str], Any]] = {
    "tester": str, "instance": str, "k": int, "k_values": str, "alpha": float, "epsilon": float,
    "m": int, "n": int, "trials": int, "repetitions": int, "decision_fraction": float,
    "distance_constant": float, "samples_file": str, "instance_file": str, "point_index": int,
    "target_separation": float, "m_cap": int, "csv": str, "mechanism": str,
    "claimed_epsilon": float, "confidence": float, "stream_a": str, "stream_b": str,
    "time": int, "protocol": str, "stream": str,
}

# Sub-stream of the run seed used for test-command streams
_STREAM_PATH = 2
_REPETITION_PATH = 3

COMMAND_HELP = {
    "test": "Run one tester on one stream and print its verdict as JSON",
    "power": "Estimate P[Uniform] on uniform and far inputs at a fixed m",
    "complexity": "Search the smallest m reaching the target separation",
    "curve": "Complexity points across k with the fitted log-log slope",
    "partition-exp": "How often a random partition keeps a far distribution far",
    "audit": "Empirical privacy-loss audit of a mechanism on a neighboring pair",
    "bridge-demo": "Run both pan/local transformations on a toy protocol",
}


def print_summary(title: str, frame: pd.DataFrame, footer: Optional[List[str]] = None) -> None:
    """Print a titled table with 6 significant digits."""
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    print(format_table(frame))
    if footer:
        print("-" * 60)
        for line in footer:
            print(line)


def _write_json(payload: str, path: str) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(payload + "\n")
    except OSError as e:
        raise PersistenceError(f"could not write {target}: {e}", details={"path": str(target)}) from e
    logger.info(f"Wrote {target}")


def _tester_config(config: RunConfig) -> TesterConfig:
    return TesterConfig(
        k=config.k,
        alpha=config.alpha,
        epsilon=config.epsilon,
        seed=config.seed,
        noiseless_debug=bool(config.noiseless),
    )


def _source_options(config: RunConfig) -> Dict[str, Any]:
    return dict(
        samples_file=config.samples_file,
        instance_file=config.instance_file,
        point_index=config.point_index or 0,
    )


def _source(config: RunConfig) -> StreamSource:
    if config.instance == "far":
        return far_source(config.k, config.alpha)
    return build_source(config.instance, config.k, alpha=config.alpha, **_source_options(config))


def cmd_test(config: RunConfig) -> int:
    cfg = _tester_config(config)
    tester = resolve_tester(config.tester, config.distance_constant)
    source = _source(config)
    budget = stream_budget(config.m, settings.poisson_margin_sigmas, settings.poisson_margin_offset)

    def run_once(repetition: int) -> TestVerdict:
        if config.repetitions == 1:
            run_cfg = cfg
        else:
            child = cfg.rng_seed.derive(_REPETITION_PATH, repetition)
            run_cfg = cfg.model_copy(update={"seed": child.seed, "stream_id": child.stream_id})
        stream = source.stream(budget, run_cfg.generator(_STREAM_PATH))
        return tester(stream, run_cfg, config.m)

    verdict = amplify(run_once, config.repetitions, config.decision_fraction)
    logger.info(f"{config.tester} on {source.describe()}: {verdict.verdict.value}")
    payload = {"verdict": verdict.verdict.value, **verdict.model_dump(exclude={"verdict"}, exclude_none=True)}
    payload["seed"] = config.seed
    text = json.dumps(payload)
    print(text)
    if config.output:
        _write_json(text, config.output)
    return 0


def cmd_power(config: RunConfig) -> int:
    estimate = estimate_power(
        resolve_tester(config.tester, config.distance_constant),
        UniformSource(config.k),
        _source(config),
        config.m,
        config.trials,
        _tester_config(config),
        tester_id=config.tester,
        instance=config.instance,
        threads=config.threads,
        distance_constant=config.distance_constant,
        source_options=_source_options(config),
    )
    path = persist_results([estimate], config.output)
    print_summary("POWER ESTIMATE", power_rows([estimate]), [f"Results: {path}", f"Seed: {config.seed}"])
    return 0


def cmd_complexity(config: RunConfig) -> int:
    point = sample_complexity_search(
        resolve_tester(config.tester, config.distance_constant),
        _tester_config(config),
        config.target_separation,
        config.trials,
        far_source=_source(config),
        tester_id=config.tester,
        instance=config.instance,
        m_cap=config.m_cap,
        threads=config.threads,
        distance_constant=config.distance_constant,
        source_options=_source_options(config),
    )
    path = persist_results([point], config.output)
    if config.csv:
        export_csv([point], config.csv)
    trace = pd.DataFrame([step.model_dump() for step in point.search_trace])
    outcome = f"m_star: {point.m_star}" if point.found else f"NotFound (m_cap={point.m_cap})"
    print_summary("SAMPLE COMPLEXITY SEARCH", trace, [outcome, f"Results: {path}", f"Seed: {config.seed}"])
    return 0


def cmd_curve(config: RunConfig) -> int:
    curve = scaling_curve(
        config.tester,
        config.k_values,
        config.alpha,
        config.epsilon,
        config.seed,
        config.trials,
        target_separation=config.target_separation,
        m_cap=config.m_cap,
        threads=config.threads,
        distance_constant=config.distance_constant,
    )
    path = persist_results([curve], config.output)
    if config.csv:
        export_csv([curve], config.csv)
    rows = complexity_rows([curve])
    reference = REFERENCE_SAMPLE_SIZES.get(config.tester)
    if reference is not None:
        rows["reference_m"] = [reference(k, config.alpha, config.epsilon) for k in rows["k"]]
    footer = [f"Results: {path}", f"Seed: {config.seed}"]
    if curve.slope is not None:
        footer.insert(0, f"slope: {curve.slope:.6g} +- {curve.stderr:.6g}")
    if curve.partial:
        footer.insert(0, "partial curve: some points were NotFound")
    if config.tester == "pan-n2":
        footer.insert(0, "pan-n2 is PanTest with two groups: an upper-bound proxy for sequentially interactive local testers")
    print_summary("SCALING CURVE", rows.drop(columns=["slope", "stderr"]), footer)
    return 0


def cmd_partition(config: RunConfig) -> int:
    record = partition_distance_experiment(config.k, config.n, config.alpha, config.trials, config.seed)
    path = persist_results([record], config.output)
    frame = pd.DataFrame([dict(
        k=record.k, n=record.n, alpha=record.alpha, tv=record.tv, trials=record.trials, bound=record.bound,
        success_fraction=record.success_fraction, standard_error=record.standard_error,
    )])
    print_summary("PARTITION DISTANCE", frame, [f"Results: {path}", f"Seed: {config.seed}"])
    return 0


def cmd_audit(config: RunConfig) -> int:
    pair = NeighborPair.from_streams(config.stream_a, config.stream_b)
    claimed = config.claimed_epsilon if config.claimed_epsilon is not None else config.epsilon
    mechanism = build_mechanism(
        config.mechanism,
        pair,
        config.epsilon,
        t=config.time,
        k=config.k,
        noiseless=bool(config.noiseless),
        seed=config.seed,
    )
    report = empirical_epsilon(mechanism, pair, config.trials, config.confidence, claimed, seed=config.seed)
    text = report.model_dump_json()
    print(text)
    if config.output:
        _write_json(text, config.output)
    return 1 if report.failed else 0


def cmd_bridge_demo(config: RunConfig) -> int:
    report = bridge_demo(config.protocol, config.stream, config.trials, config.seed, config.epsilon)
    frame = pd.DataFrame([row.model_dump() for row in report.prefixes])
    print_summary(
        f"MODEL BRIDGE: {report.protocol}",
        frame,
        [
            f"output TV (concatenated vs source): {report.output_tv:.6g}",
            f"max prefix TV: {report.max_tv:.6g}",
            f"stored states grow by appending: {report.prefix_monotone}",
            f"Seed: {config.seed}",
        ],
    )
    if config.output:
        _write_json(report.model_dump_json(), config.output)
    return 0


# Registry of available commands
COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "test": cmd_test,
    "power": cmd_power,
    "complexity": cmd_complexity,
    "curve": cmd_curve,
    "partition-exp": cmd_partition,
    "audit": cmd_audit,
    "bridge-demo": cmd_bridge_demo,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit run seed (drawn from entropy if omitted)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="Worker threads for trials")
    common.add_argument("--output", default=argparse.SUPPRESS, help="Result file path")
    common.add_argument("--config", default=None, help="key=value run config file")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        description="Pan-private uniformity testing: testers, experiments, audits.",
        epilog="Examples:\n"
               "  python -m scripts.cli test --k 4 --m 400 --noiseless --instance exact-uniform\n"
               "  python -m scripts.cli curve --config configs/curve_simple.conf --threads 4\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, keys in COMMAND_KEYS.items():
        sub = subparsers.add_parser(command, parents=[common], help=COMMAND_HELP[command])
        for key in sorted(keys):
            flag = "--" + key.replace("_", "-")
            if key == "noiseless":
                sub.add_argument(flag, dest=key, action="store_true", default=argparse.SUPPRESS,
                                 help="Debug mode without Poissonization or noise (never private)")
            else:
                sub.add_argument(flag, dest=key, type=FLAG_TYPES[key], default=argparse.SUPPRESS)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over the config file over defaults and validate the result."""
    flags = {
        key: value for key, value in vars(args).items()
        if key not in ("command", "config", "verbose")
    }
    file_values = RunConfigValidator.parse_config_file(args.config) if args.config else {}
    merged = RunConfigValidator.merge(args.command, file_values, flags)
    config = RunConfigValidator.validate(args.command, merged)

    updates: Dict[str, Any] = {}
    if config.seed is None:
        updates["seed"] = draw_entropy_seed()
        print(f"seed: {updates['seed']}", file=sys.stderr)
    if config.threads is None:
        updates["threads"] = settings.threads
    if config.output is None:
        updates["output"] = RunConfigValidator.default_output(args.command)
    return config.model_copy(update=updates) if updates else config


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    # Configure logging
    log_level = logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    try:
        config = load_run_config(args)
        logger.debug(f"{args.command} config: {config.extras()}")
        return COMMANDS[args.command](config)
    except PanPrivacyError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        response = ErrorResponse(message=e.message, error_code=e.error_code, details=e.details)
        print(response.model_dump_json(exclude_none=True), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
