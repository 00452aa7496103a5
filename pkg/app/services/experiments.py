"""
Monte-Carlo harness: power estimation, sample-complexity search, scaling
curves, the partition-distance experiment and result persistence.

Every trial draws its randomness from RngSeed.derive(side, trial_index) of
the run seed, so results do not depend on the thread count or on the order
in which workers finish.
"""

from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import json
import logging
import math

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError
from scipy.stats import linregress
from statsmodels.stats.proportion import proportion_confint

from app.config import settings
from app.models.common import RecordType
from app.models.distribution import DiscreteDistribution, RngSeed
from app.models.experiment import (
    ComplexityPoint,
    ExperimentConfig,
    PartitionRecord,
    PowerEstimate,
    ScalingCurve,
    SearchStep,
)
from app.models.tester import TesterConfig
from app.services.core_prob import stream_budget, tv_distance, uniform
from app.services.hard_instances import (
    StreamSource,
    UniformSource,
    build_source,
    far_source as default_far_source,
    paninski_distribution,
    random_paninski,
    target_tv,
)
from app.services.testers import Tester, get_tester, pan_test, two_group_pan_test
from app.utils.exceptions import DomainError, InputDataError, PersistenceError

logger = logging.getLogger(__name__)

Record = Union[PowerEstimate, ComplexityPoint, ScalingCurve, PartitionRecord]

RECORD_MODELS = {
    RecordType.POWER.value: PowerEstimate,
    RecordType.COMPLEXITY.value: ComplexityPoint,
    RecordType.CURVE.value: ScalingCurve,
    RecordType.PARTITION.value: PartitionRecord,
}

# ExperimentConfig fields that pick the far source beyond its instance name
SOURCE_OPTION_KEYS = ("samples_file", "instance_file", "point_index")

# Sides of a power experiment, used as the first derive() path component
UNIFORM_SIDE = 0
FAR_SIDE = 1


def resolve_tester(tester_id: str, distance_constant: Optional[float] = None) -> Tester:
    tester = get_tester(tester_id)
    if distance_constant is not None and tester in (pan_test, two_group_pan_test):
        return partial(tester, distance_constant=distance_constant)
    return tester


def resolve_source(config: ExperimentConfig) -> StreamSource:
    """Far-side source of a recorded experiment"""
    if config.instance == "far":
        return default_far_source(config.k, config.alpha)
    return build_source(
        config.instance,
        config.k,
        alpha=config.alpha,
        samples_file=config.samples_file,
        instance_file=config.instance_file,
        point_index=config.point_index,
    )


def _source_options(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(include=set(SOURCE_OPTION_KEYS))


def _experiment_config(
    cfg: TesterConfig,
    tester_id: str,
    instance: str,
    trials: int,
    distance_constant: Optional[float],
    source_options: Optional[Mapping[str, Any]],
) -> ExperimentConfig:
    options: Dict[str, Any] = dict(source_options or {})
    unknown = set(options) - set(SOURCE_OPTION_KEYS)
    if unknown:
        raise DomainError(f"unknown source options: {sorted(unknown)}")
    return ExperimentConfig(
        tester_id=tester_id,
        instance=instance,
        k=cfg.k,
        alpha=cfg.alpha,
        epsilon=cfg.epsilon,
        trials=trials,
        seed=cfg.seed,
        stream_id=cfg.stream_id,
        noiseless=cfg.noiseless_debug,
        distance_constant=distance_constant,
        **{key: value for key, value in options.items() if value is not None},
    )


def wilson_interval(successes: int, trials: int, confidence: Optional[float] = None) -> Tuple[float, float]:
    confidence = settings.wilson_confidence if confidence is None else confidence
    low, high = proportion_confint(successes, trials, alpha=1.0 - confidence, method="wilson")
    return float(low), float(high)


def _run_trials(
    tester: Tester,
    source: StreamSource,
    cfg: TesterConfig,
    m: int,
    side: int,
    indices: Sequence[int],
) -> List[Optional[bool]]:
    """Uniform verdict per trial; None marks a trial that hit an input error."""
    budget = stream_budget(m, settings.poisson_margin_sigmas, settings.poisson_margin_offset)
    outcomes: List[Optional[bool]] = []
    base = cfg.rng_seed
    for index in indices:
        trial_seed = base.derive(side, int(index))
        trial_cfg = cfg.model_copy(update={"seed": trial_seed.seed, "stream_id": trial_seed.stream_id})
        stream = source.stream(budget, trial_seed.generator(2))
        try:
            outcomes.append(tester(stream, trial_cfg, m).is_uniform)
        except InputDataError as e:
            logger.warning(f"Trial {index} on side {side} failed: {e.message}")
            outcomes.append(None)
    return outcomes


def _verdicts(
    tester: Tester,
    source: StreamSource,
    cfg: TesterConfig,
    m: int,
    side: int,
    trials: int,
    threads: int,
) -> List[Optional[bool]]:
    if threads <= 1:
        return _run_trials(tester, source, cfg, m, side, range(trials))
    chunks = [c for c in np.array_split(np.arange(trials), threads * 4) if c.size]
    parts = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_run_trials)(tester, source, cfg, m, side, chunk) for chunk in chunks
    )
    return [outcome for part in parts for outcome in part]


def estimate_power(
    tester: Tester,
    uniform_source: StreamSource,
    far_source: StreamSource,
    m: int,
    trials: int,
    cfg: TesterConfig,
    tester_id: str = "custom",
    instance: Optional[str] = None,
    threads: Optional[int] = None,
    distance_constant: Optional[float] = None,
    min_trials: Optional[int] = None,
    source_options: Optional[Mapping[str, Any]] = None,
) -> PowerEstimate:
    """
    Run the tester on `trials` fresh streams from each source and record how
    often it answers Uniform, with Wilson intervals. Trials that raise an
    input error are tallied per side and excluded from the frequencies.
    `source_options` (samples_file, instance_file, point_index) are recorded
    so the far source can be rebuilt on replay.
    """
    min_trials = settings.min_power_trials if min_trials is None else min_trials
    if trials < min_trials:
        raise DomainError(f"power estimation needs at least {min_trials} trials, got {trials}")
    threads = settings.threads if threads is None else threads

    sides = {}
    for side, source in ((UNIFORM_SIDE, uniform_source), (FAR_SIDE, far_source)):
        outcomes = _verdicts(tester, source, cfg, m, side, trials, threads)
        valid = [o for o in outcomes if o is not None]
        errors = len(outcomes) - len(valid)
        if not valid:
            raise InputDataError(f"every trial on the {source.name} side failed", details={"errors": errors})
        uniform_count = sum(valid)
        sides[side] = (uniform_count / len(valid), wilson_interval(uniform_count, len(valid)), errors)

    p_uu, uniform_interval, uniform_errors = sides[UNIFORM_SIDE]
    p_uf, far_interval, far_errors = sides[FAR_SIDE]
    halfwidth = max((hi - lo) / 2.0 for lo, hi in (uniform_interval, far_interval))
    estimate = PowerEstimate(
        config=_experiment_config(
            cfg, tester_id, instance or far_source.name, trials, distance_constant, source_options
        ),
        m=m,
        p_uniform_given_uniform=p_uu,
        p_uniform_given_far=p_uf,
        uniform_interval=uniform_interval,
        far_interval=far_interval,
        wilson_halfwidth=halfwidth,
        uniform_errors=uniform_errors,
        far_errors=far_errors,
        far_tv=far_source.tv,
    )
    logger.debug(f"{tester_id} m={m}: P[U|U]={p_uu:.6g}, P[U|far]={p_uf:.6g}")
    return estimate


def sample_complexity_search(
    tester: Tester,
    cfg: TesterConfig,
    target_separation: float,
    trials: int,
    uniform_source: Optional[StreamSource] = None,
    far_source: Optional[StreamSource] = None,
    tester_id: str = "custom",
    instance: str = "far",
    m_cap: Optional[int] = None,
    start_m: Optional[int] = None,
    refine_factor: Optional[float] = None,
    threads: Optional[int] = None,
    distance_constant: Optional[float] = None,
    min_trials: Optional[int] = None,
    source_options: Optional[Mapping[str, Any]] = None,
) -> ComplexityPoint:
    """
    Smallest m whose conservative separation (lower Wilson bound of
    P[U|uniform] minus upper bound of P[U|far]) reaches the target: doubling
    from start_m, then geometric bisection until hi/lo <= refine_factor.
    Returns found=False when m_cap is reached without success.
    """
    if not 0 <= target_separation < 1:
        raise DomainError(f"target separation must lie in [0, 1), got {target_separation}")
    m_cap = settings.search_m_cap if m_cap is None else m_cap
    start_m = settings.search_start_m if start_m is None else start_m
    refine_factor = settings.search_refine_factor if refine_factor is None else refine_factor
    uniform_source = uniform_source or UniformSource(cfg.k)
    far_source = far_source or default_far_source(cfg.k, cfg.alpha)

    config = _experiment_config(cfg, tester_id, instance, trials, distance_constant, source_options)
    point = dict(
        config=config,
        target_separation=target_separation,
        m_cap=m_cap,
        start_m=start_m,
        refine_factor=refine_factor,
    )
    if target_separation <= 0:
        return ComplexityPoint(found=True, m_star=start_m, **point)

    trace: List[SearchStep] = []

    def evaluate_at(m: int, phase: str) -> bool:
        estimate = estimate_power(
            tester, uniform_source, far_source, m, trials, cfg,
            tester_id=tester_id, threads=threads, min_trials=min_trials,
        )
        trace.append(SearchStep(
            m=m,
            separation=estimate.separation,
            conservative_separation=estimate.conservative_separation,
            phase=phase,
        ))
        logger.info(
            f"{tester_id} k={cfg.k} {phase} m={m}: separation {estimate.separation:.6g} "
            f"(conservative {estimate.conservative_separation:.6g})"
        )
        return estimate.conservative_separation >= target_separation

    lo: Optional[int] = None
    m = start_m
    while True:
        if evaluate_at(m, "doubling"):
            hi = m
            break
        if m >= m_cap:
            logger.warning(f"{tester_id} k={cfg.k}: target {target_separation} not reached by m_cap={m_cap}")
            return ComplexityPoint(found=False, search_trace=trace, **point)
        lo = m
        m = min(2 * m, m_cap)

    while lo is not None and hi / lo > refine_factor:
        mid = int(round(math.sqrt(lo * hi)))
        if mid <= lo or mid >= hi:
            break
        if evaluate_at(mid, "bisection"):
            hi = mid
        else:
            lo = mid

    return ComplexityPoint(found=True, m_star=hi, search_trace=trace, **point)


def fit_slope(k_values: Sequence[float], m_values: Sequence[float]) -> Tuple[float, float]:
    """Least-squares slope of log m against log k, with its standard error"""
    if len(k_values) < 2:
        raise DomainError("slope fitting needs at least two points")
    fit = linregress(np.log(np.asarray(k_values, dtype=float)), np.log(np.asarray(m_values, dtype=float)))
    return float(fit.slope), float(fit.stderr)


def scaling_curve(
    tester_id: str,
    k_values: Sequence[int],
    alpha: float,
    epsilon: float,
    seed: Union[RngSeed, int],
    trials: int,
    target_separation: Optional[float] = None,
    m_cap: Optional[int] = None,
    threads: Optional[int] = None,
    distance_constant: Optional[float] = None,
    tester: Optional[Tester] = None,
) -> ScalingCurve:
    """One ComplexityPoint per k plus the fitted log-log slope; NotFound points mark the curve partial."""
    if list(k_values) != sorted(k_values) or any(k < 4 for k in k_values):
        raise DomainError("k_values must be sorted and each at least 4")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(seed=int(seed))
    target_separation = settings.target_separation if target_separation is None else target_separation
    tester = tester or resolve_tester(tester_id, distance_constant)

    points: List[ComplexityPoint] = []
    for k in k_values:
        point_seed = seed.derive(int(k))
        cfg = TesterConfig(k=k, alpha=alpha, epsilon=epsilon, seed=point_seed.seed, stream_id=point_seed.stream_id)
        point = sample_complexity_search(
            tester, cfg, target_separation, trials,
            tester_id=tester_id, m_cap=m_cap, threads=threads, distance_constant=distance_constant,
        )
        logger.info(f"{tester_id} k={k}: m_star={point.m_star if point.found else 'NotFound'}")
        points.append(point)

    found = [p for p in points if p.found]
    partial_curve = len(found) < len(points)
    slope = stderr = None
    if len(found) >= 2:
        slope, stderr = fit_slope([p.config.k for p in found], [p.m_star for p in found])
    return ScalingCurve(
        tester_id=tester_id,
        alpha=alpha,
        epsilon=epsilon,
        seed=seed.seed,
        points=points,
        slope=slope,
        stderr=stderr,
        partial=partial_curve,
    )


def partition_bound(tv: float, n: int, k: int) -> float:
    """Half the distance floor (tv / 477) * sqrt(n / (10 k)) a random partition keeps"""
    return 0.5 * (tv / 477.0) * math.sqrt(n / (10.0 * k))


def partition_distance_experiment(
    k: int,
    n: int,
    alpha: float,
    trials: int,
    seed: Union[RngSeed, int],
    distribution: Optional[DiscreteDistribution] = None,
    bound: Optional[float] = None,
    batch_size: int = 10_000,
) -> PartitionRecord:
    """
    Fraction of random partitions into n groups for which the induced
    distribution over groups stays at least `bound` away from U_n in TV.
    By default p is a far Paninski instance at TV exactly alpha and the bound
    is partition_bound(alpha, n, k).
    A caller-supplied distribution, the bound and the batch size are stored
    on the record so rerun_record replays the same count.
    """
    if not 2 <= n <= k:
        raise DomainError(f"partition needs 2 <= n <= k, got n={n}, k={k}")
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(seed=int(seed))
    recorded_distribution = None if distribution is None else distribution.as_tuple()
    if distribution is None:
        if k % 2:
            raise DomainError(f"the default Paninski instance needs an even k, got {k}")
        instance = random_paninski(k // 2, target_tv(alpha), 1, seed.generator(0))
        distribution = paninski_distribution(instance)
    if distribution.k != k:
        raise DomainError(f"distribution has domain {distribution.k}, expected {k}")
    tv = tv_distance(distribution, uniform(k))
    bound = partition_bound(tv, n, k) if bound is None else bound

    sizes = [len(g) for g in np.array_split(np.arange(k), n)]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    successes = 0
    for batch, offset in enumerate(range(0, trials, batch_size)):
        count = min(batch_size, trials - offset)
        rng = seed.generator(1, batch)
        orders = rng.permuted(np.tile(np.arange(k), (count, 1)), axis=1)
        grouped = np.add.reduceat(distribution.probs[orders], starts, axis=1)
        distances = 0.5 * np.abs(grouped - 1.0 / n).sum(axis=1)
        successes += int(np.count_nonzero(distances >= bound))

    fraction = successes / trials
    return PartitionRecord(
        k=k,
        n=n,
        alpha=alpha,
        tv=min(1.0, tv),
        trials=trials,
        seed=seed.seed,
        stream_id=seed.stream_id,
        batch_size=batch_size,
        distribution=recorded_distribution,
        bound=bound,
        successes=successes,
        standard_error=math.sqrt(fraction * (1.0 - fraction) / trials),
    )


def simulate_amplification(
    p_uniform: float,
    p_far: float,
    r: int,
    decision_fraction: float,
    trials: int,
    seed: Union[RngSeed, int],
) -> Tuple[float, float]:
    """
    Empirical success rates of the amplified rule over Bernoulli base
    testers: (P[Uniform | uniform], P[NonUniform | far]).
    """
    seed = seed if isinstance(seed, RngSeed) else RngSeed(seed=int(seed))
    votes_uniform = seed.generator(0).binomial(r, p_uniform, size=trials)
    votes_far = seed.generator(1).binomial(r, p_far, size=trials)
    correct_uniform = float(np.mean(votes_uniform / r >= decision_fraction))
    correct_far = float(np.mean(votes_far / r < decision_fraction))
    return correct_uniform, correct_far


def persist_results(records: Sequence[Record], path: Union[str, Path]) -> Path:
    """Write one JSON line per record; an empty list still creates the file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as handle:
            for record in records:
                handle.write(record.model_dump_json() + "\n")
    except OSError as e:
        raise PersistenceError(f"could not write results to {path}: {e}", details={"path": str(path)}) from e
    logger.info(f"Persisted {len(records)} records to {path}")
    return path


def read_results(path: Union[str, Path]) -> List[Record]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise PersistenceError(f"could not read results from {path}: {e}", details={"path": str(path)}) from e
    records: List[Record] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            model = RECORD_MODELS[payload["record_type"]]
            records.append(model.model_validate(payload))
        except (json.JSONDecodeError, KeyError, ValidationError) as e:
            raise PersistenceError(
                f"{path}:{number} is not a valid result record: {e}",
                details={"path": str(path), "line": number},
            ) from None
    return records


def complexity_rows(records: Sequence[Record]) -> pd.DataFrame:
    """Flatten complexity points and curves into k, alpha, epsilon, tester, m_star, slope, stderr"""
    rows = []
    for record in records:
        if isinstance(record, ComplexityPoint):
            rows.append(dict(
                k=record.config.k, alpha=record.config.alpha, epsilon=record.config.epsilon,
                tester=record.config.tester_id, m_star=record.m_star, slope=None, stderr=None,
            ))
        elif isinstance(record, ScalingCurve):
            for point in record.points:
                rows.append(dict(
                    k=point.config.k, alpha=record.alpha, epsilon=record.epsilon,
                    tester=record.tester_id, m_star=point.m_star, slope=record.slope, stderr=record.stderr,
                ))
    return pd.DataFrame(rows, columns=["k", "alpha", "epsilon", "tester", "m_star", "slope", "stderr"])


def export_csv(records: Sequence[Record], path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        complexity_rows(records).to_csv(path, index=False)
    except OSError as e:
        raise PersistenceError(f"could not write CSV to {path}: {e}", details={"path": str(path)}) from e
    return path


def power_rows(records: Sequence[PowerEstimate]) -> pd.DataFrame:
    return pd.DataFrame([
        dict(
            tester=r.config.tester_id, instance=r.config.instance, k=r.config.k, alpha=r.config.alpha,
            epsilon=r.config.epsilon, m=r.m, trials=r.config.trials,
            p_u_given_u=r.p_uniform_given_uniform, p_u_given_far=r.p_uniform_given_far,
            separation=r.separation, wilson_halfwidth=r.wilson_halfwidth,
            errors=r.uniform_errors + r.far_errors,
        )
        for r in records
    ])


def format_table(frame: pd.DataFrame) -> str:
    """Human-facing table with 6 significant digits"""
    if frame.empty:
        return "(no rows)"
    return frame.to_string(index=False, float_format=lambda x: f"{x:.6g}")


def rerun_record(record: Record, threads: Optional[int] = None) -> Record:
    """Recompute a persisted record from its recorded configuration and seed."""
    if isinstance(record, PowerEstimate):
        config = record.config
        cfg = TesterConfig(
            k=config.k, alpha=config.alpha, epsilon=config.epsilon, seed=config.seed,
            stream_id=config.stream_id, noiseless_debug=config.noiseless,
        )
        return estimate_power(
            resolve_tester(config.tester_id, config.distance_constant),
            UniformSource(config.k),
            resolve_source(config),
            record.m,
            config.trials,
            cfg,
            tester_id=config.tester_id,
            instance=config.instance,
            threads=threads,
            distance_constant=config.distance_constant,
            min_trials=1,
            source_options=_source_options(config),
        )
    if isinstance(record, ComplexityPoint):
        config = record.config
        cfg = TesterConfig(
            k=config.k, alpha=config.alpha, epsilon=config.epsilon, seed=config.seed,
            stream_id=config.stream_id, noiseless_debug=config.noiseless,
        )
        return sample_complexity_search(
            resolve_tester(config.tester_id, config.distance_constant),
            cfg,
            record.target_separation,
            config.trials,
            far_source=resolve_source(config),
            tester_id=config.tester_id,
            instance=config.instance,
            m_cap=record.m_cap,
            start_m=record.start_m,
            refine_factor=record.refine_factor,
            threads=threads,
            distance_constant=config.distance_constant,
            min_trials=1,
            source_options=_source_options(config),
        )
    if isinstance(record, PartitionRecord):
        distribution = None
        if record.distribution is not None:
            distribution = DiscreteDistribution.from_probs(record.distribution)
        return partition_distance_experiment(
            record.k,
            record.n,
            record.alpha,
            record.trials,
            RngSeed(seed=record.seed, stream_id=record.stream_id),
            distribution=distribution,
            bound=record.bound,
            batch_size=record.batch_size,
        )
    raise DomainError(f"records of type {record.record_type} are rerun through their points")
