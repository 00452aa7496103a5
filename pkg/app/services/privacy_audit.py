"""
Privacy checks for the mechanisms in this package.

Analytic bounds come from closed-form Laplace densities. The empirical
estimator runs a mechanism on both streams of a neighbor pair, compares
output frequencies cell by cell and reports a lower confidence bound on the
largest log ratio. It can refute an epsilon claim but never certify one.
"""

from abc import ABC, abstractmethod
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.stats import norm

from app.config import settings
from app.models.audit import AuditReport, NeighborPair
from app.models.common import AuditVerdict
from app.models.distribution import LaplaceScale, RngSeed
from app.models.protocol import LocalProtocol, PanProtocol
from app.models.tester import TesterConfig
from app.services.core_prob import laplace_vector
from app.services.model_bridge import local_to_pan, pan_to_local, simulate, state_key, two_intrusion_to_one
from app.services.toy_protocols import (
    adaptive_chooser_local,
    get_toy_protocol,
    keep_probability,
    randomized_response_local,
)
from app.utils.exceptions import AuditPolicyError, DomainError

logger = logging.getLogger(__name__)


def _check_time(pair: NeighborPair, t: int) -> None:
    if not 0 <= t <= pair.length:
        raise DomainError(f"time {t} outside 0..{pair.length}")


def laplace_state_ratio_bound(pair: NeighborPair, t: int, epsilon: float) -> float:
    """
    Supremum of the log-density ratio of one histogram bin after t updates.

    Every bin is a count plus Lap(1/epsilon): 0 while the differing element
    is still ahead, epsilon once it has been absorbed. A replacement moves one
    count between two bins, so the ratio over the whole vector is bounded by
    group_privacy_bound(epsilon, 2).
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    _check_time(pair, t)
    return 0.0 if pair.differ_at > t else float(epsilon)


def joint_state_output_bound(pair: NeighborPair, t: int, epsilon: float) -> float:
    """
    Bound for the pair (state at t, final output). If the differing element
    precedes the intrusion the state carries the epsilon and the output is
    identically distributed given the state; otherwise the state is shared and
    the post-stream noise carries it.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    _check_time(pair, t)
    return float(epsilon)


def group_privacy_bound(epsilon: float, hamming_distance: int) -> float:
    if epsilon <= 0 or hamming_distance < 1:
        raise DomainError("group privacy needs epsilon > 0 and hamming_distance >= 1")
    return hamming_distance * epsilon


class AuditMechanism(ABC):
    """Discrete-output mechanism that can be sampled on a fixed stream."""

    name: str
    analytic_bound: Optional[float] = None

    @abstractmethod
    def sample(self, stream: Tuple[int, ...], trials: int, rng: np.random.Generator) -> Union[np.ndarray, List[Hashable]]:
        pass


class RandomizedResponseMechanism(AuditMechanism):
    """Independent eps-randomized response on every bit; output is the response vector as an integer code."""

    name = "randomized-response"

    def __init__(self, epsilon: float):
        if epsilon <= 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        self.epsilon = epsilon
        self.analytic_bound = epsilon

    def sample(self, stream: Tuple[int, ...], trials: int, rng: np.random.Generator) -> np.ndarray:
        bits = np.asarray(stream, dtype=np.int64)
        if np.any((bits != 0) & (bits != 1)):
            raise DomainError("randomized response audits binary streams")
        flips = rng.random((trials, bits.size)) >= keep_probability(self.epsilon)
        responses = np.bitwise_xor(bits[None, :], flips.astype(np.int64))
        weights = 1 << np.arange(bits.size, dtype=np.int64)
        return responses @ weights


class SimplePanStateMechanism(AuditMechanism):
    """
    Single-bin view of the SimplePanTest histogram after t updates,
    discretized into cells of width audit_bin_width_factor / epsilon. The bin
    is the one the differing element of stream_a lands in; with `finalized`
    the post-stream noise layer is included.

    Only this marginal is audited, so the check is a necessary condition for
    the per-bin bound of laplace_state_ratio_bound, not an audit of the joint
    state. A replacement moves two bins (the old and the new element's), and
    loss spread over bins other than `bin_index` is not seen here; the joint
    k-bin state is bounded through group_privacy_bound instead.
    """

    name = "simple-pan-state"

    def __init__(self, cfg: TesterConfig, pair: NeighborPair, t: int, finalized: bool = False):
        if cfg.noiseless_debug:
            raise AuditPolicyError("noiseless_debug testers carry no privacy and are never audited")
        _check_time(pair, t)
        if finalized and t != pair.length:
            raise DomainError("only the end-of-stream state has the post-stream noise layer")
        if max(pair.stream_a + pair.stream_b) >= cfg.k or min(pair.stream_a + pair.stream_b) < 0:
            raise DomainError(f"neighbor streams leave the domain of size {cfg.k}")
        self.cfg = cfg
        self.t = t
        self.finalized = finalized
        self.bin_index = pair.replaced[0]
        self.scale = LaplaceScale.from_epsilon(cfg.epsilon)
        self.width = settings.audit_bin_width_factor * self.scale.scale
        self.analytic_bound = laplace_state_ratio_bound(pair, t, cfg.epsilon)

    def sample(self, stream: Tuple[int, ...], trials: int, rng: np.random.Generator) -> np.ndarray:
        count = sum(1 for x in stream[:self.t] if x == self.bin_index)
        values = count + laplace_vector(self.scale, trials, rng)
        if self.finalized:
            values = values + laplace_vector(self.scale, trials, rng)
        return np.floor(values / self.width).astype(np.int64)


class ProtocolViewMechanism(AuditMechanism):
    """Intruder view of a protocol: states at the intrusion times plus the final output."""

    def __init__(self, protocol: Union[PanProtocol, LocalProtocol], intrusion_times: Iterable[int] = ()):
        self.protocol = protocol
        self.intrusion_times = tuple(sorted(set(int(t) for t in intrusion_times)))
        self.name = f"view[{protocol.name}]@{list(self.intrusion_times)}"
        self.analytic_bound = protocol.epsilon

    def sample(self, stream: Tuple[int, ...], trials: int, rng: np.random.Generator) -> List[Hashable]:
        views = []
        for _ in range(trials):
            run = simulate(self.protocol, stream, rng, intrusion_times=self.intrusion_times)
            views.append(
                tuple(state_key(run.observed[t]) for t in self.intrusion_times) + (state_key(run.output),)
            )
        return views


def _cell_counts(outputs_a, outputs_b) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell counts on a shared cell index for both sides"""
    if isinstance(outputs_a, np.ndarray) and isinstance(outputs_b, np.ndarray):
        cells, inverse = np.unique(np.concatenate([outputs_a, outputs_b]), return_inverse=True)
        inverse = inverse.reshape(-1)
        n_cells = cells.size
        return (
            np.bincount(inverse[:len(outputs_a)], minlength=n_cells),
            np.bincount(inverse[len(outputs_a):], minlength=n_cells),
        )
    index: Dict[Hashable, int] = {}
    codes_a = [index.setdefault(o, len(index)) for o in outputs_a]
    codes_b = [index.setdefault(o, len(index)) for o in outputs_b]
    return (
        np.bincount(np.asarray(codes_a, dtype=np.int64), minlength=len(index)),
        np.bincount(np.asarray(codes_b, dtype=np.int64), minlength=len(index)),
    )


def _abs_log_ratios(counts_a: np.ndarray, counts_b: np.ndarray, trials: int, smoothing: float) -> np.ndarray:
    n_cells = counts_a.shape[-1]
    freq_a = (counts_a + smoothing) / (trials + smoothing * n_cells)
    freq_b = (counts_b + smoothing) / (trials + smoothing * n_cells)
    return np.abs(np.log(freq_a) - np.log(freq_b))


def empirical_epsilon(
    mechanism: AuditMechanism,
    pair: NeighborPair,
    trials: int,
    confidence: float,
    claimed_epsilon: float,
    seed: Union[RngSeed, int] = 0,
    min_trials: Optional[int] = None,
) -> AuditReport:
    """
    Lower confidence estimate of the mechanism's epsilon on this pair.

    Cells with at least audit_min_observations hits on both sides are
    compared through add-`audit_smoothing` frequencies. Each cell's log-ratio
    standard error comes from a multinomial bootstrap; a Bonferroni-corrected
    normal quantile turns it into a slack, and the reported lower estimate is
    the largest (|log ratio| - slack). Fail iff that exceeds the claim.
    """
    min_trials = settings.audit_min_trials if min_trials is None else min_trials
    if trials < min_trials:
        raise DomainError(f"audit needs at least {min_trials} trials, got {trials}")
    if not 0 < confidence < 1:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(seed=int(seed))

    outputs_a = mechanism.sample(pair.stream_a, trials, seed.generator(0))
    outputs_b = mechanism.sample(pair.stream_b, trials, seed.generator(1))
    counts_a, counts_b = _cell_counts(outputs_a, outputs_b)

    min_obs = settings.audit_min_observations
    eligible = np.flatnonzero((counts_a >= min_obs) & (counts_b >= min_obs))
    report = dict(
        mechanism=mechanism.name,
        claimed_epsilon=claimed_epsilon,
        analytic_bound=mechanism.analytic_bound,
        confidence=confidence,
        trials=trials,
        cells_used=int(eligible.size),
        seed=seed.seed,
    )
    if eligible.size == 0:
        logger.warning(f"Audit of {mechanism.name}: no cell has {min_obs} observations on both sides")
        return AuditReport(verdict=AuditVerdict.INCONCLUSIVE, **report)

    smoothing = settings.audit_smoothing
    ratios = _abs_log_ratios(counts_a, counts_b, trials, smoothing)[eligible]

    rng = seed.generator(2)
    resamples = settings.audit_bootstrap_resamples
    boot_a = rng.multinomial(trials, counts_a / trials, size=resamples)
    boot_b = rng.multinomial(trials, counts_b / trials, size=resamples)
    boot_ratios = _abs_log_ratios(boot_a, boot_b, trials, smoothing)[:, eligible]
    standard_errors = boot_ratios.std(axis=0, ddof=1)

    z = float(norm.ppf(1.0 - (1.0 - confidence) / eligible.size))
    lower_bounds = ratios - z * standard_errors
    best = int(np.argmax(lower_bounds))
    lower = float(lower_bounds[best])
    verdict = AuditVerdict.FAIL if lower > claimed_epsilon else AuditVerdict.PASS
    logger.info(
        f"Audit of {mechanism.name}: point {ratios.max():.6g}, lower {lower:.6g} "
        f"over {eligible.size} cells vs claimed {claimed_epsilon:.6g} -> {verdict.value}"
    )
    return AuditReport(
        verdict=verdict,
        empirical_lower_estimate=max(lower, 0.0),
        point_estimate=float(ratios.max()),
        confidence_slack=float(z * standard_errors[best]),
        **report,
    )


def bridge_protocols(epsilon: float) -> Dict[str, LocalProtocol]:
    """Private local protocols whose local_to_pan versions the multi-intrusion audit covers"""
    return {
        "randomized-response-local": randomized_response_local(epsilon),
        "adaptive-chooser-local": adaptive_chooser_local(epsilon),
        "randomized-response": pan_to_local(two_intrusion_to_one(get_toy_protocol("randomized-response", epsilon))),
        "adaptive-chooser": pan_to_local(two_intrusion_to_one(get_toy_protocol("adaptive-chooser", epsilon))),
    }


def audit_intrusions(
    lp: LocalProtocol,
    pair: NeighborPair,
    intrusion_times: Sequence[int],
    trials: int,
    claimed_epsilon: float,
    confidence: float,
    seed: Union[RngSeed, int] = 0,
) -> AuditReport:
    """Audit the intruder view of local_to_pan(lp) at several intrusion times."""
    mechanism = ProtocolViewMechanism(local_to_pan(lp), intrusion_times)
    return empirical_epsilon(mechanism, pair, trials, confidence, claimed_epsilon, seed)


def build_mechanism(
    name: str,
    pair: NeighborPair,
    epsilon: float,
    t: Optional[int] = None,
    k: Optional[int] = None,
    noiseless: bool = False,
    seed: int = 0,
) -> AuditMechanism:
    """Audit mechanism for a CLI mechanism name"""
    if name == "randomized-response":
        if noiseless:
            raise AuditPolicyError("randomized response has no noiseless mode to audit")
        return RandomizedResponseMechanism(epsilon)
    if name == "simple-pan-state":
        k = k if k is not None else max(pair.stream_a + pair.stream_b) + 1
        cfg = TesterConfig(k=max(k, 2), alpha=1.0, epsilon=epsilon, seed=seed, noiseless_debug=noiseless)
        t = pair.length if t is None else t
        return SimplePanStateMechanism(cfg, pair, t)
    raise DomainError(f"Unknown audit mechanism: {name}")
