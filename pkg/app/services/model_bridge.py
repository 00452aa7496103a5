"""
Executable bridge between pan-private and sequentially interactive local
protocols.

* two_intrusion_to_one: keep every past sub-state in a ConcatState, so one
  intrusion sees what two intrusions would have seen.
* pan_to_local: a protocol whose state only ever grows by one part per
  element becomes a local protocol whose randomizer at time t is
  "previous state -> new part".
* local_to_pan: store the transcript so far as the internal state.

Plus simulation with intrusions, JSON-lines trace export, exact
enumeration oracles for small state spaces and Monte-Carlo TV checks.
"""

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union
import hashlib
import json
import logging
import math

import numpy as np

from app.config import settings
from app.models.distribution import RngSeed
from app.models.protocol import (
    BridgeReport,
    ConcatState,
    Kernel,
    LocalProtocol,
    PanProtocol,
    PrefixComparison,
    Randomizer,
    TraceStep,
    Transcript,
)
from app.services.toy_protocols import get_toy_protocol
from app.utils.exceptions import ContractViolationError, DomainError, PersistenceError

logger = logging.getLogger(__name__)

Protocol = Union[PanProtocol, LocalProtocol]


def state_key(state: Any) -> Hashable:
    """Comparable view of a state: parts of a ConcatState, entries of a Transcript"""
    if isinstance(state, ConcatState):
        return state.parts
    if isinstance(state, Transcript):
        return state.entries
    return state


def state_digest(state: Any) -> str:
    if isinstance(state, ConcatState):
        canonical = "concat:" + state.encode()
    else:
        canonical = "value:" + json.dumps(state_key(state), sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def transcript_of(state: ConcatState) -> Transcript:
    """Read a local_to_pan state back as a transcript"""
    return Transcript(entries=tuple((str(rid), message) for rid, message in state.parts))


def two_intrusion_to_one(p2: PanProtocol) -> PanProtocol:
    """State after t elements is the ConcatState of p2's states i_1..i_t."""

    def current(state: ConcatState) -> Any:
        return state.last() if len(state) else p2.initial_state

    def internal_step(state: ConcatState, element: Any, rng: np.random.Generator) -> ConcatState:
        return state.append(p2.internal_step(current(state), element, rng))

    def output_step(state: ConcatState, rng: np.random.Generator) -> Any:
        return p2.output_step(current(state), rng)

    kernel = None
    if p2.kernel is not None:
        def kernel(state: ConcatState, element: Any) -> Kernel:
            return {state.append(s): p for s, p in p2.kernel(current(state), element).items()}

    output_kernel = None
    if p2.output_kernel is not None:
        def output_kernel(state: ConcatState) -> Kernel:
            return p2.output_kernel(current(state))

    return PanProtocol(
        name=f"{p2.name}/concat",
        internal_step=internal_step,
        output_step=output_step,
        initial_state=ConcatState(),
        epsilon=p2.epsilon,
        kernel=kernel,
        output_kernel=output_kernel,
    )


def _check_append(before: ConcatState, after: Any, name: str) -> None:
    if not isinstance(after, ConcatState):
        raise ContractViolationError(
            f"{name}: internal step returned {type(after).__name__}, expected ConcatState"
        )
    if len(after) != len(before) + 1 or not before.is_prefix_of(after):
        raise ContractViolationError(
            f"{name}: internal step must append exactly one part without rewriting earlier parts",
            details={"before": len(before), "after": len(after)},
        )


def pan_to_local(p1: PanProtocol) -> LocalProtocol:
    """
    Local protocol whose transcript (ids stripped) after t elements has the
    same law as p1's state after t elements.
    """
    if not isinstance(p1.initial_state, ConcatState) or len(p1.initial_state):
        raise ContractViolationError(f"{p1.name}: initial state must be an empty ConcatState")
    epsilon = p1.epsilon if p1.epsilon is not None else math.inf

    def next_randomizer(transcript: Transcript) -> Randomizer:
        state = ConcatState(parts=transcript.messages)
        randomizer_id = f"{p1.name}@{len(transcript) + 1}:{state_digest(state)[:12]}"

        def apply(element: Any, rng: np.random.Generator) -> Any:
            after = p1.internal_step(state, element, rng)
            _check_append(state, after, p1.name)
            return after.last()

        kernel = None
        if p1.kernel is not None:
            def kernel(element: Any) -> Kernel:
                law: Dict[Hashable, float] = defaultdict(float)
                for after, p in p1.kernel(state, element).items():
                    _check_append(state, after, p1.name)
                    law[after.last()] += p
                return dict(law)

        return Randomizer(randomizer_id=randomizer_id, epsilon=epsilon, apply=apply, kernel=kernel)

    return LocalProtocol(name=f"{p1.name}/local", next_randomizer=next_randomizer, epsilon=p1.epsilon)


def local_to_pan(lp: LocalProtocol) -> PanProtocol:
    """
    Pan protocol storing the transcript as a ConcatState of
    (randomizer_id, message) parts; the output is the final state itself.
    Every earlier state is a prefix of the final one, so any number of
    intrusions reveals nothing beyond the transcript.
    """

    def internal_step(state: ConcatState, element: Any, rng: np.random.Generator) -> ConcatState:
        randomizer = lp.next_randomizer(transcript_of(state))
        return state.append((randomizer.randomizer_id, randomizer.apply(element, rng)))

    def kernel(state: ConcatState, element: Any) -> Kernel:
        randomizer = lp.next_randomizer(transcript_of(state))
        if randomizer.kernel is None:
            raise DomainError(f"randomizer {randomizer.randomizer_id} declares no kernel")
        return {
            state.append((randomizer.randomizer_id, message)): p
            for message, p in randomizer.kernel(element).items()
        }

    return PanProtocol(
        name=f"{lp.name}/pan",
        internal_step=internal_step,
        output_step=lambda state, rng: state,
        initial_state=ConcatState(),
        epsilon=lp.epsilon,
        kernel=kernel,
        output_kernel=lambda state: {state: 1.0},
    )


@dataclass
class SimulationResult:
    output: Any
    observed: Dict[int, Any] = field(default_factory=dict)
    trace: List[TraceStep] = field(default_factory=list)


def simulate(
    protocol: Protocol,
    stream: Sequence[Any],
    rng: np.random.Generator,
    intrusion_times: Iterable[int] = (),
    record_trace: bool = False,
) -> SimulationResult:
    """
    Run a protocol over a stream. Intrusion time t observes the state right
    after the t-th update (t = 0 is the initial state). For a local protocol
    the state is the transcript and the output is the final transcript.
    """
    stream = list(stream)
    times = set(int(t) for t in intrusion_times)
    bad = sorted(t for t in times if not 0 <= t <= len(stream))
    if bad:
        raise DomainError(f"intrusion times {bad} outside 0..{len(stream)}")

    result = SimulationResult(output=None)
    is_local = isinstance(protocol, LocalProtocol)
    state: Any = Transcript() if is_local else protocol.initial_state

    def record(t: int, message: Any) -> None:
        if t in times:
            result.observed[t] = state
        if record_trace:
            result.trace.append(
                TraceStep(t=t, state_digest=state_digest(state), message=message, intrusion=t in times)
            )

    record(0, None)
    for t, element in enumerate(stream, start=1):
        if is_local:
            randomizer = protocol.next_randomizer(state)
            message = randomizer.apply(element, rng)
            state = state.append(randomizer.randomizer_id, message)
        else:
            state = protocol.internal_step(state, element, rng)
            message = state.last() if isinstance(state, ConcatState) and len(state) else None
        record(t, message)

    result.output = state if is_local else protocol.output_step(state, rng)
    return result


def export_trace(trace: Sequence[TraceStep], path: Union[str, Path]) -> None:
    """One JSON line per time step"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as handle:
            for step in trace:
                handle.write(step.model_dump_json() + "\n")
    except OSError as e:
        raise PersistenceError(f"could not write trace to {path}: {e}", details={"path": str(path)}) from e


def _check_support(law: Dict[Hashable, float], limit: int) -> None:
    if len(law) > limit:
        raise DomainError(f"state space exceeds the enumeration limit ({len(law)} > {limit})")


def exact_state_distribution(protocol: PanProtocol, stream: Sequence[Any], limit: Optional[int] = None) -> Dict[Hashable, float]:
    """Exact law of the state after the whole stream, keyed by state_key."""
    if protocol.kernel is None:
        raise DomainError(f"{protocol.name} declares no transition kernel")
    limit = settings.exact_enumeration_limit if limit is None else limit
    law: Dict[Any, float] = {protocol.initial_state: 1.0}
    for element in stream:
        step: Dict[Any, float] = defaultdict(float)
        for state, p in law.items():
            for after, q in protocol.kernel(state, element).items():
                step[after] += p * q
        law = dict(step)
        _check_support(law, limit)
    return {state_key(s): p for s, p in law.items()}


def exact_output_distribution(protocol: PanProtocol, stream: Sequence[Any], limit: Optional[int] = None) -> Dict[Hashable, float]:
    if protocol.kernel is None or protocol.output_kernel is None:
        raise DomainError(f"{protocol.name} declares no exact kernels")
    limit = settings.exact_enumeration_limit if limit is None else limit
    law: Dict[Any, float] = {protocol.initial_state: 1.0}
    for element in stream:
        step: Dict[Any, float] = defaultdict(float)
        for state, p in law.items():
            for after, q in protocol.kernel(state, element).items():
                step[after] += p * q
        law = dict(step)
        _check_support(law, limit)
    outputs: Dict[Hashable, float] = defaultdict(float)
    for state, p in law.items():
        for output, q in protocol.output_kernel(state).items():
            outputs[state_key(output)] += p * q
    return dict(outputs)


def exact_transcript_distribution(
    lp: LocalProtocol,
    stream: Sequence[Any],
    strip_ids: bool = True,
    limit: Optional[int] = None,
) -> Dict[Hashable, float]:
    """Exact transcript law; keys are message tuples when strip_ids is set."""
    limit = settings.exact_enumeration_limit if limit is None else limit
    law: Dict[Transcript, float] = {Transcript(): 1.0}
    for element in stream:
        step: Dict[Transcript, float] = defaultdict(float)
        for transcript, p in law.items():
            randomizer = lp.next_randomizer(transcript)
            if randomizer.kernel is None:
                raise DomainError(f"randomizer {randomizer.randomizer_id} declares no kernel")
            for message, q in randomizer.kernel(element).items():
                step[transcript.append(randomizer.randomizer_id, message)] += p * q
        law = dict(step)
        _check_support(law, limit)
    result: Dict[Hashable, float] = defaultdict(float)
    for transcript, p in law.items():
        result[transcript.messages if strip_ids else transcript.entries] += p
    return dict(result)


def distribution_tv(a: Dict[Hashable, float], b: Dict[Hashable, float]) -> float:
    keys = set(a) | set(b)
    return min(1.0, 0.5 * math.fsum(abs(a.get(key, 0.0) - b.get(key, 0.0)) for key in keys))


def empirical_distribution(samples: Iterable[Hashable]) -> Dict[Hashable, float]:
    counts = Counter(samples)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {key: count / total for key, count in counts.items()}


def empirical_tv(samples_a: Iterable[Hashable], samples_b: Iterable[Hashable]) -> float:
    return distribution_tv(empirical_distribution(samples_a), empirical_distribution(samples_b))


def _prefix_samples(
    protocol: Protocol,
    stream: Sequence[Any],
    trials: int,
    rng: np.random.Generator,
    project=state_key,
) -> Tuple[List[List[Hashable]], List[Hashable], bool]:
    """Per-prefix observed states, final outputs and whether every trace was prefix-monotone"""
    times = range(1, len(stream) + 1)
    per_prefix: List[List[Hashable]] = [[] for _ in times]
    outputs: List[Hashable] = []
    monotone = True
    for _ in range(trials):
        run = simulate(protocol, stream, rng, intrusion_times=times)
        states = [run.observed[t] for t in times]
        for index, state in enumerate(states):
            per_prefix[index].append(project(state))
        for earlier, later in zip(states, states[1:]):
            if hasattr(earlier, "is_prefix_of") and not earlier.is_prefix_of(later):
                monotone = False
        outputs.append(state_key(run.output))
    return per_prefix, outputs, monotone


def bridge_demo(
    name: str,
    stream: Sequence[int],
    trials: int,
    seed: Union[RngSeed, int],
    epsilon: float = 1.0,
) -> BridgeReport:
    """
    Run both bridge directions on a bundled toy protocol and compare
    per-prefix distributions by Monte-Carlo TV (and exactly when the state
    space is small enough).
    """
    if trials < settings.bridge_min_trials:
        raise DomainError(f"bridge demo needs at least {settings.bridge_min_trials} trials, got {trials}")
    if not stream:
        raise DomainError("bridge demo needs a non-empty stream")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(seed=int(seed))
    source = get_toy_protocol(name, epsilon)
    concat = two_intrusion_to_one(source)
    local = pan_to_local(concat)
    round_trip = local_to_pan(local)

    states, concat_outputs, _ = _prefix_samples(concat, stream, trials, seed.generator(0))
    transcripts, _, _ = _prefix_samples(local, stream, trials, seed.generator(1), project=lambda transcript: transcript.messages)
    entries, _, _ = _prefix_samples(local, stream, trials, seed.generator(2))
    stored, _, monotone = _prefix_samples(round_trip, stream, trials, seed.generator(3))

    source_rng = seed.generator(4)
    source_outputs = [state_key(simulate(source, stream, source_rng).output) for _ in range(trials)]
    output_tv = empirical_tv(concat_outputs, source_outputs)

    prefixes = []
    for t in range(1, len(stream) + 1):
        row = PrefixComparison(
            t=t,
            pan_to_local_tv=empirical_tv(states[t - 1], transcripts[t - 1]),
            local_to_pan_tv=empirical_tv(stored[t - 1], entries[t - 1]),
        )
        try:
            exact_states = exact_state_distribution(concat, stream[:t])
            exact_transcripts = exact_transcript_distribution(local, stream[:t])
            exact_stored = exact_state_distribution(round_trip, stream[:t])
            exact_entries = exact_transcript_distribution(local, stream[:t], strip_ids=False)
            row = row.model_copy(update={
                "exact_pan_to_local_tv": distribution_tv(exact_states, exact_transcripts),
                "exact_local_to_pan_tv": distribution_tv(exact_stored, exact_entries),
                "state_space_size": len(exact_states),
            })
        except DomainError as e:
            logger.info(f"Skipping exact oracle at t={t}: {e.message}")
        prefixes.append(row)
        logger.debug(f"{name} t={t}: TV pan->local {row.pan_to_local_tv:.6g}, local->pan {row.local_to_pan_tv:.6g}")

    return BridgeReport(
        protocol=name,
        epsilon=source.epsilon,
        trials=trials,
        stream=[int(x) for x in stream],
        seed=seed.seed,
        output_tv=output_tv,
        prefixes=prefixes,
        prefix_monotone=monotone,
    )
