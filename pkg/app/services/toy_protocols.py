"""
Bundled toy protocols over the binary alphabet {0, 1}.

Each comes with exact transition kernels so small instances can be checked
by enumeration as well as by simulation.
"""

from typing import Callable, Dict, Optional
import math

import numpy as np

from app.models.protocol import Kernel, LocalProtocol, PanProtocol, Randomizer, Transcript
from app.utils.exceptions import DomainError


def keep_probability(epsilon: float) -> float:
    """e^eps / (1 + e^eps)"""
    return 1.0 / (1.0 + math.exp(-epsilon))


def _check_bit(bit) -> int:
    if bit not in (0, 1):
        raise DomainError(f"toy protocols read bits, got {bit!r}")
    return int(bit)


def randomized_response(bit: int, epsilon: float, rng: np.random.Generator) -> int:
    bit = _check_bit(bit)
    return bit if rng.random() < keep_probability(epsilon) else 1 - bit


def randomized_response_kernel(bit: int, epsilon: float) -> Kernel:
    bit = _check_bit(bit)
    keep = keep_probability(epsilon)
    return {bit: keep, 1 - bit: 1.0 - keep}


def _identity_output(state, rng):
    return state


def _identity_output_kernel(state) -> Kernel:
    return {state: 1.0}


def counter_protocol(epsilon: Optional[float] = None) -> PanProtocol:
    """Deterministic running parity; not private, used as the exact-trace case."""
    return PanProtocol(
        name="counter",
        internal_step=lambda state, x, rng: (state + _check_bit(x)) % 2,
        output_step=_identity_output,
        initial_state=0,
        epsilon=None,
        kernel=lambda state, x: {(state + _check_bit(x)) % 2: 1.0},
        output_kernel=_identity_output_kernel,
    )


def randomized_response_protocol(epsilon: float = 1.0) -> PanProtocol:
    """State is an eps-randomized response of the latest element."""
    return PanProtocol(
        name="randomized-response",
        internal_step=lambda state, x, rng: randomized_response(x, epsilon, rng),
        output_step=_identity_output,
        initial_state=None,
        epsilon=epsilon,
        kernel=lambda state, x: randomized_response_kernel(x, epsilon),
        output_kernel=_identity_output_kernel,
    )


def _chooser_input(state, x: int) -> int:
    # Respond about x after a 1 (or at the start), about 1 - x after a 0
    x = _check_bit(x)
    return x if state in (None, 1) else 1 - x


def adaptive_chooser_protocol(epsilon: float = 1.0) -> PanProtocol:
    """Two-round adaptive chooser: the previous response picks which bit to randomize."""
    return PanProtocol(
        name="adaptive-chooser",
        internal_step=lambda state, x, rng: randomized_response(_chooser_input(state, x), epsilon, rng),
        output_step=_identity_output,
        initial_state=None,
        epsilon=epsilon,
        kernel=lambda state, x: randomized_response_kernel(_chooser_input(state, x), epsilon),
        output_kernel=_identity_output_kernel,
    )


def randomized_response_local(epsilon: float = 1.0) -> LocalProtocol:
    """Non-adaptive local protocol: the same randomizer for every element."""
    randomizer = Randomizer(
        randomizer_id=f"rr[{epsilon:g}]",
        epsilon=epsilon,
        apply=lambda x, rng: randomized_response(x, epsilon, rng),
        kernel=lambda x: randomized_response_kernel(x, epsilon),
    )
    return LocalProtocol(
        name="randomized-response-local",
        next_randomizer=lambda transcript: randomizer,
        epsilon=epsilon,
    )


def adaptive_chooser_local(epsilon: float = 1.0) -> LocalProtocol:
    """Sequentially interactive version of the adaptive chooser."""
    straight = Randomizer(
        randomizer_id="rr-straight",
        epsilon=epsilon,
        apply=lambda x, rng: randomized_response(x, epsilon, rng),
        kernel=lambda x: randomized_response_kernel(x, epsilon),
    )
    flipped = Randomizer(
        randomizer_id="rr-flipped",
        epsilon=epsilon,
        apply=lambda x, rng: randomized_response(1 - _check_bit(x), epsilon, rng),
        kernel=lambda x: randomized_response_kernel(1 - _check_bit(x), epsilon),
    )

    def next_randomizer(transcript: Transcript) -> Randomizer:
        if not transcript.entries or transcript.messages[-1] == 1:
            return straight
        return flipped

    return LocalProtocol(name="adaptive-chooser-local", next_randomizer=next_randomizer, epsilon=epsilon)


TOY_PROTOCOLS: Dict[str, Callable[[float], PanProtocol]] = {
    "counter": counter_protocol,
    "randomized-response": randomized_response_protocol,
    "adaptive-chooser": adaptive_chooser_protocol,
}


def get_toy_protocol(name: str, epsilon: float = 1.0) -> PanProtocol:
    if name not in TOY_PROTOCOLS:
        raise DomainError(f"Unknown protocol: {name}. Available: {list(TOY_PROTOCOLS.keys())}")
    return TOY_PROTOCOLS[name](epsilon)
