"""
Streaming protocol data model: pan-private protocols (internal and output
algorithms over a state), sequentially interactive local protocols
(randomizers chosen from the transcript so far), transcripts, and the
concatenated state used by the two-intrusion construction.

Protocols are value-like: frozen dataclasses holding plain callables.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, List, Optional, Tuple
import json

import numpy as np
from pydantic import BaseModel, Field

from app.utils.exceptions import DomainError

# Distribution over a finite set of values, as {value: probability}
Kernel = Dict[Hashable, float]


def _restore_tuples(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_restore_tuples(v) for v in value)
    return value


@dataclass(frozen=True)
class ConcatState:
    """
    Sequence of sub-states i_1, ..., i_t.

    Encoded with a length prefix per part, so parts may contain any
    characters (including whatever a separator would have been).
    """

    parts: Tuple[Any, ...] = ()

    def append(self, part: Any) -> "ConcatState":
        return ConcatState(parts=self.parts + (part,))

    def last(self) -> Any:
        if not self.parts:
            raise DomainError("empty ConcatState has no last part")
        return self.parts[-1]

    def __len__(self) -> int:
        return len(self.parts)

    def is_prefix_of(self, other: "ConcatState") -> bool:
        return len(other.parts) >= len(self.parts) and other.parts[:len(self.parts)] == self.parts

    def encode(self) -> str:
        chunks = []
        for part in self.parts:
            payload = json.dumps(part, sort_keys=True, separators=(",", ":"))
            chunks.append(f"{len(payload)}:{payload}")
        return "".join(chunks)

    @classmethod
    def decode(cls, encoded: str) -> "ConcatState":
        parts = []
        cursor = 0
        while cursor < len(encoded):
            colon = encoded.find(":", cursor)
            if colon < 0:
                raise DomainError("malformed ConcatState encoding: missing length prefix")
            try:
                size = int(encoded[cursor:colon])
            except ValueError:
                raise DomainError(f"malformed length prefix at offset {cursor}") from None
            start = colon + 1
            if size < 0 or start + size > len(encoded):
                raise DomainError(f"length prefix {size} overruns the encoding")
            parts.append(_restore_tuples(json.loads(encoded[start:start + size])))
            cursor = start + size
        return cls(parts=tuple(parts))


@dataclass(frozen=True)
class Transcript:
    """Public record of a local protocol: (randomizer_id, message) per element."""

    entries: Tuple[Tuple[str, Any], ...] = ()

    def append(self, randomizer_id: str, message: Any) -> "Transcript":
        return Transcript(entries=self.entries + ((randomizer_id, message),))

    @property
    def messages(self) -> Tuple[Any, ...]:
        """The transcript with randomizer ids stripped"""
        return tuple(message for _, message in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def is_prefix_of(self, other: "Transcript") -> bool:
        return len(other.entries) >= len(self.entries) and other.entries[:len(self.entries)] == self.entries


@dataclass(frozen=True)
class Randomizer:
    """
    Element -> message map with a declared epsilon.

    `kernel(element)` gives the exact message distribution when known; the
    exact enumeration oracles need it.
    """

    randomizer_id: str
    epsilon: float
    apply: Callable[[Any, np.random.Generator], Any] = field(repr=False)
    kernel: Optional[Callable[[Any], Kernel]] = field(default=None, repr=False)


@dataclass(frozen=True)
class PanProtocol:
    """
    Internal algorithm (the only reader of stream elements) plus output
    algorithm over the final state.

    `kernel(state, element)` and `output_kernel(state)` are optional exact
    transition laws matching `internal_step` and `output_step`.
    """

    name: str
    internal_step: Callable[[Any, Any, np.random.Generator], Any] = field(repr=False)
    output_step: Callable[[Any, np.random.Generator], Any] = field(repr=False)
    initial_state: Any = None
    epsilon: Optional[float] = None
    kernel: Optional[Callable[[Any, Any], Kernel]] = field(default=None, repr=False)
    output_kernel: Optional[Callable[[Any], Kernel]] = field(default=None, repr=False)


@dataclass(frozen=True)
class LocalProtocol:
    """
    Sequentially interactive local protocol: each element goes through
    exactly one randomizer, chosen from the transcript so far.
    """

    name: str
    next_randomizer: Callable[[Transcript], Randomizer] = field(repr=False)
    epsilon: Optional[float] = None


class TraceStep(BaseModel):
    """One exported simulation step"""
    t: int = Field(..., ge=0)
    state_digest: str
    message: Optional[Any] = None
    intrusion: bool = False


class PrefixComparison(BaseModel):
    """Distribution distances at one prefix length t"""
    t: int = Field(..., ge=1)
    pan_to_local_tv: float = Field(..., ge=0, le=1)
    local_to_pan_tv: float = Field(..., ge=0, le=1)
    exact_pan_to_local_tv: Optional[float] = None
    exact_local_to_pan_tv: Optional[float] = None
    state_space_size: Optional[int] = None


class BridgeReport(BaseModel):
    """Both directions of the pan/local bridge run on one toy protocol"""
    protocol: str
    epsilon: Optional[float] = None
    trials: int = Field(..., ge=1)
    stream: List[int]
    seed: int
    output_tv: float = Field(..., ge=0, le=1)
    prefixes: List[PrefixComparison]
    prefix_monotone: bool

    @property
    def max_tv(self) -> float:
        values = [self.output_tv]
        for row in self.prefixes:
            values.extend([row.pan_to_local_tv, row.local_to_pan_tv])
        return max(values)
