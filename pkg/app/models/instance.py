from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Tuple


class PaninskiInstance(BaseModel):
    """
    Paired-bin hard instance over the domain {0, ..., 2*k_pairs - 1}.

    Pair j covers elements 2j (first side) and 2j+1. With x_bit = 1 the
    masses are (1 + y_j * alpha) / (2 k_pairs) and (1 - y_j * alpha) / (2 k_pairs),
    which puts the instance at TV distance alpha / 2 from uniform.
    """
    model_config = ConfigDict(frozen=True)

    k_pairs: int = Field(..., ge=1)
    x_bit: int = Field(..., ge=0, le=1)
    y_signs: Tuple[int, ...]
    alpha: float = Field(..., gt=0, le=1)

    @field_validator('y_signs')
    @classmethod
    def validate_signs(cls, v):
        if any(s not in (1, -1) for s in v):
            raise ValueError('y_signs entries must be +1 or -1')
        return tuple(int(s) for s in v)

    @model_validator(mode="after")
    def validate_sign_count(self) -> "PaninskiInstance":
        if len(self.y_signs) != self.k_pairs:
            raise ValueError(
                f'expected {self.k_pairs} signs, got {len(self.y_signs)}'
            )
        return self

    @property
    def k(self) -> int:
        """Domain size seen by a tester"""
        return 2 * self.k_pairs

    @property
    def exact_tv(self) -> float:
        return self.alpha / 2.0 if self.x_bit == 1 else 0.0
