"""Fixed-point precision and size accounting.

Rounding to ``p`` fractional bits is applied where the rational precision
assumption puts it: to the embedding output and to each attention head
output.  Everything between those points runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import constructions
from .core import (DEFAULT_CHUNK, MLPLayer, TransformerSpec, forward_batch, forward_chunked,
                   tokens_to_indices)
from .task import (FunctionClass, PresentationCase, Token, encode_batch, enumerate_instances,
                   oracle, sampled_instances)

EXHAUSTIVE_LIMIT = 4
MAX_BITS = 64


def quantize_value(x: float, p: int) -> float:
    """Nearest multiple of ``2**-p``; ties go to the even multiple."""
    return float(quantize_array(np.float64(x), p))


def quantize_array(a, p: int) -> np.ndarray:
    scale = math.ldexp(1.0, p)
    return np.round(np.asarray(a, dtype=np.float64) * scale) / scale


@dataclass(frozen=True)
class QuantizationPolicy:
    p: int

    def __post_init__(self) -> None:
        if self.p < 0:
            raise ValueError("precision must be non-negative")

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return quantize_array(a, self.p)


def quantized_forward(spec: TransformerSpec, tokens: Sequence[Token], policy: QuantizationPolicy) -> int:
    idx = tokens_to_indices(tokens, spec.case, spec.n)
    return int(forward_chunked(spec, idx[None, :], quantizer=policy)[0])


@dataclass(frozen=True)
class CSizeReport:
    h: int
    d: int
    p: int

    @property
    def product(self) -> int:
        return self.h * self.d * self.p


@dataclass(frozen=True)
class KSizeReport:
    h: int
    d: int
    mlp_params: int

    @property
    def ksize(self) -> int:
        return max(self.h, self.d, self.mlp_params)


def c_size(spec: TransformerSpec, p: int) -> CSizeReport:
    return CSizeReport(h=spec.heads, d=spec.d, p=p)


def k_size(spec: TransformerSpec) -> KSizeReport:
    """The functional case-5 decoder is not an MLP and counts as zero parameters."""
    params = sum(layer.n_params for layer in spec.layers if isinstance(layer, MLPLayer))
    return KSizeReport(h=spec.heads, d=spec.d, mlp_params=params)


def precision_envelope(n: int) -> int:
    """Acceptance ceiling for p*: ``4 ceil(log2(n+1)) + 16``."""
    return 4 * math.ceil(math.log2(n + 1)) + 16


def _builder_case(builder_id: str) -> PresentationCase:
    return constructions.build(builder_id, 1).case


def precision_instances(builder_id: str, n: int, sample_size: int, seed: int,
                        fclass: FunctionClass = FunctionClass.ALL_FUNCTIONS):
    """Index matrix and oracle answers: exhaustive for small n, seeded sample above."""
    case = _builder_case(builder_id)
    if n <= EXHAUSTIVE_LIMIT:
        insts = list(enumerate_instances(n, fclass, ordered=case.ordered))
    else:
        insts = list(sampled_instances(n, fclass, case, sample_size, seed))
    expected = np.array([oracle(inst) for inst in insts], dtype=np.int64)
    return encode_batch(insts, case), expected


def is_exact(spec: TransformerSpec, idx: np.ndarray, expected: np.ndarray, p: Optional[int],
             chunk: int = DEFAULT_CHUNK) -> bool:
    """True when every instance decodes to its oracle answer; stops at the first miss."""
    quantizer = None if p is None else QuantizationPolicy(p)
    for start in range(0, len(idx), chunk):
        got = forward_batch(spec, idx[start:start + chunk], quantizer=quantizer, invalid=-1)
        if not np.array_equal(got, expected[start:start + chunk]):
            return False
    return True


def min_exact_precision(builder_id: str, n: int, sample_size: int = 10_000, seed: int = 0,
                        fclass: FunctionClass = FunctionClass.ALL_FUNCTIONS) -> Optional[int]:
    """Smallest p in [1, 64] at which the quantized construction is exact.

    Doubling search for the first exact power of two, then bisection below
    it.  Like any binary search this presumes exactness is monotone in p.
    Returns ``None`` when even 64 bits do not suffice (saturation).
    """
    spec = constructions.build(builder_id, n)
    idx, expected = precision_instances(builder_id, n, sample_size, seed, fclass)
    hi = 1
    while not is_exact(spec, idx, expected, hi):
        if hi == MAX_BITS:
            return None
        hi = min(2 * hi, MAX_BITS)
    lo = hi // 2 + 1 if hi > 1 else 1
    while lo < hi:
        mid = (lo + hi) // 2
        if is_exact(spec, idx, expected, mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def accuracy_at(spec: TransformerSpec, idx: np.ndarray, expected: np.ndarray, p: int) -> float:
    got = forward_chunked(spec, idx, quantizer=QuantizationPolicy(p), invalid=-1)
    return float(np.mean(got == expected)) if len(expected) else 1.0

