"""Lower-bound calculators, the case-5 hard-attention probe and the shattering witness."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (AttentionKind, AttentionLayer, MLPLayer, TransformerSpec, Unembed,
                   forward_batch)
from .task import (FunctionClass, Instance, PresentationCase, Token, decode_layout, encode,
                   oracle, random_instance, tokens_to_indices)

SHATTER_CAP = 16


def csize_lower_bound(n: int) -> int:
    """Minimum h*d*p for a one-layer transformer solving case 5: ``ceil(n log2 n / 3)``."""
    if n < 2:
        raise ValueError("the bound is stated for n >= 2")
    return math.ceil(n * math.log2(n) / 3)


@dataclass(frozen=True)
class ErrorBound:
    value: float
    # the bound only holds beyond an unspecified threshold on n
    small_n_warning: bool = True


def error_prob_lower_bound(n: int, h: int, d: int, p: int) -> ErrorBound:
    """``max(0, (n log2 n - 3hdp) / (3 n log2 n))`` for a random f with target 0."""
    if n < 2:
        raise ValueError("the bound is stated for n >= 2")
    if min(h, d, p) < 1:
        raise ValueError("h, d and p must all be at least 1")
    bits = n * math.log2(n)
    return ErrorBound(value=max(0.0, (bits - 3 * h * d * p) / (3 * bits)))


# -- adversarial family --------------------------------------------------------

@dataclass(frozen=True)
class Member:
    label: str
    tokens: tuple[int, ...]
    expected: int


@dataclass(frozen=True)
class AdversarialFamily:
    n: int
    members: tuple[Member, ...]


def adversarial_case5_instances(n: int) -> AdversarialFamily:
    """The 32 sequences ``l(x,y) + t`` and ``r(x,y) + t`` for ``x, y`` in ``[4]``.

    ``l(x,y) = <0,x,1,y>`` must output x, ``r(x,y) = <1,x,0,y>`` must
    output y, and ``t = <2,2,3,3,...,n-1,n-1,0>``.
    """
    if n < 4:
        raise ValueError(f"the adversarial family needs n >= 4, got {n}")
    tail = tuple(t for k in range(2, n) for t in (k, k)) + (0,)
    members = []
    for x, y in itertools.product(range(4), repeat=2):
        members.append(Member(f"l({x},{y})", (0, x, 1, y) + tail, x))
    for x, y in itertools.product(range(4), repeat=2):
        members.append(Member(f"r({x},{y})", (1, x, 0, y) + tail, y))
    return AdversarialFamily(n=n, members=tuple(members))


@dataclass(frozen=True)
class Mismatch:
    index: int
    label: str
    tokens: tuple[int, ...]
    expected: int
    got: int


def probe_counterexample(spec: TransformerSpec, n: int, random_search: int = 0,
                         seed: int = 0) -> Optional[Mismatch]:
    """First member of the adversarial family the spec gets wrong, or None.

    ``random_search`` adds that many seeded random case-5 instances after
    the 32 fixed members.
    """
    if spec.case is not PresentationCase.CONSECUTIVE_PERMUTED or spec.n != n:
        raise ValueError(f"probe needs a case-5 spec with n={n}, got case {int(spec.case)} n={spec.n}")
    members = list(adversarial_case5_instances(n).members)
    for i in range(random_search):
        inst = random_instance(n, FunctionClass.ALL_FUNCTIONS, spec.case, (seed, i))
        members.append(Member(f"random[{i}]", tuple(encode(inst, spec.case)), oracle(inst)))
    idx = np.array([tokens_to_indices(m.tokens, spec.case, n) for m in members])
    got = forward_batch(spec, idx, invalid=-1)
    for i, (member, out) in enumerate(zip(members, got)):
        if out != member.expected:
            return Mismatch(i, member.label, member.tokens, member.expected, int(out))
    return None


def predicts_failure(spec: TransformerSpec) -> bool:
    """Whether the impossibility result covers ``spec``: one hard-attention layer, n >= 4."""
    attn = spec.attention_layers
    return len(attn) == 1 and attn[0].kind.is_hard and spec.n >= 4


# -- split-VC witness ----------------------------------------------------------

def modified_task_oracle(inst: Instance) -> int:
    """1 iff f(0) = 0."""
    return int(inst.f[0] == 0)


def swap_permutations(n: int) -> list[tuple[int, ...]]:
    """``u_k``: the identity on [n] with entries 0 and k exchanged."""
    out = []
    for k in range(n):
        u = list(range(n))
        u[0], u[k] = u[k], u[0]
        out.append(tuple(u))
    return out


def shatter_witness(n: int, labels: Sequence[int]) -> list[Instance]:
    """One case-5 instance per ``u_k`` sharing the value assignment ``v[k] = 1 - b_k``."""
    if n < 2:
        raise ValueError("shattering witness needs n >= 2")
    if len(labels) != n or any(b not in (0, 1) for b in labels):
        raise ValueError(f"labels must be {n} bits")
    values = [1 - b for b in labels]
    case = PresentationCase.CONSECUTIVE_PERMUTED
    out = []
    for keys in swap_permutations(n):
        tokens: list[Token] = [t for kv in zip(keys, values) for t in kv] + [0]
        out.append(decode_layout(tokens, case, n))
    return out


def verify_shattering(n: int) -> bool:
    """Check every labeling of the n swap permutations is realized by some value assignment."""
    if n > SHATTER_CAP:
        raise ValueError(f"n={n} means 2^{n} labelings; the cap is n <= {SHATTER_CAP}")
    for labels in itertools.product((0, 1), repeat=n):
        witness = shatter_witness(n, labels)
        if [modified_task_oracle(inst) for inst in witness] != list(labels):
            return False
    return True


# -- random specs --------------------------------------------------------------

def random_spec(n: int, case: PresentationCase, rng: np.random.Generator, kind: AttentionKind,
                d: Optional[int] = None, n_layers: int = 1, position_embedding: bool = True,
                mlp: bool = False) -> TransformerSpec:
    """Gaussian-weight spec, used for probing and invariance checks."""
    case = PresentationCase.parse(case)
    d = int(rng.integers(1, 17)) if d is None else d
    d_hid = int(rng.integers(1, d + 1))
    layers: list = []
    for _ in range(n_layers):
        layers.append(AttentionLayer(wq=rng.standard_normal((d_hid, d)), wk=rng.standard_normal((d_hid, d)),
                                     wv=rng.standard_normal((d, d)), kind=kind,
                                     residual=bool(rng.integers(0, 2))))
        if mlp:
            d_m = int(rng.integers(1, 2 * d + 1))
            layers.append(MLPLayer(w1=rng.standard_normal((d_m, d)), b1=rng.standard_normal(d_m),
                                   w2=rng.standard_normal((d, d_m)), b2=rng.standard_normal(d)))
    length = case.length(n)
    pos = rng.standard_normal((length, d)) if position_embedding else np.zeros((length, d))
    return TransformerSpec(n=n, case=case, token_embed=rng.standard_normal((case.alphabet_size(n), d)),
                           pos_embed=pos, layers=tuple(layers), output=Unembed(rng.standard_normal((n, d))),
                           name=f"random-{kind.value}")
