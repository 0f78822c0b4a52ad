"""Function-evaluation instances, the five input layouts, and generators.

An instance is a table ``f`` over ``[n]``, a key order ``pi`` and a target
key.  Tokens are plain ints (a key or a value) or ``(key, value)`` tuples
for the same-position layouts.  Internally every token also has an
integer alphabet index: scalars map to themselves and a pair ``(k, v)``
maps to ``n + k * n + v``.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

Token = Union[int, tuple[int, int]]

DEFAULT_EXHAUSTIVE_CAP = 5


class InvalidInstanceError(ValueError):
    """Instance fields violate the task invariants."""


class EncodingError(ValueError):
    """A token sequence does not fit the layout it claims."""


class PresentationCase(enum.IntEnum):
    NO_KEYS = 1
    SAME_POS_ORDERED = 2
    SAME_POS_PERMUTED = 3
    CONSECUTIVE_ORDERED = 4
    CONSECUTIVE_PERMUTED = 5

    @property
    def ordered(self) -> bool:
        return self in (PresentationCase.NO_KEYS, PresentationCase.SAME_POS_ORDERED,
                        PresentationCase.CONSECUTIVE_ORDERED)

    @property
    def uses_pairs(self) -> bool:
        return self in (PresentationCase.SAME_POS_ORDERED, PresentationCase.SAME_POS_PERMUTED)

    @property
    def consecutive(self) -> bool:
        return self in (PresentationCase.CONSECUTIVE_ORDERED, PresentationCase.CONSECUTIVE_PERMUTED)

    @property
    def slug(self) -> str:
        return self.name.lower().replace("_", "-")

    def length(self, n: int) -> int:
        """Sequence length for domain size ``n``."""
        return 2 * n + 1 if self.consecutive else n + 1

    def alphabet_size(self, n: int) -> int:
        return n + n * n if self.uses_pairs else n

    @classmethod
    def parse(cls, value: "int | str | PresentationCase") -> "PresentationCase":
        if isinstance(value, cls):
            return value
        if isinstance(value, str) and not value.isdigit():
            for case in cls:
                if case.slug == value.lower():
                    return case
            raise ValueError(f"unknown presentation case {value!r}")
        return cls(int(value))


class FunctionClass(enum.Enum):
    ALL_FUNCTIONS = "all"
    PERMUTATIONS_ONLY = "perm"


@dataclass(frozen=True)
class Instance:
    n: int
    f: tuple[int, ...]
    pi: tuple[int, ...]
    target: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", tuple(int(v) for v in self.f))
        object.__setattr__(self, "pi", tuple(int(v) for v in self.pi))
        object.__setattr__(self, "target", int(self.target))
        self.validate()

    def validate(self) -> None:
        n = self.n
        if n < 1:
            raise InvalidInstanceError(f"n must be positive, got {n}")
        if len(self.f) != n or any(not 0 <= v < n for v in self.f):
            raise InvalidInstanceError(f"f must be {n} values in [0, {n})")
        if sorted(self.pi) != list(range(n)):
            raise InvalidInstanceError(f"pi is not a permutation of [{n}]: {self.pi}")
        if not 0 <= self.target < n:
            raise InvalidInstanceError(f"target {self.target} outside [0, {n})")

    @property
    def keys(self) -> tuple[int, ...]:
        return self.pi

    @property
    def values(self) -> tuple[int, ...]:
        """Values in presentation order, ``f(pi(i))``."""
        return tuple(self.f[k] for k in self.pi)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "f": list(self.f), "pi": list(self.pi),
                           "target": self.target}, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        try:
            return cls(n=int(data["n"]), f=data["f"], pi=data["pi"], target=data["target"])
        except (KeyError, TypeError) as exc:
            raise InvalidInstanceError(f"malformed instance record: {data!r}") from exc


def is_identity(pi: Sequence[int]) -> bool:
    return all(k == i for i, k in enumerate(pi))


def encode(inst: Instance, case: PresentationCase) -> list[Token]:
    """Lay out ``inst`` as a token sequence for ``case``."""
    case = PresentationCase.parse(case)
    if case.ordered and not is_identity(inst.pi):
        raise InvalidInstanceError(f"case {int(case)} requires keys in order, got pi={inst.pi}")
    keys, values = inst.keys, inst.values
    if case is PresentationCase.NO_KEYS:
        seq: list[Token] = list(values)
    elif case.uses_pairs:
        seq = list(zip(keys, values))
    else:
        seq = [t for kv in zip(keys, values) for t in kv]
    seq.append(inst.target)
    return seq


def decode_layout(tokens: Sequence[Token], case: PresentationCase, n: int) -> Instance:
    """Inverse of :func:`encode`; the result carries ``f`` reconstructed from the pairs."""
    case = PresentationCase.parse(case)
    validate_tokens(tokens, case, n)
    body, target = tokens[:-1], tokens[-1]
    if case is PresentationCase.NO_KEYS:
        keys, values = list(range(n)), list(body)
    elif case.uses_pairs:
        keys = [k for k, _ in body]
        values = [v for _, v in body]
    else:
        keys, values = list(body[0::2]), list(body[1::2])
    if sorted(keys) != list(range(n)):
        raise EncodingError(f"keys are not a permutation of [{n}]: {keys}")
    f = [0] * n
    for k, v in zip(keys, values):
        f[k] = v
    return Instance(n=n, f=f, pi=keys, target=target)


def validate_tokens(tokens: Sequence[Token], case: PresentationCase, n: int) -> None:
    case = PresentationCase.parse(case)
    if len(tokens) != case.length(n):
        raise EncodingError(f"case {int(case)} at n={n} needs {case.length(n)} tokens, got {len(tokens)}")
    for pos, tok in enumerate(tokens):
        is_pair = isinstance(tok, tuple)
        if pos == len(tokens) - 1 or not case.uses_pairs:
            if is_pair or not 0 <= tok < n:
                raise EncodingError(f"position {pos}: expected a scalar in [0, {n}), got {tok!r}")
        elif not is_pair or len(tok) != 2 or not all(0 <= t < n for t in tok):
            raise EncodingError(f"position {pos}: expected a (key, value) pair over [0, {n}), got {tok!r}")


def token_index(tok: Token, n: int) -> int:
    if isinstance(tok, tuple):
        k, v = tok
        return n + k * n + v
    return int(tok)


def tokens_to_indices(tokens: Sequence[Token], case: PresentationCase, n: int) -> np.ndarray:
    validate_tokens(tokens, case, n)
    return np.array([token_index(t, n) for t in tokens], dtype=np.int64)


def encode_batch(instances: Sequence[Instance], case: PresentationCase) -> np.ndarray:
    """Alphabet-index matrix of shape ``(len(instances), length)``."""
    case = PresentationCase.parse(case)
    if not instances:
        return np.zeros((0, 0), dtype=np.int64)
    n = instances[0].n
    f = np.array([inst.f for inst in instances], dtype=np.int64)
    pi = np.array([inst.pi for inst in instances], dtype=np.int64)
    target = np.array([inst.target for inst in instances], dtype=np.int64)
    if case.ordered and not (pi == np.arange(n)).all():
        raise InvalidInstanceError(f"case {int(case)} requires keys in order")
    values = np.take_along_axis(f, pi, axis=1)
    if case is PresentationCase.NO_KEYS:
        body = values
    elif case.uses_pairs:
        body = n + pi * n + values
    else:
        body = np.empty((len(instances), 2 * n), dtype=np.int64)
        body[:, 0::2] = pi
        body[:, 1::2] = values
    return np.concatenate([body, target[:, None]], axis=1)


def oracle(inst: Instance) -> int:
    """Ground truth: ``f(target)`` by table lookup."""
    return inst.f[inst.target]


def exhaustive_cap() -> int:
    raw = os.environ.get("WORKBENCH_EXHAUSTIVE_CAP")
    return int(raw) if raw else DEFAULT_EXHAUSTIVE_CAP


def _function_tables(n: int, fclass: FunctionClass) -> Iterable[tuple[int, ...]]:
    if fclass is FunctionClass.ALL_FUNCTIONS:
        return itertools.product(range(n), repeat=n)
    return itertools.permutations(range(n))


def enumerate_instances(n: int, fclass: FunctionClass = FunctionClass.ALL_FUNCTIONS,
                        ordered: bool = False, cap: int | None = None) -> Iterator[Instance]:
    """Yield every (f, pi, target) triple once, f outermost and target innermost."""
    cap = exhaustive_cap() if cap is None else cap
    if n > cap:
        raise ValueError(f"n={n} exceeds the exhaustive cap of {cap}; use sampled mode instead "
                         "(or raise WORKBENCH_EXHAUSTIVE_CAP)")
    if n < 1:
        raise ValueError("n must be positive")
    perms = [tuple(range(n))] if ordered else list(itertools.permutations(range(n)))
    for f in _function_tables(n, fclass):
        for pi in perms:
            for target in range(n):
                yield Instance(n=n, f=f, pi=pi, target=target)


def random_instance(n: int, fclass: FunctionClass, case: PresentationCase,
                    seed: int | Sequence[int]) -> Instance:
    """Draw one instance; the same seed always gives the same instance."""
    rng = np.random.default_rng(seed)
    case = PresentationCase.parse(case)
    if fclass is FunctionClass.PERMUTATIONS_ONLY:
        f = rng.permutation(n)
    else:
        f = rng.integers(0, n, size=n)
    pi = np.arange(n) if case.ordered else rng.permutation(n)
    target = int(rng.integers(0, n))
    return Instance(n=n, f=tuple(f), pi=tuple(pi), target=target)


def sampled_instances(n: int, fclass: FunctionClass, case: PresentationCase,
                      count: int, seed: int) -> Iterator[Instance]:
    """Counter-mode stream: instance ``i`` depends only on ``(seed, i)``."""
    for i in range(count):
        yield random_instance(n, fclass, case, (seed, i))


def instance_space_size(n: int, fclass: FunctionClass = FunctionClass.PERMUTATIONS_ONLY,
                        ordered: bool = True) -> int:
    tables = math.factorial(n) if fclass is FunctionClass.PERMUTATIONS_ONLY else n ** n
    orders = 1 if ordered else math.factorial(n)
    return n * tables * orders


def read_instances(path: str | os.PathLike) -> list[Instance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Instance.from_dict(json.loads(line)))
    return out


def write_instances(instances: Iterable[Instance], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")
