"""Exact weight builders for the function-evaluation transformers.

Integers are encoded as points on the unit circle: ``k`` modulo ``m``
becomes ``(cos 2πk/m, sin 2πk/m)``.  Distinct residues have dot product at
most ``1 - 1/m**2``, which is what lets a hard-attention head single out
the matching key.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .core import (AttentionKind, AttentionLayer, FunctionalDecoder, TransformerSpec,
                   Unembed)
from .task import PresentationCase


class DecodeError(ValueError):
    """Attention output does not have the proportional-token structure."""


def circle_embed(m: int, k: int) -> np.ndarray:
    if m < 1:
        raise ValueError("modulus must be positive")
    theta = 2.0 * math.pi * (k % m) / m
    return np.array([math.cos(theta), math.sin(theta)])


def circle_codes(m: int, count: int | None = None) -> np.ndarray:
    """Rows ``circle_embed(m, k)`` for ``k`` in ``range(count or m)``."""
    return np.array([circle_embed(m, k) for k in range(m if count is None else count)])


def _select(rows: int, cols: int, pairs) -> np.ndarray:
    w = np.zeros((rows, cols))
    for r, c, val in pairs:
        w[r, c] = val
    return w


def _unembed(m: int, n: int, d: int) -> Unembed:
    u = np.zeros((n, d))
    u[:, :2] = circle_codes(m, n)
    return Unembed(u)


def build_case3(n: int, case: PresentationCase = PresentationCase.SAME_POS_PERMUTED) -> TransformerSpec:
    """Keys and values share a position (cases 2 and 3); d=4, no position embedding.

    Pair ``(k, v)`` embeds as ``[cs(k), cs(v)]``, the target as ``[cs(i*), 0, 0]``.
    The head copies the value half of the position whose key matches the
    target.  The target position scores the same as the match (its own key
    is ``cs(i*)``), and leftmost tie-breaking selects the earlier match.
    """
    case = PresentationCase.parse(case)
    if not case.uses_pairs:
        raise ValueError("build_case3 serves the same-position layouts only")
    codes = circle_codes(n)
    table = np.zeros((case.alphabet_size(n), 4))
    table[:n, 0:2] = codes
    for k in range(n):
        for v in range(n):
            table[n + k * n + v] = np.concatenate([codes[k], codes[v]])
    wqk = _select(2, 4, [(0, 0, 1), (1, 1, 1)])
    wv = _select(4, 4, [(0, 2, 1), (1, 3, 1)])
    layer = AttentionLayer(wq=wqk, wk=wqk, wv=wv, kind=AttentionKind.LEFTMOST)
    return TransformerSpec(n=n, case=case, token_embed=table, pos_embed=np.zeros((case.length(n), 4)),
                           layers=(layer,), output=_unembed(n, n, 4), name=f"case{int(case)}")


def build_case1(n: int) -> TransformerSpec:
    """No keys: the position code stands in for the key; codes modulo n+1."""
    case = PresentationCase.NO_KEYS
    codes = circle_codes(n + 1)
    table = np.zeros((n, 4))
    table[:, 0:2] = codes[:n]
    pos = np.zeros((n + 1, 4))
    pos[:, 2:4] = codes
    layer = AttentionLayer(wq=_select(2, 4, [(0, 0, 1), (1, 1, 1)]),
                           wk=_select(2, 4, [(0, 2, 1), (1, 3, 1)]),
                           wv=_select(4, 4, [(0, 0, 1), (1, 1, 1)]),
                           kind=AttentionKind.LEFTMOST)
    return TransformerSpec(n=n, case=case, token_embed=table, pos_embed=pos, layers=(layer,),
                           output=_unembed(n + 1, n, 4), name="case1")


def build_case4(n: int) -> TransformerSpec:
    """Consecutive ordered keys: odd position 2k+1 carries cs(k) in dims 2-3."""
    case = PresentationCase.CONSECUTIVE_ORDERED
    codes = circle_codes(n)
    table = np.zeros((n, 4))
    table[:, 0:2] = codes
    pos = np.zeros((2 * n + 1, 4))
    pos[1:2 * n:2, 2:4] = codes
    layer = AttentionLayer(wq=_select(2, 4, [(0, 0, 1), (1, 1, 1)]),
                           wk=_select(2, 4, [(0, 2, 1), (1, 3, 1)]),
                           wv=_select(4, 4, [(0, 0, 1), (1, 1, 1)]),
                           kind=AttentionKind.LEFTMOST)
    return TransformerSpec(n=n, case=case, token_embed=table, pos_embed=pos, layers=(layer,),
                           output=_unembed(n, n, 4), name="case4")


def build_case5_soft(n: int) -> TransformerSpec:
    """One softmax layer that copies the whole sequence into the last position.

    d = 2n+2.  Position i is one-hot at index i, token v adds ``ln(v+1)`` in
    the last coordinate.  The query is a constant vector on the last
    coordinate (the one-hot part always sums to 1), scaled so the score at
    position j is exactly ``ln(v_j + 1)`` and the weight is ``(v_j+1)/S``.
    """
    case = PresentationCase.CONSECUTIVE_PERMUTED
    length = case.length(n)
    d = 2 * n + 2
    table = np.zeros((n, d))
    table[:, -1] = np.log(np.arange(n) + 1.0)
    pos = np.zeros((length, d))
    pos[np.arange(length), np.arange(length)] = 1.0
    wq = np.zeros((d, d))
    wq[-1, :length] = math.sqrt(d)
    wk = np.eye(d)
    wv = np.eye(d)
    wv[-1, -1] = 0.0
    layer = AttentionLayer(wq=wq, wk=wk, wv=wv, kind=AttentionKind.SOFTMAX)
    return TransformerSpec(n=n, case=case, token_embed=table, pos_embed=pos, layers=(layer,),
                           output=FunctionalDecoder(n=n), name="case5-soft")


def case5_soft_decode(att_out, n: int) -> int:
    """Recover the token sequence from proportional weights and look up the target.

    The keys at even positions are a permutation of ``[n]``, so the largest
    even-position weight belongs to key ``n-1`` and equals ``n/S``; that
    fixes the scale ``S``.
    """
    a = np.asarray(att_out, dtype=np.float64)
    length = 2 * n + 1
    if a.shape != (length + 1,):
        raise DecodeError(f"expected a vector of length {length + 1}, got shape {a.shape}")
    body = a[:length]
    top = body[0:2 * n:2].max()
    if not top > 0:
        raise DecodeError("no positive key weight to fix the scale")
    raw = body * (n / top)
    counts = np.rint(raw)
    if np.any(np.abs(raw - counts) > 0.25):
        raise DecodeError(f"weights are not integer multiples of 1/S: {raw}")
    tokens = counts.astype(np.int64) - 1
    if np.any(tokens < 0) or np.any(tokens >= n):
        raise DecodeError(f"recovered tokens outside [0, {n}): {tokens}")
    keys, values, target = tokens[0:2 * n:2], tokens[1:2 * n:2], tokens[-1]
    hits = np.flatnonzero(keys == target)
    if hits.size == 0:
        raise DecodeError(f"target key {target} missing from recovered keys {keys}")
    return int(values[hits[0]])


def build_case5_twolayer(n: int) -> TransformerSpec:
    """Two leftmost-hard layers, d=7, codes modulo n+1.

    Layout of a position: dims 0-1 token, 2-3 copied key (layer 1 output),
    4-5 pair index code, 6 flag (-1 on key positions and the target, 0 on
    value positions).  Layer 1 copies each key onto its value position;
    layer 2 matches the target against the copied keys, and the flag term
    pushes key positions and the target itself below the matching value.
    """
    case = PresentationCase.CONSECUTIVE_PERMUTED
    codes = circle_codes(n + 1)
    table = np.zeros((n, 7))
    table[:, 0:2] = codes[:n]
    pos = np.zeros((2 * n + 1, 7))
    for k in range(n + 1):
        for i in (2 * k, 2 * k + 1):
            if i < 2 * n + 1:
                pos[i, 4:6] = codes[k]
                pos[i, 6] = -1.0 if i % 2 == 0 else 0.0
    copy = AttentionLayer(wq=_select(3, 7, [(0, 4, 1), (1, 5, 1)]),
                          wk=_select(3, 7, [(0, 4, 1), (1, 5, 1)]),
                          wv=_select(7, 7, [(2, 0, 1), (3, 1, 1)]),
                          kind=AttentionKind.LEFTMOST, residual=True)
    lookup = AttentionLayer(wq=_select(3, 7, [(0, 0, 1), (1, 1, 1), (2, 6, -1)]),
                            wk=_select(3, 7, [(0, 2, 1), (1, 3, 1), (2, 6, 1)]),
                            wv=_select(7, 7, [(0, 0, 1), (1, 1, 1)]),
                            kind=AttentionKind.LEFTMOST)
    return TransformerSpec(n=n, case=case, token_embed=table, pos_embed=pos, layers=(copy, lookup),
                           output=_unembed(n + 1, n, 7), name="case5-twolayer")


BUILDERS: dict[str, Callable[[int], TransformerSpec]] = {
    "case1": build_case1,
    "case2": lambda n: build_case3(n, case=PresentationCase.SAME_POS_ORDERED),
    "case3": build_case3,
    "case4": build_case4,
    "case5-soft": build_case5_soft,
    "case5-twolayer": build_case5_twolayer,
}


def default_builder(case: PresentationCase, two_layer: bool = False) -> str:
    case = PresentationCase.parse(case)
    if case is PresentationCase.CONSECUTIVE_PERMUTED:
        return "case5-twolayer" if two_layer else "case5-soft"
    return f"case{int(case)}"


def build(builder_id: str, n: int) -> TransformerSpec:
    try:
        builder = BUILDERS[builder_id]
    except KeyError:
        raise ValueError(f"unknown builder {builder_id!r}; choose from {sorted(BUILDERS)}") from None
    if n < 1:
        raise ValueError("n must be positive")
    return builder(n)
