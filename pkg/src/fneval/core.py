"""Deterministic forward evaluation of small encoder-only transformers.

One head per attention layer, no masking, no layer norm.  Attention is
softmax or one of the hard variants (leftmost, rightmost, average).  All
array routines accept a leading batch axis: activations are
``(..., length, d)``.

Dot products are accumulated one coordinate at a time in a fixed order
instead of going through BLAS, so two positions holding bit-identical
vectors always get bit-identical scores.  The hard-attention tie rules
depend on that.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .task import PresentationCase, Token, tokens_to_indices

SPEC_VERSION = 1
DEFAULT_CHUNK = 256

Quantizer = Callable[[np.ndarray], np.ndarray]


class ContractError(ValueError):
    """Shapes or arguments violate an operation's contract."""


class AttentionKind(enum.Enum):
    SOFTMAX = "softmax"
    LEFTMOST = "leftmost-hard"
    RIGHTMOST = "rightmost-hard"
    AVERAGE = "average-hard"

    @property
    def is_hard(self) -> bool:
        return self is not AttentionKind.SOFTMAX


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AttentionLayer:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    kind: AttentionKind = AttentionKind.LEFTMOST
    residual: bool = False

    def __post_init__(self) -> None:
        for name in ("wq", "wk", "wv"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        object.__setattr__(self, "kind", AttentionKind(self.kind))
        if self.wq.shape != self.wk.shape:
            raise ContractError(f"wq {self.wq.shape} and wk {self.wk.shape} differ")
        if self.wq.shape[0] < 1:
            raise ContractError("d_hid must be at least 1")
        if self.wv.shape != (self.d, self.d):
            raise ContractError(f"wv must be {self.d}x{self.d}, got {self.wv.shape}")

    @property
    def d(self) -> int:
        return self.wq.shape[1]

    @property
    def d_hid(self) -> int:
        return self.wq.shape[0]


@dataclass(frozen=True, eq=False)
class MLPLayer:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        for name, nd in (("w1", 2), ("b1", 1), ("w2", 2), ("b2", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd, name))
        d_m, d = self.w1.shape
        if self.b1.shape != (d_m,) or self.w2.shape != (d, d_m) or self.b2.shape != (d,):
            raise ContractError("MLP shapes are inconsistent: "
                                f"w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}, b2 {self.b2.shape}")

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


@dataclass(frozen=True, eq=False)
class Unembed:
    u: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _frozen(self.u, 2, "u"))


@dataclass(frozen=True)
class FunctionalDecoder:
    """Exact position-wise decoder for the one-layer softmax case-5 construction."""
    n: int
    tag: str = "case5-soft"


Layer = Union[AttentionLayer, MLPLayer]
OutputStage = Union[Unembed, FunctionalDecoder]


@dataclass(frozen=True, eq=False)
class TransformerSpec:
    n: int
    case: PresentationCase
    token_embed: np.ndarray
    pos_embed: np.ndarray
    layers: tuple
    output: OutputStage
    heads: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "case", PresentationCase.parse(self.case))
        object.__setattr__(self, "token_embed", _frozen(self.token_embed, 2, "token_embed"))
        object.__setattr__(self, "pos_embed", _frozen(self.pos_embed, 2, "pos_embed"))
        object.__setattr__(self, "layers", tuple(self.layers))
        d = self.d
        if self.heads != 1:
            raise ContractError("only single-head layers are supported")
        if self.token_embed.shape[0] != self.case.alphabet_size(self.n):
            raise ContractError(f"token table has {self.token_embed.shape[0]} rows, "
                                f"case {int(self.case)} alphabet needs {self.case.alphabet_size(self.n)}")
        if self.pos_embed.shape != (self.length, d):
            raise ContractError(f"pos_embed must be {self.length}x{d}, got {self.pos_embed.shape}")
        for i, layer in enumerate(self.layers):
            if layer.d != d:
                raise ContractError(f"layer {i} has width {layer.d}, expected {d}")
        if isinstance(self.output, Unembed):
            if self.output.u.shape != (self.n, d):
                raise ContractError(f"unembedding must be {self.n}x{d}, got {self.output.u.shape}")
        elif isinstance(self.output, FunctionalDecoder):
            if self.output.n != self.n:
                raise ContractError("decoder domain size differs from spec n")
        else:
            raise ContractError(f"unknown output stage {self.output!r}")

    @property
    def d(self) -> int:
        return self.token_embed.shape[1]

    @property
    def length(self) -> int:
        return self.case.length(self.n)

    @property
    def attention_layers(self) -> list[AttentionLayer]:
        return [layer for layer in self.layers if isinstance(layer, AttentionLayer)]

    @property
    def has_position_embedding(self) -> bool:
        return bool(np.any(self.pos_embed != 0))

    def to_dict(self) -> dict:
        return spec_to_dict(self)

    def to_json(self) -> str:
        return json.dumps(spec_to_dict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TransformerSpec":
        return spec_from_dict(json.loads(text))


# -- attention weights -------------------------------------------------------

def softmax_weights(scores) -> np.ndarray:
    """Softmax along the last axis with max subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[-1] < 1:
        raise ContractError("softmax needs at least one score")
    if not np.all(np.isfinite(s)):
        raise ContractError("softmax scores must be finite")
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _maximal_mask(s: np.ndarray) -> np.ndarray:
    return s == s.max(axis=-1, keepdims=True)


def _hard_index(s: np.ndarray, kind: AttentionKind) -> np.ndarray:
    mask = _maximal_mask(s)
    if kind is AttentionKind.LEFTMOST:
        return mask.argmax(axis=-1)
    return s.shape[-1] - 1 - mask[..., ::-1].argmax(axis=-1)


def hard_weights(scores, kind: AttentionKind) -> np.ndarray:
    """Hard attention weights along the last axis; ties decided by exact equality."""
    kind = AttentionKind(kind)
    if not kind.is_hard:
        raise ContractError("hard_weights called with softmax attention")
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ContractError("attention scores must be finite")
    if kind is AttentionKind.AVERAGE:
        mask = _maximal_mask(s)
        return mask / mask.sum(axis=-1, keepdims=True)
    idx = _hard_index(s, kind)
    out = np.zeros_like(s)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


# -- layers --------------------------------------------------------------------

def _project(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w.T`` accumulated column by column in a fixed order."""
    out = np.zeros(x.shape[:-1] + (w.shape[0],))
    sparse = np.count_nonzero(w) <= 2 * max(w.shape)
    for c in range(w.shape[1]):
        col = w[:, c]
        if sparse:
            # same per-entry order as the dense branch, without full-width temporaries
            for r in np.flatnonzero(col):
                out[..., r] += x[..., c] * col[r]
        elif np.any(col):
            out += x[..., c, None] * col
    return out


def _dot_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``q @ k.T`` over the last axis, one coordinate at a time."""
    s = np.zeros(q.shape[:-1] + (k.shape[-2],))
    for c in range(q.shape[-1]):
        s += q[..., :, None, c] * k[..., None, :, c]
    return s


def _average_head(mask: np.ndarray, v: np.ndarray, block_elems: int = 1 << 24) -> np.ndarray:
    """Mean of ``v`` over each maximal set, independent of position order.

    Tied values are summed in sorted order per coordinate, so any
    reordering of the positions gives bit-identical output.
    """
    count = mask.sum(axis=-1, keepdims=True)
    q_len, k_len, d = mask.shape[-2], mask.shape[-1], v.shape[-1]
    batch = int(np.prod(mask.shape[:-2], dtype=np.int64))
    step = max(1, block_elems // max(1, batch * k_len * d))
    out = np.empty(mask.shape[:-1] + (d,))
    for start in range(0, q_len, step):
        m = mask[..., start:start + step, :, None]
        vals = np.sort(np.where(m, v[..., None, :, :], np.nan), axis=-2)
        out[..., start:start + step, :] = np.nansum(vals, axis=-2)
    return out / count


@dataclass
class AttentionTrace:
    scores: np.ndarray
    weights: np.ndarray
    head: np.ndarray
    out: np.ndarray


def attention_trace(layer: AttentionLayer, x: np.ndarray, rows: Optional[Sequence[int]] = None,
                    quantizer: Optional[Quantizer] = None) -> AttentionTrace:
    """Run one attention layer, keeping scores, weights and head output.

    ``rows`` restricts the computation to a subset of query positions.
    ``quantizer`` is applied to the head output before the residual add.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.d:
        raise ContractError(f"input width {x.shape[-1]} != layer width {layer.d}")
    xq = x if rows is None else x[..., rows, :]
    q = _project(xq, layer.wq)
    k = _project(x, layer.wk)
    v = _project(x, layer.wv)
    scores = _dot_scores(q, k) / math.sqrt(layer.d_hid)
    if layer.kind is AttentionKind.SOFTMAX:
        weights = softmax_weights(scores)
        head = weights @ v
    elif layer.kind is AttentionKind.AVERAGE:
        weights = hard_weights(scores, layer.kind)
        head = _average_head(weights > 0, v)
    else:
        if not np.all(np.isfinite(scores)):
            raise ContractError("attention scores must be finite")
        idx = _hard_index(scores, layer.kind)
        weights = np.zeros_like(scores)
        np.put_along_axis(weights, idx[..., None], 1.0, axis=-1)
        head = np.take_along_axis(v, idx[..., None], axis=-2)
    if quantizer is not None:
        head = quantizer(head)
    out = head + xq if layer.residual else head
    return AttentionTrace(scores=scores, weights=weights, head=head, out=out)


def attention_layer_forward(layer: AttentionLayer, x, rows: Optional[Sequence[int]] = None,
                            quantizer: Optional[Quantizer] = None) -> np.ndarray:
    return attention_trace(layer, x, rows=rows, quantizer=quantizer).out


def mlp_forward(layer: MLPLayer, x) -> np.ndarray:
    """Row-wise ``w2 relu(w1 x + b1) + b2``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.d:
        raise ContractError(f"input width {x.shape[-1]} != MLP width {layer.d}")
    hidden = np.maximum(x @ layer.w1.T + layer.b1, 0.0)
    return hidden @ layer.w2.T + layer.b2


def _apply(layer: Layer, x: np.ndarray, rows=None, quantizer=None) -> np.ndarray:
    if isinstance(layer, AttentionLayer):
        return attention_layer_forward(layer, x, rows=rows, quantizer=quantizer)
    return mlp_forward(layer, x if rows is None else x[..., rows, :])


# -- embedding and output ------------------------------------------------------

def embed(spec: TransformerSpec, tokens: Sequence[Token]) -> np.ndarray:
    """Input embedding of one token sequence: token row plus position row."""
    idx = tokens_to_indices(tokens, spec.case, spec.n)
    return embed_indices(spec, idx)


def embed_indices(spec: TransformerSpec, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.shape[-1] != spec.length:
        raise ContractError(f"expected sequences of length {spec.length}, got {idx.shape[-1]}")
    return spec.token_embed[idx] + spec.pos_embed


def output_decode(stage: OutputStage, y_last) -> int:
    """Map the final-position vector to an integer output."""
    y = np.asarray(y_last, dtype=np.float64)
    return int(decode_batch(stage, y[None, :])[0])


def decode_batch(stage: OutputStage, y_last: np.ndarray, invalid: Optional[int] = None) -> np.ndarray:
    """Decode each row of ``y_last``.

    With ``invalid`` set, rows the functional decoder rejects map to that
    value instead of raising.
    """
    if isinstance(stage, Unembed):
        if y_last.shape[-1] != stage.u.shape[1]:
            raise ContractError(f"output vector width {y_last.shape[-1]} != unembedding width {stage.u.shape[1]}")
        # argmax returns the first maximum: ties go to the smallest index
        return np.argmax(_project(y_last, stage.u), axis=-1)
    from .constructions import DecodeError, case5_soft_decode
    out = np.empty(len(y_last), dtype=np.int64)
    for i, row in enumerate(y_last):
        try:
            out[i] = case5_soft_decode(row, stage.n)
        except DecodeError:
            if invalid is None:
                raise
            out[i] = invalid
    return out


# -- full model ----------------------------------------------------------------

def final_states(spec: TransformerSpec, idx: np.ndarray, quantizer: Optional[Quantizer] = None) -> np.ndarray:
    """Final-layer activation at the last position for each sequence in ``idx``.

    Layers after the last attention layer are position-wise, so from that
    layer on only the final position is computed.
    """
    x = embed_indices(spec, idx)
    if quantizer is not None:
        x = quantizer(x)
    last = [spec.length - 1]
    attn_positions = [i for i, layer in enumerate(spec.layers) if isinstance(layer, AttentionLayer)]
    if attn_positions:
        cut = attn_positions[-1]
    else:
        cut = None
        x = x[..., last, :]
    for i, layer in enumerate(spec.layers):
        x = _apply(layer, x, rows=last if i == cut else None, quantizer=quantizer)
    return x[..., 0, :]


def forward_batch(spec: TransformerSpec, idx: np.ndarray, quantizer: Optional[Quantizer] = None,
                  invalid: Optional[int] = None) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    return decode_batch(spec.output, final_states(spec, idx, quantizer), invalid=invalid)


def forward_chunked(spec: TransformerSpec, idx: np.ndarray, quantizer: Optional[Quantizer] = None,
                    invalid: Optional[int] = None, chunk: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """:func:`forward_batch` over fixed-size chunks, optionally on a thread pool.

    Chunk boundaries do not depend on ``workers``, so results are
    bit-identical for any worker count.
    """
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    pieces = [idx[i:i + chunk] for i in range(0, len(idx), chunk)]
    if not pieces:
        return np.zeros(0, dtype=np.int64)
    run = lambda piece: forward_batch(spec, piece, quantizer=quantizer, invalid=invalid)  # noqa: E731
    if workers == 1 or len(pieces) == 1:
        results = [run(piece) for piece in pieces]
    else:
        with ThreadPoolExecutor(max_workers=workers or None) as pool:
            results = list(pool.map(run, pieces))
    return np.concatenate(results)


def forward(spec: TransformerSpec, tokens: Sequence[Token]) -> int:
    idx = tokens_to_indices(tokens, spec.case, spec.n)
    return int(forward_batch(spec, idx[None, :])[0])


@dataclass
class ForwardTrace:
    embedded: np.ndarray
    layers: list = field(default_factory=list)
    final: np.ndarray = None
    output: int = -1


def forward_trace(spec: TransformerSpec, tokens: Sequence[Token],
                  quantizer: Optional[Quantizer] = None) -> ForwardTrace:
    """Full-sequence forward pass keeping every intermediate (one sequence)."""
    x = embed(spec, tokens)
    if quantizer is not None:
        x = quantizer(x)
    trace = ForwardTrace(embedded=x)
    for layer in spec.layers:
        if isinstance(layer, AttentionLayer):
            step = attention_trace(layer, x, quantizer=quantizer)
            trace.layers.append(step)
            x = step.out
        else:
            x = mlp_forward(layer, x)
            trace.layers.append(x)
    trace.final = x[-1]
    trace.output = output_decode(spec.output, x[-1])
    return trace


# -- serialization -------------------------------------------------------------

def _enc(a: np.ndarray):
    if a.ndim == 1:
        return [repr(float(v)) for v in a]
    return [_enc(row) for row in a]


def _dec(a) -> np.ndarray:
    return np.array(a, dtype=np.float64)


def spec_to_dict(spec: TransformerSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, AttentionLayer):
            layers.append({"type": "attention", "kind": layer.kind.value, "residual": layer.residual,
                           "d_hid": layer.d_hid, "wq": _enc(layer.wq), "wk": _enc(layer.wk),
                           "wv": _enc(layer.wv)})
        else:
            layers.append({"type": "mlp", "w1": _enc(layer.w1), "b1": _enc(layer.b1),
                           "w2": _enc(layer.w2), "b2": _enc(layer.b2)})
    if isinstance(spec.output, Unembed):
        output = {"type": "unembed", "u": _enc(spec.output.u)}
    else:
        output = {"type": "functional-decoder", "tag": spec.output.tag, "n": spec.output.n}
    return {"spec_version": SPEC_VERSION, "name": spec.name, "n": spec.n, "case": spec.case.slug,
            "heads": spec.heads, "d": spec.d, "token_embed": _enc(spec.token_embed),
            "pos_embed": _enc(spec.pos_embed), "layers": layers, "output": output}


def spec_from_dict(data: dict) -> TransformerSpec:
    try:
        if data.get("spec_version") != SPEC_VERSION:
            raise ContractError(f"unsupported spec_version {data.get('spec_version')!r}")
        layers: list[Layer] = []
        for entry in data["layers"]:
            if entry["type"] == "attention":
                layers.append(AttentionLayer(wq=_dec(entry["wq"]), wk=_dec(entry["wk"]), wv=_dec(entry["wv"]),
                                             kind=AttentionKind(entry["kind"]), residual=bool(entry["residual"])))
            elif entry["type"] == "mlp":
                layers.append(MLPLayer(w1=_dec(entry["w1"]), b1=_dec(entry["b1"]),
                                       w2=_dec(entry["w2"]), b2=_dec(entry["b2"])))
            else:
                raise ContractError(f"unknown layer type {entry['type']!r}")
        out = data["output"]
        if out["type"] == "unembed":
            output: OutputStage = Unembed(_dec(out["u"]))
        elif out["type"] == "functional-decoder":
            output = FunctionalDecoder(n=int(out["n"]), tag=out.get("tag", "case5-soft"))
        else:
            raise ContractError(f"unknown output type {out['type']!r}")
        return TransformerSpec(n=int(data["n"]), case=PresentationCase.parse(data["case"]),
                               token_embed=_dec(data["token_embed"]), pos_embed=_dec(data["pos_embed"]),
                               layers=tuple(layers), output=output, heads=int(data.get("heads", 1)),
                               name=data.get("name", ""))
    except (KeyError, TypeError) as exc:
        raise ContractError(f"malformed spec document: {exc}") from exc
