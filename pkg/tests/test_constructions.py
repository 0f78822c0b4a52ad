import math

import numpy as np
import pytest

from fneval.constructions import (BUILDERS, DecodeError, build, build_case1, build_case3,
                                  build_case4, build_case5_soft, build_case5_twolayer,
                                  case5_soft_decode, circle_codes, circle_embed, default_builder)
from fneval.core import (AttentionKind, FunctionalDecoder, attention_trace, embed, forward,
                         forward_batch)
from fneval.task import (FunctionClass, Instance, encode, encode_batch,
                         enumerate_instances, oracle, sampled_instances)

ALL = FunctionClass.ALL_FUNCTIONS


def test_circle_embed_examples():
    assert np.allclose(circle_embed(8, 2), [0, 1], atol=1e-15)
    assert np.allclose(circle_embed(4, 2), [-1, 0], atol=1e-15)
    for m in (1, 2, 7, 100):
        assert circle_embed(m, 0).tolist() == [1.0, 0.0]
    assert np.array_equal(circle_embed(5, 7), circle_embed(5, 2))
    assert np.array_equal(circle_embed(5, -3), circle_embed(5, 2))


def test_circle_codes_unit_norm():
    for m in (1, 3, 64, 4096):
        assert np.allclose(np.linalg.norm(circle_codes(m), axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("m", range(1, 65))
def test_circle_separation_exhaustive(m):
    codes = circle_codes(m)
    gram = codes @ codes.T
    off = gram[~np.eye(m, dtype=bool)]
    assert np.all(off <= 1 - 1 / m**2)


def test_circle_separation_sampled_large():
    rng = np.random.default_rng(0)
    for m in rng.integers(65, 4097, size=40):
        j, k = rng.integers(0, m, size=(2, 500))
        keep = j != k
        dots = np.einsum("ij,ij->i", circle_codes(m)[j[keep]], circle_codes(m)[k[keep]])
        assert np.all(dots <= 1 - 1 / m**2)
        # the closest pair is always adjacent residues
        assert math.cos(2 * math.pi / m) <= 1 - 1 / m**2


@pytest.mark.parametrize("builder,d,layers", [
    (build_case1, 4, 1), (build_case3, 4, 1), (build_case4, 4, 1), (build_case5_twolayer, 7, 2),
])
def test_builder_shapes(builder, d, layers):
    for n in (1, 5, 20):
        spec = builder(n)
        assert spec.d == d and spec.heads == 1 and len(spec.attention_layers) == layers
        assert all(layer.kind is AttentionKind.LEFTMOST for layer in spec.attention_layers)


def test_case3_matches_stated_weights():
    layer = build_case3(4).layers[0]
    assert np.array_equal(layer.wq, np.hstack([np.eye(2), np.zeros((2, 2))]))
    assert np.array_equal(layer.wk, layer.wq)
    assert np.array_equal(layer.wv, np.block([[np.zeros((2, 2)), np.eye(2)], [np.zeros((2, 4))]]))
    assert not layer.residual
    assert not build_case3(4).has_position_embedding


def test_case5_soft_shape():
    for n in (1, 2, 10):
        spec = build_case5_soft(n)
        assert spec.d == 2 * n + 2
        assert spec.layers[0].kind is AttentionKind.SOFTMAX
        assert isinstance(spec.output, FunctionalDecoder)


def test_two_layer_residual_flags():
    spec = build_case5_twolayer(6)
    assert [layer.residual for layer in spec.layers] == [True, False]
    assert [layer.d_hid for layer in spec.layers] == [3, 3]


@pytest.mark.parametrize("builder,case,tokens,want", [
    (build_case1, 1, [1, 0, 0], 1),
    (build_case4, 4, [0, 1, 1, 0, 1], 0),
    (build_case5_twolayer, 5, [0, 1, 1, 0, 0], 1),
    (build_case5_soft, 5, [0, 1, 1, 0, 0], 1),
])
def test_small_examples(builder, case, tokens, want):
    assert forward(builder(2), tokens) == want


@pytest.mark.parametrize("builder_id", sorted(BUILDERS))
def test_n1_outputs_zero(builder_id):
    spec = build(builder_id, 1)
    inst = Instance(n=1, f=(0,), pi=(0,), target=0)
    assert forward(spec, encode(inst, spec.case)) == 0


@pytest.mark.parametrize("builder_id", sorted(BUILDERS))
@pytest.mark.parametrize("n", [2, 3])
def test_exhaustive_small(builder_id, n):
    spec = build(builder_id, n)
    insts = list(enumerate_instances(n, ALL, ordered=spec.case.ordered))
    got = forward_batch(spec, encode_batch(insts, spec.case))
    assert got.tolist() == [oracle(i) for i in insts]


@pytest.mark.parametrize("builder_id", sorted(BUILDERS))
def test_sampled_n8(builder_id):
    spec = build(builder_id, 8)
    insts = list(sampled_instances(8, ALL, spec.case, 500, 17))
    got = forward_batch(spec, encode_batch(insts, spec.case))
    assert got.tolist() == [oracle(i) for i in insts]


def test_case5_soft_attention_output():
    spec = build_case5_soft(2)
    head = attention_trace(spec.layers[0], embed(spec, [0, 1, 1, 0, 0])).head[-1]
    assert np.allclose(head, [1 / 7, 2 / 7, 2 / 7, 1 / 7, 1 / 7, 0], atol=1e-12)


def test_case5_soft_scores_are_log_tokens():
    spec = build_case5_soft(4)
    tokens = [3, 1, 0, 0, 2, 3, 1, 2, 0]
    scores = attention_trace(spec.layers[0], embed(spec, tokens)).scores[-1]
    assert np.allclose(scores, np.log(np.array(tokens) + 1.0), atol=1e-14)


def test_decode_examples():
    assert case5_soft_decode([1 / 7, 2 / 7, 2 / 7, 1 / 7, 1 / 7, 0], 2) == 1
    assert case5_soft_decode([1 / 3, 1 / 3, 1 / 3, 0], 1) == 0


def test_decode_round_trip_random():
    n = 4
    spec = build_case5_soft(n)
    for inst in sampled_instances(n, ALL, spec.case, 1000, 42):
        head = attention_trace(spec.layers[0], embed(spec, encode(inst, spec.case)), rows=[2 * n]).head[-1]
        assert case5_soft_decode(head, n) == oracle(inst)


@pytest.mark.parametrize("vec,n", [
    ([0.1, 0.2, 0.3, 0.4, 0.0, 0.0], 2),
    ([0.0, 0.5, 0.0, 0.5, 0.0, 0.0], 2),
    ([1 / 7, 2 / 7, 2 / 7], 2),
    ([1 / 7, 1 / 7, 1 / 7, 2 / 7, 2 / 7, 0], 2),
])
def test_decode_integrity_errors(vec, n):
    with pytest.raises(DecodeError):
        case5_soft_decode(vec, n)


def test_default_builder():
    assert default_builder(1) == "case1"
    assert default_builder(5) == "case5-soft"
    assert default_builder(5, two_layer=True) == "case5-twolayer"
    with pytest.raises(ValueError):
        build("case9", 3)
