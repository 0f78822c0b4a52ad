import numpy as np
import pytest
from hypothesis import given, strategies as st

from fneval.constructions import build, build_case3, build_case5_soft, build_case5_twolayer
from fneval.core import (AttentionKind, AttentionLayer, MLPLayer, TransformerSpec, Unembed,
                         forward)
from fneval.precision import (QuantizationPolicy, accuracy_at, c_size, is_exact, k_size,
                              min_exact_precision, precision_envelope, precision_instances,
                              quantize_array, quantize_value, quantized_forward)
from fneval.task import PresentationCase

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
bits = st.integers(min_value=0, max_value=30)


def test_quantize_examples():
    assert quantize_value(0.3, 3) == 0.25
    for p in (0, 1, 5, 30):
        assert quantize_value(1.0, p) == 1.0
        assert quantize_value(2.0 ** (-p - 1), p) == 0.0
    assert quantize_value(3 * 2.0 ** -4, 3) == 0.25  # tie 1.5 eighths goes to 2
    assert quantize_value(-0.3, 3) == -0.25


@given(finite, bits)
def test_quantize_idempotent(x, p):
    q = quantize_value(x, p)
    assert quantize_value(q, p) == q


@given(finite, finite, bits)
def test_quantize_monotone(x, y, p):
    lo, hi = sorted((x, y))
    assert quantize_value(lo, p) <= quantize_value(hi, p)


@given(finite, bits)
def test_quantize_error_bound(x, p):
    q = quantize_value(x, p)
    assert abs(q - x) <= 2.0 ** (-p - 1)
    assert (q * 2.0 ** p).is_integer()


def test_quantize_array_matches_scalar():
    xs = np.linspace(-3, 3, 101)
    assert quantize_array(xs, 4).tolist() == [quantize_value(x, 4) for x in xs]


def test_policy_rejects_negative():
    with pytest.raises(ValueError):
        QuantizationPolicy(-1)


def test_quantized_worked_example():
    tokens = [(0, 2), (2, 3), (1, 2), (3, 1), 2]
    assert quantized_forward(build_case3(4), tokens, QuantizationPolicy(20)) == 3


def test_p0_degrades_case3():
    spec = build_case3(8)
    idx, expected = precision_instances("case3", 8, 2000, 0)
    assert accuracy_at(spec, idx, expected, 0) < 1.0
    assert accuracy_at(spec, idx, expected, 30) == 1.0


def test_zero_spec_unchanged():
    n, d = 3, 4
    zero = np.zeros((d, d))
    spec = TransformerSpec(
        n=n, case=PresentationCase.NO_KEYS, token_embed=np.zeros((n, d)),
        pos_embed=np.zeros((n + 1, d)),
        layers=[AttentionLayer(zero, zero, zero, AttentionKind.SOFTMAX, residual=True)],
        output=Unembed(np.zeros((n, d))))
    for tokens in ([0, 1, 2, 1], [2, 2, 0, 0]):
        for p in (0, 3, 16):
            assert quantized_forward(spec, tokens, QuantizationPolicy(p)) == forward(spec, tokens)


def test_c_size_examples():
    assert c_size(build_case3(5), 16).product == 64
    assert c_size(build_case5_soft(10), 16).product == 352
    report = c_size(build_case5_twolayer(3), 24)
    assert (report.h, report.d, report.p, report.product) == (1, 7, 24, 168)


def test_k_size_examples():
    assert k_size(build_case3(4)).ksize == 4
    assert k_size(build_case5_twolayer(100)).ksize == 7
    assert k_size(build_case5_soft(4)).mlp_params == 0
    n, d, dm = 2, 4, 8
    mlp = MLPLayer(np.zeros((dm, d)), np.zeros(dm), np.zeros((d, dm)), np.zeros(d))
    base = build_case3(n)
    spec = TransformerSpec(n=n, case=base.case, token_embed=base.token_embed, pos_embed=base.pos_embed,
                           layers=[base.layers[0], mlp], output=base.output)
    report = k_size(spec)
    assert report.mlp_params == 76 and report.ksize == 76


def test_envelope():
    assert precision_envelope(64) == 4 * 7 + 16 == 44
    assert precision_envelope(2) == 24


@pytest.mark.parametrize("builder_id", ["case1", "case3", "case4", "case5-twolayer", "case5-soft"])
def test_p_star_small(builder_id):
    assert min_exact_precision(builder_id, 1) == 1
    assert min_exact_precision(builder_id, 2) <= 12


def test_p_star_is_minimal():
    spec = build("case3", 8)
    idx, expected = precision_instances("case3", 8, 2000, 0)
    p_star = min_exact_precision("case3", 8, sample_size=2000)
    assert is_exact(spec, idx, expected, p_star)
    assert p_star == 1 or not is_exact(spec, idx, expected, p_star - 1)


def test_precision_instances_exhaustive_vs_sampled():
    idx, expected = precision_instances("case3", 3, 10, 0)
    assert len(idx) == 27 * 6 * 3
    idx, expected = precision_instances("case3", 8, 100, 0)
    assert idx.shape == (100, 9) and expected.shape == (100,)
    again, _ = precision_instances("case3", 8, 100, 0)
    assert np.array_equal(idx, again)
