import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fneval.analysis import (SHATTER_CAP, adversarial_case5_instances, csize_lower_bound,
                             error_prob_lower_bound, modified_task_oracle, predicts_failure,
                             probe_counterexample, random_spec, shatter_witness, swap_permutations,
                             verify_shattering)
from fneval.constructions import build_case3, build_case5_soft, build_case5_twolayer
from fneval.core import AttentionKind
from fneval.task import Instance, PresentationCase, decode_layout, validate_tokens

CASE5 = PresentationCase.CONSECUTIVE_PERMUTED
HARD = [AttentionKind.LEFTMOST, AttentionKind.RIGHTMOST, AttentionKind.AVERAGE]


def test_csize_bound_examples():
    assert csize_lower_bound(2) == 1
    assert csize_lower_bound(100) == 222
    assert csize_lower_bound(1024) == 3414
    with pytest.raises(ValueError):
        csize_lower_bound(1)


@given(st.integers(min_value=2, max_value=10_000))
def test_csize_bound_monotone(n):
    assert csize_lower_bound(n + 1) >= csize_lower_bound(n)


def test_error_bound_examples():
    bound = error_prob_lower_bound(1024, 1, 4, 10)
    assert abs(bound.value - (10240 - 120) / 30720) < 1e-9
    assert bound.small_n_warning
    assert error_prob_lower_bound(8, 1, 4, 2).value == 0.0  # 24 >= 24
    assert error_prob_lower_bound(16, 1, 7, 24).value == 0.0
    with pytest.raises(ValueError):
        error_prob_lower_bound(8, 1, 0, 4)


@given(st.integers(2, 5000), st.integers(1, 4), st.integers(1, 64), st.integers(1, 64))
def test_error_bound_in_unit_interval(n, h, d, p):
    value = error_prob_lower_bound(n, h, d, p).value
    assert 0.0 <= value < 1 / 3
    if 3 * h * d * p >= n * math.log2(n):
        assert value == 0.0


def test_adversarial_members():
    fam = adversarial_case5_instances(4)
    assert len(fam.members) == 32
    by_label = {m.label: m for m in fam.members}
    assert by_label["l(0,1)"].tokens == (0, 0, 1, 1, 2, 2, 3, 3, 0)
    assert by_label["l(0,1)"].expected == 0
    assert by_label["r(2,3)"].tokens == (1, 2, 0, 3, 2, 2, 3, 3, 0)
    assert by_label["r(2,3)"].expected == 3


@pytest.mark.parametrize("n", [4, 5, 9])
def test_adversarial_members_are_valid(n):
    for m in adversarial_case5_instances(n).members:
        validate_tokens(list(m.tokens), CASE5, n)
        inst = decode_layout(list(m.tokens), CASE5, n)
        assert Instance.from_dict(json.loads(inst.to_json())) == inst
        assert inst.f[inst.target] == m.expected


def test_adversarial_needs_n4():
    with pytest.raises(ValueError):
        adversarial_case5_instances(3)


def test_probe_constructions_pass():
    assert probe_counterexample(build_case5_twolayer(4), 4) is None
    assert probe_counterexample(build_case5_soft(4), 4) is None
    assert probe_counterexample(build_case5_twolayer(6), 6, random_search=200, seed=3) is None


def test_probe_rejects_wrong_case():
    with pytest.raises(ValueError):
        probe_counterexample(build_case3(4), 4)


@pytest.mark.parametrize("kind", HARD)
def test_probe_finds_mismatch_random_hard(kind):
    rng = np.random.default_rng(11)
    for _ in range(10):
        spec = random_spec(4, CASE5, rng, kind)
        assert predicts_failure(spec)
        mm = probe_counterexample(spec, 4)
        assert mm is not None and mm.got != mm.expected


def test_predicts_failure():
    assert not predicts_failure(build_case5_twolayer(4))
    assert not predicts_failure(build_case5_soft(4))


def test_modified_oracle():
    assert modified_task_oracle(Instance(n=2, f=(0, 1), pi=(0, 1), target=1)) == 1
    assert modified_task_oracle(Instance(n=2, f=(1, 1), pi=(1, 0), target=0)) == 0


def test_swap_permutations():
    assert swap_permutations(3) == [(0, 1, 2), (1, 0, 2), (2, 1, 0)]
    for u in swap_permutations(7):
        assert sorted(u) == list(range(7))


def test_shatter_witness_example():
    witness = shatter_witness(3, [1, 0, 1])
    assert [modified_task_oracle(w) for w in witness] == [1, 0, 1]
    assert [w.pi for w in witness] == swap_permutations(3)
    with pytest.raises(ValueError):
        shatter_witness(3, [1, 0])


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_verify_shattering(n):
    assert verify_shattering(n)


def test_shattering_cap():
    with pytest.raises(ValueError):
        verify_shattering(SHATTER_CAP + 1)


def test_random_spec_shapes():
    rng = np.random.default_rng(0)
    spec = random_spec(3, 4, rng, AttentionKind.SOFTMAX, d=5, n_layers=2, position_embedding=False, mlp=True)
    assert spec.d == 5 and len(spec.layers) == 4 and not spec.has_position_embedding
