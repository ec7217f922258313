"""Attention kernels against scalar-loop oracles plus recurrence contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskseg.attention import (
    AttentionMode,
    BlockConfig,
    HeadProjections,
    TokenFeatures,
    attention_kkv,
    attention_kqv,
    attention_vvv,
    attention_weights,
    default_scale,
    dual_path_step,
)
from taskseg.errors import ContractViolation

from oracles import oracle_attention

MODES = {
    "kkv": attention_kkv,
    "kqv": attention_kqv,
    "vvv": attention_vvv,
}


def random_instance(rng):
    length = int(rng.integers(1, 17))
    num_heads = int(rng.choice([1, 2, 4]))
    d = int(rng.integers(1, 9)) * num_heads
    d_k = int(rng.integers(1, 5)) * num_heads
    d_v = int(rng.integers(1, 5)) * num_heads
    tokens = rng.normal(0, 1, (length, d))
    proj = HeadProjections.random(rng, d, d_k=d_k, d_v=d_v, num_heads=num_heads)
    return TokenFeatures(tokens), proj


@pytest.mark.parametrize("mode", list(MODES))
def test_kernels_match_loop_oracle(mode):
    rng = np.random.default_rng(101)
    for _ in range(20):
        feats, proj = random_instance(rng)
        got = MODES[mode](feats, proj)
        want = oracle_attention(feats.tokens, proj.w_k, proj.w_q, proj.w_v,
                                proj.num_heads, proj.scale, mode)
        assert np.max(np.abs(got - want)) <= 1e-6


@pytest.mark.parametrize("mode", list(AttentionMode))
def test_softmax_rows_sum_to_one(mode):
    rng = np.random.default_rng(7)
    for _ in range(10):
        feats, proj = random_instance(rng)
        weights = attention_weights(feats, proj, mode)
        assert weights.shape == (proj.num_heads, feats.length, feats.length)
        assert np.all(weights >= 0)
        assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_single_token_returns_value_projection():
    rng = np.random.default_rng(3)
    tokens = rng.normal(0, 1, (1, 6))
    proj = HeadProjections.random(rng, 6, d_k=4, d_v=6, num_heads=2)
    expected = tokens @ proj.w_v
    for kernel in MODES.values():
        got = kernel(TokenFeatures(tokens), proj)
        assert np.allclose(got, expected, atol=1e-12)


def test_key_equals_query_collapses_kkv_to_kqv_exactly():
    rng = np.random.default_rng(11)
    for _ in range(5):
        length = int(rng.integers(2, 10))
        d = 8
        tokens = rng.normal(0, 1, (length, d))
        w = rng.normal(0, 1, (d, d))
        proj = HeadProjections(w_k=w, w_q=w, w_v=rng.normal(0, 1, (d, d)),
                               num_heads=2, scale=default_scale(d, 2))
        feats = TokenFeatures(tokens)
        a = attention_kkv(feats, proj)
        b = attention_kqv(feats, proj)
        assert np.array_equal(a, b)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_token_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    feats, proj = random_instance(rng)
    perm = rng.permutation(feats.length)
    base = attention_kkv(feats, proj)
    permuted = attention_kkv(TokenFeatures(feats.tokens[perm]), proj)
    assert np.allclose(permuted, base[perm], atol=1e-9)


def test_kernel_purity():
    rng = np.random.default_rng(5)
    feats, proj = random_instance(rng)
    before = feats.tokens.copy()
    attention_kkv(feats, proj)
    attention_vvv(feats, proj)
    attention_kqv(feats, proj)
    assert np.array_equal(feats.tokens, before)


def test_dimension_mismatch_raises():
    rng = np.random.default_rng(9)
    proj = HeadProjections.random(rng, 8, num_heads=2)
    feats = TokenFeatures(rng.normal(0, 1, (4, 6)))
    with pytest.raises(ContractViolation):
        attention_kkv(feats, proj)


def test_projection_validation():
    rng = np.random.default_rng(13)
    with pytest.raises(ContractViolation):
        HeadProjections(w_k=rng.normal(0, 1, (4, 3)), w_q=rng.normal(0, 1, (4, 4)),
                        w_v=rng.normal(0, 1, (4, 4)))
    with pytest.raises(ContractViolation):
        HeadProjections(w_k=rng.normal(0, 1, (4, 4)), w_q=rng.normal(0, 1, (4, 4)),
                        w_v=rng.normal(0, 1, (4, 3)), num_heads=2)
    with pytest.raises(ContractViolation):
        HeadProjections(w_k=rng.normal(0, 1, (4, 4)), w_q=rng.normal(0, 1, (4, 4)),
                        w_v=rng.normal(0, 1, (4, 4)), scale=0.0)


class TestDualPathStep:
    def setup_method(self):
        self.rng = np.random.default_rng(21)
        self.d = 8
        self.proj = HeadProjections.random(self.rng, self.d, num_heads=2)
        self.tokens = TokenFeatures(self.rng.normal(0, 1, (5, self.d)))

    def test_before_split_depth_no_parallel_stream(self):
        cfg = BlockConfig(delta=3)
        s_next, s_hat = dual_path_step(self.tokens, None, 2, cfg, self.proj)
        assert s_hat is None
        assert s_next.layer_index == 2
        expected = attention_kqv(self.tokens, self.proj) + self.tokens.tokens
        assert np.allclose(s_next.tokens, expected)

    def test_split_block_spawns_parallel_from_original(self):
        cfg = BlockConfig(delta=2, mode=AttentionMode.KKV)
        s_next, s_hat = dual_path_step(self.tokens, None, 2, cfg, self.proj)
        assert s_hat is not None
        expected = attention_kkv(self.tokens, self.proj) + self.tokens.tokens
        assert np.allclose(s_hat.tokens, expected)

    def test_after_split_attention_from_original_residual_from_parallel(self):
        cfg = BlockConfig(delta=1, mode=AttentionMode.KKV)
        parallel = TokenFeatures(self.rng.normal(0, 1, (5, self.d)), layer_index=2)
        _, s_hat = dual_path_step(self.tokens, parallel, 3, cfg, self.proj)
        expected = attention_kkv(self.tokens, self.proj) + parallel.tokens
        assert np.allclose(s_hat.tokens, expected)

    def test_presence_contract(self):
        cfg = BlockConfig(delta=3)
        stray = TokenFeatures(self.rng.normal(0, 1, (5, self.d)))
        with pytest.raises(ContractViolation):
            dual_path_step(self.tokens, stray, 2, cfg, self.proj)
        with pytest.raises(ContractViolation):
            dual_path_step(self.tokens, None, 4, cfg, self.proj)

    def test_never_mutates_inputs(self):
        cfg = BlockConfig(delta=1, mode=AttentionMode.VVV)
        parallel = TokenFeatures(self.rng.normal(0, 1, (5, self.d)))
        base_copy = self.tokens.tokens.copy()
        par_copy = parallel.tokens.copy()
        dual_path_step(self.tokens, parallel, 2, cfg, self.proj)
        assert np.array_equal(self.tokens.tokens, base_copy)
        assert np.array_equal(parallel.tokens, par_copy)

    def test_value_width_must_match_token_width(self):
        narrow = HeadProjections.random(self.rng, self.d, d_v=4, num_heads=2)
        with pytest.raises(ContractViolation):
            dual_path_step(self.tokens, None, 1, BlockConfig(delta=2), narrow)


def test_four_layer_recurrence_matches_straight_line_oracle():
    """Unrolled four-block run with delta=2, checked against explicit
    straight-line composition built from the loop-oracle attention."""
    rng = np.random.default_rng(77)
    d, heads = 8, 2
    tokens0 = rng.normal(0, 1, (6, d))
    projs = [HeadProjections.random(rng, d, num_heads=heads) for _ in range(4)]
    ws = [rng.normal(0, 0.4, (d, d)) for _ in range(4)]
    bs = [rng.normal(0, 0.1, d) for _ in range(4)]
    ffns = [lambda x, W=W, b=b: np.tanh(x @ W + b) for W, b in zip(ws, bs)]

    s = TokenFeatures(tokens0)
    s_hat = None
    for m in range(1, 5):
        cfg = BlockConfig(delta=2, mode=AttentionMode.KKV, ffn=ffns[m - 1])
        s, s_hat = dual_path_step(s, s_hat, m, cfg, projs[m - 1])

    def oat(x, p, mode):
        return oracle_attention(x, p.w_k, p.w_q, p.w_v, p.num_heads, p.scale, mode)

    def f(i, x):
        return np.tanh(x @ ws[i] + bs[i])

    s1 = f(0, oat(tokens0, projs[0], "kqv") + tokens0)
    s2 = f(1, oat(s1, projs[1], "kqv") + s1)
    h2 = f(1, oat(s1, projs[1], "kkv") + s1)
    s3 = f(2, oat(s2, projs[2], "kqv") + s2)
    h3 = f(2, oat(s2, projs[2], "kkv") + h2)
    s4 = f(3, oat(s3, projs[3], "kqv") + s3)
    h4 = f(3, oat(s3, projs[3], "kkv") + h3)

    assert np.max(np.abs(s.tokens - s4)) <= 1e-6
    assert np.max(np.abs(s_hat.tokens - h4)) <= 1e-6
    assert s_hat.layer_index == 4
