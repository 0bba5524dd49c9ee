import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vicount.errors import CapacityError, ConfigError, ValidationError
from vicount.icg import (
    IcgConfig,
    IcgEncoder,
    SelfAttentionLayer,
    concat_frames,
    context_inform,
    split_attention,
)

SMALL = IcgConfig(model_dim=16, heads=2, layers=2, n_max=12)


def random_tokens(n, d=16, seed=0):
    rng = np.random.default_rng(seed)
    return torch.tensor(rng.normal(size=(n, d)), dtype=torch.float64)


class TestConcatFrames:
    def test_stacking_order(self):
        a, b = random_tokens(2, seed=1), random_tokens(3, seed=2)
        joint = concat_frames(a, b)
        assert joint.shape == (5, 16)
        torch.testing.assert_close(joint[:2], a)
        torch.testing.assert_close(joint[2:], b)

    def test_empty_current(self):
        a = random_tokens(2)
        joint = concat_frames(a, random_tokens(0))
        assert joint.shape == (2, 16)

    def test_round_trip_split(self):
        a, b = random_tokens(4, seed=3), random_tokens(2, seed=4)
        joint = concat_frames(a, b)
        torch.testing.assert_close(joint[:4], a)
        torch.testing.assert_close(joint[4:], b)

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            concat_frames(random_tokens(2, 16), random_tokens(2, 8, seed=1))


class TestSelfAttention:
    def test_single_token(self):
        layer = SelfAttentionLayer(SMALL, torch.Generator().manual_seed(0))
        x = random_tokens(1, seed=5)
        out, maps = layer(x)
        assert maps.shape == (2, 1, 1)
        torch.testing.assert_close(maps, torch.ones_like(maps))
        # residual plus the value/output path applied to that one token
        y = layer.norm(x)
        v = layer.wv(y)
        expected = x + layer.wo(v)
        torch.testing.assert_close(out, expected)

    def test_equal_tokens_give_uniform_rows(self):
        layer = SelfAttentionLayer(SMALL, torch.Generator().manual_seed(1))
        x = random_tokens(1, seed=6).repeat(5, 1)
        _, maps = layer(x)
        torch.testing.assert_close(maps, torch.full_like(maps, 1.0 / 5.0))

    @given(seed=st.integers(0, 30))
    @settings(max_examples=25)
    def test_rows_sum_to_one(self, seed):
        layer = SelfAttentionLayer(SMALL, torch.Generator().manual_seed(2))
        x = random_tokens(5, seed=seed)
        _, maps = layer(x)
        sums = maps.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestSplitAttention:
    def test_block_shapes(self):
        a = torch.rand(5, 5, dtype=torch.float64)
        blocks = split_attention(a, 2, 3)
        assert blocks.prev.shape == (2, 2)
        assert blocks.cls.shape == (2, 3)
        assert blocks.match.shape == (3, 2)
        assert blocks.curr.shape == (3, 3)

    def test_empty_previous_frame(self):
        a = torch.rand(3, 3, dtype=torch.float64)
        blocks = split_attention(a, 0, 3)
        assert blocks.match.shape == (3, 0)
        torch.testing.assert_close(blocks.curr, a)

    def test_blocks_tile_exactly(self):
        a = torch.rand(6, 6, dtype=torch.float64)
        b = split_attention(a, 2, 4)
        top = torch.cat([b.prev, b.cls], dim=1)
        bottom = torch.cat([b.match, b.curr], dim=1)
        assert torch.equal(torch.cat([top, bottom], dim=0), a)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            split_attention(torch.rand(4, 4), 2, 3)


class TestContextInform:
    def _encoder(self, cfg=SMALL, seed=0):
        return IcgEncoder(cfg, torch.Generator().manual_seed(seed))

    def test_zero_context_is_linear_in_tokens(self):
        enc = self._encoder()
        m, n = 2, 3
        attn_out = random_tokens(m + n, seed=7)
        abar = torch.zeros((n, m), dtype=torch.float64)
        out = context_inform(attn_out, abar, m, n, enc.proj_prev, enc.proj_curr, 12)
        pad_prev = torch.zeros((m, 12), dtype=torch.float64)
        pad_curr = torch.zeros((n, 12), dtype=torch.float64)
        expected_prev = enc.proj_prev(torch.cat([attn_out[:m], pad_prev], dim=1))
        expected_curr = enc.proj_curr(torch.cat([attn_out[m:], pad_curr], dim=1))
        torch.testing.assert_close(out, torch.cat([expected_prev, expected_curr]))

    def test_smallest_case_padding(self):
        enc = self._encoder()
        attn_out = random_tokens(2, seed=8)
        abar = torch.ones((1, 1), dtype=torch.float64)
        captured = {}

        def capture(linear, name):
            orig = linear.forward

            def wrapped(x):
                captured[name] = x.detach().clone()
                return orig(x)

            return wrapped

        enc.proj_prev.forward = capture(enc.proj_prev, "prev")
        enc.proj_curr.forward = capture(enc.proj_curr, "curr")
        context_inform(attn_out, abar, 1, 1, enc.proj_prev, enc.proj_curr, 12)
        expected_ctx = torch.zeros(12, dtype=torch.float64)
        expected_ctx[0] = 1.0
        torch.testing.assert_close(captured["prev"][0, 16:], expected_ctx)
        torch.testing.assert_close(captured["curr"][0, 16:], expected_ctx)

    def test_capacity_error_names_knob(self):
        enc = self._encoder()
        attn_out = random_tokens(30, seed=9)
        abar = torch.zeros((15, 15), dtype=torch.float64)
        with pytest.raises(CapacityError, match="icg.n_max"):
            context_inform(attn_out, abar, 15, 15, enc.proj_prev, enc.proj_curr, 12)


class TestEncoder:
    def test_output_shapes_and_head_average(self):
        enc = IcgEncoder(SMALL, torch.Generator().manual_seed(3))
        out = enc(random_tokens(3, seed=10), random_tokens(4, seed=11))
        assert out.tokens_prev.shape == (3, 16)
        assert out.tokens_curr.shape == (4, 16)
        assert out.abar_match.shape == (4, 3)
        match_blocks = split_attention(out.layer_maps[-1], 3, 4).match
        torch.testing.assert_close(out.abar_match, match_blocks.mean(dim=0), atol=1e-12, rtol=0)

    def test_avg_all_layers(self):
        cfg = IcgConfig(model_dim=16, heads=2, layers=3, n_max=12, avg_layers="all")
        enc = IcgEncoder(cfg, torch.Generator().manual_seed(4))
        out = enc(random_tokens(2, seed=12), random_tokens(2, seed=13))
        stacked = torch.cat([split_attention(m, 2, 2).match for m in out.layer_maps])
        torch.testing.assert_close(out.abar_match, stacked.mean(dim=0), atol=1e-12, rtol=0)

    @given(seed=st.integers(0, 20))
    @settings(max_examples=15)
    def test_permutation_equivariance_current_frame(self, seed):
        # permuting current tokens permutes current outputs and the averaged
        # match-map rows in step; previous tokens see a reordered affinity
        # profile, so only the permuted side is asserted
        enc = IcgEncoder(SMALL, torch.Generator().manual_seed(5))
        f_prev = random_tokens(3, seed=seed)
        f_curr = random_tokens(4, seed=seed + 100)
        perm = torch.tensor([2, 0, 3, 1])
        out = enc(f_prev, f_curr)
        out_p = enc(f_prev, f_curr[perm])
        torch.testing.assert_close(out_p.tokens_curr, out.tokens_curr[perm], atol=1e-9, rtol=0)
        torch.testing.assert_close(out_p.abar_match, out.abar_match[perm], atol=1e-9, rtol=0)

    @given(seed=st.integers(0, 20))
    @settings(max_examples=15)
    def test_permutation_equivariance_previous_frame(self, seed):
        enc = IcgEncoder(SMALL, torch.Generator().manual_seed(5))
        f_prev = random_tokens(4, seed=seed)
        f_curr = random_tokens(3, seed=seed + 100)
        perm = torch.tensor([1, 3, 0, 2])
        out = enc(f_prev, f_curr)
        out_p = enc(f_prev[perm], f_curr)
        torch.testing.assert_close(out_p.tokens_prev, out.tokens_prev[perm], atol=1e-9, rtol=0)
        torch.testing.assert_close(out_p.abar_match, out.abar_match[:, perm], atol=1e-9, rtol=0)

    def test_empty_previous_frame(self):
        enc = IcgEncoder(SMALL, torch.Generator().manual_seed(6))
        out = enc(random_tokens(0), random_tokens(3, seed=14))
        assert out.tokens_prev.shape == (0, 16)
        assert out.tokens_curr.shape == (3, 16)
        assert out.abar_match.shape == (3, 0)

    def test_context_targets_curr_zeroes_prev_profile(self):
        cfg_both = IcgConfig(model_dim=16, heads=2, layers=1, n_max=12, context_targets="both")
        cfg_curr = IcgConfig(model_dim=16, heads=2, layers=1, n_max=12, context_targets="curr")
        enc_both = IcgEncoder(cfg_both, torch.Generator().manual_seed(7))
        enc_curr = IcgEncoder(cfg_curr, torch.Generator().manual_seed(7))
        f_prev, f_curr = random_tokens(2, seed=15), random_tokens(2, seed=16)
        out_both = enc_both(f_prev, f_curr)
        out_curr = enc_curr(f_prev, f_curr)
        # same parameters, same current-frame context; only prev rows differ
        torch.testing.assert_close(out_both.tokens_curr, out_curr.tokens_curr)
        assert not torch.allclose(out_both.tokens_prev, out_curr.tokens_prev)


def test_config_validation():
    with pytest.raises(ConfigError):
        IcgConfig(model_dim=15, heads=2)
    with pytest.raises(ConfigError):
        IcgConfig(avg_layers="sometimes")
    with pytest.raises(ConfigError):
        IcgConfig(context_targets="prev")
