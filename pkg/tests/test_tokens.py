"""TokenMatrix and FeaturePyramid container invariants."""

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mmadapt.tokens import FeaturePyramid, TokenMatrix


class TestTokenMatrix:
    def test_offsets_computed_scale_major(self):
        tm = TokenMatrix(torch.zeros(1, 21, 4), ((4, 4), (2, 2), (1, 1)))
        assert tm.scale_offsets == (0, 16, 20)
        assert tm.num_tokens == 21
        assert tm.dim == 4
        assert tm.num_scales == 3

    def test_token_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="tokens"):
            TokenMatrix(torch.zeros(1, 20, 4), ((4, 4), (2, 2), (1, 1)))

    def test_bad_offsets_rejected(self):
        with pytest.raises(ValueError, match="offsets"):
            TokenMatrix(torch.zeros(1, 20, 4), ((4, 4), (2, 2)), scale_offsets=(1, 17))

    def test_with_data_rejects_shape_change(self):
        tm = TokenMatrix(torch.zeros(1, 16, 4), ((4, 4),))
        with pytest.raises(ValueError, match="shape"):
            tm.with_data(torch.zeros(1, 16, 8))

    def test_scale_slice_matches_offsets(self):
        data = torch.arange(21, dtype=torch.float32)[None, :, None].expand(1, 21, 2)
        tm = TokenMatrix(data.clone(), ((4, 4), (2, 2), (1, 1)))
        assert torch.equal(tm.scale_slice(1)[0, :, 0], torch.arange(16, 20, dtype=torch.float32))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_maps_round_trip(self, seed):
        gen = torch.Generator().manual_seed(seed)
        shapes = [(4, 4), (2, 2), (1, 1)]
        maps = [torch.randn(2, 3, h, w, generator=gen) for h, w in shapes]
        tm = TokenMatrix.from_maps(maps)
        back = tm.to_maps()
        for original, rebuilt in zip(maps, back):
            assert torch.equal(original, rebuilt)


class TestFeaturePyramid:
    def test_requires_exactly_four_levels(self):
        with pytest.raises(ValueError, match="4 levels"):
            FeaturePyramid((torch.zeros(1, 2, 8, 8),))

    def test_requires_halving_dims(self):
        maps = [torch.zeros(1, 2, 8, 8), torch.zeros(1, 2, 4, 4),
                torch.zeros(1, 2, 3, 3), torch.zeros(1, 2, 1, 1)]
        with pytest.raises(ValueError, match="half"):
            FeaturePyramid(tuple(maps))

    def test_channels_and_shapes_reported(self):
        maps = [torch.zeros(1, c, 8 // 2 ** i, 8 // 2 ** i) for i, c in enumerate((2, 4, 8, 16))]
        pyr = FeaturePyramid(tuple(maps))
        assert pyr.channels == (2, 4, 8, 16)
        assert pyr.spatial_shapes == ((8, 8), (4, 4), (2, 2), (1, 1))
