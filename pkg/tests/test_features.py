import numpy as np
import pytest

from roikit import features
from roikit.features import FeatureSelection, MissingFeatureError
from conftest import make_frame, random_frame
from oracles import flow_reference, pool_reference


def gradient_frame(h, w, shift=0):
    yy, xx = np.mgrid[0:h, 0:w]
    y = ((xx * 7 + yy * 13 + shift * 7) % 256).astype(np.uint8)
    return make_frame(y)


class TestSpatialHighpass:
    def test_constant_frame_is_zero(self):
        f = make_frame(np.full((24, 24), 77, np.uint8))
        out = features.spatial_highpass(f)
        assert out.shape == (24, 24, 3)
        assert np.allclose(out, 0.0)

    def test_impulse_response(self):
        y = np.zeros((9, 9), np.uint8)
        y[4, 4] = 255
        out = features.spatial_highpass(make_frame(y))[:, :, 0]
        assert out[4, 4] == 255.0
        for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)):
            assert out[4 + dy, 4 + dx] == -255.0 / 8.0

    def test_linear_ramp_interior_is_zero(self):
        y = np.tile(np.arange(32, dtype=np.uint8) * 4, (16, 1))
        out = features.spatial_highpass(make_frame(y))[1:-1, 1:-1, 0]
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_linearity(self, rng):
        y = rng.integers(0, 128, (20, 20), dtype=np.uint8)
        one = features.spatial_highpass(make_frame(y))
        two = features.spatial_highpass(make_frame((2 * y).astype(np.uint8)))
        assert np.max(np.abs(2 * one[:, :, 0] - two[:, :, 0])) < 1e-9


class TestTemporalHighpass:
    def test_static_video(self, rng):
        f = random_frame(rng, 16, 16)
        assert np.allclose(features.temporal_highpass(f, f, f), 0.0)

    def test_linear_motion_cancels(self):
        mk = lambda v: make_frame(np.full((8, 8), v, np.uint8))
        out = features.temporal_highpass(mk(0), mk(10), mk(20))
        assert np.allclose(out[:, :, 0], 0.0)

    def test_impulse_only_in_current(self):
        zero = make_frame(np.zeros((8, 8), np.uint8))
        cur = make_frame(np.full((8, 8), 100, np.uint8))
        out = features.temporal_highpass(zero, cur, zero)
        assert np.allclose(out[:, :, 0], 100.0)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            features.temporal_highpass(
                random_frame(rng, 8, 8), random_frame(rng, 8, 8), random_frame(rng, 8, 16)
            )


class TestBlockFlow:
    def test_identical_frames_give_zero(self, rng):
        f = random_frame(rng, 64, 64)
        assert (features.block_flow(f, f) == 0).all()

    def test_known_shift_recovered(self):
        prev = gradient_frame(64, 96)
        cur_y = np.roll(prev.y, 2, axis=1)
        cur = make_frame(cur_y)
        flow = features.block_flow(prev, cur)
        interior = flow[1:-1, 1:-1]
        assert (interior[:, :, 0] == 2).all()
        assert (interior[:, :, 1] == 0).all()

    def test_matches_exhaustive_oracle(self, rng):
        prev = random_frame(rng, 48, 48)
        cur = make_frame(
            np.clip(
                prev.y.astype(np.int32) + rng.integers(-8, 8, prev.y.shape), 0, 255
            ).astype(np.uint8)
        )
        got = features.block_flow(prev, cur, radius=4)
        ref = flow_reference(prev.y, cur.y, radius=4)
        assert np.array_equal(got, ref)

    def test_shift_beyond_radius_stays_in_window(self):
        prev = gradient_frame(64, 96)
        cur = make_frame(np.roll(prev.y, 12, axis=1))
        got = features.block_flow(prev, cur, radius=8)
        ref = flow_reference(prev.y, cur.y, radius=8)
        assert np.array_equal(got, ref)
        assert got[:, :, 0].max() <= 8

    def test_tie_break_order(self):
        # flat frames: every displacement ties at SAD 0 -> (0, 0) wins
        f = make_frame(np.full((32, 32), 9, np.uint8))
        assert (features.block_flow(f, f, radius=3) == 0).all()


class TestGridChannel:
    def test_constant(self):
        g = features.to_grid_channel(np.full((64, 64), 5.0), 64, 64)
        assert g.shape == (4, 4)
        assert np.allclose(g, 5.0)

    def test_matches_rational_oracle(self, rng):
        dense = rng.integers(0, 256, (48, 48)).astype(np.float64)
        g = features.to_grid_channel(dense, 64, 64)
        assert np.max(np.abs(g - pool_reference(dense, 64, 64))) < 1e-9

    def test_impulse_lands_in_one_cell(self):
        dense = np.zeros((64, 64))
        dense[40, 8] = 100.0
        g = features.to_grid_channel(dense, 64, 64)
        assert g[2, 0] > 0
        g[2, 0] = 0
        assert np.allclose(g, 0.0)


class TestAssemble:
    def full_inputs(self, rng, rows=4, cols=5, embed=25):
        return dict(
            frame=rng.normal(size=(rows, cols, 3)),
            saliency=rng.normal(size=(rows, cols)),
            segmentation=rng.normal(size=(rows, cols, 21)),
            flow=rng.normal(size=(rows, cols, 2)),
            psnr=rng.normal(size=(rows, cols)),
            ssim=rng.normal(size=(rows, cols)),
            vif=rng.normal(size=(rows, cols)),
            spatial_hp=rng.normal(size=(rows, cols, 3)),
            temporal_hp=rng.normal(size=(rows, cols, 3)),
            embeddings=rng.normal(size=(rows, cols, embed)),
        )

    def test_all_families_channel_count(self, rng):
        stack = features.assemble(4, 5, FeatureSelection(), **self.full_inputs(rng))
        assert stack.channel_count == 61
        names = [n for n, _ in stack.channels]
        assert names == [
            "frame", "saliency", "segmentation", "flow",
            "psnr", "ssim", "vif", "spatial_hp", "temporal_hp", "embeddings",
        ]

    def test_ablation_frame_saliency(self, rng):
        sel = FeatureSelection.only("frame", "saliency")
        stack = features.assemble(4, 5, sel, **self.full_inputs(rng))
        assert stack.channel_count == 4

    def test_missing_required_tensor(self, rng):
        inputs = self.full_inputs(rng)
        inputs["saliency"] = None
        with pytest.raises(MissingFeatureError, match="missing required tensor"):
            features.assemble(4, 5, FeatureSelection(), **inputs)

    def test_channel_count_mismatch(self, rng):
        inputs = self.full_inputs(rng)
        inputs["segmentation"] = rng.normal(size=(4, 5, 20))
        with pytest.raises(ValueError, match="channel-count mismatch"):
            features.assemble(4, 5, FeatureSelection(), **inputs)

    def test_nonfinite_rejected(self, rng):
        inputs = self.full_inputs(rng)
        bad = inputs["psnr"].copy()
        bad[0, 0] = np.inf
        inputs["psnr"] = bad
        with pytest.raises(ValueError, match="non-finite"):
            features.assemble(4, 5, FeatureSelection(), **inputs)

    def test_deterministic_bit_identical(self, rng):
        inputs = self.full_inputs(rng)
        a = features.assemble(4, 5, FeatureSelection(), **inputs)
        b = features.assemble(4, 5, FeatureSelection(), **inputs)
        assert a.data.tobytes() == b.data.tobytes()
        assert a.channels == b.channels

    def test_dense_inputs_are_pooled(self, rng):
        inputs = self.full_inputs(rng)
        inputs["saliency"] = np.full((64, 80), 3.0)
        stack = features.assemble(4, 5, FeatureSelection(), **inputs)
        sal = stack.data[:, :, 3]
        assert np.allclose(sal, 3.0)

    def test_at_least_one_family_required(self):
        with pytest.raises(ValueError, match="at least one"):
            FeatureSelection.only()
