import numpy as np
import pytest

from headtrack.geometry import BBox
from headtrack.maps import (
    FlowConfig,
    FlowField,
    ImageFrame,
    MapError,
    SourceStack,
    build_stack,
    density_from_boxes,
    frame_difference,
    load_map,
    optical_flow,
    save_map,
    synth_depth,
    synth_depth_provider,
)


def gray(arr):
    return ImageFrame(np.asarray(arr, dtype=np.float64))


class TestFrameDifference:
    def test_identical_frames(self):
        a = gray(np.random.default_rng(0).random((8, 8)))
        assert np.all(frame_difference(a, a).data == 0)

    def test_full_swing(self):
        z = gray(np.zeros((6, 6)))
        o = gray(np.ones((6, 6)))
        assert np.all(frame_difference(o, z).data == 1)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = gray(rng.random((8, 8))), gray(rng.random((8, 8)))
        assert np.array_equal(frame_difference(a, b).data, frame_difference(b, a).data)

    def test_shifted_patch_support(self):
        # bright 3x3 patch at (2,2) vs (2,3): nonzero exactly on the
        # symmetric difference of the two supports
        prev = np.zeros((8, 8))
        prev[2:5, 2:5] = 1.0
        curr = np.zeros((8, 8))
        curr[2:5, 3:6] = 1.0
        d = frame_difference(gray(curr), gray(prev)).data[:, :, 0]
        expected = np.abs(curr - prev)
        assert np.array_equal(d, expected)
        assert np.all(d[2:5, 2] == 1) and np.all(d[2:5, 5] == 1)
        assert np.all(d[2:5, 3:5] == 0)

    def test_dimension_mismatch(self):
        with pytest.raises(MapError):
            frame_difference(gray(np.zeros((4, 4))), gray(np.zeros((5, 5))))


class TestOpticalFlow:
    def test_static_pair_zero(self):
        img = gray(np.random.default_rng(2).random((32, 32)))
        f = optical_flow(img, img)
        assert np.abs(f.u).max() == 0.0 and np.abs(f.v).max() == 0.0

    def test_translation_recovered(self):
        rng = np.random.default_rng(3)
        base = rng.random((48, 48))
        prev = gray(base)
        curr = gray(np.roll(base, 2, axis=1))
        f = optical_flow(curr, prev, FlowConfig(block_size=5, search_radius=3, levels=3))
        interior = (slice(6, -6), slice(6, -6))
        hit = np.mean((f.u[interior] == 2) & (f.v[interior] == 0))
        assert hit >= 0.9

    def test_brightness_change_below_motion_noise(self):
        rng = np.random.default_rng(4)
        base = rng.random((32, 32))
        static = optical_flow(gray(base), gray(base))
        brighter = optical_flow(gray(np.clip(base + 0.05, 0, 1)), gray(base))
        noise_floor = np.abs(static.u).mean() + np.abs(static.v).mean()
        assert np.abs(brighter.u).mean() + np.abs(brighter.v).mean() <= noise_floor + 0.1

    def test_too_small_frame(self):
        with pytest.raises(MapError):
            optical_flow(gray(np.zeros((3, 3))), gray(np.zeros((3, 3))),
                         FlowConfig(block_size=5))

    def test_even_block_rejected(self):
        with pytest.raises(MapError):
            FlowConfig(block_size=4)


class TestDensity:
    def test_empty(self):
        assert np.all(density_from_boxes([], (20, 20)).data == 0)

    def test_unit_mass(self):
        d = density_from_boxes([BBox(40, 40, 20, 20)], (100, 100))
        assert d.data.sum() == pytest.approx(1.0, abs=1e-3)

    def test_linearity(self):
        boxes = [BBox(10, 10, 8, 8), BBox(60, 60, 12, 12), BBox(30, 70, 10, 10)]
        d = density_from_boxes(boxes, (100, 100))
        assert d.data.sum() == pytest.approx(len(boxes), abs=len(boxes) * 1e-3)


class TestSynthAndFiles:
    def test_constant_depth(self):
        assert np.all(synth_depth((5, 7), "constant").data == 0.5)

    def test_vertical_gradient(self):
        d = synth_depth((5, 3), "vertical_gradient").data[:, :, 0]
        for r in range(5):
            assert np.all(d[r] == r / 4)

    def test_map_round_trip(self, tmp_path):
        arr = np.random.default_rng(5).random((6, 7, 3)).astype(np.float32)
        save_map(tmp_path / "m.bin", arr)
        back = load_map(tmp_path / "m.bin", (6, 7))
        assert np.array_equal(back.data.astype(np.float32), arr)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MapError):
            load_map(tmp_path / "nope.bin")

    def test_dims_mismatch(self, tmp_path):
        save_map(tmp_path / "m.bin", np.zeros((4, 4)))
        with pytest.raises(MapError):
            load_map(tmp_path / "m.bin", (5, 5))


class TestStack:
    def test_first_frame_zero_motion(self):
        img = gray(np.random.default_rng(6).random((16, 16)))
        s = build_stack(img, None, synth_depth_provider("constant"),
                        lambda h, w: density_from_boxes([], (h, w)))
        assert np.all(s.diff.data == 0)
        assert np.abs(s.flow.u).max() == 0

    def test_identical_frames_zero_motion(self):
        img = gray(np.random.default_rng(7).random((16, 16)))
        s = build_stack(img, img, synth_depth_provider("constant"),
                        lambda h, w: density_from_boxes([], (h, w)))
        assert np.all(s.diff.data == 0)
        assert np.abs(s.flow.u).max() == 0 and np.abs(s.flow.v).max() == 0

    def test_bad_provider_named(self):
        img = gray(np.zeros((10, 10)))
        bad = lambda h, w: ImageFrame(np.zeros((4, 4)))  # noqa: E731
        with pytest.raises(MapError, match="depth"):
            build_stack(img, None, bad, lambda h, w: ImageFrame(np.zeros((h, w))))

    def test_stack_dimension_invariant(self):
        with pytest.raises(MapError):
            SourceStack(rgb=gray(np.zeros((8, 8))),
                        diff=gray(np.zeros((8, 8))),
                        flow=FlowField(np.zeros((8, 8)), np.zeros((8, 8))),
                        depth=gray(np.zeros((6, 8))),
                        density=gray(np.zeros((8, 8))))
