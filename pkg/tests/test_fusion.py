import numpy as np
import pytest

from stormkit.core import StormkitError
from stormkit.fusion import (
    argmax_labels,
    fuse_directory,
    fuse_scene,
    read_probmap,
    require_probmap,
    write_probmap,
)


def random_probmap(seed, k=4, h=8, w=8):
    rng = np.random.default_rng(seed)
    p = rng.random((k, h, w)).astype(np.float32)
    return p / p.sum(axis=0, keepdims=True)


class TestFuseScene:
    def test_single_frame_is_identity(self):
        p = random_probmap(0)
        np.testing.assert_allclose(fuse_scene([p]), p, rtol=0, atol=0)

    def test_identical_frames_idempotent(self):
        p = random_probmap(1)
        np.testing.assert_allclose(fuse_scene([p, p, p]), p.astype(np.float64), atol=1e-15)

    def test_two_frame_pixel_example(self):
        a = np.array([0.6, 0.4], dtype=np.float32).reshape(2, 1, 1)
        b = np.array([0.2, 0.8], dtype=np.float32).reshape(2, 1, 1)
        fused = fuse_scene([a, b])
        np.testing.assert_allclose(fused.reshape(2), [0.4, 0.6], atol=1e-7)
        assert argmax_labels(fused)[0, 0] == 1

    def test_permutation_invariant(self):
        frames = [random_probmap(s) for s in range(5)]
        forward_order = fuse_scene(frames)
        np.testing.assert_array_equal(forward_order, fuse_scene(frames[::-1]))

    def test_preserves_simplex(self):
        for seed in range(10):
            frames = [random_probmap(seed * 10 + i) for i in range(1 + seed % 4)]
            fused = fuse_scene(frames)
            assert (fused >= 0).all()
            sums = fused.sum(axis=0)
            assert np.abs(sums - 1.0).max() <= 1e-5

    def test_empty_list_rejected(self):
        with pytest.raises(StormkitError, match="empty"):
            fuse_scene([])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(StormkitError, match="shape"):
            fuse_scene([random_probmap(0, h=8), random_probmap(1, h=9)])


class TestArgmax:
    def test_one_hot_pixel(self):
        p = np.zeros((3, 1, 1), dtype=np.float32)
        p[2] = 1.0
        assert argmax_labels(p)[0, 0] == 2

    def test_uniform_tie_breaks_to_lowest_index(self):
        p = np.full((4, 2, 2), 0.25, dtype=np.float32)
        assert (argmax_labels(p) == 0).all()

    def test_partial_tie(self):
        p = np.array([0.2, 0.4, 0.4], dtype=np.float32).reshape(3, 1, 1)
        assert argmax_labels(p)[0, 0] == 1

    def test_output_dtype_is_label_map(self):
        labels = argmax_labels(random_probmap(2))
        assert labels.dtype == np.uint8


class TestProbmapValidation:
    def test_accepts_valid(self):
        require_probmap(random_probmap(3))

    def test_rejects_negative(self):
        p = random_probmap(4)
        p[0, 0, 0] = -0.01
        with pytest.raises(StormkitError, match="negative"):
            require_probmap(p)

    def test_rejects_broken_simplex(self):
        p = random_probmap(5)
        p[:, 0, 0] *= 1.5
        with pytest.raises(StormkitError, match="sums"):
            require_probmap(p)


class TestPmapFiles:
    def test_round_trip(self, tmp_path):
        p = random_probmap(6, k=5, h=7, w=9)
        path = tmp_path / "x.pmap"
        write_probmap(path, p)
        back = read_probmap(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, p)

    def test_magic_validated(self, tmp_path):
        path = tmp_path / "bad.pmap"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(StormkitError, match="PMAP"):
            read_probmap(path)

    def test_size_validated(self, tmp_path):
        p = random_probmap(7)
        path = tmp_path / "x.pmap"
        write_probmap(path, p)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(StormkitError, match="size"):
            read_probmap(path)

    def test_fuse_directory_sorted_and_complete(self, tmp_path):
        frames = [random_probmap(10 + i) for i in range(3)]
        for i, frame in enumerate(frames):
            write_probmap(tmp_path / f"f{i}.pmap", frame)
        fused = fuse_directory(tmp_path)
        np.testing.assert_allclose(fused, fuse_scene(frames), atol=1e-12)

    def test_fuse_directory_empty(self, tmp_path):
        with pytest.raises(StormkitError, match="no .pmap"):
            fuse_directory(tmp_path)
