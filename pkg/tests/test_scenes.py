import hashlib

import numpy as np
import pytest

from metadepth.errors import ConfigurationError, DataError
from metadepth.geometry import CameraIntrinsics
from metadepth.scenes import (
    AugmentSpec,
    EpochSampler,
    SceneGenConfig,
    augment,
    flip,
    generate_dataset,
    image_diversity,
    load_dataset,
    read_depth,
    sample_fine_grained_batch,
    save_dataset,
    write_depth,
)
from metadepth.scenes.dataset import decode_mask, encode_mask

SMALL = SceneGenConfig(num_scenes=3, frames_per_scene=4, num_test_scenes=2, image_size=(16, 16), seed=5)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SMALL)


def test_sizes_and_disjoint_splits(small):
    train, test, _ = small
    assert len(train) == 12 and len(test) == 8
    assert train.scene_ids().isdisjoint(test.scene_ids())
    keys = [p.key for p in train] + [p.key for p in test]
    assert len(set(keys)) == len(keys)


def test_deterministic():
    a = generate_dataset(SMALL)
    b = generate_dataset(SMALL)
    for da, db in zip(a[:2], b[:2]):
        for pa, pb in zip(da, db):
            assert pa.image.tobytes() == pb.image.tobytes()
            assert pa.depth.tobytes() == pb.depth.tobytes()


def test_valid_depth_in_range(small):
    train, _, _ = small
    for p in train:
        assert p.image.shape == (3, 16, 16) and p.depth.shape == (1, 16, 16)
        assert np.all(p.image >= 0) and np.all(p.image <= 1)
        d = p.depth[p.valid]
        assert np.all(d > 0) and np.all(d <= SMALL.depth_range[1])
        assert np.all(p.depth[~p.valid] == 0)


def test_pairs_mutually_exclusive(small):
    train, test, _ = small
    digests = {hashlib.sha256(p.image.tobytes() + p.depth.tobytes()).hexdigest() for p in list(train) + list(test)}
    assert len(digests) == len(train) + len(test)


@pytest.mark.parametrize("bad", [dict(num_scenes=0), dict(frames_per_scene=0), dict(depth_range=(2.0, 1.0)),
                                 dict(variety=1.5)])
def test_invalid_config(bad):
    cfg = SceneGenConfig(**{**SMALL.to_dict(), **bad})
    with pytest.raises(ConfigurationError):
        generate_dataset(cfg)


def test_full_texture_density_regions_are_exact_planes():
    cfg = SceneGenConfig(num_scenes=2, frames_per_scene=3, num_test_scenes=1, texture_density=1.0,
                         image_size=(24, 24), seed=3)
    train, _, ann = generate_dataset(cfg)
    K = CameraIntrinsics.default_for(24, 24)
    rays = K.camera_rays()
    n_regions = 0
    for i, region in ann.textured_planes(train):
        p = train[i]
        analytic = region.plane_depth(rays)[None]
        assert np.all(p.valid[region.mask])
        np.testing.assert_allclose(p.depth[region.mask], analytic[region.mask], rtol=1e-12)
        resid = p.depth[region.mask] - analytic[region.mask]
        assert np.var(resid) < 1e-20
        assert np.var(p.image[:, region.mask[0]]) > 0
        n_regions += 1
    assert n_regions > 0
    # every visible, large-enough room-plane patch is annotated
    for p in train:
        kinds = {r.kind for r in ann.for_frame(*p.key)}
        assert "textured_plane" in kinds


def test_no_texture_no_textured_regions():
    cfg = SceneGenConfig(num_scenes=2, frames_per_scene=2, num_test_scenes=1, texture_density=0.0,
                         image_size=(16, 16))
    train, _, ann = generate_dataset(cfg)
    assert not list(ann.textured_planes(train))


def test_variety_increases_image_diversity():
    lo = SceneGenConfig(num_scenes=8, frames_per_scene=32, variety=0.1, num_test_scenes=1, seed=11)
    hi = SceneGenConfig(num_scenes=8, frames_per_scene=32, variety=0.9, num_test_scenes=1, seed=11)
    d_lo = image_diversity(generate_dataset(lo)[0], num_pairs=400)
    d_hi = image_diversity(generate_dataset(hi)[0], num_pairs=400)
    assert d_hi > d_lo


class TestSampler:
    def test_full_batch_is_permutation(self, small):
        train, _, _ = small
        batch = sample_fine_grained_batch(train, len(train), np.random.default_rng(0))
        assert sorted(p.key for p in batch) == sorted(p.key for p in train)

    def test_too_large(self, small):
        with pytest.raises(ConfigurationError):
            sample_fine_grained_batch(small[0], 100, np.random.default_rng(0))

    def test_epoch_partition(self):
        s = EpochSampler(200, 50, np.random.default_rng(3))
        batches = list(s.epoch())
        assert len(batches) == 4
        assert all(len(set(b)) == 50 for b in batches)
        assert sorted(np.concatenate(batches).tolist()) == list(range(200))

    def test_remainder_dropped(self):
        batches = list(EpochSampler(23, 5, np.random.default_rng(0)).epoch())
        assert len(batches) == 4 and len(set(np.concatenate(batches))) == 20

    def test_fixed_seed_same_sequence(self):
        a = EpochSampler(30, 7, np.random.default_rng(9)).take(10)
        b = EpochSampler(30, 7, np.random.default_rng(9)).take(10)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestAugment:
    def test_identity(self, small):
        p = small[0][0]
        out = augment(p, AugmentSpec(), np.random.default_rng(0))
        assert out.image.tobytes() == p.image.tobytes() and out.depth.tobytes() == p.depth.tobytes()

    def test_flip_involution(self, small):
        p = small[0][1]
        twice = flip(flip(p))
        assert twice.image.tobytes() == p.image.tobytes()
        assert twice.depth.tobytes() == p.depth.tobytes()
        assert twice.valid.tobytes() == p.valid.tobytes()

    def test_flip_mirrors_all(self, small):
        p = small[0][1]
        f = augment(p, AugmentSpec(flip_prob=1.0), np.random.default_rng(0))
        np.testing.assert_array_equal(f.image, p.image[..., ::-1])
        np.testing.assert_array_equal(f.depth, p.depth[..., ::-1])
        np.testing.assert_array_equal(f.valid, p.valid[..., ::-1])

    def test_jitter_leaves_depth(self, small):
        p = small[0][2]
        a = augment(p, AugmentSpec(jitter=0.1), np.random.default_rng(4))
        b = augment(p, AugmentSpec(jitter=0.1), np.random.default_rng(4))
        assert a.depth.tobytes() == p.depth.tobytes()
        assert a.image.tobytes() == b.image.tobytes()
        assert not np.array_equal(a.image, p.image)

    def test_depth_noise_bounded(self, small):
        p = small[0][3]
        a = augment(p, AugmentSpec(depth_noise=0.05), np.random.default_rng(1))
        assert a.image.tobytes() == p.image.tobytes()
        rel = np.abs(a.depth[p.valid] / p.depth[p.valid] - 1)
        assert np.all(rel <= 0.05 + 1e-12) and np.all(a.depth[p.valid] > 0)


class TestDiskFormat:
    def test_round_trip(self, small, tmp_path):
        train, _, ann = small
        save_dataset(train, tmp_path / "train", ann)
        loaded, ann2 = load_dataset(tmp_path / "train")
        assert len(loaded) == len(train)
        for a, b in zip(train, loaded):
            assert a.key == b.key
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(b.depth, a.depth.astype(np.float32).astype(np.float64))
            np.testing.assert_array_equal(a.valid, b.valid)
            ra, rb = ann.for_frame(*a.key), ann2.for_frame(*b.key)
            assert [r.kind for r in ra] == [r.kind for r in rb]
            for x, y in zip(ra, rb):
                np.testing.assert_array_equal(x.mask, y.mask)

    def test_depth_header(self, tmp_path):
        d = np.arange(6, dtype=np.float64).reshape(1, 2, 3) + 0.5
        write_depth(tmp_path / "d.mdld", d)
        raw = (tmp_path / "d.mdld").read_bytes()
        assert raw[:4] == b"MDLD" and len(raw) == 16 + 6 * 4
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:8], "little") == 2 and int.from_bytes(raw[8:10], "little") == 3
        np.testing.assert_array_equal(read_depth(tmp_path / "d.mdld"), d)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.mdld").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(DataError):
            read_depth(tmp_path / "x.mdld")

    def test_mask_rle(self, rng):
        m = rng.random((1, 7, 5)) > 0.5
        np.testing.assert_array_equal(decode_mask(encode_mask(m), m.shape), m)
