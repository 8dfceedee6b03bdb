import numpy as np
import pytest
from PIL import Image

from zsda import domains
from zsda.domains import (
    DomainSpec,
    ImageSample,
    batch_iter,
    make_domain_view,
    make_patch_source,
    materialize_view,
    split_categories,
    to_array,
    transform_color,
    transform_edge,
    transform_negative,
)
from zsda.errors import ConfigError, ZsdaError


def sample(pixels, label=0, base_id="s0"):
    return ImageSample(pixels=np.asarray(pixels, dtype=np.uint8), label=label, base_id=base_id)


def random_gray(rng, n=1, h=28, w=28):
    return [sample(rng.integers(0, 256, (h, w, 1)), label=int(rng.integers(10)), base_id=f"b{i}")
            for i in range(n)]


class TestNegative:
    def test_all_zero_maps_to_all_255(self):
        out = transform_negative(sample(np.zeros((28, 28, 1))))
        assert (out.pixels == 255).all()

    def test_pixel_arithmetic(self):
        out = transform_negative(sample(np.full((28, 28, 1), 100)))
        assert (out.pixels == 155).all()

    def test_involution_on_random_images(self):
        rng = np.random.default_rng(0)
        for img in random_gray(rng, n=25):
            twice = transform_negative(transform_negative(img))
            np.testing.assert_array_equal(twice.pixels, img.pixels)
            assert twice.label == img.label and twice.base_id == img.base_id

    def test_multichannel_rejected(self):
        with pytest.raises(ZsdaError):
            transform_negative(sample(np.zeros((28, 28, 3))))


class TestEdge:
    def test_constant_image_has_no_edges(self):
        out = transform_edge(sample(np.full((28, 28, 1), 77)))
        assert (out.pixels == 0).all()

    def test_output_is_binary_for_random_images(self):
        rng = np.random.default_rng(1)
        for img in random_gray(rng, n=25):
            vals = np.unique(transform_edge(img).pixels)
            assert set(vals.tolist()) <= {0, 255}

    def test_threshold_order_validated(self):
        with pytest.raises(ZsdaError):
            transform_edge(sample(np.zeros((28, 28, 1))), low=200, high=100)

    def test_step_edge_5x5_hand_oracle(self):
        # Vertical step: columns 0-1 are 0, columns 2-4 are 255; sigma=0.
        #
        # Sobel x (diff [-1,0,1] along cols, smooth [1,2,1] along rows,
        # nearest-border): per row, gx = [x1-x0, x2-x0, x3-x1, x4-x2, x4-x3]
        #   = [0, 255, 255, 0, 0], then x4 smoothing -> [0, 1020, 1020, 0, 0].
        # Sobel y = 0 everywhere (identical rows). mag = |gx|.
        # NMS sector is E/W; ties break toward the negative gradient side:
        #   col1 keeps (right neighbor equal -> >=, left is 0 -> >),
        #   col2 suppressed (left neighbor equal -> fails strict >).
        # Hysteresis: 1020 >= high=150, so column 1 survives everywhere.
        step = np.zeros((5, 5, 1), dtype=np.uint8)
        step[:, 2:, 0] = 255
        out = transform_edge(sample(step), low=50, high=150, sigma=0.0)
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[:, 1] = 255
        np.testing.assert_array_equal(out.pixels[:, :, 0], expected)


class TestColor:
    def test_zero_image_yields_patch(self):
        rng = np.random.default_rng(2)
        patch = rng.integers(0, 256, (28, 28, 3)).astype(np.uint8)
        out = transform_color(sample(np.zeros((28, 28, 1))), patch)
        np.testing.assert_array_equal(out.pixels, patch)

    def test_pixel_arithmetic(self):
        img = sample(np.full((28, 28, 1), 255))
        patch = np.full((28, 28, 3), 100, dtype=np.uint8)
        assert (transform_color(img, patch).pixels == 155).all()

    def test_2x2_hand_oracle(self):
        # out[c] = |patch[c] - img|, computed by hand for this instance
        img = sample([[[10], [200]], [[0], [255]]])
        patch = np.array([[[50, 5, 10], [100, 255, 0]],
                          [[0, 128, 255], [255, 100, 30]]], dtype=np.uint8)
        expected = np.array([[[40, 5, 0], [100, 55, 200]],
                             [[0, 128, 255], [0, 155, 225]]], dtype=np.uint8)
        np.testing.assert_array_equal(transform_color(img, patch).pixels, expected)

    def test_patch_shape_mismatch_rejected(self):
        with pytest.raises(ZsdaError):
            transform_color(sample(np.zeros((28, 28, 1))), np.zeros((27, 28, 3), dtype=np.uint8))


class TestPatchSource:
    def test_procedural_sequences_replay(self):
        a = make_patch_source("procedural", seed=7)
        b = make_patch_source("procedural", seed=7)
        for i in range(5):
            np.testing.assert_array_equal(a.patch(i), b.patch(i))

    def test_different_seeds_differ(self):
        a = make_patch_source("procedural", seed=7).patch(0)
        b = make_patch_source("procedural", seed=8).patch(0)
        assert (a != b).any()

    def test_patch_shape_and_range(self):
        p = make_patch_source("procedural", seed=3).patch(11)
        assert p.shape == (28, 28, 3) and p.dtype == np.uint8

    def test_directory_mode_crops_in_bounds(self, tmp_path):
        rng = np.random.default_rng(4)
        Image.fromarray(rng.integers(0, 256, (256, 256, 3)).astype(np.uint8)).save(tmp_path / "tex.png")
        src = make_patch_source("directory_of_images", seed=1, directory=str(tmp_path))
        for i in range(10):
            p = src.patch(i)
            assert p.shape == (28, 28, 3)

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            make_patch_source("directory_of_images", seed=1, directory=str(tmp_path))


class TestDomainView:
    def test_gray_is_identity_and_pairing_bijective(self):
        rng = np.random.default_rng(5)
        base = random_gray(rng, n=10)
        view = make_domain_view(base, DomainSpec("gray"), seed=0)
        assert len(view.samples) == 10
        assert sorted(view.pairing.values()) == list(range(10))
        for s in base:
            np.testing.assert_array_equal(view.samples[view.pairing[s.base_id]].pixels, s.pixels)

    @pytest.mark.parametrize("kind", ["gray", "negative", "edge", "color"])
    def test_views_bit_reproducible(self, kind):
        rng = np.random.default_rng(6)
        base = random_gray(rng, n=8)
        spec = DomainSpec(kind, {"patch_seed": 5} if kind == "color" else {})
        v1 = make_domain_view(base, spec, seed=42)
        v2 = make_domain_view(base, spec, seed=42)
        for s1, s2 in zip(v1.samples, v2.samples):
            np.testing.assert_array_equal(s1.pixels, s2.pixels)

    def test_negative_view_count_and_identity_pairing(self):
        rng = np.random.default_rng(7)
        base = random_gray(rng, n=10)
        view = make_domain_view(base, DomainSpec("negative"), seed=0)
        assert len(view) == 10
        assert all(view.pairing[f"b{i}"] == i for i in range(10))

    def test_transform_error_reports_sample_index(self):
        bad = [sample(np.zeros((28, 28, 3)), base_id="bad3")]
        with pytest.raises(ZsdaError, match="sample 0"):
            make_domain_view(bad, DomainSpec("negative"), seed=0)

    def test_empty_base_rejected(self):
        with pytest.raises(ZsdaError):
            make_domain_view([], DomainSpec("gray"), seed=0)

    def test_nonstandard_sizes_standardized(self):
        big = sample(np.random.default_rng(8).integers(0, 256, (56, 56, 1)), base_id="big")
        view = make_domain_view([big], DomainSpec("gray"), seed=0)
        assert view.samples[0].pixels.shape == (28, 28, 1)


class TestSplitCategories:
    def base(self):
        rng = np.random.default_rng(9)
        return [sample(rng.integers(0, 256, (28, 28, 1)), label=i % 10, base_id=f"b{i}") for i in range(50)]

    def test_partition_sizes(self):
        toi, irt = split_categories(self.base(), {0, 1, 2, 3, 4})
        assert len(toi) == 25 and len(irt) == 25
        assert len(toi) + len(irt) == 50

    def test_toi_labels_reindexed(self):
        toi, irt = split_categories(self.base(), {5, 7, 9})
        assert sorted({s.label for s in toi}) == [0, 1, 2]
        assert sorted({s.label for s in irt}) == list(range(7))

    def test_full_label_set_rejected(self):
        with pytest.raises(ZsdaError):
            split_categories(self.base(), set(range(10)))

    def test_empty_rejected(self):
        with pytest.raises(ZsdaError):
            split_categories(self.base(), set())


class TestBatchIter:
    def view(self, n=300):
        rng = np.random.default_rng(10)
        return make_domain_view(random_gray(rng, n=n), DomainSpec("gray"), seed=0)

    def test_batch_sizes(self):
        sizes = [x.shape[0] for x, _ in batch_iter(self.view(), 128, seed=1, epoch=0)]
        assert sizes == [128, 128, 44]

    def test_same_seed_epoch_same_order(self):
        a = [y for _, y in batch_iter(self.view(), 64, seed=1, epoch=3)]
        b = [y for _, y in batch_iter(self.view(), 64, seed=1, epoch=3)]
        for ya, yb in zip(a, b):
            np.testing.assert_array_equal(ya, yb)

    def test_different_epoch_reshuffles(self):
        a = np.concatenate([y for _, y in batch_iter(self.view(), 64, seed=1, epoch=0)])
        b = np.concatenate([y for _, y in batch_iter(self.view(), 64, seed=1, epoch=1)])
        assert (a != b).any()

    def test_rescale_endpoints(self):
        imgs = [sample(np.zeros((28, 28, 1)), base_id="z"), sample(np.full((28, 28, 1), 255), base_id="f")]
        x, _ = to_array(imgs)
        assert x.min() == -1.0 and x.max() == 1.0
        assert x.shape == (2, 28, 28, 1)


def test_materialize_view_writes_manifest(tmp_path):
    rng = np.random.default_rng(11)
    view = make_domain_view(random_gray(rng, n=4), DomainSpec("negative"), seed=9)
    manifest = materialize_view(view, str(tmp_path), config_hash="abc123")
    lines = open(manifest).read().strip().split("\n")
    assert lines[0] == "# config\tabc123"
    assert len(lines) == 2 + 4
    assert (tmp_path / "images" / "b0.png").exists()
