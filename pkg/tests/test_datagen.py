import os

import numpy as np
import pytest

from flowseg.core import derive_seed
from flowseg.datagen import (
    FilamentSpec,
    NoiseSpec,
    apply_noise,
    complex_spec,
    generate_dataset,
    generate_sample,
    rasterize_scene,
    sample_paths,
    simple_spec,
)


def count_components(mask: np.ndarray) -> int:
    """Two-pass 8-connected component labeling, independent of any library."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent: list[int] = [0]

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    next_label = 1
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            neighbors = []
            for dr, dc in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and labels[rr, cc]:
                    neighbors.append(labels[rr, cc])
            if not neighbors:
                labels[r, c] = next_label
                parent.append(next_label)
                next_label += 1
            else:
                labels[r, c] = min(neighbors)
                for n in neighbors:
                    union(min(neighbors), n)
    return len({find(labels[r, c]) for r in range(h) for c in range(w) if labels[r, c]})


class TestSpecs:
    def test_valid_defaults(self):
        simple_spec().validate()
        complex_spec().validate()
        NoiseSpec().validate()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_filaments": (3, 2)},
            {"width_px": 0.5},
            {"intensity": 0.0},
            {"intensity": 1.5},
            {"decay_mode": "exp"},
            {"decay_fraction": 1.0},
            {"length_px": (0.0, 10.0)},
        ],
    )
    def test_invalid_filament_spec(self, kwargs):
        with pytest.raises(ValueError):
            FilamentSpec(**kwargs).validate()

    @pytest.mark.parametrize(
        "kwargs",
        [{"psf_sigma_px": -1.0}, {"background_level": 1.0}, {"photon_scale": 0.0}],
    )
    def test_invalid_noise_spec(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSpec(**kwargs).validate()

    def test_invalid_spec_rejected_before_generation(self):
        with pytest.raises(ValueError):
            generate_sample(FilamentSpec(width_px=0.2), NoiseSpec(), 64, 64, 0)


class TestGenerateSample:
    def test_empty_scene(self):
        fspec = FilamentSpec(num_filaments=(0, 0))
        image, mask = generate_sample(fspec, NoiseSpec(), 64, 64, seed=3)
        assert not mask.any()
        assert image.shape == (64, 64)
        assert image.min() == 0.0 and image.max() == 1.0  # background + noise only

    def test_determinism(self):
        a_img, a_mask = generate_sample(simple_spec(), NoiseSpec(), 64, 64, seed=11)
        b_img, b_mask = generate_sample(simple_spec(), NoiseSpec(), 64, 64, seed=11)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_mask, b_mask)

    def test_different_seed_changes_output(self):
        a_img, _ = generate_sample(simple_spec(), NoiseSpec(), 64, 64, seed=1)
        b_img, _ = generate_sample(simple_spec(), NoiseSpec(), 64, 64, seed=2)
        assert not np.array_equal(a_img, b_img)

    def test_size_divisibility_enforced(self):
        with pytest.raises(ValueError):
            generate_sample(simple_spec(), NoiseSpec(), 60, 64, seed=0)

    def test_component_count_bounded_by_filament_count(self):
        fspec = FilamentSpec(num_filaments=(3, 3))
        for seed in range(6):
            _, mask = generate_sample(fspec, NoiseSpec(), 64, 64, seed=seed)
            assert 1 <= count_components(mask) <= 3

    def test_mask_is_superset_of_ideal_render(self):
        for seed in range(4):
            rng = np.random.default_rng(derive_seed(seed, "geom"))
            paths = sample_paths(simple_spec(), 64, 64, rng)
            render, mask = rasterize_scene(paths, simple_spec(), 64, 64)
            assert not np.any((render > 0) & (mask == 0))

    def test_foreground_fraction_regime(self):
        fractions = [
            generate_sample(simple_spec(), NoiseSpec(), 64, 64, seed=s)[1].mean()
            for s in range(50)
        ]
        assert 0.005 <= float(np.mean(fractions)) <= 0.25
        assert all(0.0 < f < 0.4 for f in fractions)

    def test_noise_seed_changes_image_not_mask(self):
        fspec = simple_spec()
        geom_rng = np.random.default_rng(123)
        paths = sample_paths(fspec, 64, 64, geom_rng)
        render, mask = rasterize_scene(paths, fspec, 64, 64)
        img_a = apply_noise(render, NoiseSpec(), np.random.default_rng(1))
        img_b = apply_noise(render, NoiseSpec(), np.random.default_rng(2))
        assert not np.array_equal(img_a, img_b)
        # the mask never touched the noise stream
        render2, mask2 = rasterize_scene(paths, fspec, 64, 64)
        assert np.array_equal(mask, mask2)

    def test_linear_decay_fades_along_arc(self):
        fspec = FilamentSpec(
            num_filaments=(1, 1), length_px=(48.0, 48.0), decay_mode="linear", decay_fraction=0.8
        )
        for seed in range(5):
            rng = np.random.default_rng(seed)
            paths = sample_paths(fspec, 64, 64, rng)
            render, _ = rasterize_scene(paths, fspec, 64, 64)
            path = paths[0]
            n = len(path)
            head = path[: max(1, n // 10)]
            tail = path[-max(1, n // 10):]

            def mean_at(points):
                vals = [render[int(round(r)), int(round(c))] for r, c in points]
                return float(np.mean(vals))

            assert mean_at(tail) <= mean_at(head)

    def test_uniform_variant_has_flat_profile(self):
        fspec = FilamentSpec(num_filaments=(1, 1), length_px=(40.0, 40.0))
        rng = np.random.default_rng(7)
        paths = sample_paths(fspec, 64, 64, rng)
        render, _ = rasterize_scene(paths, fspec, 64, 64)
        center_vals = [render[int(round(r)), int(round(c))] for r, c in paths[0]]
        assert min(center_vals) > 0.6 * max(center_vals)


class TestGenerateDataset:
    def test_cardinality_and_manifest(self, tmp_path):
        out = str(tmp_path / "ds")
        manifest = generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 10, 7, out)
        assert len(manifest["samples"]) == 10
        assert len(os.listdir(os.path.join(out, "images"))) == 10
        assert len(os.listdir(os.path.join(out, "masks"))) == 10
        assert os.path.isfile(os.path.join(out, "manifest"))
        for entry in manifest["samples"]:
            assert set(entry) == {"name", "seed", "split"}

    def test_regeneration_is_byte_identical(self, tmp_path):
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 4, 5, out_a)
        generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 4, 5, out_b)
        for sub in ("images", "masks"):
            for fname in sorted(os.listdir(os.path.join(out_a, sub))):
                with open(os.path.join(out_a, sub, fname), "rb") as fa:
                    with open(os.path.join(out_b, sub, fname), "rb") as fb:
                        assert fa.read() == fb.read(), fname
        with open(os.path.join(out_a, "manifest")) as fa:
            with open(os.path.join(out_b, "manifest")) as fb:
                assert fa.read() == fb.read()

    def test_workers_do_not_change_bytes(self, tmp_path):
        out_a = str(tmp_path / "w1")
        out_b = str(tmp_path / "w2")
        generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 6, 9, out_a, workers=1)
        generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 6, 9, out_b, workers=3)
        for fname in sorted(os.listdir(os.path.join(out_a, "images"))):
            with open(os.path.join(out_a, "images", fname), "rb") as fa:
                with open(os.path.join(out_b, "images", fname), "rb") as fb:
                    assert fa.read() == fb.read()

    def test_count_must_be_positive(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(simple_spec(), NoiseSpec(), 64, 64, 0, 0, str(tmp_path / "x"))
