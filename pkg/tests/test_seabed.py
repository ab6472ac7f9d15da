"""Procedural seabed renderer: statistics oracles, targets, dataset files."""

import json
from dataclasses import replace

import numpy as np
import pytest

from sonargen import seabed
from sonargen.errors import ValidationError
from sonargen.grid import SemanticMap, TileGridSpec


def constant_map(name, params, dims=(128, 128)):
    names = params.class_names
    return SemanticMap(labels=np.full(dims, names.index(name), dtype=np.int64),
                       class_names=names)


def without_attenuation(params):
    classes = {n: replace(c, attenuation=0.0) for n, c in params.classes.items()}
    return replace(params, classes=classes)


class TestClassParams:
    def test_validation(self):
        with pytest.raises(ValidationError):
            seabed.ClassParams(reflectivity=1.5)
        with pytest.raises(ValidationError):
            seabed.ClassParams(reflectivity=0.5, ripple_wavelength=1.0)
        with pytest.raises(ValidationError):
            seabed.ClassParams(reflectivity=0.5, speckle_strength=-0.1)

    def test_terrain_round_trip(self, terrain):
        again = seabed.TerrainParams.from_dict(terrain.to_dict())
        assert again.to_dict() == terrain.to_dict()
        assert again.hash() == terrain.hash()

    def test_hash_changes_with_params(self, terrain):
        classes = dict(terrain.classes)
        classes["rock"] = replace(classes["rock"], reflectivity=0.8)
        other = replace(terrain, classes=classes)
        assert other.hash() != terrain.hash()


class TestSemanticSampling:
    def test_deterministic(self, terrain):
        a = seabed.sample_semantic_map(np.random.SeedSequence(5), 96, 96, terrain)
        b = seabed.sample_semantic_map(np.random.SeedSequence(5), 96, 96, terrain)
        assert np.array_equal(a.labels, b.labels)

    def test_covers_only_terrain_classes(self, terrain):
        sm = seabed.sample_semantic_map(np.random.SeedSequence(0), 128, 128,
                                        terrain)
        object_idx = sm.class_index("object")
        assert object_idx not in np.unique(sm.labels)
        assert sm.labels.min() >= 0

    def test_min_region_area_respected(self, terrain):
        sm = seabed.sample_semantic_map(np.random.SeedSequence(3), 128, 128,
                                        terrain)
        from scipy import ndimage

        for idx in np.unique(sm.labels):
            lab, n = ndimage.label(sm.labels == idx)
            sizes = ndimage.sum_labels(np.ones_like(lab), lab,
                                       index=np.arange(1, n + 1))
            assert sizes.min() >= terrain.min_region_area


class TestRenderStatistics:
    def test_speckle_relative_variance_matches_closed_form(self, terrain):
        # Multiplicative speckle with unit mean: var(I)/mean(I)^2 == sigma^2
        # once attenuation is disabled.
        params = without_attenuation(terrain)
        sigma = params.classes["flat_sand"].speckle_strength
        sm = constant_map("flat_sand", params, dims=(256, 256))
        img = seabed.render_seabed(sm, np.random.SeedSequence(11), params)
        rel_var = img.var() / img.mean() ** 2
        assert rel_var == pytest.approx(sigma ** 2, rel=0.2)

    def test_mean_tracks_reflectivity(self, terrain):
        params = without_attenuation(terrain)
        for name in ("flat_sand", "rock"):
            sm = constant_map(name, params)
            img = seabed.render_seabed(sm, np.random.SeedSequence(7), params)
            assert img.mean() == pytest.approx(
                params.classes[name].reflectivity, rel=0.05)

    def test_ripple_period_in_column_autocorrelation(self, terrain):
        # Orientation 0 gives columnwise bands with the configured wavelength.
        classes = dict(terrain.classes)
        classes["ripples"] = replace(classes["ripples"], ripple_orientation=0.0,
                                     speckle_strength=0.02, attenuation=0.0)
        params = replace(terrain, classes=classes)
        wl = params.classes["ripples"].ripple_wavelength
        sm = constant_map("ripples", params, dims=(128, 128))
        img = seabed.render_seabed(sm, np.random.SeedSequence(2), params)
        profile = img[:, :, 0].mean(axis=0)
        profile = profile - profile.mean()
        ac = np.correlate(profile, profile, mode="full")[profile.size - 1:]
        lags = np.arange(ac.size)
        window = (lags >= wl * 0.5) & (lags <= wl * 1.5)
        peak_lag = lags[window][np.argmax(ac[window])]
        assert abs(peak_lag - wl) <= 1

    def test_attenuation_darkens_far_range(self, terrain):
        sm = constant_map("flat_sand", terrain, dims=(128, 256))
        img = seabed.render_seabed(sm, np.random.SeedSequence(4), terrain)
        a = terrain.classes["flat_sand"].attenuation
        near = img[:, :32].mean()
        far = img[:, -32:].mean()
        expected = np.exp(-a * 224)
        assert far / near == pytest.approx(expected, rel=0.05)

    def test_interior_tiles_are_stationary_within_class(self, terrain):
        # Per-tile mean and variance differ < 15% between interior tiles on a
        # constant-class map, so boundary statistics are meaningful.
        sm = constant_map("flat_sand", terrain, dims=(256, 256))
        img = seabed.render_seabed(sm, np.random.SeedSequence(9), terrain)
        spec = TileGridSpec(tile_size=64, grid_rows=4, grid_cols=4)
        means, variances = [], []
        for r in (1, 2):
            for c in (1, 2):
                tile = img[r * 64:(r + 1) * 64, c * 64:(c + 1) * 64]
                means.append(tile.mean())
                variances.append(tile.var())
        assert (max(means) - min(means)) / max(means) < 0.15
        assert (max(variances) - min(variances)) / max(variances) < 0.15
        assert spec.grid_rows == 4

    def test_render_deterministic_and_bounded(self, terrain):
        sm = seabed.sample_semantic_map(np.random.SeedSequence(1), 128, 128,
                                        terrain)
        a = seabed.render_seabed(sm, np.random.SeedSequence(2), terrain)
        b = seabed.render_seabed(sm, np.random.SeedSequence(2), terrain)
        assert np.array_equal(a, b)
        assert a.dtype == np.float32
        assert a.min() >= 0.0 and a.max() <= 1.0


class TestTargets:
    def test_highlight_shadow_and_labels(self, terrain):
        sm = constant_map("flat_sand", terrain, dims=(96, 96))
        img = seabed.render_seabed(sm, np.random.SeedSequence(5), terrain)
        out, out_map = seabed.embed_target(img, sm, (48, 20), "cylinder")
        changed = out != img
        assert changed.any()
        assert (out[out_map.labels == sm.class_index("object")]
                == seabed.HIGHLIGHT_LEVEL).all()
        # shadow darkens pixels beyond the highlight, same rows
        obj_cols = np.nonzero(out_map.labels == sm.class_index("object"))[1]
        shadow_region = out[:, obj_cols.max() + 1:] < img[:, obj_cols.max() + 1:]
        assert shadow_region.any()
        # inputs untouched
        assert not (img == seabed.HIGHLIGHT_LEVEL).any()

    def test_tyre_is_annular(self, terrain):
        sm = constant_map("flat_sand", terrain, dims=(96, 96))
        img = seabed.render_seabed(sm, np.random.SeedSequence(5), terrain)
        _, out_map = seabed.embed_target(img, sm, (48, 20), "tyre")
        mask = out_map.labels == sm.class_index("object")
        assert mask.any()
        assert not mask[48, 20]

    def test_rejects_targets_that_do_not_fit(self, terrain):
        sm = constant_map("flat_sand", terrain, dims=(64, 64))
        img = seabed.render_seabed(sm, np.random.SeedSequence(6), terrain)
        with pytest.raises(ValidationError):
            seabed.embed_target(img, sm, (32, 60), "cylinder")
        with pytest.raises(ValidationError):
            seabed.embed_target(img, sm, (2, 10), "cylinder")


class TestDatasetFiles:
    def test_make_dataset_manifest_and_pairs(self, tmp_path, terrain):
        manifest_path = seabed.make_dataset(seed=3, n_pairs=3, dims=(64, 64),
                                            params=terrain,
                                            out_dir=tmp_path / "ds")
        manifest = seabed.load_manifest(manifest_path)
        assert manifest["n_pairs"] == 3
        assert manifest["class_names"] == list(terrain.class_names)
        img, sm = seabed.load_pair(manifest, 1)
        assert img.shape == (64, 64, 1)
        assert sm.labels.shape == (64, 64)

    def test_pairs_load_back_bit_exact_through_png(self, tmp_path, terrain):
        manifest_path = seabed.make_dataset(seed=3, n_pairs=2, dims=(64, 64),
                                            params=terrain,
                                            out_dir=tmp_path / "ds")
        manifest = seabed.load_manifest(manifest_path)
        img, _ = seabed.load_pair(manifest, 0)
        # 16-bit quantization: values are multiples of 1/65535
        assert np.allclose(img * 65535, np.round(img * 65535), atol=1e-3)

    def test_dataset_bytes_identical_across_runs(self, tmp_path, terrain):
        a = seabed.make_dataset(seed=9, n_pairs=2, dims=(64, 64), params=terrain,
                                out_dir=tmp_path / "a")
        b = seabed.make_dataset(seed=9, n_pairs=2, dims=(64, 64), params=terrain,
                                out_dir=tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name).read_bytes(), name
        assert json.loads(a.read_text())["seed"] == 9
        assert b.exists()

    def test_pair_seeds_are_order_independent(self, terrain):
        # Regenerating pair 5 alone must equal pair 5 of the full dataset.
        full = seabed._render_pair(seabed._pair_seed(42, 5), 64, 64, terrain)
        alone = seabed._render_pair(seabed._pair_seed(42, 5), 64, 64, terrain)
        assert np.array_equal(full[1], alone[1])

    def test_regenerate_matches_original(self, tmp_path, terrain):
        manifest_path = seabed.make_dataset(seed=1, n_pairs=2, dims=(64, 64),
                                            params=terrain,
                                            out_dir=tmp_path / "orig")
        manifest = seabed.load_manifest(manifest_path)
        seabed.regenerate_dataset(manifest, tmp_path / "again")
        for name in sorted(p.name for p in (tmp_path / "orig").iterdir()):
            assert (tmp_path / "orig" / name).read_bytes() == (
                tmp_path / "again" / name).read_bytes(), name
