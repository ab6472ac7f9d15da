"""Tiling geometry: partition/stitch round trips, conditions, quads."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonargen.errors import NoQuadError, ValidationError
from sonargen.grid import (QUAD_SLOTS, ConditionSet, SemanticMap, TileGridSpec,
                           across_track_map, compose_quad, conditions_from_image,
                           default_snippet_width, extract_conditions,
                           iter_quad_anchors, partition, replace_tile, stitch)


def random_pair(rng, spec):
    img = rng.uniform(0, 1, (spec.image_height, spec.image_width,
                             spec.channels)).astype(np.float32)
    labels = rng.integers(0, 3, (spec.image_height, spec.image_width))
    return img, labels


class TestTileGridSpec:
    def test_snippet_default_is_sixteenth_of_tile(self):
        spec = TileGridSpec(tile_size=64, grid_rows=2, grid_cols=2)
        assert spec.snippet_width == 4
        assert default_snippet_width(8) == 1

    def test_dims(self):
        spec = TileGridSpec(tile_size=16, grid_rows=3, grid_cols=5)
        assert (spec.image_height, spec.image_width) == (48, 80)

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValidationError):
            TileGridSpec(tile_size=4, grid_rows=1, grid_cols=1)
        with pytest.raises(ValidationError):
            TileGridSpec(tile_size=16, grid_rows=0, grid_cols=1)
        with pytest.raises(ValidationError):
            TileGridSpec(tile_size=16, grid_rows=1, grid_cols=1, snippet_width=16)

    def test_for_image_requires_exact_multiples(self):
        spec = TileGridSpec.for_image(64, 96, 32)
        assert (spec.grid_rows, spec.grid_cols) == (2, 3)
        with pytest.raises(ValidationError):
            TileGridSpec.for_image(65, 96, 32)


class TestPartitionStitch:
    def test_round_trip_bit_exact(self, rng):
        spec = TileGridSpec(tile_size=16, grid_rows=3, grid_cols=4)
        img, labels = random_pair(rng, spec)
        tiles = [t for t, _, _, _ in partition(img, labels, spec)]
        assert np.array_equal(stitch(tiles, spec), img)

    def test_raster_order_and_content(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=2, grid_cols=2)
        img, labels = random_pair(rng, spec)
        seen = [(r, c) for _, _, r, c in partition(img, labels, spec)]
        assert seen == [(0, 0), (0, 1), (1, 0), (1, 1)]
        tiles = list(partition(img, labels, spec))
        assert np.array_equal(tiles[3][0], img[8:, 8:])
        assert np.array_equal(tiles[3][1], labels[8:, 8:])

    def test_stitch_validates_count_and_shape(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=2, grid_cols=2)
        img, labels = random_pair(rng, spec)
        tiles = [t for t, _, _, _ in partition(img, labels, spec)]
        with pytest.raises(ValidationError):
            stitch(tiles[:3], spec)
        bad = tiles[:3] + [np.zeros((4, 4, 1), np.float32)]
        with pytest.raises(ValidationError):
            stitch(bad, spec)

    @settings(max_examples=25, deadline=None)
    @given(
        tile=st.sampled_from([8, 12, 16]),
        rows=st.integers(1, 4),
        cols=st.integers(1, 4),
        seed=st.integers(0, 2 ** 16),
    )
    def test_round_trip_property(self, tile, rows, cols, seed):
        spec = TileGridSpec(tile_size=tile, grid_rows=rows, grid_cols=cols)
        rng = np.random.default_rng(seed)
        img, labels = random_pair(rng, spec)
        tiles = [t for t, _, _, _ in partition(img, labels, spec)]
        assert np.array_equal(stitch(tiles, spec), img)


class TestConditions:
    def test_snippets_equal_neighbor_strips(self, rng):
        spec = TileGridSpec(tile_size=16, grid_rows=2, grid_cols=2,
                            snippet_width=3)
        img, labels = random_pair(rng, spec)
        tiles = {(r, c): t for t, _, r, c in partition(img, labels, spec)}
        cond = extract_conditions(tiles, 1, 1, spec)
        assert cond.valid_c1 and cond.valid_c2
        assert np.array_equal(cond.c1, tiles[(0, 1)][13:, :, :])
        assert np.array_equal(cond.c2, tiles[(1, 0)][:, 13:, :])

    def test_first_row_and_column_have_invalid_zero_strips(self, rng):
        spec = TileGridSpec(tile_size=16, grid_rows=2, grid_cols=2,
                            snippet_width=3)
        img, labels = random_pair(rng, spec)
        tiles = {(r, c): t for t, _, r, c in partition(img, labels, spec)}
        cond = extract_conditions(tiles, 0, 0, spec)
        assert not cond.valid_c1 and not cond.valid_c2
        assert not cond.c1.any() and not cond.c2.any()
        assert cond.c1.shape == (3, 16, 1)
        assert cond.c2.shape == (16, 3, 1)
        top_right = extract_conditions(tiles, 0, 1, spec)
        assert not top_right.valid_c1 and top_right.valid_c2

    def test_conditions_from_image_matches_tile_grid_path(self, rng):
        spec = TileGridSpec(tile_size=16, grid_rows=3, grid_cols=3,
                            snippet_width=2)
        img, labels = random_pair(rng, spec)
        tiles = {(r, c): t for t, _, r, c in partition(img, labels, spec)}
        for r in range(3):
            for c in range(3):
                a = extract_conditions(tiles, r, c, spec)
                b = conditions_from_image(img, r, c, spec)
                assert np.array_equal(a.c1, b.c1)
                assert np.array_equal(a.c2, b.c2)
                assert (a.valid_c1, a.valid_c2) == (b.valid_c1, b.valid_c2)

    def test_out_of_grid_rejected(self, rng):
        spec = TileGridSpec(tile_size=16, grid_rows=2, grid_cols=2)
        img, labels = random_pair(rng, spec)
        tiles = {(r, c): t for t, _, r, c in partition(img, labels, spec)}
        with pytest.raises(ValidationError):
            extract_conditions(tiles, 2, 0, spec)

    def test_across_track_is_global_ramp(self):
        spec = TileGridSpec(tile_size=16, grid_rows=1, grid_cols=4)
        full = np.concatenate([across_track_map(c, spec) for c in range(4)],
                              axis=1)
        assert full[0, 0] == 0.0
        assert full[0, -1] == 1.0
        assert np.all(np.diff(full[0]) > 0)
        assert np.array_equal(full[0], full[7])


class TestQuads:
    def test_compose_and_target_tile(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=3, grid_cols=3)
        img, labels = random_pair(rng, spec)
        quad = compose_quad(img, labels, 1, 1, spec)
        assert quad.image.shape == (16, 16, 1)
        assert np.array_equal(quad.image, img[8:24, 8:24])
        assert np.array_equal(quad.target_tile(), img[16:24, 16:24])

    def test_no_quad_on_last_row_or_col(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=3, grid_cols=3)
        img, labels = random_pair(rng, spec)
        with pytest.raises(NoQuadError):
            compose_quad(img, labels, 2, 0, spec)
        with pytest.raises(NoQuadError):
            compose_quad(img, labels, 0, 2, spec)
        anchors = list(iter_quad_anchors(spec))
        assert anchors == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_replace_tile_changes_exactly_the_target_block(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=2, grid_cols=2)
        img, labels = random_pair(rng, spec)
        quad = compose_quad(img, labels, 0, 0, spec)
        new_tile = np.full((8, 8, 1), 0.25, np.float32)
        swapped = replace_tile(quad, new_tile)
        r0, r1, c0, c1 = quad.slot_bounds()
        assert np.array_equal(swapped.image[r0:r1, c0:c1], new_tile)
        mask = np.ones_like(quad.image, dtype=bool)
        mask[r0:r1, c0:c1] = False
        assert np.array_equal(swapped.image[mask], quad.image[mask])
        # original untouched
        assert not np.array_equal(quad.image[r0:r1, c0:c1], new_tile)

    def test_replace_tile_rejects_wrong_shape(self, rng):
        spec = TileGridSpec(tile_size=8, grid_rows=2, grid_cols=2)
        img, labels = random_pair(rng, spec)
        quad = compose_quad(img, labels, 0, 0, spec)
        with pytest.raises(ValidationError):
            replace_tile(quad, np.zeros((4, 4, 1), np.float32))

    @settings(max_examples=25, deadline=None)
    @given(slot=st.sampled_from(sorted(QUAD_SLOTS)), seed=st.integers(0, 2 ** 16))
    def test_slot_bounds_cover_one_quarter(self, slot, seed):
        spec = TileGridSpec(tile_size=8, grid_rows=2, grid_cols=2)
        rng = np.random.default_rng(seed)
        img, labels = random_pair(rng, spec)
        quad = compose_quad(img, labels, 0, 0, spec, target_slot=slot)
        r0, r1, c0, c1 = quad.slot_bounds()
        assert (r1 - r0, c1 - c0) == (8, 8)
        dr, dc = QUAD_SLOTS[slot]
        assert (r0, c0) == (dr * 8, dc * 8)


class TestSemanticMap:
    def test_class_index_lookup(self):
        sm = SemanticMap(labels=np.zeros((4, 4), np.int64),
                         class_names=("a", "b"))
        assert sm.class_index("b") == 1
        with pytest.raises(ValidationError):
            sm.class_index("missing")

    def test_labels_must_fit_class_set(self):
        with pytest.raises(ValidationError):
            SemanticMap(labels=np.full((4, 4), 5), class_names=("a", "b"))


class TestConditionSetShapes:
    def test_mismatched_strip_shapes_rejected(self):
        with pytest.raises(ValidationError):
            ConditionSet(
                c1=np.zeros((2, 16, 1), np.float32),
                c2=np.zeros((16, 3, 1), np.float32),
                across_track=np.zeros((15, 16), np.float32),
                valid_c1=False,
                valid_c2=False,
            )
