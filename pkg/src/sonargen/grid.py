"""Tile lattice geometry.

Everything that slices a mission-sized image into square tiles and back
lives here: partitioning, neighbor-snippet extraction for conditioning,
2x2 quad composition for the coherence discriminator, and stitching.

All functions are pure; images are (H, W, C) arrays and semantic maps are
(H, W) integer label grids. Slicing is exact (no partial tiles, no overlap
blending), so partition/stitch round-trip bit-identically.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoQuadError, ValidationError
from .validation import as_image, check_image_dims, check_labels

QUAD_SLOTS = {
    "top_left": (0, 0),
    "top_right": (0, 1),
    "bottom_left": (1, 0),
    "bottom_right": (1, 1),
}


def default_snippet_width(tile_size):
    """Default conditioning-snippet width: tile_size/16 rounded up, at least 1."""
    return max(1, math.ceil(tile_size / 16))


@dataclass(frozen=True)
class TileGridSpec:
    """Geometry of the tile lattice over one mission image.

    Attributes:
        tile_size: Side length T of the square tiles, in pixels.
        grid_rows: Number of tile rows.
        grid_cols: Number of tile columns.
        snippet_width: Width s of the neighbor strips used as conditions.
        channels: Image channels (1 for a single sonar side).
    """

    tile_size: int
    grid_rows: int
    grid_cols: int
    snippet_width: int = 0
    channels: int = 1

    def __post_init__(self):
        if self.snippet_width == 0:
            object.__setattr__(self, "snippet_width", default_snippet_width(self.tile_size))
        if self.tile_size < 8:
            raise ValidationError(f"tile_size must be >= 8, got {self.tile_size}")
        if not 1 <= self.snippet_width < self.tile_size:
            raise ValidationError(
                f"snippet_width must lie in [1, tile_size), got {self.snippet_width}"
            )
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValidationError("grid must have at least one row and one column")
        if self.channels < 1:
            raise ValidationError("channels must be >= 1")

    @property
    def image_height(self):
        return self.grid_rows * self.tile_size

    @property
    def image_width(self):
        return self.grid_cols * self.tile_size

    @classmethod
    def for_image(cls, height, width, tile_size, snippet_width=0, channels=1):
        """Build a spec for an image whose dims must be exact tile multiples."""
        if height % tile_size or width % tile_size:
            raise ValidationError(
                f"image dims {height}x{width} are not multiples of tile_size {tile_size}"
            )
        return cls(
            tile_size=tile_size,
            grid_rows=height // tile_size,
            grid_cols=width // tile_size,
            snippet_width=snippet_width,
            channels=channels,
        )


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Per-pixel terrain class labels plus the class-name table."""

    labels: np.ndarray
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        labels = check_labels(self.labels, num_classes=len(self.class_names))
        object.__setattr__(self, "labels", labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def shape(self):
        return self.labels.shape

    def class_index(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class {name!r}; have {self.class_names}") from None


@dataclass(frozen=True, eq=False)
class ConditionSet:
    """Markov conditions for one tile.

    c1 is the bottom strip of the tile above (s, T, C); c2 the right strip of
    the tile to the left (T, s, C). Tiles on the first grid row/column have no
    such neighbor: the strip is all zeros and the matching valid flag is False.
    across_track encodes each pixel's normalized global column in [0, 1].
    """

    c1: np.ndarray
    c2: np.ndarray
    across_track: np.ndarray
    valid_c1: bool
    valid_c2: bool

    def __post_init__(self):
        s, t = self.c1.shape[:2]
        if self.c2.shape[:2] != (t, s):
            raise ValidationError(
                f"c1 {self.c1.shape} and c2 {self.c2.shape} imply different "
                f"tile/snippet sizes"
            )
        if self.across_track.shape != (t, t):
            raise ValidationError(
                f"across_track shape {self.across_track.shape} does not match "
                f"tile size {t}"
            )


@dataclass(frozen=True, eq=False)
class Quad:
    """A 2x2 block of tiles with its semantic labels.

    target_slot names the tile position under test; defaults to bottom_right,
    matching conditioning on the already-fixed top and left neighbors.
    """

    image: np.ndarray
    semantic: np.ndarray
    anchor: tuple
    target_slot: str = "bottom_right"

    def __post_init__(self):
        if self.target_slot not in QUAD_SLOTS:
            raise ValidationError(
                f"target_slot must be one of {sorted(QUAD_SLOTS)}, got {self.target_slot!r}"
            )

    @property
    def tile_size(self):
        return self.image.shape[0] // 2

    def slot_bounds(self):
        """(row0, row1, col0, col1) pixel bounds of the target slot."""
        dr, dc = QUAD_SLOTS[self.target_slot]
        t = self.tile_size
        return dr * t, (dr + 1) * t, dc * t, (dc + 1) * t

    def target_tile(self):
        r0, r1, c0, c1 = self.slot_bounds()
        return self.image[r0:r1, c0:c1]


def _check_pair(image, semantic_map, spec):
    image = check_image_dims(image, spec.image_height, spec.image_width, spec.channels)
    labels = check_labels(semantic_map.labels if isinstance(semantic_map, SemanticMap) else semantic_map)
    if labels.shape != (spec.image_height, spec.image_width):
        raise ValidationError(
            f"semantic map shape {labels.shape} does not match image "
            f"{spec.image_height}x{spec.image_width}"
        )
    return image, labels


def partition(image, semantic_map, spec):
    """Split an image and its semantic map into tiles in raster order.

    Yields (tile, semantic_tile, row, col); tile (r, c) is the pixel block
    rows [r*T, (r+1)*T), cols [c*T, (c+1)*T). Views into the inputs, not
    copies.
    """
    image, labels = _check_pair(image, semantic_map, spec)
    t = spec.tile_size
    for row in range(spec.grid_rows):
        for col in range(spec.grid_cols):
            tile = image[row * t:(row + 1) * t, col * t:(col + 1) * t]
            sem = labels[row * t:(row + 1) * t, col * t:(col + 1) * t]
            yield tile, sem, row, col


def across_track_map(col, spec):
    """Normalized global-column coordinate plane for tile column `col`.

    Pixel (i, j) of the returned (T, T) map is (col*T + j) / (grid_cols*T - 1),
    so one grid row of maps concatenates to a ramp from 0.0 to 1.0.
    """
    t = spec.tile_size
    span = spec.grid_cols * t - 1
    cols = (np.arange(t, dtype=np.float64) + col * t) / span
    return np.broadcast_to(cols.astype(np.float32), (t, t)).copy()


def _tile_at(tiles, row, col):
    if isinstance(tiles, dict):
        return tiles[(row, col)]
    return tiles[row][col]


def extract_conditions(tiles, row, col, spec):
    """Extract the ConditionSet for tile (row, col) from a full tile grid.

    `tiles` is indexable as a dict {(r, c): tile} or a nested sequence.
    c1 is the bottom `snippet_width` rows of the tile above; c2 the rightmost
    `snippet_width` columns of the tile to the left. Missing neighbors give
    zero strips with the valid flag cleared.
    """
    if not (0 <= row < spec.grid_rows and 0 <= col < spec.grid_cols):
        raise ValidationError(
            f"tile ({row}, {col}) outside grid {spec.grid_rows}x{spec.grid_cols}"
        )
    t, s, c = spec.tile_size, spec.snippet_width, spec.channels
    if row > 0:
        above = as_image(_tile_at(tiles, row - 1, col))
        c1 = np.array(above[t - s:, :, :], copy=True)
        valid_c1 = True
    else:
        c1 = np.zeros((s, t, c), dtype=np.float32)
        valid_c1 = False
    if col > 0:
        left = as_image(_tile_at(tiles, row, col - 1))
        c2 = np.array(left[:, t - s:, :], copy=True)
        valid_c2 = True
    else:
        c2 = np.zeros((t, s, c), dtype=np.float32)
        valid_c2 = False
    return ConditionSet(
        c1=c1,
        c2=c2,
        across_track=across_track_map(col, spec),
        valid_c1=valid_c1,
        valid_c2=valid_c2,
    )


def conditions_from_image(image, row, col, spec):
    """Like extract_conditions, but slicing a full unpartitioned image."""
    image = check_image_dims(image, spec.image_height, spec.image_width, spec.channels)
    t = spec.tile_size
    grid = {}
    if row > 0:
        grid[(row - 1, col)] = image[(row - 1) * t:row * t, col * t:(col + 1) * t]
    if col > 0:
        grid[(row, col - 1)] = image[row * t:(row + 1) * t, (col - 1) * t:col * t]
    return extract_conditions(grid, row, col, spec)


def compose_quad(image, semantic_map, anchor_row, anchor_col, spec, target_slot="bottom_right"):
    """Cut the contiguous 2x2-tile block anchored at (anchor_row, anchor_col)."""
    image, labels = _check_pair(image, semantic_map, spec)
    if not (0 <= anchor_row and anchor_row + 1 < spec.grid_rows
            and 0 <= anchor_col and anchor_col + 1 < spec.grid_cols):
        raise NoQuadError(
            f"anchor ({anchor_row}, {anchor_col}) has no full 2x2 neighborhood in "
            f"a {spec.grid_rows}x{spec.grid_cols} grid"
        )
    t = spec.tile_size
    r0, c0 = anchor_row * t, anchor_col * t
    return Quad(
        image=np.array(image[r0:r0 + 2 * t, c0:c0 + 2 * t], copy=True),
        semantic=np.array(labels[r0:r0 + 2 * t, c0:c0 + 2 * t], copy=True),
        anchor=(anchor_row, anchor_col),
        target_slot=target_slot,
    )


def iter_quad_anchors(spec):
    """All anchors admitting a full 2x2 neighborhood, in raster order."""
    for row in range(spec.grid_rows - 1):
        for col in range(spec.grid_cols - 1):
            yield row, col


def replace_tile(quad, new_tile):
    """Return a copy of the quad with the target slot swapped for new_tile."""
    new_tile = as_image(new_tile, "new_tile")
    t = quad.tile_size
    if new_tile.shape != (t, t, quad.image.shape[2]):
        raise ValidationError(
            f"replacement tile shape {new_tile.shape} does not match "
            f"({t}, {t}, {quad.image.shape[2]})"
        )
    image = np.array(quad.image, copy=True)
    r0, r1, c0, c1 = quad.slot_bounds()
    image[r0:r1, c0:c1] = new_tile
    return Quad(image=image, semantic=quad.semantic, anchor=quad.anchor,
                target_slot=quad.target_slot)


def stitch(tiles, spec):
    """Assemble raster-ordered tiles back into the full image.

    Inverse of partition: stitch(partition(img)) == img bit-exactly.
    """
    tiles = list(tiles)
    expected = spec.grid_rows * spec.grid_cols
    if len(tiles) != expected:
        raise ValidationError(f"expected {expected} tiles, got {len(tiles)}")
    t = spec.tile_size
    shape = (t, t, spec.channels)
    arrays = []
    for i, tile in enumerate(tiles):
        tile = as_image(tile, f"tile {i}")
        if tile.shape != shape:
            raise ValidationError(f"tile {i} has shape {tile.shape}, expected {shape}")
        arrays.append(tile)
    out = np.empty((spec.image_height, spec.image_width, spec.channels), dtype=arrays[0].dtype)
    for i, tile in enumerate(arrays):
        row, col = divmod(i, spec.grid_cols)
        out[row * t:(row + 1) * t, col * t:(col + 1) * t] = tile
    return out
