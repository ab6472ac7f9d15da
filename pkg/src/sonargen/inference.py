"""Mission-scale image synthesis by recursive tiling.

Tiles are generated left-to-right, top-to-bottom; each tile is conditioned on
snippets of the tiles already generated above and to its left, so texture
flows across tile boundaries. Per-tile noise is derived from
(master seed, row, col) only, which makes the output independent of execution
order: the wavefront scheduler runs anti-diagonals in parallel threads and
produces bit-identical images to the sequential path.
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DependencyError, ValidationError
from .grid import SemanticMap, TileGridSpec, across_track_map, stitch
from .networks import condition_planes, load_checkpoint
from .validation import check_positive

SIDECAR_SUFFIX = ".json"

# Swath widths (pixels) of two sonar hardware profiles used for throughput
# reporting. Values are per side; a two-sided mission doubles them.
HARDWARE_PRESETS = {
    "marinesonic": 512,
    "edgetech": 4620,
}


@dataclass(frozen=True)
class MissionRequest:
    """What to synthesize: semantic layout, grid geometry, and seeding.

    ablate_conditions drops the neighbor snippets (zero strips, invalid
    flags) while keeping everything else; it exists to measure how much the
    conditioning itself contributes to seam continuity.
    """

    semantic: SemanticMap
    grid: TileGridSpec
    seed: int = 0
    scheduler: str = "sequential"
    workers: int = 1
    ablate_conditions: bool = False

    def __post_init__(self):
        if self.scheduler not in ("sequential", "wavefront"):
            raise ValidationError("scheduler must be 'sequential' or 'wavefront'")
        check_positive(self.workers, "workers")
        g = self.grid
        if self.semantic.labels.shape != (g.image_height, g.image_width):
            raise ValidationError(
                f"semantic map shape {self.semantic.labels.shape} does not match "
                f"grid {g.image_height}x{g.image_width}"
            )


@dataclass(eq=False)
class Mission:
    """A synthesized mission image plus everything needed to reproduce it."""

    image: np.ndarray
    request: MissionRequest
    tile_seeds: dict
    tile_seconds: dict
    checkpoint_hash: str
    wall_seconds: float
    scheduler: str
    workers: int

    @property
    def semantic(self):
        return self.request.semantic

    @property
    def digest(self):
        return hashlib.sha256(self.image.tobytes()).hexdigest()


def tile_seed(master_seed, row, col):
    """Per-tile seed; a pure function of (master seed, row, col)."""
    ss = np.random.SeedSequence([master_seed & 0xFFFFFFFF, row, col])
    return int(ss.generate_state(1)[0])


def _tile_noise(master_seed, row, col, channels, tile_size):
    rng = np.random.default_rng(tile_seed(master_seed, row, col))
    return rng.standard_normal((channels, tile_size, tile_size)).astype(np.float32)


def _semantic_tile(semantic, grid, row, col):
    t = grid.tile_size
    return semantic.labels[row * t:(row + 1) * t, col * t:(col + 1) * t]


def _generate_tile(models, request, done, row, col):
    """Generate one tile conditioned on its finished top/left neighbors."""
    grid = request.grid
    t = grid.tile_size
    s = grid.snippet_width
    c1 = np.zeros((s, t, grid.channels), dtype=np.float32)
    c2 = np.zeros((t, s, grid.channels), dtype=np.float32)
    valid1 = valid2 = False
    if row > 0 and not request.ablate_conditions:
        above = done[(row - 1, col)]
        c1 = above[t - s:, :, :].astype(np.float32, copy=True)
        valid1 = True
    if col > 0 and not request.ablate_conditions:
        left = done[(row, col - 1)]
        c2 = left[:, t - s:, :].astype(np.float32, copy=True)
        valid2 = True
    from .grid import ConditionSet

    cond = ConditionSet(c1=c1, c2=c2,
                        across_track=across_track_map(col, grid),
                        valid_c1=valid1, valid_c2=valid2)
    sem = _semantic_tile(request.semantic, grid, row, col)
    planes = condition_planes(cond, sem, models.gen_config.num_classes)
    noise = _tile_noise(request.seed, row, col,
                        models.gen_config.noise_channels, t)
    x = torch.as_tensor(np.concatenate([planes, noise], axis=0),
                        dtype=models.dtype).unsqueeze(0)
    with torch.no_grad():
        out = models.generator(x)
    return np.moveaxis((out[0].numpy(force=True) + 1.0) / 2.0, 0, 2).astype(
        np.float32)


def _finish(done, timings, request, models_hash, started, scheduler, workers):
    grid = request.grid
    tiles = [done[(r, c)] for r in range(grid.grid_rows)
             for c in range(grid.grid_cols)]
    image = stitch(tiles, grid)
    seeds = {f"{r},{c}": tile_seed(request.seed, r, c)
             for r in range(grid.grid_rows) for c in range(grid.grid_cols)}
    return Mission(
        image=image,
        request=request,
        tile_seeds=seeds,
        tile_seconds={f"{r},{c}": timings[(r, c)]
                      for r in range(grid.grid_rows)
                      for c in range(grid.grid_cols)},
        checkpoint_hash=models_hash,
        wall_seconds=time.perf_counter() - started,
        scheduler=scheduler,
        workers=workers,
    )


def generate_mission(models, request, models_hash="", row_callback=None,
                     tile_callback=None):
    """Sequential raster-order generation.

    row_callback, when given, receives (row_index, row_image) as soon as each
    tile row is complete, enabling streaming consumers. tile_callback receives
    (row, col) before each tile is generated (call-order instrumentation).
    """
    started = time.perf_counter()
    grid = request.grid
    models.eval()
    done = {}
    timings = {}
    for r in range(grid.grid_rows):
        for c in range(grid.grid_cols):
            if tile_callback is not None:
                tile_callback(r, c)
            t0 = time.perf_counter()
            done[(r, c)] = _generate_tile(models, request, done, r, c)
            timings[(r, c)] = time.perf_counter() - t0
        if row_callback is not None:
            row = np.concatenate([done[(r, c)] for c in range(grid.grid_cols)],
                                 axis=1)
            row_callback(r, row)
    return _finish(done, timings, request, models_hash, started, "sequential", 1)


def generate_mission_wavefront(models, request, models_hash="", workers=2):
    """Anti-diagonal wavefront generation with a thread pool.

    All tiles with the same row+col sum are mutually independent once the
    previous diagonal is finished, so they run concurrently; a barrier between
    diagonals enforces the dependency order. Output is bit-identical to the
    sequential scheduler because each tile's noise depends only on its
    coordinates.
    """
    check_positive(workers, "workers")
    started = time.perf_counter()
    grid = request.grid
    models.eval()
    done = {}
    timings = {}

    def run_tile(rc):
        r, c = rc
        if r > 0 and (r - 1, c) not in done:
            raise DependencyError(f"tile ({r},{c}) scheduled before ({r - 1},{c})")
        if c > 0 and (r, c - 1) not in done:
            raise DependencyError(f"tile ({r},{c}) scheduled before ({r},{c - 1})")
        t0 = time.perf_counter()
        tile = _generate_tile(models, request, done, r, c)
        return rc, tile, time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for diag in range(grid.grid_rows + grid.grid_cols - 1):
            coords = [(r, diag - r) for r in range(grid.grid_rows)
                      if 0 <= diag - r < grid.grid_cols]
            for rc, tile, dt in pool.map(run_tile, coords):
                done[rc] = tile
                timings[rc] = dt
    return _finish(done, timings, request, models_hash, started, "wavefront",
                   workers)


def generate(models, request, models_hash=""):
    """Dispatch on request.scheduler."""
    if request.scheduler == "wavefront":
        return generate_mission_wavefront(models, request, models_hash,
                                          workers=request.workers)
    return generate_mission(models, request, models_hash)


def two_sided_mission(models, port_request, starboard_request, models_hash=""):
    """Port and starboard swaths side by side, mirrored about the track line.

    The port side is generated with its own request then flipped across-track,
    so attenuation and across-track position run outward from the center on
    both sides.
    """
    port = generate(models, port_request, models_hash)
    starboard = generate(models, starboard_request, models_hash)
    if port.image.shape[0] != starboard.image.shape[0]:
        raise ValidationError("port and starboard heights differ")
    image = np.concatenate([port.image[:, ::-1, :], starboard.image], axis=1)
    return image, port, starboard


# ---------------------------------------------------------------------------
# Persistence


def save_mission(path, mission, extra=None):
    """Write the mission image as 16-bit PNG plus a JSON sidecar.

    The sidecar records the grid spec, seeds, scheduler, checkpoint hash, and
    timings, which is enough to regenerate the mission exactly.
    """
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(mission.image[:, :, 0], 0.0, 1.0)
    Image.fromarray((arr * 65535.0).round().astype(np.uint16)).save(path)
    g = mission.request.grid
    sidecar = {
        "image": path.name,
        "sha256": mission.digest,
        "grid": {
            "tile_size": g.tile_size,
            "grid_rows": g.grid_rows,
            "grid_cols": g.grid_cols,
            "snippet_width": g.snippet_width,
            "channels": g.channels,
        },
        "seed": mission.request.seed,
        "tile_seeds": mission.tile_seeds,
        "tile_seconds": mission.tile_seconds,
        "scheduler": mission.scheduler,
        "workers": mission.workers,
        "checkpoint_sha256": mission.checkpoint_hash,
        "wall_seconds": mission.wall_seconds,
        "class_names": list(mission.request.semantic.class_names),
    }
    if extra:
        sidecar.update(extra)
    with open(path.with_suffix(path.suffix + SIDECAR_SUFFIX), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return path


def load_mission_image(path):
    from PIL import Image

    arr = np.asarray(Image.open(path), dtype=np.float32) / 65535.0
    return arr[:, :, None]


# ---------------------------------------------------------------------------
# Throughput

# Stand-in for the along-track acquisition rate of a real sonar, in pixel rows
# per second. Configurable; the interesting output is the generated/acquired
# ratio, not this number.
DEFAULT_ACQUISITION_ROWS_PER_S = 10.0


@dataclass
class BenchmarkReport:
    """Throughput of sequential generation at one swath width."""

    preset: str
    across_track_width: int
    tile_size: int
    grid_cols: int
    n_tiles: int
    wall_seconds: float
    tiles_per_second: float
    acquisition_rate_rows_per_s: float
    hardware: dict = field(default_factory=dict)

    @property
    def pixels_per_second(self):
        return self.tiles_per_second * self.tile_size ** 2

    @property
    def rows_per_second(self):
        return self.pixels_per_second / self.across_track_width

    @property
    def acquisition_ratio(self):
        return self.rows_per_second / self.acquisition_rate_rows_per_s

    def to_dict(self):
        return {
            "preset": self.preset,
            "across_track_width": self.across_track_width,
            "tile_size": self.tile_size,
            "grid_cols": self.grid_cols,
            "n_tiles": self.n_tiles,
            "wall_seconds": self.wall_seconds,
            "tiles_per_second": self.tiles_per_second,
            "pixels_per_second": self.pixels_per_second,
            "rows_per_second": self.rows_per_second,
            "acquisition_rate_rows_per_s": self.acquisition_rate_rows_per_s,
            "acquisition_ratio": self.acquisition_ratio,
            "hardware": self.hardware,
        }


def hardware_descriptor():
    """Best-effort description of the machine the benchmark ran on."""
    import os
    import platform

    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "torch": torch.__version__,
        "torch_threads": torch.get_num_threads(),
    }


def preset_grid_cols(preset, tile_size):
    """Tile columns needed to cover a hardware preset's swath width."""
    if preset not in HARDWARE_PRESETS:
        raise ValidationError(
            f"unknown hardware preset {preset!r}; choose from "
            f"{sorted(HARDWARE_PRESETS)}"
        )
    width = HARDWARE_PRESETS[preset]
    return max(1, -(-width // tile_size))


def _flat_semantic(grid, num_classes):
    names = tuple(f"class_{i}" for i in range(num_classes))
    return SemanticMap(
        labels=np.zeros((grid.image_height, grid.image_width), dtype=np.int64),
        class_names=names,
    )


def benchmark_throughput(models, n_tiles, tile_size=64, snippet_width=0,
                         grid_cols=None, preset="custom", seed=0, warmup_tiles=2,
                         acquisition_rate=DEFAULT_ACQUISITION_ROWS_PER_S,
                         semantic_for=None):
    """Time sequential generation of n_tiles tiles at a fixed swath width.

    The first warmup_tiles tiles are generated but excluded from the timing.
    Returns a BenchmarkReport with tiles/sec, pixels/sec, and the ratio of
    generated rows/sec to the configured acquisition rate.
    """
    if n_tiles < 10:
        raise ValidationError("n_tiles must be >= 10 (warm-up excluded)")
    if grid_cols is None:
        grid_cols = preset_grid_cols(preset, tile_size) if (
            preset in HARDWARE_PRESETS) else 4
    width = HARDWARE_PRESETS.get(preset, grid_cols * tile_size)
    grid_rows = -(-(n_tiles + warmup_tiles) // grid_cols)
    grid = TileGridSpec(tile_size=tile_size, grid_rows=grid_rows,
                        grid_cols=grid_cols, snippet_width=snippet_width)
    semantic = (semantic_for(grid) if semantic_for is not None
                else _flat_semantic(grid, models.gen_config.num_classes))
    request = MissionRequest(semantic=semantic, grid=grid, seed=seed)
    mission = generate_mission(models, request)
    ordered = [mission.tile_seconds[f"{r},{c}"]
               for r in range(grid_rows) for c in range(grid_cols)]
    timed = ordered[warmup_tiles:warmup_tiles + n_tiles]
    wall = float(sum(timed))
    return BenchmarkReport(
        preset=preset,
        across_track_width=width,
        tile_size=tile_size,
        grid_cols=grid_cols,
        n_tiles=len(timed),
        wall_seconds=wall,
        tiles_per_second=len(timed) / wall,
        acquisition_rate_rows_per_s=acquisition_rate,
        hardware=hardware_descriptor(),
    )


def benchmark_presets(models, n_tiles, tile_size=64, snippet_width=0, seed=0,
                      acquisition_rate=DEFAULT_ACQUISITION_ROWS_PER_S):
    """One BenchmarkReport per hardware preset."""
    return {
        name: benchmark_throughput(
            models, n_tiles, tile_size=tile_size, snippet_width=snippet_width,
            preset=name, seed=seed, acquisition_rate=acquisition_rate)
        for name in sorted(HARDWARE_PRESETS)
    }


def scaling_experiment(models, tile_counts, tile_size=64, grid_cols=4,
                       snippet_width=0, seed=0):
    """Wall time of full sequential missions at several tile counts.

    Returns (tile_counts, wall_seconds) lists for a linearity check; cost per
    tile is constant, so wall time should be linear in tile count.
    """
    counts, seconds = [], []
    for n in tile_counts:
        check_positive(n, "tile count")
        grid_rows = -(-n // grid_cols)
        grid = TileGridSpec(tile_size=tile_size, grid_rows=grid_rows,
                            grid_cols=grid_cols, snippet_width=snippet_width)
        semantic = _flat_semantic(grid, models.gen_config.num_classes)
        request = MissionRequest(semantic=semantic, grid=grid, seed=seed)
        mission = generate_mission(models, request)
        counts.append(grid_rows * grid_cols)
        seconds.append(float(sum(mission.tile_seconds.values())))
    return counts, seconds


def linear_r2(x, y):
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValidationError("need at least 3 points for a linearity check")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = y - y.mean()
    denom = float(total @ total)
    if denom == 0.0:
        return 1.0
    return 1.0 - float(residual @ residual) / denom


def load_models(checkpoint_path):
    """Load a checkpoint for inference; returns (models, checkpoint sha256)."""
    path = Path(checkpoint_path)
    models, _ = load_checkpoint(path)
    models.eval()
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return models, digest
