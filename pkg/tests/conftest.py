"""Shared fixtures.

The expensive piece is the desk-scale reference run (dataset + 10-epoch
training) used by the continuity and downstream-utility acceptance tests. It
is session-scoped and cacheable: set SONARGEN_TEST_CACHE to a directory and
the trained artifacts are reused across sessions as long as the recipe hash
matches; wall-clock timings of the original run are kept alongside so timing
assertions stay meaningful.
"""

import hashlib
import json
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

from sonargen import seabed
from sonargen.grid import TileGridSpec
from sonargen.networks import (DiscriminatorConfig, GeneratorConfig, build_models,
                               load_checkpoint)
from sonargen.training import TrainingConfig, train

REFERENCE_RECIPE = {
    "id": "ref-v1",
    "dataset": {"seed": 0, "n_pairs": 200, "height": 256, "width": 256},
    "grid": {"tile_size": 64, "snippet_width": 0},
    "generator": {"num_classes": 4, "base_width": 16, "resnet_blocks": 2,
                  "n_downsample": 2, "stem_kernel": 7, "noise_channels": 1},
    "discriminator": {"levels": 2, "base_width": 16, "kernel_size": 4},
    "training": {"epochs": 10, "batch_size": 3, "seed": 0},
}

CACHE_ENV = "SONARGEN_TEST_CACHE"


def recipe_hash(recipe):
    return hashlib.sha256(json.dumps(recipe, sort_keys=True).encode()).hexdigest()


@dataclass
class ReferenceRun:
    """Trained desk-scale artifacts plus how long they took to produce."""

    dataset_dir: Path
    manifest: dict
    run_dir: Path
    checkpoint_path: Path
    models: object
    grid: TileGridSpec
    terrain: object
    dataset_seconds: float
    train_seconds: float
    from_cache: bool


def _build_reference(base_dir):
    recipe = REFERENCE_RECIPE
    d = recipe["dataset"]
    t0 = time.time()
    manifest_path = seabed.make_dataset(
        seed=d["seed"], n_pairs=d["n_pairs"], dims=(d["height"], d["width"]),
        params=seabed.default_terrain_params(), out_dir=base_dir / "dataset")
    dataset_seconds = time.time() - t0
    cfg = TrainingConfig(**recipe["training"])
    gen = GeneratorConfig(**recipe["generator"])
    disc = DiscriminatorConfig(**recipe["discriminator"])
    t1 = time.time()
    train(manifest_path, cfg, base_dir / "run",
          tile_size=recipe["grid"]["tile_size"],
          snippet_width=recipe["grid"]["snippet_width"],
          gen_config=gen, d1_config=disc, d2_config=disc)
    train_seconds = time.time() - t1
    (base_dir / "recipe.json").write_text(json.dumps(
        {"recipe": recipe, "recipe_hash": recipe_hash(recipe),
         "dataset_seconds": dataset_seconds, "train_seconds": train_seconds},
        indent=2, sort_keys=True))
    return dataset_seconds, train_seconds


def _load_reference(base_dir, from_cache):
    meta = json.loads((base_dir / "recipe.json").read_text())
    recipe = meta["recipe"]
    manifest = seabed.load_manifest(base_dir / "dataset" / seabed.MANIFEST_NAME)
    models, _ = load_checkpoint(base_dir / "run" / "checkpoint.ckpt")
    models.eval()
    g = recipe["grid"]
    grid = TileGridSpec.for_image(recipe["dataset"]["height"],
                                  recipe["dataset"]["width"],
                                  g["tile_size"], g["snippet_width"])
    return ReferenceRun(
        dataset_dir=base_dir / "dataset",
        manifest=manifest,
        run_dir=base_dir / "run",
        checkpoint_path=base_dir / "run" / "checkpoint.ckpt",
        models=models,
        grid=grid,
        terrain=seabed.default_terrain_params(),
        dataset_seconds=meta["dataset_seconds"],
        train_seconds=meta["train_seconds"],
        from_cache=from_cache,
    )


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """Desk-scale reference training (T=64, 4x4 grids, 200 pairs, 10 epochs)."""
    cache = os.environ.get(CACHE_ENV)
    if cache:
        cache = Path(cache)
        recipe_file = cache / "recipe.json"
        if recipe_file.exists():
            meta = json.loads(recipe_file.read_text())
            if meta.get("recipe_hash") == recipe_hash(REFERENCE_RECIPE) and (
                    cache / "run" / "checkpoint.ckpt").exists():
                return _load_reference(cache, from_cache=True)
        cache.mkdir(parents=True, exist_ok=True)
        for stale in ("dataset", "run", "recipe.json"):
            target = cache / stale
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
        _build_reference(cache)
        return _load_reference(cache, from_cache=False)
    base = tmp_path_factory.mktemp("reference")
    _build_reference(base)
    return _load_reference(base, from_cache=False)


@pytest.fixture()
def terrain():
    return seabed.default_terrain_params()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def tiny_gen_config(num_classes=3):
    return GeneratorConfig(num_classes=num_classes, base_width=8, resnet_blocks=1,
                           n_downsample=1)


def tiny_disc_config():
    return DiscriminatorConfig(levels=2, base_width=8)


@pytest.fixture()
def tiny_models():
    return build_models(tiny_gen_config(), tiny_disc_config(), tiny_disc_config(),
                        seed=0)


def micro_configs():
    gen = GeneratorConfig(num_classes=2, base_width=4, resnet_blocks=1,
                          n_downsample=0, stem_kernel=1)
    disc = DiscriminatorConfig(levels=1, base_width=4, kernel_size=1)
    return gen, disc


@pytest.fixture()
def micro_models():
    gen, disc = micro_configs()
    return build_models(gen, disc, disc, seed=7, dtype=torch.float64)


def make_tiny_dataset(n=6, tile=16, rows=2, cols=2, seed=0, num_classes=3):
    """Random in-memory pairs small enough for per-test training."""
    rng = np.random.default_rng(seed)
    h, w = tile * rows, tile * cols
    images = [rng.uniform(0, 1, (h, w, 1)).astype(np.float32) for _ in range(n)]
    maps = [rng.integers(0, num_classes, (h, w)) for _ in range(n)]
    grid = TileGridSpec(tile_size=tile, grid_rows=rows, grid_cols=cols)
    return images, maps, grid


@pytest.fixture()
def tiny_dataset():
    return make_tiny_dataset()
