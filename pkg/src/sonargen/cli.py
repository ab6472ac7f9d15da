"""Command-line surface: make-data, train, generate, evaluate, benchmark.

Every command is driven by the same declarative config file, with flags
taking precedence over the file and the file over recorded defaults. Exit
codes: 0 success, 2 validation error, 3 runtime fault. Diagnostics go to
stderr; stdout carries only result paths and report lines.
"""

import functools
import json
import os
import statistics
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation, inference, seabed, training
from .config import RunConfig
from .errors import ValidationError
from .grid import SemanticMap, TileGridSpec

DATA_ROOT_ENV = "SONARGEN_DATA_ROOT"

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map exception classes onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(EXIT_VALIDATION, exc)
        except (RuntimeError, OSError, KeyError) as exc:
            _fail(EXIT_RUNTIME, exc)

    return wrapper


def _load_config(config_path):
    if config_path is None:
        return RunConfig.default()
    return RunConfig.load(config_path)


def _resolve_out(out, default_name):
    if out is not None:
        return Path(out)
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        return Path(root) / default_name
    return Path(default_name)


@click.group()
def main():
    """Side-scan-sonar-style image synthesis pipeline."""


@main.command("make-data")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Run configuration file (YAML).")
@click.option("--out", type=click.Path(), default=None,
              help=f"Dataset directory (default: ${DATA_ROOT_ENV}/dataset).")
@click.option("--seed", type=int, default=None, help="Override dataset seed.")
@click.option("--pairs", type=int, default=None, help="Override pair count.")
@guarded
def cmd_make_data(config_path, out, seed, pairs):
    """Render a procedural (image, semantic map) dataset."""
    config = _load_config(config_path).with_overrides(
        dataset={"seed": seed, "n_pairs": pairs})
    out = _resolve_out(out, "dataset")
    if not out.parent.exists():
        raise ValidationError(f"parent directory {out.parent} does not exist")
    d = config.data["dataset"]
    manifest_path = out / seabed.MANIFEST_NAME
    if manifest_path.exists():
        existing = seabed.load_manifest(manifest_path)
        if existing.get("config_hash") == config.hash():
            click.echo(str(manifest_path))
            return
        raise ValidationError(
            f"{out} already holds a dataset with a different config "
            f"(hash {existing.get('config_hash')!r}); refusing to overwrite"
        )
    manifest_path = seabed.make_dataset(
        seed=d["seed"], n_pairs=d["n_pairs"], dims=(d["height"], d["width"]),
        params=config.terrain_params(), out_dir=out, config_hash=config.hash())
    click.echo(str(manifest_path))


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "manifest_path", type=click.Path(), required=True,
              help="Dataset manifest (manifest.json or its directory).")
@click.option("--out", type=click.Path(), required=True,
              help="Checkpoint/metrics output directory.")
@click.option("--epochs", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resume", is_flag=True, default=False,
              help="Continue from the newest epoch checkpoint in --out.")
@guarded
def cmd_train(config_path, manifest_path, out, epochs, batch, seed, resume):
    """Train the generator and both discriminators."""
    config = _load_config(config_path).with_overrides(
        training={"epochs": epochs, "batch_size": batch, "seed": seed})
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / seabed.MANIFEST_NAME
    g = config.data["grid"]
    result = training.train(
        manifest_path,
        config.training_config(),
        Path(out),
        tile_size=g["tile_size"],
        snippet_width=g["snippet_width"],
        gen_config=config.generator_config(),
        d1_config=config.discriminator_config("d1"),
        d2_config=config.discriminator_config("d2"),
        resume=resume,
        config_hash=config.hash(),
    )
    click.echo(str(result.checkpoint_path))


def _load_semantic(map_path, class_names):
    labels = seabed.load_labels(map_path)
    if labels.max() >= len(class_names):
        raise ValidationError(
            f"semantic map uses label {labels.max()} but config defines only "
            f"{len(class_names)} classes"
        )
    return SemanticMap(labels=labels, class_names=tuple(class_names))


@main.command("generate")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--map", "map_path", type=click.Path(), default=None,
              help="Semantic map raster; sampled from terrain config if omitted.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True, help="Mission PNG path.")
@click.option("--wavefront", type=int, default=0,
              help="Worker count for anti-diagonal parallel generation "
                   "(0 = sequential).")
@guarded
def cmd_generate(checkpoint, map_path, config_path, seed, out, wavefront):
    """Generate a mission image from a semantic map."""
    config = _load_config(config_path).with_overrides(
        mission={"seed": seed,
                 "scheduler": "wavefront" if wavefront else None,
                 "workers": wavefront or None})
    models, ckpt_hash = inference.load_models(checkpoint)
    m = config.data["mission"]
    terrain = config.terrain_params()
    if map_path is not None:
        semantic = _load_semantic(map_path, terrain.class_names)
        grid = TileGridSpec.for_image(
            semantic.labels.shape[0], semantic.labels.shape[1],
            config.data["grid"]["tile_size"], config.data["grid"]["snippet_width"])
    else:
        grid = config.grid()
        semantic = seabed.sample_semantic_map(
            np.random.SeedSequence([m["seed"], 3]), grid.image_height,
            grid.image_width, terrain)
    request = inference.MissionRequest(
        semantic=semantic, grid=grid, seed=m["seed"],
        scheduler=m["scheduler"], workers=m["workers"])
    mission = inference.generate(models, request, models_hash=ckpt_hash)
    path = inference.save_mission(Path(out), mission,
                                  extra={"config_sha256": config.hash()})
    click.echo(str(path))
    click.echo(f"sha256 {mission.digest}")


@main.command("evaluate")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True,
              help="Report JSON path.")
@click.option("--atr/--no-atr", default=False,
              help="Also run the target-recognition proxy experiment (slow).")
@guarded
def cmd_evaluate(checkpoint, config_path, out, atr):
    """Score seam continuity (and optionally downstream utility)."""
    config = _load_config(config_path)
    models, ckpt_hash = inference.load_models(checkpoint)
    terrain = config.terrain_params()
    ev = config.data["evaluate"]
    grid = config.grid()
    ratios, ablated_ratios = [], []
    texture = None
    for i in range(ev["n_missions"]):
        semantic = seabed.sample_semantic_map(
            np.random.SeedSequence([ev["seam_seed"], i, 5]),
            grid.image_height, grid.image_width, terrain)
        request = inference.MissionRequest(semantic=semantic, grid=grid,
                                           seed=ev["seam_seed"] + i)
        mission = inference.generate_mission(models, request,
                                             models_hash=ckpt_hash)
        ablated = inference.generate_mission(
            models,
            inference.MissionRequest(semantic=semantic, grid=grid,
                                     seed=ev["seam_seed"] + i,
                                     ablate_conditions=True),
            models_hash=ckpt_hash)
        ratios.append(evaluation.seam_score(
            mission.image, grid, seed=ev["seam_seed"]).seam_ratio)
        ablated_ratios.append(evaluation.seam_score(
            ablated.image, grid, seed=ev["seam_seed"]).seam_ratio)
        if texture is None:
            stats = evaluation.texture_stats(mission.image, semantic,
                                             spectrum_tile=grid.tile_size)
            texture = {
                name: {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                       for k, v in entry.items()}
                for name, entry in stats.items()
            }
    report = {
        "checkpoint_sha256": ckpt_hash,
        "config_sha256": config.hash(),
        "n_missions": ev["n_missions"],
        "seam_ratio_median": statistics.median(ratios),
        "seam_ratio_ablated_median": statistics.median(ablated_ratios),
        "seam_ratios": ratios,
        "seam_ratios_ablated": ablated_ratios,
        "texture": texture,
    }
    if atr:
        atr_config = evaluation.AtrConfig(
            terrain=terrain, tile_size=grid.tile_size,
            snippet_width=grid.snippet_width,
            train_tiles=ev["atr_train_tiles"], test_tiles=ev["atr_test_tiles"],
            seed=ev["atr_seed"])
        atr_report = evaluation.atr_experiment(atr_config, models)
        report["atr"] = {"scores": atr_report.scores, "seed": atr_report.seed,
                         "sizes": atr_report.sizes, "digest": atr_report.digest}
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    click.echo(str(out))
    click.echo(f"seam_ratio_median {report['seam_ratio_median']:.4f} "
               f"(ablated {report['seam_ratio_ablated_median']:.4f})")


@main.command("benchmark")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--preset", type=str, default=None,
              help="Hardware preset (marinesonic, edgetech) or 'all'.")
@click.option("--n-tiles", type=int, default=None)
@click.option("--out", type=click.Path(), required=True,
              help="Report JSON path.")
@guarded
def cmd_benchmark(checkpoint, config_path, preset, n_tiles, out):
    """Measure generation throughput against hardware presets."""
    config = _load_config(config_path).with_overrides(
        benchmark={"preset": preset, "n_tiles": n_tiles})
    models, ckpt_hash = inference.load_models(checkpoint)
    b = config.data["benchmark"]
    g = config.data["grid"]
    if b["preset"] == "all":
        names = sorted(inference.HARDWARE_PRESETS)
    elif b["preset"] in inference.HARDWARE_PRESETS:
        names = [b["preset"]]
    else:
        raise ValidationError(
            f"unknown preset {b['preset']!r}; choose from "
            f"{sorted(inference.HARDWARE_PRESETS)} or 'all'"
        )
    reports = {}
    for name in names:
        reports[name] = inference.benchmark_throughput(
            models, b["n_tiles"], tile_size=g["tile_size"],
            snippet_width=g["snippet_width"], preset=name,
            acquisition_rate=b["acquisition_rate_rows_per_s"]).to_dict()
    report = {
        "checkpoint_sha256": ckpt_hash,
        "config_sha256": config.hash(),
        "presets": reports,
    }
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    click.echo(str(out))
    for name, rep in reports.items():
        click.echo(f"{name}: {rep['tiles_per_second']:.2f} tiles/s, "
                   f"{rep['acquisition_ratio']:.2f}x acquisition rate")


if __name__ == "__main__":
    main()
