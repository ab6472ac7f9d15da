"""Declarative run configuration.

One YAML document drives every command; sections mirror the dataclasses they
configure. Unknown keys are rejected, omitted keys take recorded defaults,
and the canonical serialization (sorted keys) is hashed so every artifact can
record exactly which configuration produced it.
"""

import copy
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .errors import ValidationError
from .grid import TileGridSpec
from .networks import DiscriminatorConfig, GeneratorConfig
from .seabed import ClassParams, TerrainParams, default_terrain_params
from .training import TrainingConfig

_CLASS_FIELD_NAMES = tuple(f.name for f in fields(ClassParams))


def _default_tree():
    terrain = default_terrain_params()
    return {
        "dataset": {
            "seed": 0,
            "n_pairs": 200,
            "height": 256,
            "width": 256,
        },
        "grid": {
            "tile_size": 64,
            "snippet_width": 0,
            "channels": 1,
        },
        "terrain": terrain.to_dict(),
        "generator": {
            "base_width": 64,
            "resnet_blocks": 9,
            "n_downsample": 2,
            "stem_kernel": 7,
            "noise_channels": 1,
        },
        "discriminator": {
            "d1": {"levels": 3, "base_width": 64, "kernel_size": 4},
            "d2": {"levels": 3, "base_width": 64, "kernel_size": 4},
        },
        "training": {
            "epochs": 10,
            "batch_size": 3,
            "d1_updates_per_g": 3,
            "d2_updates_per_g": 1,
            "l1_weight": 1.0,
            "gan_weight": 0.5,
            "lr": 2e-4,
            "beta1": 0.5,
            "beta2": 0.999,
            "seed": 0,
            "loss_form": "standard",
            "quad_slot": "bottom_right",
            "condition_source": "real",
            "prob_epsilon": 1e-7,
            "checkpoint_every": 1,
        },
        "mission": {
            "seed": 0,
            "grid_rows": 4,
            "grid_cols": 4,
            "scheduler": "sequential",
            "workers": 1,
        },
        "evaluate": {
            "n_missions": 10,
            "seam_seed": 0,
            "atr_train_tiles": 144,
            "atr_test_tiles": 144,
            "atr_seed": 0,
        },
        "benchmark": {
            "preset": "marinesonic",
            "n_tiles": 12,
            "acquisition_rate_rows_per_s": 10.0,
        },
    }


def _check_keys(data, template, path):
    if not isinstance(data, dict):
        raise ValidationError(f"config section {path or '<root>'} must be a mapping")
    for key, value in data.items():
        if key not in template:
            raise ValidationError(
                f"unknown config key {path + key!r}; known keys here: "
                f"{sorted(template)}"
            )
        if isinstance(template[key], dict):
            _check_keys(value, template[key], path + key + ".")


def _validate_terrain(data):
    allowed = {"classes", "object_class", "region_smoothness", "min_region_area"}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(
            f"unknown terrain key(s) {sorted(unknown)}; known: {sorted(allowed)}")
    for name, params in data.get("classes", {}).items():
        if not isinstance(params, dict):
            raise ValidationError(f"terrain class {name!r} must be a mapping")
        bad = set(params) - set(_CLASS_FIELD_NAMES)
        if bad:
            raise ValidationError(
                f"unknown field(s) {sorted(bad)} in terrain class {name!r}; "
                f"known: {sorted(_CLASS_FIELD_NAMES)}"
            )


def _merge(defaults, override):
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A fully resolved configuration tree with typed accessors."""

    data: dict

    @classmethod
    def default(cls):
        return cls(data=_default_tree())

    @classmethod
    def from_dict(cls, overrides):
        overrides = overrides or {}
        template = _default_tree()
        terrain_override = overrides.get("terrain")
        if terrain_override is not None:
            _validate_terrain(terrain_override)
        rest = {k: v for k, v in overrides.items() if k != "terrain"}
        _check_keys(rest, template, "")
        merged = _merge(template, rest)
        if terrain_override is not None:
            # A user-supplied class set replaces the default wholesale; merging
            # class dicts would silently keep default classes around.
            if "classes" in terrain_override:
                merged["terrain"]["classes"] = copy.deepcopy(
                    terrain_override["classes"])
            for key in ("object_class", "region_smoothness", "min_region_area"):
                if key in terrain_override:
                    merged["terrain"][key] = terrain_override[key]
        cfg = cls(data=merged)
        cfg.terrain_params()  # fail fast on bad class parameters
        return cfg

    @classmethod
    def from_yaml(cls, text):
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file {path} does not exist")
        return cls.from_yaml(path.read_text(encoding="utf-8"))

    def to_dict(self):
        return copy.deepcopy(self.data)

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True)

    def hash(self):
        return hashlib.sha256(self.to_yaml().encode("utf-8")).hexdigest()

    def with_overrides(self, **sections):
        """New config with per-section key overrides; None values are skipped."""
        data = self.to_dict()
        for section, kv in sections.items():
            if section not in data:
                raise ValidationError(f"unknown config section {section!r}")
            for key, value in kv.items():
                if value is None:
                    continue
                if key not in data[section]:
                    raise ValidationError(
                        f"unknown config key {section}.{key}")
                data[section][key] = value
        return RunConfig.from_dict(data)

    # -- typed accessors ---------------------------------------------------

    def terrain_params(self):
        return TerrainParams.from_dict(self.data["terrain"])

    def num_classes(self):
        return len(self.data["terrain"]["classes"])

    def grid(self, grid_rows=None, grid_cols=None):
        g = self.data["grid"]
        m = self.data["mission"]
        return TileGridSpec(
            tile_size=g["tile_size"],
            grid_rows=grid_rows if grid_rows is not None else m["grid_rows"],
            grid_cols=grid_cols if grid_cols is not None else m["grid_cols"],
            snippet_width=g["snippet_width"],
            channels=g["channels"],
        )

    def dataset_grid(self):
        d = self.data["dataset"]
        g = self.data["grid"]
        return TileGridSpec.for_image(d["height"], d["width"], g["tile_size"],
                                      g["snippet_width"], g["channels"])

    def generator_config(self):
        g = self.data["generator"]
        return GeneratorConfig(
            num_classes=self.num_classes(),
            image_channels=self.data["grid"]["channels"],
            base_width=g["base_width"],
            resnet_blocks=g["resnet_blocks"],
            n_downsample=g["n_downsample"],
            stem_kernel=g["stem_kernel"],
            noise_channels=g["noise_channels"],
        )

    def discriminator_config(self, which):
        d = self.data["discriminator"][which]
        return DiscriminatorConfig(levels=d["levels"], base_width=d["base_width"],
                                   kernel_size=d["kernel_size"])

    def training_config(self):
        return TrainingConfig(**self.data["training"])
