"""Procedural seabed data generator.

Produces paired (semantic map, sonar-like image) data deterministically from
seeds: smoothed random terrain partitions, and a multiplicative intensity
model per pixel (class reflectivity x ripple sinusoid x speckle x
across-track decay), plus highlight/shadow target insertion that mimics
side-scan geometry. Doubles as the ground-truth distribution that training
and all quantitative checks run against.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError
from .grid import SemanticMap
from .validation import as_image, check_in_unit_interval, check_positive

MANIFEST_NAME = "manifest.json"
SHADOW_GAIN = 0.15
HIGHLIGHT_LEVEL = 0.95
DEFAULT_SHADOW_FACTOR = 2.5

# Default target footprints (pixel half-axes / radii at scale 1.0).
CYLINDER_SEMI_AXES = (3.0, 8.0)   # across-track, along-track
TYRE_RADII = (4.0, 7.0)           # inner, outer


@dataclass(frozen=True)
class ClassParams:
    """Texture parameters for one terrain class.

    reflectivity and speckle_strength lie in [0, 1]; ripple_wavelength is in
    pixels (>= 2); attenuation is the per-pixel exponential decay rate along
    the across-track (column) axis.
    """

    reflectivity: float
    ripple_wavelength: float = 16.0
    ripple_orientation: float = 0.0
    ripple_amplitude: float = 0.0
    speckle_strength: float = 0.15
    shadow_length: float = DEFAULT_SHADOW_FACTOR
    attenuation: float = 0.0008

    def __post_init__(self):
        check_in_unit_interval(self.reflectivity, "reflectivity")
        check_in_unit_interval(self.speckle_strength, "speckle_strength")
        check_in_unit_interval(self.ripple_amplitude, "ripple_amplitude")
        if self.ripple_wavelength < 2:
            raise ValidationError(
                f"ripple_wavelength must be >= 2 pixels, got {self.ripple_wavelength}"
            )
        if self.shadow_length < 0 or self.attenuation < 0:
            raise ValidationError("shadow_length and attenuation must be non-negative")


@dataclass
class TerrainParams:
    """Full class set plus the region-partition controls."""

    classes: dict = field(default_factory=dict)
    object_class: str = "object"
    region_smoothness: float = 24.0
    min_region_area: int = 64

    def __post_init__(self):
        if not self.classes:
            self.classes = dict(default_terrain_params().classes)
        # Canonical name order: label indices must not depend on dict
        # insertion order, or serialization round trips re-encode maps.
        self.classes = dict(sorted(self.classes.items()))
        check_positive(self.region_smoothness, "region_smoothness")
        if self.min_region_area < 1:
            raise ValidationError("min_region_area must be >= 1")
        if self.object_class not in self.classes:
            raise ValidationError(f"object_class {self.object_class!r} missing from classes")

    @property
    def class_names(self):
        return tuple(self.classes)

    @property
    def terrain_class_names(self):
        """Classes eligible for random terrain sampling (everything but objects)."""
        return tuple(n for n in self.classes if n != self.object_class)

    def to_dict(self):
        return {
            "classes": {name: asdict(cp) for name, cp in self.classes.items()},
            "object_class": self.object_class,
            "region_smoothness": self.region_smoothness,
            "min_region_area": self.min_region_area,
        }

    @classmethod
    def from_dict(cls, data):
        classes = {name: ClassParams(**cp) for name, cp in data["classes"].items()}
        return cls(
            classes=classes,
            object_class=data.get("object_class", "object"),
            region_smoothness=data.get("region_smoothness", 24.0),
            min_region_area=data.get("min_region_area", 64),
        )

    def hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def default_terrain_params():
    """Four-class seabed: flat sand, sand ripples, rock, and target objects."""
    return TerrainParams(classes={
        "flat_sand": ClassParams(reflectivity=0.55, ripple_amplitude=0.0,
                                 speckle_strength=0.15),
        "ripples": ClassParams(reflectivity=0.60, ripple_wavelength=16.0,
                               ripple_orientation=0.5, ripple_amplitude=0.5,
                               speckle_strength=0.12),
        "rock": ClassParams(reflectivity=0.75, ripple_wavelength=7.0,
                            ripple_orientation=2.2, ripple_amplitude=0.25,
                            speckle_strength=0.25),
        "object": ClassParams(reflectivity=HIGHLIGHT_LEVEL, ripple_amplitude=0.0,
                              speckle_strength=0.05, shadow_length=DEFAULT_SHADOW_FACTOR),
    })


def _absorb_small_regions(labels, min_area, max_rounds=8):
    """Merge connected components smaller than min_area into their surroundings."""
    structure = np.ones((3, 3), dtype=bool)
    for _ in range(max_rounds):
        changed = False
        for value in np.unique(labels):
            comp, n = ndimage.label(labels == value, structure=structure)
            if n == 0:
                continue
            areas = np.bincount(comp.ravel())
            for comp_id in np.nonzero(areas[1:] < min_area)[0] + 1:
                mask = comp == comp_id
                ring = ndimage.binary_dilation(mask, structure) & ~mask
                if not ring.any():
                    continue
                vals, counts = np.unique(labels[ring], return_counts=True)
                labels[mask] = vals[np.argmax(counts)]
                changed = True
        if not changed:
            break
    return labels


def sample_semantic_map(seed, height, width, params):
    """Draw a smoothed random terrain partition.

    Each terrain class gets an independent Gaussian-smoothed noise field; the
    per-pixel argmax yields contiguous regions, and components below
    params.min_region_area are absorbed into their neighbors. Deterministic
    given the seed.
    """
    check_positive(height, "height")
    check_positive(width, "width")
    rng = np.random.default_rng(seed)
    names = params.terrain_class_names
    if not names:
        raise ValidationError("no terrain classes to sample")
    all_names = params.class_names
    if len(names) == 1:
        labels = np.full((height, width), all_names.index(names[0]), dtype=np.int64)
        return SemanticMap(labels=labels, class_names=all_names)
    fields = rng.standard_normal((len(names), height, width))
    for k in range(len(names)):
        fields[k] = ndimage.gaussian_filter(fields[k], sigma=params.region_smoothness,
                                            mode="reflect")
    winner = np.argmax(fields, axis=0)
    winner = _absorb_small_regions(winner, params.min_region_area)
    lookup = np.array([all_names.index(n) for n in names], dtype=np.int64)
    return SemanticMap(labels=lookup[winner], class_names=all_names)


def _per_pixel(values, labels):
    return np.asarray(values, dtype=np.float64)[labels]


def _shadow_mask(object_mask, shadow_factor):
    """Across-track shadow streaks cast by object regions.

    The streak extends from each region's far (max-column) edge away from the
    near edge, with length proportional to the region's across-track extent.
    """
    structure = np.ones((3, 3), dtype=bool)
    comp, n = ndimage.label(object_mask, structure=structure)
    shadow = np.zeros_like(object_mask, dtype=bool)
    width = object_mask.shape[1]
    for comp_id in range(1, n + 1):
        rows, cols = np.nonzero(comp == comp_id)
        extent = cols.max() - cols.min() + 1
        length = max(1, int(round(shadow_factor * extent)))
        for r in np.unique(rows):
            cmax = cols[rows == r].max()
            shadow[r, cmax + 1:min(width, cmax + 1 + length)] = True
    shadow &= ~object_mask
    return shadow


def render_seabed(semantic_map, seed, params):
    """Render a sonar-like intensity image for a semantic map.

    Per-pixel intensity is the product of class reflectivity, a ripple
    sinusoid along the class orientation, multiplicative speckle with unit
    mean, and exponential across-track decay; object-class pixels additionally
    cast a dark shadow streak. Output is (H, W, 1) float32 in [0, 1],
    deterministic given (map, seed).
    """
    labels = semantic_map.labels
    names = semantic_map.class_names
    missing = [n for n in names if n not in params.classes]
    if missing:
        raise ValidationError(f"map classes {missing} missing from terrain params")
    cps = [params.classes[n] for n in names]
    height, width = labels.shape
    cols = np.arange(width, dtype=np.float64)[np.newaxis, :]
    rows = np.arange(height, dtype=np.float64)[:, np.newaxis]

    refl = _per_pixel([cp.reflectivity for cp in cps], labels)
    amp = _per_pixel([cp.ripple_amplitude for cp in cps], labels)
    wav = _per_pixel([cp.ripple_wavelength for cp in cps], labels)
    orient = _per_pixel([cp.ripple_orientation for cp in cps], labels)
    sigma = _per_pixel([cp.speckle_strength for cp in cps], labels)
    atten = _per_pixel([cp.attenuation for cp in cps], labels)

    phase = 2.0 * np.pi * (cols * np.cos(orient) + rows * np.sin(orient)) / wav
    ripple = np.clip(1.0 + amp * np.sin(phase), 0.0, None)

    rng = np.random.default_rng(seed)
    looks = 1.0 / np.square(np.clip(sigma, 1e-4, None))
    speckle = rng.gamma(shape=looks, scale=1.0 / looks)
    speckle = np.where(sigma > 0, speckle, 1.0)

    decay = np.exp(-atten * cols)

    intensity = refl * ripple * speckle * decay

    if params.object_class in names:
        object_mask = labels == names.index(params.object_class)
        if object_mask.any():
            factor = params.classes[params.object_class].shadow_length
            intensity[_shadow_mask(object_mask, factor)] *= SHADOW_GAIN

    return np.clip(intensity, 0.0, 1.0).astype(np.float32)[:, :, np.newaxis]


def _target_mask(position, target_kind, scale, shape):
    row0, col0 = position
    yy, xx = np.ogrid[:shape[0], :shape[1]]
    if target_kind == "cylinder":
        a, b = (s * scale for s in CYLINDER_SEMI_AXES)
        return ((xx - col0) / a) ** 2 + ((yy - row0) / b) ** 2 <= 1.0
    if target_kind == "tyre":
        inner, outer = (r * scale for r in TYRE_RADII)
        rsq = (xx - col0) ** 2 + (yy - row0) ** 2
        return (rsq <= outer ** 2) & (rsq >= inner ** 2)
    raise ValidationError(f"unknown target kind {target_kind!r}")


def embed_target(image, semantic_map, position, target_kind, scale=1.0):
    """Insert a bright target and its across-track shadow.

    Draws a filled ellipse (cylinder) or annulus (tyre) highlight centered at
    position=(row, col), darkens the shadow streak behind it, and relabels
    the covered pixels with the object class. Returns new (image, map); the
    inputs are unmodified.
    """
    image = as_image(image)
    height, width = image.shape[:2]
    mask = _target_mask(position, target_kind, scale, (height, width))
    if not mask.any():
        raise ValidationError(f"target at {position} lies outside the image")
    rows, cols = np.nonzero(mask)
    extent = cols.max() - cols.min() + 1
    shadow_reach = cols.max() + max(1, int(round(DEFAULT_SHADOW_FACTOR * extent)))
    if (rows.min() == 0 or rows.max() == height - 1 or cols.min() == 0
            or shadow_reach >= width):
        raise ValidationError(
            f"target at {position} does not fit with its shadow inside "
            f"{height}x{width}"
        )
    out = np.array(image, copy=True)
    out[mask] = HIGHLIGHT_LEVEL
    out[_shadow_mask(mask, DEFAULT_SHADOW_FACTOR)] *= SHADOW_GAIN

    labels = np.array(semantic_map.labels, copy=True)
    labels[mask] = semantic_map.class_index("object")
    return out, SemanticMap(labels=labels, class_names=semantic_map.class_names)


def _pair_seed(master_seed, index):
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _render_pair(pair_seed, height, width, params):
    sem = sample_semantic_map(np.random.SeedSequence([pair_seed, 0]), height, width, params)
    img = render_seabed(sem, np.random.SeedSequence([pair_seed, 1]), params)
    return sem, img


def save_image(path, image):
    """Write a [0, 1] float image as 8-bit grayscale PNG."""
    image = as_image(image)
    if image.shape[2] != 1:
        raise ValidationError("only single-channel images are written as grayscale")
    data = np.round(np.clip(image[:, :, 0], 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_image(path):
    """Read an 8-bit grayscale PNG back to (H, W, 1) float32 in [0, 1]."""
    data = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return data[:, :, np.newaxis]


def save_labels(path, labels):
    arr = np.asarray(labels)
    if arr.max(initial=0) > 255:
        raise ValidationError("label values exceed 8-bit range")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")


def load_labels(path):
    return np.asarray(Image.open(path), dtype=np.int64)


def make_dataset(seed, n_pairs, dims, params, out_dir, config_hash=None):
    """Generate n_pairs (semantic map, image) files plus a manifest.

    Per-pair seeds are derived independently from (seed, index), so pairs can
    be produced in any order or in parallel with identical results; the
    manifest alone suffices to regenerate every file bit-identically.
    Returns the manifest path.
    """
    if n_pairs < 1:
        raise ValidationError("n_pairs must be >= 1")
    height, width = dims
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    pairs = []
    for i in range(n_pairs):
        pair_seed = _pair_seed(seed, i)
        sem, img = _render_pair(pair_seed, height, width, params)
        map_name = f"pair{i:04d}_map.png"
        img_name = f"pair{i:04d}_img.png"
        save_labels(out_dir / map_name, sem.labels)
        save_image(out_dir / img_name, img)
        pairs.append({"index": i, "seed": pair_seed, "map": map_name, "image": img_name})
    manifest = {
        "format": "sonargen-dataset",
        "version": 1,
        "seed": seed,
        "n_pairs": n_pairs,
        "height": height,
        "width": width,
        "class_names": list(params.class_names),
        "params": params.to_dict(),
        "params_hash": params.hash(),
        "pairs": pairs,
    }
    if config_hash is not None:
        manifest["config_hash"] = config_hash
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != "sonargen-dataset":
        raise ValidationError(f"{path} is not a dataset manifest")
    manifest["_dir"] = str(path.parent)
    return manifest


def load_pair(manifest, index):
    """Load pair `index` as (image float32 [0,1], SemanticMap)."""
    base = Path(manifest["_dir"])
    entry = manifest["pairs"][index]
    image = load_image(base / entry["image"])
    labels = load_labels(base / entry["map"])
    return image, SemanticMap(labels=labels, class_names=tuple(manifest["class_names"]))


def regenerate_dataset(manifest, out_dir):
    """Re-render every file recorded in a manifest into out_dir, bit-exactly."""
    params = TerrainParams.from_dict(manifest["params"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest["pairs"]:
        sem, img = _render_pair(entry["seed"], manifest["height"], manifest["width"], params)
        save_labels(out_dir / entry["map"], sem.labels)
        save_image(out_dir / entry["image"], img)
    copy = {k: v for k, v in manifest.items() if not k.startswith("_")}
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(copy, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir
