"""Adversarial training loop.

The generator is trained against an L1 reconstruction term plus the averaged
adversarial terms of both discriminators; each generator update is preceded
by a configurable number of discriminator updates on freshly generated
samples. All randomness (batch order, noise) is derived statelessly from
(seed, epoch, step, phase), so runs are reproducible and resuming from an
epoch checkpoint continues the uninterrupted trajectory.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import seabed
from .errors import TrainingFault, ValidationError
from .grid import QUAD_SLOTS, TileGridSpec, extract_conditions
from .networks import (DiscriminatorConfig, GeneratorConfig, ModelSet,
                       assert_finite_parameters, build_models, condition_planes,
                       load_checkpoint, save_checkpoint, to_model)

METRICS_NAME = "metrics.jsonl"
TIMINGS_NAME = "timings.jsonl"
FINAL_CHECKPOINT = "checkpoint.ckpt"

LOSS_FORMS = ("standard", "literal")


@dataclass
class TrainingConfig:
    """Hyperparameters of the adversarial loop.

    loss_form selects how the "classify generated data" terms enter: the
    conventional log(1 - D) / non-saturating -log D ("standard"), or the
    additive 1 - log D variant ("literal"). The two differ by more than a
    constant on the discriminator side and are never silently interchanged.
    """

    epochs: int = 10
    batch_size: int = 3
    d1_updates_per_g: int = 3
    d2_updates_per_g: int = 1
    l1_weight: float = 1.0
    gan_weight: float = 0.5
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    loss_form: str = "standard"
    quad_slot: str = "bottom_right"
    condition_source: str = "real"
    prob_epsilon: float = 1e-7
    checkpoint_every: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "d1_updates_per_g", "d2_updates_per_g",
                     "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.l1_weight < 0 or self.gan_weight < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.loss_form not in LOSS_FORMS:
            raise ValidationError(f"loss_form must be one of {LOSS_FORMS}")
        if self.quad_slot not in QUAD_SLOTS:
            raise ValidationError(f"quad_slot must be one of {sorted(QUAD_SLOTS)}")
        if self.condition_source not in ("real", "generated"):
            raise ValidationError("condition_source must be 'real' or 'generated'")


@dataclass(eq=False)
class BatchSample:
    """One assembled training batch, in model-domain torch tensors.

    planes/noise/real_tile cover every element; the quad tensors cover the
    subset of elements whose tile sits at the configured quad slot of a full
    2x2 neighborhood, with quad_index mapping back into the batch.
    """

    planes: torch.Tensor
    noise: torch.Tensor
    real_tile: torch.Tensor
    quad_onehot: torch.Tensor
    quad_real: torch.Tensor
    quad_index: torch.Tensor
    slot_bounds: tuple
    size: int

    @property
    def has_quads(self):
        return self.quad_index.numel() > 0

    def generator_input(self):
        return torch.cat([self.planes, self.noise], dim=1)

    def with_noise(self, noise):
        self.noise = noise
        return self


def _one_hot_torch(labels, num_classes, dtype):
    flat = torch.as_tensor(labels, dtype=torch.long)
    planes = torch.nn.functional.one_hot(flat, num_classes)
    return planes.permute(2, 0, 1).to(dtype) if flat.ndim == 2 else (
        planes.permute(0, 3, 1, 2).to(dtype))


class TileDataset:
    """In-memory (image, semantic map) pairs partitioned on a fixed grid."""

    def __init__(self, images, label_maps, grid: TileGridSpec, num_classes):
        if len(images) != len(label_maps):
            raise ValidationError("images and label maps differ in count")
        if not images:
            raise ValidationError("dataset is empty")
        self.grid = grid
        self.num_classes = num_classes
        self.images = [np.asarray(img, dtype=np.float32) for img in images]
        self.labels = [np.asarray(lab) for lab in label_maps]
        for img, lab in zip(self.images, self.labels):
            if img.shape[:2] != (grid.image_height, grid.image_width):
                raise ValidationError(
                    f"image shape {img.shape[:2]} does not match grid "
                    f"{grid.image_height}x{grid.image_width}"
                )
            if lab.shape != img.shape[:2]:
                raise ValidationError("semantic map shape does not match image")

    def tile_grid(self, pair):
        img = self.images[pair]
        t = self.grid.tile_size
        return {
            (r, c): img[r * t:(r + 1) * t, c * t:(c + 1) * t]
            for r in range(self.grid.grid_rows) for c in range(self.grid.grid_cols)
        }

    def samples(self):
        for pair in range(len(self.images)):
            for r in range(self.grid.grid_rows):
                for c in range(self.grid.grid_cols):
                    yield (pair, r, c)


def sample_has_quad(sample, grid, quad_slot):
    _, r, c = sample
    dr, dc = QUAD_SLOTS[quad_slot]
    ar, ac = r - dr, c - dc
    return 0 <= ar < grid.grid_rows - 1 and 0 <= ac < grid.grid_cols - 1


def plan_batches(samples, grid, config, rng):
    """Partition a shuffled sample list into batches of batch_size.

    Each batch gets at least one quad-bearing sample while supply lasts, so
    the quad discriminator sees data on every step; leftover samples that do
    not fill a batch are dropped.
    """
    n_batches = len(samples) // config.batch_size
    if n_batches == 0:
        raise ValidationError(
            f"need at least {config.batch_size} samples, got {len(samples)}"
        )
    quad = [s for s in samples if sample_has_quad(s, grid, config.quad_slot)]
    rest = [s for s in samples if not sample_has_quad(s, grid, config.quad_slot)]
    rng.shuffle(quad)
    rng.shuffle(rest)
    batches = [[] for _ in range(n_batches)]
    seeded = min(n_batches, len(quad))
    for i in range(seeded):
        batches[i].append(quad[i])
    pool = quad[seeded:] + rest
    rng.shuffle(pool)
    it = iter(pool)
    for batch in batches:
        while len(batch) < config.batch_size:
            batch.append(next(it))
    return batches


def _noise_rng(config, epoch, step, phase):
    return np.random.default_rng(np.random.SeedSequence(
        [config.seed & 0xFFFFFFFF, epoch, step, phase, 0x5EED]))


def draw_noise(config, gen_config, batch_size, tile_size, epoch, step, phase, dtype):
    rng = _noise_rng(config, epoch, step, phase)
    noise = rng.standard_normal(
        (batch_size, gen_config.noise_channels, tile_size, tile_size))
    return torch.as_tensor(noise.astype(np.float32), dtype=dtype)


def assemble_batch(dataset, batch_samples, config, models, epoch=0, step=0):
    """Build the model-domain tensors for one batch of (pair, row, col) samples."""
    grid = dataset.grid
    gcfg = models.gen_config
    dtype = models.dtype
    t = grid.tile_size
    dr, dc = QUAD_SLOTS[config.quad_slot]
    planes, tiles, quad_oh, quad_img, quad_idx = [], [], [], [], []
    for i, (pair, r, c) in enumerate(batch_samples):
        tile_grid = dataset.tile_grid(pair)
        if config.condition_source == "generated":
            tile_grid = _generated_neighbor_grid(
                dataset, pair, r, c, config, models, epoch, step, tile_grid)
        cond = extract_conditions(tile_grid, r, c, grid)
        sem = dataset.labels[pair][r * t:(r + 1) * t, c * t:(c + 1) * t]
        planes.append(condition_planes(cond, sem, gcfg.num_classes))
        tiles.append(np.moveaxis(to_model(tile_grid[(r, c)]), 2, 0))
        if sample_has_quad((pair, r, c), grid, config.quad_slot):
            ar, ac = r - dr, c - dc
            img = dataset.images[pair]
            lab = dataset.labels[pair]
            r0, c0 = ar * t, ac * t
            quad_img.append(np.moveaxis(
                to_model(img[r0:r0 + 2 * t, c0:c0 + 2 * t]), 2, 0))
            quad_oh.append(lab[r0:r0 + 2 * t, c0:c0 + 2 * t])
            quad_idx.append(i)
    noise = draw_noise(config, gcfg, len(batch_samples), t, epoch, step, phase=0,
                       dtype=dtype)
    slot_bounds = (dr * t, (dr + 1) * t, dc * t, (dc + 1) * t)
    if quad_idx:
        quad_onehot = _one_hot_torch(np.stack(quad_oh), gcfg.num_classes, dtype)
        quad_real = torch.as_tensor(np.stack(quad_img), dtype=dtype)
        quad_index = torch.as_tensor(quad_idx, dtype=torch.long)
    else:
        size2 = 2 * t
        quad_onehot = torch.zeros((0, gcfg.num_classes, size2, size2), dtype=dtype)
        quad_real = torch.zeros((0, gcfg.image_channels, size2, size2), dtype=dtype)
        quad_index = torch.zeros((0,), dtype=torch.long)
    return BatchSample(
        planes=torch.as_tensor(np.stack(planes), dtype=dtype),
        noise=noise,
        real_tile=torch.as_tensor(np.stack(tiles), dtype=dtype),
        quad_onehot=quad_onehot,
        quad_real=quad_real,
        quad_index=quad_index,
        slot_bounds=slot_bounds,
        size=len(batch_samples),
    )


def _generated_neighbor_grid(dataset, pair, r, c, config, models, epoch, step,
                             tile_grid):
    """One-step approximation of generated neighbors for condition_source='generated'.

    The top/left neighbors of the sample tile are regenerated (conditioned on
    real data) and substituted into the tile grid before snippets are cut.
    """
    grid = dataset.grid
    t = grid.tile_size
    out = dict(tile_grid)
    rng = _noise_rng(config, epoch, step, phase=900 + r * grid.grid_cols + c)
    for nr, nc in ((r - 1, c), (r, c - 1)):
        if nr < 0 or nc < 0:
            continue
        cond = extract_conditions(tile_grid, nr, nc, grid)
        sem = dataset.labels[pair][nr * t:(nr + 1) * t, nc * t:(nc + 1) * t]
        planes = condition_planes(cond, sem, models.gen_config.num_classes)
        noise = rng.standard_normal((models.gen_config.noise_channels, t, t))
        x = np.concatenate([planes, noise.astype(np.float32)], axis=0)
        with torch.no_grad():
            fake = models.generator(
                torch.as_tensor(x, dtype=models.dtype).unsqueeze(0))
        out[(nr, nc)] = np.moveaxis((fake[0].numpy() + 1.0) / 2.0, 0, 2)
    return out


# ---------------------------------------------------------------------------
# Losses


def _log_probs(logits, eps):
    prob = torch.sigmoid(logits).clamp(eps, 1.0 - eps)
    return torch.log(prob), torch.log(1.0 - prob)


def _fooling_term(fake_logits, config):
    """Generator-side adversarial term:  drive D's verdict on fakes to 'real'."""
    log_p, _ = _log_probs(fake_logits, config.prob_epsilon)
    if config.loss_form == "standard":
        return -log_p.mean()
    return 1.0 - log_p.mean()


def _edited_quads(batch, fake):
    r0, r1, c0, c1 = batch.slot_bounds
    edited = batch.quad_real.clone()
    edited[:, :, r0:r1, c0:c1] = fake[batch.quad_index]
    return edited


def generator_loss(batch, models, config):
    """Composite generator loss: L1 + gan_weight * (adv1 + adv2).

    Returns (loss tensor, diagnostics dict with each term as a float).
    adv2 is averaged over the quad-bearing subset; it is 0 when the batch has
    no quads.
    """
    fake = models.generator(batch.generator_input())
    l1 = (batch.real_tile - fake).abs().mean()
    d1_logits = models.disc_tile(torch.cat([batch.planes, fake], dim=1))
    adv1 = _fooling_term(d1_logits, config)
    if batch.has_quads:
        edited = _edited_quads(batch, fake)
        d2_logits = models.disc_quad(torch.cat([batch.quad_onehot, edited], dim=1))
        adv2 = _fooling_term(d2_logits, config)
    else:
        adv2 = torch.zeros((), dtype=fake.dtype)
    total = config.l1_weight * l1 + config.gan_weight * (adv1 + adv2)
    if not torch.isfinite(total):
        raise TrainingFault(
            f"non-finite generator loss (l1={l1.item()}, adv1={adv1.item()}, "
            f"adv2={adv2.item()})"
        )
    diag = {"g_loss": total.item(), "l1": l1.item(), "adv1": adv1.item(),
            "adv2": adv2.item()}
    return total, diag


def _disc_loss(real_logits, fake_logits, config):
    log_real, _ = _log_probs(real_logits, config.prob_epsilon)
    log_fake, log_one_minus_fake = _log_probs(fake_logits, config.prob_epsilon)
    if config.loss_form == "standard":
        return -log_real.mean() - log_one_minus_fake.mean()
    return -log_real.mean() - (1.0 - log_fake.mean())


def discriminator_losses(batch, models, config):
    """Losses for both discriminators; generated tiles are detached from G.

    Returns (d1_loss, d2_loss); d2_loss is None when the batch has no quads.
    """
    with torch.no_grad():
        fake = models.generator(batch.generator_input())
    d1_real = models.disc_tile(torch.cat([batch.planes, batch.real_tile], dim=1))
    d1_fake = models.disc_tile(torch.cat([batch.planes, fake], dim=1))
    d1_loss = _disc_loss(d1_real, d1_fake, config)
    d2_loss = None
    if batch.has_quads:
        d2_real = models.disc_quad(
            torch.cat([batch.quad_onehot, batch.quad_real], dim=1))
        edited = _edited_quads(batch, fake)
        d2_fake = models.disc_quad(torch.cat([batch.quad_onehot, edited], dim=1))
        d2_loss = _disc_loss(d2_real, d2_fake, config)
    for name, loss in (("d1", d1_loss), ("d2", d2_loss)):
        if loss is not None and not torch.isfinite(loss):
            raise TrainingFault(f"non-finite {name} loss")
    return d1_loss, d2_loss


# ---------------------------------------------------------------------------
# Updates


def make_optimizers(models, config):
    """One Adam per network, so updates cannot leak across networks."""
    kwargs = {"lr": config.lr, "betas": (config.beta1, config.beta2)}
    return {name: torch.optim.Adam(net.parameters(), **kwargs)
            for name, net in models.nets().items()}


def _zero_grads(models):
    for _, net in models.nets().items():
        net.zero_grad(set_to_none=True)


def train_step(batch, models, config, optimizers, epoch=0, step=0):
    """One schedule round: D1 x d1_updates, D2 x d2_updates, then one G update.

    Every discriminator update redraws the batch noise, so D always sees
    freshly generated samples. Returns the per-term metrics of the round.
    """
    gcfg = models.gen_config
    t = batch.real_tile.shape[-1]
    metrics = {}
    phase = 0
    for _ in range(config.d1_updates_per_g):
        phase += 1
        batch.with_noise(draw_noise(config, gcfg, batch.size, t, epoch, step, phase,
                                    models.dtype))
        d1_loss, _ = discriminator_losses(batch, models, config)
        _zero_grads(models)
        d1_loss.backward()
        optimizers["d1"].step()
        models.d1_steps += 1
        metrics["d1_loss"] = d1_loss.item()
    for _ in range(config.d2_updates_per_g):
        phase += 1
        batch.with_noise(draw_noise(config, gcfg, batch.size, t, epoch, step, phase,
                                    models.dtype))
        if batch.has_quads:
            _, d2_loss = discriminator_losses(batch, models, config)
            _zero_grads(models)
            d2_loss.backward()
            optimizers["d2"].step()
            models.d2_steps += 1
            metrics["d2_loss"] = d2_loss.item()
    phase += 1
    batch.with_noise(draw_noise(config, gcfg, batch.size, t, epoch, step, phase,
                                models.dtype))
    g_total, diag = generator_loss(batch, models, config)
    _zero_grads(models)
    g_total.backward()
    optimizers["generator"].step()
    models.g_steps += 1
    metrics.update(diag)
    metrics.setdefault("d2_loss", float("nan"))
    try:
        assert_finite_parameters(models, f"after step {models.g_steps}")
    except TrainingFault as exc:
        raise TrainingFault(f"{exc} (epoch {epoch}, step {step})") from exc
    return metrics


# ---------------------------------------------------------------------------
# Full loop


def load_training_arrays(manifest):
    """Load every dataset pair into memory as (images, label_maps, class_names)."""
    if not isinstance(manifest, dict):
        manifest = seabed.load_manifest(manifest)
    images, labels = [], []
    for i in range(manifest["n_pairs"]):
        img, sem = seabed.load_pair(manifest, i)
        images.append(img)
        labels.append(sem.labels)
    return images, labels, tuple(manifest["class_names"])


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    models: ModelSet
    metrics: list = field(default_factory=list)


def _epoch_checkpoint_name(epoch):
    return f"checkpoint_epoch{epoch:04d}.ckpt"


def _restore_optimizers(models, optimizers, opt_state):
    for net_name, opt in optimizers.items():
        saved = opt_state.get(net_name, {})
        named = dict(models.nets()[net_name].named_parameters())
        for pname, entry in saved.items():
            param = named[pname]
            opt.state[param] = {
                "step": torch.tensor(float(entry["step"])),
                "exp_avg": torch.as_tensor(entry["exp_avg"].copy(), dtype=param.dtype),
                "exp_avg_sq": torch.as_tensor(entry["exp_avg_sq"].copy(),
                                              dtype=param.dtype),
            }


def train_models(images, label_maps, config, grid, gen_config=None, d1_config=None,
                 d2_config=None, out_dir=None, resume=False, config_hash=None,
                 progress=None):
    """Run the full training loop over in-memory pairs.

    Writes per-step metrics (deterministic fields) and wall-clock timings as
    separate JSONL files plus per-epoch checkpoints when out_dir is given.
    Resuming picks up from the newest epoch checkpoint and reproduces the
    uninterrupted run (same batch order and noise, derived statelessly).
    """
    gen_config = gen_config or GeneratorConfig()
    d1_config = d1_config or DiscriminatorConfig()
    d2_config = d2_config or d1_config
    num_classes = gen_config.num_classes
    dataset = TileDataset(images, label_maps, grid, num_classes)
    samples = list(dataset.samples())

    out_dir = Path(out_dir) if out_dir is not None else None
    start_epoch = 0
    opt_state = None
    models = None
    if resume and out_dir is not None and out_dir.exists():
        previous = sorted(out_dir.glob("checkpoint_epoch*.ckpt"))
        if previous:
            models, opt_state = load_checkpoint(previous[-1])
            start_epoch = int(previous[-1].stem.replace("checkpoint_epoch", "")) + 1
    if models is None:
        models = build_models(gen_config, d1_config, d2_config, seed=config.seed)
    models.train()
    optimizers = make_optimizers(models, config)
    if opt_state:
        _restore_optimizers(models, optimizers, opt_state)

    metrics_rows = []
    metrics_fh = timings_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if start_epoch > 0 else "w"
        metrics_fh = open(out_dir / METRICS_NAME, mode, encoding="utf-8")
        timings_fh = open(out_dir / TIMINGS_NAME, mode, encoding="utf-8")
    extra = {"config_hash": config_hash} if config_hash else None

    try:
        for epoch in range(start_epoch, config.epochs):
            rng = np.random.default_rng(np.random.SeedSequence(
                [config.seed & 0xFFFFFFFF, epoch, 0xB47C4]))
            batches = plan_batches(samples, grid, config, rng)
            for step, batch_samples in enumerate(batches):
                started = time.perf_counter()
                batch = assemble_batch(dataset, batch_samples, config, models,
                                       epoch=epoch, step=step)
                metrics = train_step(batch, models, config, optimizers,
                                     epoch=epoch, step=step)
                wall_ms = (time.perf_counter() - started) * 1000.0
                row = {
                    "step": models.g_steps,
                    "epoch": epoch,
                    "g_loss": metrics["g_loss"],
                    "l1": metrics["l1"],
                    "adv1": metrics["adv1"],
                    "adv2": metrics["adv2"],
                    "d1_loss": metrics["d1_loss"],
                    "d2_loss": metrics["d2_loss"],
                }
                metrics_rows.append(row)
                if metrics_fh:
                    metrics_fh.write(json.dumps(row, sort_keys=True) + "\n")
                    timings_fh.write(json.dumps(
                        {"step": models.g_steps, "wall_ms": wall_ms}) + "\n")
                if progress:
                    progress(epoch, step, row)
            if out_dir is not None and (
                    (epoch + 1) % config.checkpoint_every == 0
                    or epoch == config.epochs - 1):
                save_checkpoint(out_dir / _epoch_checkpoint_name(epoch), models,
                                optimizers=optimizers, extra=extra)
            if metrics_fh:
                metrics_fh.flush()
                timings_fh.flush()
    finally:
        if metrics_fh:
            metrics_fh.close()
            timings_fh.close()

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = out_dir / FINAL_CHECKPOINT
        save_checkpoint(checkpoint_path, models, optimizers=optimizers, extra=extra)
    models.eval()
    return TrainResult(
        checkpoint_path=checkpoint_path,
        metrics_path=(out_dir / METRICS_NAME) if out_dir is not None else None,
        models=models,
        metrics=metrics_rows,
    )


def train(manifest, config, out_dir, grid=None, tile_size=64, snippet_width=0,
          gen_config=None, d1_config=None, d2_config=None, resume=False,
          config_hash=None, progress=None):
    """Train from a dataset manifest; see train_models for the loop contract."""
    if not isinstance(manifest, dict):
        manifest = seabed.load_manifest(manifest)
    images, label_maps, class_names = load_training_arrays(manifest)
    if grid is None:
        grid = TileGridSpec.for_image(manifest["height"], manifest["width"],
                                      tile_size, snippet_width)
    if gen_config is None:
        gen_config = GeneratorConfig(num_classes=len(class_names))
    elif gen_config.num_classes != len(class_names):
        raise ValidationError(
            f"generator expects {gen_config.num_classes} classes, dataset has "
            f"{len(class_names)}"
        )
    return train_models(images, label_maps, config, grid, gen_config=gen_config,
                        d1_config=d1_config, d2_config=d2_config, out_dir=out_dir,
                        resume=resume, config_hash=config_hash, progress=progress)
