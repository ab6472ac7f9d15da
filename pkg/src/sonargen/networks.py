"""Generator and discriminator networks plus the checkpoint container.

Three fully-convolutional models: a resnet-style tile generator conditioned
on semantic labels, neighbor snippets, across-track position, and spatial
noise; a tile-level patch discriminator fed the same conditions; and a
quad-level patch discriminator that judges 2x2-tile blocks for coherence.

Tiles travel through the networks in [-1, 1] ("model domain"); the public
forward helpers accept and emit image-domain [0, 1] arrays where noted.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import TrainingFault, ValidationError
from .validation import as_image

CHECKPOINT_MAGIC = b"SGCKPT01"


def to_unit(model_domain):
    """Map [-1, 1] model-domain values to [0, 1] image domain."""
    return np.clip((np.asarray(model_domain) + 1.0) / 2.0, 0.0, 1.0)


def to_model(unit):
    """Map [0, 1] image-domain values to [-1, 1] model domain."""
    return np.asarray(unit) * 2.0 - 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture of the tile generator.

    The input stack is: one-hot semantic labels (num_classes), across-track
    position (1), snippet validity flags (2), the two neighbor snippets
    projected onto zero-padded full-tile canvases (2 * image_channels), and
    spatial noise (noise_channels).
    """

    num_classes: int = 4
    image_channels: int = 1
    base_width: int = 64
    resnet_blocks: int = 9
    n_downsample: int = 2
    stem_kernel: int = 7
    noise_channels: int = 1

    def __post_init__(self):
        if self.resnet_blocks < 1:
            raise ValidationError("resnet_blocks must be >= 1")
        if self.base_width < 4:
            raise ValidationError("base_width must be >= 4")
        if self.num_classes < 1 or self.image_channels < 1 or self.noise_channels < 1:
            raise ValidationError("channel counts must be >= 1")
        if self.n_downsample < 0:
            raise ValidationError("n_downsample must be >= 0")
        if self.stem_kernel % 2 != 1:
            raise ValidationError("stem_kernel must be odd")

    @property
    def condition_channels(self):
        return self.num_classes + 3 + 2 * self.image_channels

    @property
    def input_channels(self):
        return self.condition_channels + self.noise_channels


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Architecture of a patch discriminator: stride-2 stages then a logit head."""

    levels: int = 3
    base_width: int = 64
    kernel_size: int = 4

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if self.base_width < 4:
            raise ValidationError("base_width must be >= 4")
        if self.kernel_size not in (1, 3, 4):
            raise ValidationError("kernel_size must be 1, 3, or 4")


class ResnetBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, kernel_size=3),
            nn.InstanceNorm2d(width),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, kernel_size=3),
            nn.InstanceNorm2d(width),
        )

    def forward(self, x):
        return x + self.block(x)


class TileGenerator(nn.Module):
    """Resnet generator; fully convolutional, so tile size is free at call time."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        pad = (config.stem_kernel - 1) // 2
        layers = [
            nn.ReflectionPad2d(pad),
            nn.Conv2d(config.input_channels, w, kernel_size=config.stem_kernel),
            nn.InstanceNorm2d(w),
            nn.ReLU(True),
        ]
        for i in range(config.n_downsample):
            layers += [
                nn.Conv2d(w * 2 ** i, w * 2 ** (i + 1), kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(w * 2 ** (i + 1)),
                nn.ReLU(True),
            ]
        inner = w * 2 ** config.n_downsample
        layers += [ResnetBlock(inner) for _ in range(config.resnet_blocks)]
        for i in reversed(range(config.n_downsample)):
            layers += [
                nn.ConvTranspose2d(w * 2 ** (i + 1), w * 2 ** i, kernel_size=3, stride=2,
                                   padding=1, output_padding=1),
                nn.InstanceNorm2d(w * 2 ** i),
                nn.ReLU(True),
            ]
        layers += [
            nn.ReflectionPad2d(pad),
            nn.Conv2d(w, config.image_channels, kernel_size=config.stem_kernel),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """Downsampling stages ending in a 1-channel patch logit map.

    Each stage halves the spatial size exactly, so a T-pixel input with
    `levels` stages yields a (T / 2**levels) score grid.
    """

    def __init__(self, config: DiscriminatorConfig, in_channels):
        super().__init__()
        self.config = config
        k = config.kernel_size
        pad = 1 if k >= 3 else 0
        w = config.base_width
        layers = [
            nn.Conv2d(in_channels, w, kernel_size=k, stride=2, padding=pad),
            nn.LeakyReLU(0.2, True),
        ]
        mult = 1
        for n in range(1, config.levels):
            prev, mult = mult, min(2 ** n, 8)
            layers += [
                nn.Conv2d(w * prev, w * mult, kernel_size=k, stride=2, padding=pad),
                nn.InstanceNorm2d(w * mult),
                nn.LeakyReLU(0.2, True),
            ]
        layers += [nn.Conv2d(w * mult, 1, kernel_size=3, stride=1, padding=1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


@dataclass(eq=False)
class ModelSet:
    """The three networks plus configs, step counters, and the init seed."""

    generator: TileGenerator
    disc_tile: PatchDiscriminator
    disc_quad: PatchDiscriminator
    gen_config: GeneratorConfig
    d1_config: DiscriminatorConfig
    d2_config: DiscriminatorConfig
    seed: int = 0
    g_steps: int = 0
    d1_steps: int = 0
    d2_steps: int = 0

    @property
    def dtype(self):
        return next(self.generator.parameters()).dtype

    def nets(self):
        return {"generator": self.generator, "d1": self.disc_tile, "d2": self.disc_quad}

    def named_parameters(self):
        for prefix, net in self.nets().items():
            for name, param in net.named_parameters():
                yield f"{prefix}.{name}", param

    def eval(self):
        for net in self.nets().values():
            net.eval()
        return self

    def train(self):
        for net in self.nets().values():
            net.train()
        return self


def d1_input_channels(gen_config):
    return gen_config.condition_channels + gen_config.image_channels


def d2_input_channels(gen_config):
    return gen_config.num_classes + gen_config.image_channels


def _init_weights(net):
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(module.weight, 0.0, 0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)


def build_models(gen_config=None, d1_config=None, d2_config=None, seed=0,
                 dtype=torch.float32):
    """Construct and deterministically initialize all three networks."""
    gen_config = gen_config or GeneratorConfig()
    d1_config = d1_config or DiscriminatorConfig()
    d2_config = d2_config or d1_config
    torch.manual_seed(seed)
    generator = TileGenerator(gen_config)
    disc_tile = PatchDiscriminator(d1_config, d1_input_channels(gen_config))
    disc_quad = PatchDiscriminator(d2_config, d2_input_channels(gen_config))
    for net in (generator, disc_tile, disc_quad):
        _init_weights(net)
        net.to(dtype)
    return ModelSet(generator=generator, disc_tile=disc_tile, disc_quad=disc_quad,
                    gen_config=gen_config, d1_config=d1_config, d2_config=d2_config,
                    seed=seed)


def count_parameters(models):
    return sum(p.numel() for _, p in models.named_parameters())


def assert_finite_parameters(models, context=""):
    for name, param in models.named_parameters():
        if not torch.isfinite(param).all():
            raise TrainingFault(f"non-finite parameter {name}{' ' + context if context else ''}")


# ---------------------------------------------------------------------------
# Input packing


def one_hot_labels(labels, num_classes, dtype=np.float32):
    """(H, W) int labels to (num_classes, H, W) one-hot planes."""
    labels = np.asarray(labels)
    planes = np.zeros((num_classes,) + labels.shape, dtype=dtype)
    for k in range(num_classes):
        planes[k] = labels == k
    return planes


def condition_planes(cond, semantic_tile, num_classes):
    """Stack the shared condition channels for one tile as (K+3+2C, T, T).

    Layout: one-hot semantic, across-track position, the two validity flags
    as constant planes, then the c1/c2 snippet canvases. Snippet pixels are
    mapped to model domain; canvas cells without snippet data stay 0.
    """
    s1 = np.asarray(cond.c1, dtype=np.float32)
    s2 = np.asarray(cond.c2, dtype=np.float32)
    t = cond.across_track.shape[0]
    channels = s1.shape[2]
    snip = s1.shape[0]
    planes = [one_hot_labels(semantic_tile, num_classes),
              cond.across_track[np.newaxis].astype(np.float32),
              np.full((1, t, t), 1.0 if cond.valid_c1 else 0.0, dtype=np.float32),
              np.full((1, t, t), 1.0 if cond.valid_c2 else 0.0, dtype=np.float32)]
    c1_canvas = np.zeros((channels, t, t), dtype=np.float32)
    if cond.valid_c1:
        c1_canvas[:, :snip, :] = np.moveaxis(to_model(s1), 2, 0)
    c2_canvas = np.zeros((channels, t, t), dtype=np.float32)
    if cond.valid_c2:
        c2_canvas[:, :, :snip] = np.moveaxis(to_model(s2), 2, 0)
    planes += [c1_canvas, c2_canvas]
    return np.concatenate(planes, axis=0)


def _as_batch(array, dtype):
    tensor = torch.as_tensor(np.ascontiguousarray(array), dtype=dtype)
    return tensor.unsqueeze(0)


def generator_forward(models, conditions, semantic_tile, noise):
    """Run the generator on one tile's inputs.

    noise is (T, T, noise_channels); returns a (T, T, C) float32 tile in
    model domain [-1, 1]. Pure function of (models, inputs, noise).
    """
    cfg = models.gen_config
    planes = condition_planes(conditions, semantic_tile, cfg.num_classes)
    noise = np.asarray(noise, dtype=np.float32)
    if noise.ndim == 2:
        noise = noise[:, :, np.newaxis]
    t = planes.shape[1]
    if noise.shape != (t, t, cfg.noise_channels):
        raise ValidationError(
            f"noise shape {noise.shape} does not match ({t}, {t}, {cfg.noise_channels})"
        )
    x = np.concatenate([planes, np.moveaxis(noise, 2, 0)], axis=0)
    if x.shape[0] != cfg.input_channels:
        raise ValidationError(
            f"assembled {x.shape[0]} input channels, config expects {cfg.input_channels}"
        )
    with torch.no_grad():
        out = models.generator(_as_batch(x, models.dtype))
    return np.moveaxis(out[0].numpy().astype(np.float32), 0, 2)


def d1_forward(models, conditions, semantic_tile, tile):
    """Patch logits of the tile discriminator; `tile` is image-domain [0, 1]."""
    cfg = models.gen_config
    planes = condition_planes(conditions, semantic_tile, cfg.num_classes)
    tile = as_image(tile, "tile")
    t = planes.shape[1]
    if tile.shape != (t, t, cfg.image_channels):
        raise ValidationError(
            f"tile shape {tile.shape} does not match ({t}, {t}, {cfg.image_channels})"
        )
    x = np.concatenate([planes, np.moveaxis(to_model(tile), 2, 0).astype(np.float32)], axis=0)
    with torch.no_grad():
        out = models.disc_tile(_as_batch(x, models.dtype))
    return out[0, 0].numpy().astype(np.float32)


def d2_forward(models, quad_semantic, quad_image):
    """Patch logits of the quad discriminator on a 2Tx2T block ([0, 1] image)."""
    cfg = models.gen_config
    quad_image = as_image(quad_image, "quad_image")
    labels = np.asarray(quad_semantic)
    if labels.shape != quad_image.shape[:2]:
        raise ValidationError(
            f"quad semantic shape {labels.shape} does not match image {quad_image.shape[:2]}"
        )
    x = np.concatenate([
        one_hot_labels(labels, cfg.num_classes),
        np.moveaxis(to_model(quad_image), 2, 0).astype(np.float32),
    ], axis=0)
    with torch.no_grad():
        out = models.disc_quad(_as_batch(x, models.dtype))
    return out[0, 0].numpy().astype(np.float32)


def backward(models, loss):
    """Backpropagate `loss` and return {parameter name: gradient array}.

    Parameters not reached by the loss graph get zero gradients. Raises
    TrainingFault naming the first parameter with a non-finite gradient.
    """
    names, params = zip(*models.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=False)
    out = {}
    for name, param, grad in zip(names, params, grads):
        if grad is None:
            grad = torch.zeros_like(param)
        if not torch.isfinite(grad).all():
            raise TrainingFault(f"non-finite gradient for parameter {name}")
        out[name] = grad.detach().numpy().copy()
    return out


# ---------------------------------------------------------------------------
# Checkpoint container
#
# Layout: magic, little-endian uint64 header length, UTF-8 JSON header, then
# the raw little-endian float32 tensor payloads in the order the header lists
# them. Identical state serializes to identical bytes.


def _header_dict(models, extra=None, opt_tensors=None, opt_meta=None):
    tensors = []
    for name, param in models.named_parameters():
        tensors.append({"name": name, "shape": list(param.shape)})
    for name, array in (opt_tensors or {}).items():
        tensors.append({"name": name, "shape": list(array.shape)})
    header = {
        "format": "sonargen-checkpoint",
        "version": 1,
        "gen_config": asdict(models.gen_config),
        "d1_config": asdict(models.d1_config),
        "d2_config": asdict(models.d2_config),
        "seed": models.seed,
        "counters": {"g": models.g_steps, "d1": models.d1_steps, "d2": models.d2_steps},
        "tensors": tensors,
    }
    if opt_meta:
        header["optimizer"] = opt_meta
    if extra:
        header["extra"] = extra
    return header


def save_checkpoint(path, models, optimizers=None, extra=None):
    """Serialize models (and optionally Adam moments) to the container format."""
    opt_tensors, opt_meta = {}, {}
    if optimizers:
        for net_name, opt in optimizers.items():
            param_names = {id(p): n for n, p in models.nets()[net_name].named_parameters()}
            steps = {}
            for group in opt.param_groups:
                for p in group["params"]:
                    state = opt.state.get(p)
                    if not state:
                        continue
                    pname = param_names[id(p)]
                    steps[pname] = int(state["step"])
                    for key in ("exp_avg", "exp_avg_sq"):
                        opt_tensors[f"opt.{net_name}.{pname}.{key}"] = (
                            state[key].detach().numpy()
                        )
            opt_meta[net_name] = {"steps": steps}
    header = _header_dict(models, extra=extra, opt_tensors=opt_tensors, opt_meta=opt_meta)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    named = dict(models.named_parameters())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for entry in header["tensors"]:
            name = entry["name"]
            if name in named:
                array = named[name].detach().numpy()
            else:
                array = opt_tensors[name]
            fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return path


def load_checkpoint(path, dtype=torch.float32):
    """Rebuild a ModelSet (and optimizer moments, if stored) from a file.

    Returns (models, opt_state) where opt_state is None or
    {net: {param_name: {"step", "exp_avg", "exp_avg_sq"}}}.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(shape)
            payload[entry["name"]] = data
    gen_config = GeneratorConfig(**header["gen_config"])
    d1_config = DiscriminatorConfig(**header["d1_config"])
    d2_config = DiscriminatorConfig(**header["d2_config"])
    models = build_models(gen_config, d1_config, d2_config, seed=header["seed"], dtype=dtype)
    models.g_steps = header["counters"]["g"]
    models.d1_steps = header["counters"]["d1"]
    models.d2_steps = header["counters"]["d2"]
    for name, param in models.named_parameters():
        if name not in payload:
            raise ValidationError(f"checkpoint missing tensor {name}")
        with torch.no_grad():
            param.copy_(torch.as_tensor(payload[name].copy(), dtype=dtype))
    opt_state = None
    if header.get("optimizer"):
        opt_state = {}
        for net_name, meta in header["optimizer"].items():
            opt_state[net_name] = {}
            for pname, step in meta["steps"].items():
                opt_state[net_name][pname] = {
                    "step": step,
                    "exp_avg": payload[f"opt.{net_name}.{pname}.exp_avg"].copy(),
                    "exp_avg_sq": payload[f"opt.{net_name}.{pname}.exp_avg_sq"].copy(),
                }
    return models, opt_state


def checkpoint_extra(path):
    """Read just the free-form extra block of a checkpoint header."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
    return header.get("extra", {})


def checkpoint_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
