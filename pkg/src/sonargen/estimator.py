"""Estimator facade over the training and inference pipeline.

SonarImageGenerator exposes the fit/sample workflow through the familiar
get_params/set_params surface, so it can sit inside model-selection tooling:
fit on (semantic map, image) pairs, then sample new imagery for unseen maps.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ValidationError
from .grid import SemanticMap, TileGridSpec
from .inference import MissionRequest, generate_mission
from .networks import DiscriminatorConfig, GeneratorConfig
from .training import TrainingConfig, train_models
from .validation import check_labels


def _as_image_batch(y):
    arr = np.asarray(y, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, :, :, None]
    if arr.ndim != 4:
        raise ValidationError(f"expected (n, H, W[, C]) images, got {arr.shape}")
    return arr


def _as_label_batch(X):
    arr = np.asarray(X)
    if arr.ndim != 3:
        raise ValidationError(f"expected (n, H, W) semantic maps, got {arr.shape}")
    check_labels(arr[0])
    return arr.astype(np.int64)


class SonarImageGenerator(BaseEstimator):
    """Conditional tiled image generator with a fit/sample interface.

    Args:
        tile_size: Side length of the square generation unit.
        snippet_width: Neighbor strip width fed as conditions (0 = tile_size/16).
        class_names: Names for the label values in the semantic maps; inferred
            as class_0..class_{k-1} when omitted.
        epochs, batch_size, lr, gan_weight, l1_weight, d1_updates_per_g,
        d2_updates_per_g, loss_form: Training hyperparameters.
        base_width, resnet_blocks, n_downsample: Generator capacity.
        disc_levels, disc_width: Discriminator capacity.
        noise_channels: Stochastic input planes per tile.
        random_state: Seed for weight init, batch order, and noise.
    """

    def __init__(self, tile_size=64, snippet_width=0, class_names=None,
                 epochs=10, batch_size=3, lr=2e-4, gan_weight=0.5, l1_weight=1.0,
                 d1_updates_per_g=3, d2_updates_per_g=1, loss_form="standard",
                 base_width=64, resnet_blocks=9, n_downsample=2,
                 disc_levels=3, disc_width=64, noise_channels=1, random_state=0):
        self.tile_size = tile_size
        self.snippet_width = snippet_width
        self.class_names = class_names
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.gan_weight = gan_weight
        self.l1_weight = l1_weight
        self.d1_updates_per_g = d1_updates_per_g
        self.d2_updates_per_g = d2_updates_per_g
        self.loss_form = loss_form
        self.base_width = base_width
        self.resnet_blocks = resnet_blocks
        self.n_downsample = n_downsample
        self.disc_levels = disc_levels
        self.disc_width = disc_width
        self.noise_channels = noise_channels
        self.random_state = random_state

    def _grid_for(self, height, width):
        return TileGridSpec.for_image(height, width, self.tile_size,
                                      self.snippet_width)

    def fit(self, X, y):
        """Train on (semantic maps, images).

        Args:
            X: Integer semantic maps, shape (n, H, W); H and W must be
                multiples of tile_size.
            y: Matching images in [0, 1], shape (n, H, W) or (n, H, W, 1).

        Returns:
            self
        """
        maps = _as_label_batch(X)
        images = _as_image_batch(y)
        if maps.shape[0] != images.shape[0]:
            raise ValidationError("X and y differ in sample count")
        if maps.shape[1:] != images.shape[1:3]:
            raise ValidationError("X and y differ in spatial shape")
        n_classes = int(maps.max()) + 1
        if self.class_names is not None:
            if len(self.class_names) < n_classes:
                raise ValidationError(
                    f"labels use {n_classes} classes but class_names has "
                    f"{len(self.class_names)}"
                )
            n_classes = len(self.class_names)
        grid = self._grid_for(maps.shape[1], maps.shape[2])
        config = TrainingConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            gan_weight=self.gan_weight, l1_weight=self.l1_weight,
            d1_updates_per_g=self.d1_updates_per_g,
            d2_updates_per_g=self.d2_updates_per_g, loss_form=self.loss_form,
            seed=self.random_state,
        )
        gen_config = GeneratorConfig(
            num_classes=n_classes, base_width=self.base_width,
            resnet_blocks=self.resnet_blocks, n_downsample=self.n_downsample,
            noise_channels=self.noise_channels,
        )
        disc_config = DiscriminatorConfig(levels=self.disc_levels,
                                          base_width=self.disc_width)
        result = train_models(list(images), list(maps), config, grid,
                              gen_config=gen_config, d1_config=disc_config,
                              d2_config=disc_config)
        self.models_ = result.models
        self.classes_ = (tuple(self.class_names) if self.class_names is not None
                         else tuple(f"class_{i}" for i in range(n_classes)))
        self.history_ = result.metrics
        self.n_features_in_ = maps.shape[1] * maps.shape[2]
        return self

    def sample(self, X, seed=0):
        """Generate one image per semantic map.

        Args:
            X: Integer semantic maps, shape (n, H, W); dims must be multiples
                of tile_size but need not match the training dims.
            seed: Master seed; map i uses seed + i.

        Returns:
            Array of shape (n, H, W, 1) in [0, 1].
        """
        check_is_fitted(self, "models_")
        maps = _as_label_batch(X)
        out = []
        for i, labels in enumerate(maps):
            if labels.max() >= len(self.classes_):
                raise ValidationError(
                    f"map {i} uses label {labels.max()} but the model knows "
                    f"{len(self.classes_)} classes"
                )
            grid = self._grid_for(labels.shape[0], labels.shape[1])
            request = MissionRequest(
                semantic=SemanticMap(labels=labels, class_names=self.classes_),
                grid=grid, seed=seed + i)
            out.append(generate_mission(self.models_, request).image)
        return np.stack(out)

    def predict(self, X):
        """Deterministic alias of sample (seed = random_state)."""
        return self.sample(X, seed=self.random_state)

    def score(self, X, y):
        """Negative mean absolute error between generated and reference images.

        This is a crude fidelity proxy (conditional generation is stochastic);
        higher is better, 0 is a perfect pixel match.
        """
        check_is_fitted(self, "models_")
        images = _as_image_batch(y)
        generated = self.sample(X, seed=self.random_state)
        if generated.shape != images.shape:
            raise ValidationError("X and y shapes are inconsistent")
        return -float(np.abs(generated - images).mean())
