"""Input validation helpers.

All checks raise :class:`~sonargen.errors.ValidationError` so that callers
(including the CLI) can map bad inputs to a uniform exit path.
"""

import numpy as np

from .errors import ValidationError


def as_image(array, name="image"):
    """Coerce an array to float (H, W, C) layout.

    2-D inputs are promoted to a single trailing channel. The dtype is
    preserved; no copy is made unless promotion requires one.
    """
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise ValidationError(f"{name}: expected 2-D or 3-D array, got shape {arr.shape}")
    return arr


def check_image_dims(image, height, width, channels=None, name="image"):
    image = as_image(image, name)
    if image.shape[0] != height or image.shape[1] != width:
        raise ValidationError(
            f"{name}: expected {height}x{width} pixels, got {image.shape[0]}x{image.shape[1]}"
        )
    if channels is not None and image.shape[2] != channels:
        raise ValidationError(f"{name}: expected {channels} channel(s), got {image.shape[2]}")
    return image


def check_labels(labels, num_classes=None, name="semantic labels"):
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected 2-D label grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"{name}: expected integer labels, got dtype {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValidationError(f"{name}: negative label values")
    if num_classes is not None and arr.size and arr.max() >= num_classes:
        raise ValidationError(
            f"{name}: label {int(arr.max())} out of range for {num_classes} classes"
        )
    return arr


def check_positive(value, name):
    if value <= 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return value


def check_in_unit_interval(value, name):
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value
