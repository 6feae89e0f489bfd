#  Copyright © Microsoft Corporation
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.

"""Dihedral symmetries plus geometric and photometric augmentation"""

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from mayakit.errors import ConfigInvalid, CropTooLarge, NonSquare, ShapeMismatch
from mayakit.raster_io import Raster

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DihedralElement:
    """
    F^flip R^rotation: rotate clockwise by ``rotation`` quarter turns, then
    mirror left/right when ``flip`` is set.
    """

    flip: bool
    rotation: int

    @property
    def name(self):
        turn = f"r{90 * self.rotation}"
        return f"fh_{turn}" if self.flip else turn

    def __str__(self):
        return self.name


ELEMENTS = tuple(DihedralElement(flip, k) for flip in (False, True) for k in range(4))
IDENTITY = ELEMENTS[0]
ELEMENT_NAMES = {e.name: e for e in ELEMENTS}


def element_by_name(name):
    try:
        return ELEMENT_NAMES[name]
    except KeyError:
        raise ConfigInvalid(f"Unknown dihedral element {name}", valid=sorted(ELEMENT_NAMES))


def compose(a, b):
    """The element equal to applying ``b`` first, then ``a``."""
    sign = -1 if b.flip else 1
    return DihedralElement(a.flip != b.flip, (sign * a.rotation + b.rotation) % 4)


def inverse(e):
    # every reflection is its own inverse
    return e if e.flip else DihedralElement(False, (-e.rotation) % 4)


def _apply_array(data, element):
    out = np.rot90(data, -element.rotation, axes=(0, 1))
    if element.flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def dihedral_apply(x, element):
    """Exact pixel permutation of a square Raster or array (2-D or H x W x B)."""
    data = x.data if isinstance(x, Raster) else np.asarray(x)
    if data.ndim < 2 or data.shape[0] != data.shape[1]:
        raise NonSquare(f"Dihedral transforms need a square grid, got {data.shape}", shape=data.shape)
    out = _apply_array(data, element)
    if isinstance(x, Raster):
        return Raster(out, has_fill=x.has_fill)
    return out


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise ConfigInvalid(f"{name} must lie in [0, 1]", name=name, value=value)


def _check_range(name, values, positive=False):
    lo, hi = values
    if lo > hi or (positive and lo <= 0):
        raise ConfigInvalid(f"{name} must be an ordered range", name=name, value=list(values))


@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and ranges of every augmentation; all off by default."""

    hflip_p: float = 0.0
    vflip_p: float = 0.0
    dihedral_p: float = 0.0
    rotation_p: float = 0.0
    rotation_range: tuple = (-90.0, 90.0)
    translate_p: float = 0.0
    translate_max: float = 0.15
    scale_p: float = 0.0
    scale_range: tuple = (0.5, 1.5)
    crop_p: float = 0.0
    crop_range: tuple = (256, 400)
    blur_p: float = 0.0
    blur_kernel: int = 11
    blur_sigma: tuple = (0.1, 2.0)
    noise_p: float = 0.0
    noise_uniform_max: float = 0.1
    noise_sigma: float = 0.03

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_p"):
                _check_probability(f.name, getattr(self, f.name))
            elif isinstance(getattr(self, f.name), (list, tuple)):
                object.__setattr__(self, f.name, tuple(getattr(self, f.name)))
        _check_range("rotation_range", self.rotation_range)
        _check_range("scale_range", self.scale_range, positive=True)
        _check_range("crop_range", self.crop_range, positive=True)
        _check_range("blur_sigma", self.blur_sigma, positive=True)
        if not 0.0 <= self.translate_max < 1.0:
            raise ConfigInvalid("translate_max must lie in [0, 1)", value=self.translate_max)
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ConfigInvalid("blur_kernel must be a positive odd size", value=self.blur_kernel)

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        preset = values.pop("preset", None)
        base = asdict(get_preset(preset)) if preset else {}
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"Unknown augmentation keys {sorted(unknown)}")
        base.update(values)
        return cls(**base)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


PRESETS = {
    "ch1": AugmentConfig(hflip_p=0.5, vflip_p=0.5, rotation_p=0.5, rotation_range=(-90.0, 90.0),
                         translate_p=0.5, translate_max=0.15, scale_p=0.5, scale_range=(0.5, 1.5)),
    "ch3": AugmentConfig(crop_p=1.0, crop_range=(256, 400), hflip_p=0.5, vflip_p=0.5,
                         rotation_p=0.25, rotation_range=(0.0, 359.0),
                         blur_p=0.25, blur_kernel=11, blur_sigma=(0.1, 2.0), noise_p=0.25),
    "dihedral-only": AugmentConfig(dihedral_p=1.0),
    "none": AugmentConfig(),
}

# content names accepted for the preset names
PRESET_ALIASES = {
    "standard": "ch1",
    "advanced": "ch3",
    "dihedral": "dihedral-only",
}
PRESET_NAMES = tuple(sorted(PRESETS)) + tuple(sorted(PRESET_ALIASES))


def get_preset(name):
    try:
        return PRESETS[PRESET_ALIASES.get(name, name)]
    except KeyError:
        raise ConfigInvalid(f"Unknown augmentation preset {name}", valid=list(PRESET_NAMES))


def gaussian_kernel(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    kernel = np.exp(-x * x / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def as_float_image(image):
    """(H, W, C) float32 view of an image; uint8 samples are scaled to [0, 1]."""
    data = image.data if isinstance(image, Raster) else np.asarray(image)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.dtype == np.uint8:
        return data.astype(np.float32) / 255.0
    return data.astype(np.float32)


def _check_masks(image, masks):
    for mask in masks:
        if mask.shape != image.shape[:2]:
            raise ShapeMismatch(f"Mask shape {mask.shape} differs from image {image.shape[:2]}")


def random_crop(image, masks, side, rng):
    """
    Crop image and masks at the same uniformly drawn square window.

    :param side: fixed side or an inclusive (min, max) range
    :return: (image, masks, (side, top, left))
    """
    image = np.asarray(image)
    masks = [np.asarray(m, dtype=bool) for m in masks]
    _check_masks(image, masks)
    lo, hi = (side, side) if np.isscalar(side) else side
    height, width = image.shape[:2]
    if hi > min(height, width):
        raise CropTooLarge(f"Crop side up to {hi} exceeds image {height}x{width}",
                           side=hi, height=height, width=width)
    size = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    window = (slice(top, top + size), slice(left, left + size))
    return image[window].copy(), [m[window].copy() for m in masks], (size, top, left)


def sample_geometry(config, rng, shape):
    """Draw the geometric parameters of one sample; a fixed draw order keeps seeds stable."""
    height, width = shape
    params = {}
    if config.dihedral_p and rng.random() < config.dihedral_p:
        params["dihedral"] = ELEMENTS[int(rng.integers(len(ELEMENTS)))].name
    if config.hflip_p and rng.random() < config.hflip_p:
        params["hflip"] = True
    if config.vflip_p and rng.random() < config.vflip_p:
        params["vflip"] = True
    if config.rotation_p and rng.random() < config.rotation_p:
        params["rotation"] = float(rng.uniform(*config.rotation_range))
    if config.translate_p and rng.random() < config.translate_p:
        params["translate"] = [float(rng.uniform(-config.translate_max, config.translate_max) * height),
                               float(rng.uniform(-config.translate_max, config.translate_max) * width)]
    if config.scale_p and rng.random() < config.scale_p:
        params["scale"] = float(rng.uniform(*config.scale_range))
    return params


def _affine(data, matrix, offset, order):
    if data.ndim == 2:
        return ndimage.affine_transform(data, matrix, offset=offset, order=order, mode="constant", cval=0)
    out = np.empty_like(data)
    for b in range(data.shape[2]):
        out[:, :, b] = ndimage.affine_transform(data[:, :, b], matrix, offset=offset, order=order,
                                                mode="constant", cval=0)
    return out


def apply_geometry(image, masks, params):
    """Apply drawn parameters: image bilinear, masks nearest neighbour, 0 outside the source."""
    image = np.asarray(image)
    masks = [np.asarray(m, dtype=bool) for m in masks]
    _check_masks(image, masks)

    if "dihedral" in params:
        element = element_by_name(params["dihedral"])
        image = dihedral_apply(image, element)
        masks = [dihedral_apply(m, element) for m in masks]
    if params.get("hflip"):
        image, masks = image[:, ::-1], [m[:, ::-1] for m in masks]
    if params.get("vflip"):
        image, masks = image[::-1], [m[::-1] for m in masks]

    theta = params.get("rotation", 0.0)
    translate = params.get("translate", [0.0, 0.0])
    scale = params.get("scale", 1.0)
    if theta % 90 == 0 and translate == [0.0, 0.0] and scale == 1.0:
        k = int(theta // 90) % 4
        image = np.rot90(image, k, axes=(0, 1))
        masks = [np.rot90(m, k) for m in masks]
        return np.ascontiguousarray(image), [np.ascontiguousarray(m) for m in masks]

    # input coordinate = R (o - c - t) / s + c, counter-clockwise rotation
    radians = math.radians(theta)
    rotation = np.array([[math.cos(radians), math.sin(radians)],
                         [-math.sin(radians), math.cos(radians)]])
    matrix = rotation / scale
    center = (np.array(image.shape[:2], dtype=np.float64) - 1) / 2
    offset = center - matrix @ (center + np.asarray(translate, dtype=np.float64))

    image = _affine(np.ascontiguousarray(image), matrix, offset, order=1)
    masks = [_affine(m.astype(np.uint8), matrix, offset, order=0) > 0 for m in masks]
    return image, masks


def geometric_augment(image, masks, config, rng):
    params = sample_geometry(config, rng, np.asarray(image).shape[:2])
    return apply_geometry(image, masks, params)


def photometric_augment(image, config, rng, params=None):
    """
    Blur and additive noise on a float image in [0, 1]; masks are never touched.

    :param dict params: receives the drawn parameters when given
    """
    image = np.asarray(image, dtype=np.float32)
    params = {} if params is None else params
    if config.blur_p and rng.random() < config.blur_p:
        sigma = float(rng.uniform(*config.blur_sigma))
        kernel = gaussian_kernel(config.blur_kernel, sigma)
        image = ndimage.convolve1d(image, kernel, axis=0, mode="reflect")
        image = ndimage.convolve1d(image, kernel, axis=1, mode="reflect")
        params["blur_sigma"] = sigma
    if config.noise_p and rng.random() < config.noise_p:
        if rng.random() < 0.5:
            noise = rng.uniform(0.0, config.noise_uniform_max, size=image.shape)
            params["noise"] = "uniform"
        else:
            noise = rng.normal(0.0, config.noise_sigma, size=image.shape)
            params["noise"] = "normal"
        image = np.clip(image + noise, 0.0, 1.0)
    return image.astype(np.float32)


def augment_sample(image, masks, config, rng):
    """
    Full per-sample pipeline: crop, then geometry, then photometry.

    :return: (float image, boolean masks, drawn parameters)
    """
    image = as_float_image(image)
    masks = [np.asarray(m, dtype=bool) for m in masks]
    params = {}
    if config.crop_p and rng.random() < config.crop_p:
        image, masks, (side, top, left) = random_crop(image, masks, config.crop_range, rng)
        params["crop"] = [side, top, left]
    geometry = sample_geometry(config, rng, image.shape[:2])
    image, masks = apply_geometry(image, masks, geometry)
    params.update(geometry)
    image = photometric_augment(image, config, rng, params)
    return image, masks, params
