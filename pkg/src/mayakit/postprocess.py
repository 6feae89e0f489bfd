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

"""Probability thresholding, blob filtering and hole filling"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from mayakit.common import STRUCTURE_CLASSES, StructureClass
from mayakit.errors import ConfigInvalid
from mayakit.raster_io import Raster

logger = logging.getLogger(__name__)

# objects are 8-connected, background (holes) 4-connected
OBJECT_STRUCTURE = np.ones((3, 3), dtype=bool)
HOLE_STRUCTURE = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Region:
    structure: str
    pixels: tuple
    area: int
    bbox: tuple
    touches_boundary: bool

    @property
    def anchor(self):
        return self.pixels[0]


@dataclass(frozen=True)
class PostprocessConfig:
    probability_threshold: float = 0.5
    min_area: int = 0
    min_area_boundary: int = 0
    fill_holes: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability_threshold <= 1.0:
            raise ConfigInvalid("probability_threshold must lie in [0, 1]",
                                probability_threshold=self.probability_threshold)
        if self.min_area < 0 or self.min_area_boundary < 0:
            raise ConfigInvalid("Area thresholds must be non-negative",
                                min_area=self.min_area, min_area_boundary=self.min_area_boundary)

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"Unknown postprocess keys {sorted(unknown)}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)


def load_class_configs(section):
    """
    Per-class PostprocessConfig from the ``postprocess`` section of a pipeline
    config. A ``default`` entry applies to classes without their own entry.
    """
    section = section or {}
    default = section.get("default", {})
    configs = {}
    for structure in STRUCTURE_CLASSES:
        values = dict(default)
        values.update(section.get(structure.value, {}))
        configs[structure] = PostprocessConfig.from_dict(values)
    return configs


def _prob_array(prob):
    data = prob.data if isinstance(prob, Raster) else np.asarray(prob)
    if data.ndim == 3:
        data = data[:, :, 0]
    return data


def quantize(prob):
    """Probability to 8-bit level, floor(255 * p + 0.5)."""
    data = np.clip(np.asarray(_prob_array(prob), dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * data + 0.5).astype(np.uint8)


def threshold_level(t):
    if not 0.0 <= t <= 1.0:
        raise ConfigInvalid("Threshold must lie in [0, 1]", threshold=t)
    return int(np.floor(255.0 * t + 0.5))


def binarize(prob, t):
    """True where the quantized confidence reaches the quantized threshold."""
    return quantize(prob) >= threshold_level(t)


def connected_components(mask, structure=None):
    """
    8-connected regions of a boolean mask, ordered by their first pixel in
    row-major order.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=OBJECT_STRUCTURE)
    if not count:
        return []
    height, width = mask.shape
    rows, cols = np.nonzero(labels)
    ids = labels[rows, cols]
    # nonzero is row-major and stable sort keeps that order inside each label
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, count + 2))

    regions = []
    for label in range(count):
        r = rows[bounds[label]:bounds[label + 1]]
        c = cols[bounds[label]:bounds[label + 1]]
        top, bottom, left, right = int(r.min()), int(r.max()), int(c.min()), int(c.max())
        regions.append(Region(
            structure=StructureClass(structure).value if structure else None,
            pixels=tuple(zip(r.tolist(), c.tolist())),
            area=int(r.size),
            bbox=(top, left, bottom, right),
            touches_boundary=top == 0 or left == 0 or bottom == height - 1 or right == width - 1
        ))
    regions.sort(key=lambda region: region.anchor)
    return regions


def blob_filter(mask, min_area, min_area_boundary):
    """Drop regions smaller than their area threshold; boundary regions use the boundary one."""
    if min_area < 0 or min_area_boundary < 0:
        raise ConfigInvalid("Area thresholds must be non-negative")
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=OBJECT_STRUCTURE)
    if not count:
        return mask.copy()

    areas = np.bincount(labels.ravel(), minlength=count + 1)
    on_edge = np.zeros(count + 1, dtype=bool)
    for edge in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
        on_edge[edge] = True
    limits = np.where(on_edge, min_area_boundary, min_area)
    keep = areas >= limits
    keep[0] = False
    logger.debug("blob_filter kept %d of %d regions", int(keep[1:].sum()), count)
    return keep[labels]


def fill_holes(mask):
    """Set every 4-connected false region that does not reach the image border."""
    mask = np.asarray(mask, dtype=bool)
    return ndimage.binary_fill_holes(mask, structure=HOLE_STRUCTURE)


def postprocess_pipeline(prob, config):
    mask = binarize(prob, config.probability_threshold)
    mask = blob_filter(mask, config.min_area, config.min_area_boundary)
    if config.fill_holes:
        mask = fill_holes(mask)
    return mask
