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

"""Copy/paste generation of synthetic training tiles"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mayakit.common import STRUCTURE_CLASSES, ModalityKind, StructureClass, mask_kind
from mayakit.errors import ConfigInvalid, EmptyMask, NoBackgrounds, NoDonors, NonEmptyBackground, PatchTooLarge
from mayakit.preprocess import mask_decode, mask_encode
from mayakit.raster_io import Raster, TileRecord
from mayakit.utils import item_rng, parallel_map

logger = logging.getLogger(__name__)

MAX_PADDING = 64
COMPONENT_STRUCTURE = np.ones((3, 3), dtype=bool)
DEFAULT_ID_START = 1000000


class CropStyleKind:
    RECTANGULAR = "rectangular"
    PIXEL_PRECISE = "pixel-precise"
    PADDED = "padded"


@dataclass(frozen=True)
class CropStyle:
    kind: str
    padding: int = 0

    def __post_init__(self):
        if self.kind not in (CropStyleKind.RECTANGULAR, CropStyleKind.PIXEL_PRECISE, CropStyleKind.PADDED):
            raise ConfigInvalid(f"Unknown crop style {self.kind}")
        if self.kind == CropStyleKind.PADDED and not 1 <= self.padding <= MAX_PADDING:
            raise ConfigInvalid(f"Padding must lie in 1..{MAX_PADDING}", padding=self.padding)
        if self.kind != CropStyleKind.PADDED and self.padding:
            raise ConfigInvalid(f"Only the padded style takes a padding, got {self.padding}")

    @classmethod
    def parse(cls, text):
        """``rectangular``, ``pixel-precise`` or ``padded:<n>``."""
        kind, _, padding = str(text).partition(":")
        try:
            return cls(kind, int(padding) if padding else 0)
        except ValueError:
            raise ConfigInvalid(f"Invalid crop style {text}")

    def __str__(self):
        return f"{self.kind}:{self.padding}" if self.kind == CropStyleKind.PADDED else self.kind


RECTANGULAR = CropStyle(CropStyleKind.RECTANGULAR)
PIXEL_PRECISE = CropStyle(CropStyleKind.PIXEL_PRECISE)


def padded(n):
    return CropStyle(CropStyleKind.PADDED, n)


@dataclass(frozen=True)
class Patch:
    """
    A cut-out instance.

    ``extent`` marks the pixels that overwrite the background, ``footprint``
    the class pixels that make up the generated mask. ``origin`` and
    ``anchor`` locate the patch and its component in the source tile.
    """

    pixels: np.ndarray
    footprint: np.ndarray
    extent: np.ndarray
    source_tile: int
    style: CropStyle
    origin: tuple
    anchor: tuple

    @property
    def shape(self):
        return self.footprint.shape


def _image_array(image):
    data = image.data if isinstance(image, Raster) else np.asarray(image)
    return data[:, :, np.newaxis] if data.ndim == 2 else data


def _bbox(region):
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def _patch_from_component(image, component, style, source_tile, anchor):
    if style.kind == CropStyleKind.PADDED:
        ball = np.ones((2 * style.padding + 1,) * 2, dtype=bool)
        extent = ndimage.binary_dilation(component, structure=ball)
    else:
        extent = component
    window = _bbox(extent)
    footprint = component[window].copy()
    extent = extent[window].copy()
    if style.kind == CropStyleKind.RECTANGULAR:
        footprint = np.ones_like(footprint)
        extent = footprint
    pixels = image[window].copy() if image is not None else None
    return Patch(pixels=pixels, footprint=footprint, extent=extent, source_tile=source_tile, style=style,
                 origin=(int(window[0].start), int(window[1].start)), anchor=anchor)


def extract_instance(image, mask, style, rng, source_tile=None):
    """Cut one uniformly chosen 8-connected component out of ``image``."""
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=COMPONENT_STRUCTURE)
    if not count:
        raise EmptyMask("Source mask has no class pixels", source_tile=source_tile)
    chosen = int(rng.integers(count)) + 1
    component = labels == chosen
    first = np.flatnonzero(component.ravel())[0]
    anchor = (int(first // mask.shape[1]), int(first % mask.shape[1]))
    return _patch_from_component(_image_array(image), component, style, source_tile, anchor)


def sample_position(shape, patch, rng):
    """Uniform top-left corner over all placements keeping the patch in bounds."""
    height, width = shape[:2]
    h, w = patch.shape
    if h > height or w > width:
        raise PatchTooLarge(f"Patch {h}x{w} does not fit into {height}x{width}",
                            patch=[h, w], background=[height, width])
    return int(rng.integers(0, height - h + 1)), int(rng.integers(0, width - w + 1))


def paste_at(background, patch, position, mask=None):
    """
    Copy the patch extent into a copy of ``background`` at ``position``.

    Inside the extent the returned mask is the patch footprint, so later
    patches overwrite both pixels and labels of earlier ones.
    """
    data = _image_array(background).copy()
    top, left = position
    h, w = patch.shape
    window = (slice(top, top + h), slice(left, left + w))
    target = data[window]
    target[patch.extent] = patch.pixels[patch.extent]
    generated = np.zeros(data.shape[:2], dtype=bool) if mask is None else mask.copy()
    generated[window][patch.extent] = patch.footprint[patch.extent]
    return Raster(data), generated


def paste(background, bg_mask_empty, patch, rng):
    bg_mask_empty = np.asarray(bg_mask_empty, dtype=bool)
    if bg_mask_empty.any():
        raise NonEmptyBackground("Background tile already contains structures")
    position = sample_position(_image_array(background).shape, patch, rng)
    return paste_at(background, patch, position)


@dataclass
class SyntheticSample:
    tile_id: int
    image: Raster
    mask: np.ndarray
    entry: dict


def empty_tiles(records, lenient=False):
    """Records with an ALS raster whose three masks are present and empty."""
    found = []
    for record in records:
        if not record.has(ModalityKind.ALS):
            continue
        masks = [record.get(mask_kind(s)) for s in STRUCTURE_CLASSES]
        if all(m is not None and not mask_decode(m, lenient).any() for m in masks):
            found.append(record)
    return found


def class_tiles(records, structure, lenient=False):
    kind = mask_kind(structure)
    return [r for r in records
            if r.has(ModalityKind.ALS) and r.has(kind) and mask_decode(r.get(kind), lenient).any()]


def generate_dataset(backgrounds, donors, structure, style, count, seed, instances_per_tile=1,
                     id_start=DEFAULT_ID_START, lenient=False, jobs=1):
    """
    Paste donor instances into empty tiles.

    Backgrounds are used cyclically in input order; each sample draws its
    donors from its own random stream, so results do not depend on ``jobs``.

    :return: list of SyntheticSample in sample order
    """
    structure = StructureClass(structure)
    if not backgrounds:
        raise NoBackgrounds("No empty background tiles available")
    if not donors:
        raise NoDonors(f"No tiles containing {structure.value}", structure=structure.value)
    if instances_per_tile < 1:
        raise ConfigInvalid("instances_per_tile must be at least 1", value=instances_per_tile)
    kind = mask_kind(structure)

    def generate(index):
        rng = item_rng(seed, index)
        background = backgrounds[index % len(backgrounds)]
        image = background.get(ModalityKind.ALS)
        mask = None
        instances = []
        for _ in range(instances_per_tile):
            donor = donors[int(rng.integers(len(donors)))]
            patch = extract_instance(donor.get(ModalityKind.ALS), mask_decode(donor.get(kind), lenient),
                                     style, rng, source_tile=donor.tile_id)
            position = sample_position(image.data.shape, patch, rng)
            image, mask = paste_at(image, patch, position, mask)
            instances.append({
                "donor": donor.tile_id,
                "anchor": list(patch.anchor),
                "origin": list(patch.origin),
                "position": list(position),
            })
        entry = {
            "sample": index,
            "tile_id": id_start + index,
            "background": background.tile_id,
            "structure": structure.value,
            "style": str(style),
            "instances": instances,
        }
        return SyntheticSample(id_start + index, image, mask, entry)

    samples = parallel_map(generate, range(count), jobs)
    logger.info("Generated %d synthetic %s tiles in style %s", len(samples), structure.value, style)
    return samples


def replay_mask(entry, donor_masks, shape):
    """
    Rebuild the generated mask of a manifest entry from the donor masks alone.

    :param donor_masks: mapping donor tile id -> boolean mask
    """
    style = CropStyle.parse(entry["style"])
    generated = np.zeros(shape, dtype=bool)
    for instance in entry["instances"]:
        donor_mask = np.asarray(donor_masks[instance["donor"]], dtype=bool)
        labels, _ = ndimage.label(donor_mask, structure=COMPONENT_STRUCTURE)
        anchor = tuple(instance["anchor"])
        if not labels[anchor]:
            raise EmptyMask(f"Anchor {anchor} is not a class pixel of tile {instance['donor']}")
        patch = _patch_from_component(None, labels == labels[anchor], style, instance["donor"], anchor)
        top, left = instance["position"]
        h, w = patch.shape
        generated[top:top + h, left:left + w][patch.extent] = patch.footprint[patch.extent]
    return generated


def sample_record(sample, structure):
    """TileRecord holding the generated ALS raster and all three masks."""
    record = TileRecord(sample.tile_id, pseudo=False)
    record.add(ModalityKind.ALS, sample.image)
    empty = np.zeros(sample.mask.shape, dtype=bool)
    for s in STRUCTURE_CLASSES:
        record.add(mask_kind(s), mask_encode(sample.mask if s == StructureClass(structure) else empty))
    return record


def synth_manifest(samples, structure, style, seed, instances_per_tile):
    return {
        "structure": StructureClass(structure).value,
        "style": str(style),
        "seed": seed,
        "instances_per_tile": instances_per_tile,
        "samples": [s.entry for s in samples],
    }
