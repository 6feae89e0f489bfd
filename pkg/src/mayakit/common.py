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

"""Common constants and naming helpers"""

import re
from dataclasses import dataclass
from enum import Enum

from mayakit.errors import ConfigInvalid


ALS_TILE_SIZE = 480
SENTINEL_TILE_SIZE = 24

UINT8 = "uint8"
FLOAT32 = "float32"
SAMPLE_TYPES = (UINT8, FLOAT32)


class StructureClass(str, Enum):
    """Target structure classes, in the column order of the challenge tables"""

    AGUADA = "aguada"
    PLATFORM = "platform"
    BUILDING = "building"


STRUCTURE_CLASSES = (StructureClass.AGUADA, StructureClass.PLATFORM, StructureClass.BUILDING)

# pseudo class for tiles / pixels without any structure
BACKGROUND = "background"
SAMPLING_CLASSES = (BACKGROUND,) + tuple(s.value for s in STRUCTURE_CLASSES)


class ModalityKind(str, Enum):
    """Raster kinds; the value is the token used in tile file names"""

    S1 = "s1"
    S2 = "s2"
    ALS = "lidar"
    MASK_BUILDING = "mask_building"
    MASK_PLATFORM = "mask_platform"
    MASK_AGUADA = "mask_aguada"
    PROB_BUILDING = "prob_building"
    PROB_PLATFORM = "prob_platform"
    PROB_AGUADA = "prob_aguada"

    @property
    def is_mask(self):
        return self.value.startswith("mask_")

    @property
    def is_prob(self):
        return self.value.startswith("prob_")

    @property
    def structure(self):
        if self.is_mask or self.is_prob:
            return StructureClass(self.value.split("_", 1)[1])
        return None


@dataclass(frozen=True)
class KindShape:
    width: int
    height: int
    bands: int
    sample_type: str


KIND_SHAPES = {
    ModalityKind.S1: KindShape(SENTINEL_TILE_SIZE, SENTINEL_TILE_SIZE, 120, FLOAT32),
    ModalityKind.S2: KindShape(SENTINEL_TILE_SIZE, SENTINEL_TILE_SIZE, 221, FLOAT32),
    ModalityKind.ALS: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 3, UINT8),
    ModalityKind.MASK_BUILDING: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, UINT8),
    ModalityKind.MASK_PLATFORM: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, UINT8),
    ModalityKind.MASK_AGUADA: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, UINT8),
    ModalityKind.PROB_BUILDING: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, FLOAT32),
    ModalityKind.PROB_PLATFORM: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, FLOAT32),
    ModalityKind.PROB_AGUADA: KindShape(ALS_TILE_SIZE, ALS_TILE_SIZE, 1, FLOAT32),
}


def mask_kind(structure):
    return ModalityKind("mask_" + StructureClass(structure).value)


def prob_kind(structure):
    return ModalityKind("prob_" + StructureClass(structure).value)


class FileNaming:
    """File name patterns; ``{id}`` and the other fields are filled per file"""

    DEFAULT_PATTERN = "tile_{id}_{modality}.tif"
    PROB_PATTERN = "tile_{id}_prob_{structure}_{model}.tif"
    MASK_PATTERN = "tile_{id}_mask_{structure}.tif"
    S1_RAW_PATTERN = "tile_{id}_s1raw_{polarization}_{orbit}_{date}.tif"
    S2_COMPOSITE_PATTERN = "tile_{id}_s2composite.tif"

    VALIDATION_REPORT = "validation.jsonl"
    RUN_MANIFEST = "manifest.json"


_FIELD_REGEX = {
    "id": r"(?P<id>\d+)",
    "modality": r"(?P<modality>[a-z0-9_]+?)",
    "structure": r"(?P<structure>aguada|platform|building)",
    "model": r"(?P<model>[A-Za-z0-9.\-]+)",
    "polarization": r"(?P<polarization>VV|VH)",
    "orbit": r"(?P<orbit>ascending|descending)",
    "date": r"(?P<date>\d{8})",
}


def pattern_to_regex(pattern):
    """
    Turn a naming pattern such as ``tile_{id}_{modality}.tif`` into a compiled
    regular expression with one named group per field.
    """
    parts = re.split(r"(\{[a-z]+\})", pattern)
    regex = ""
    for part in parts:
        if part.startswith("{") and part.endswith("}"):
            field = part[1:-1]
            if field not in _FIELD_REGEX:
                raise ConfigInvalid(f"Unknown field {part} in naming pattern {pattern}", pattern=pattern)
            regex += _FIELD_REGEX[field]
        else:
            regex += re.escape(part)
    try:
        return re.compile(regex + "$")
    except re.error as e:
        raise ConfigInvalid(f"Naming pattern {pattern} is invalid: {e}", pattern=pattern)


def check_naming_pattern(pattern):
    """A tile naming pattern must name both the tile id and the modality."""
    missing = [f for f in ("id", "modality") if f not in pattern_to_regex(pattern).groupindex]
    if missing:
        raise ConfigInvalid(f"Naming pattern {pattern} lacks {missing}", pattern=pattern)
    return pattern


def tile_file_name(tile_id, kind, pattern=FileNaming.DEFAULT_PATTERN):
    return pattern.format(id=tile_id, modality=ModalityKind(kind).value)


def mask_file_name(tile_id, structure):
    return FileNaming.MASK_PATTERN.format(id=tile_id, structure=StructureClass(structure).value)


def prob_file_name(tile_id, structure, model):
    return FileNaming.PROB_PATTERN.format(id=tile_id, structure=StructureClass(structure).value, model=model)
