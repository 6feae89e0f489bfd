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

"""Synthetic desk-scale dataset in the challenge layout"""

import logging
import os

import numpy as np

from mayakit.common import (ALS_TILE_SIZE, KIND_SHAPES, SENTINEL_TILE_SIZE, STRUCTURE_CLASSES, FileNaming,
                            ModalityKind, StructureClass, mask_kind, tile_file_name)
from mayakit.preprocess import S1Layout, S2Layout, mask_encode
from mayakit.raster_io import Raster, TileRecord, write_tiff_file
from mayakit.utils import item_rng, parallel_map

logger = logging.getLogger(__name__)

DEFAULT_TILE_COUNT = 32

# ALS bands: sky-view factor, positive openness, slope
BACKGROUND_LEVELS = (0.65, 0.35, 0.35)
BACKGROUND_NOISE = 0.04
STRUCTURE_CONTRAST = 0.4

# structure -> (probability of appearing, max instances, min size, max size)
STRUCTURE_LAYOUT = {
    StructureClass.BUILDING: (0.5, 3, 8, 30),
    StructureClass.PLATFORM: (0.4, 2, 30, 80),
    StructureClass.AGUADA: (0.15, 1, 10, 30),
}
# band raised (+1) or lowered (-1) by each structure
STRUCTURE_BANDS = {
    StructureClass.AGUADA: (0, -1.0),
    StructureClass.PLATFORM: (1, 1.0),
    StructureClass.BUILDING: (2, 1.0),
}

RAW_S1_DATES_PER_YEAR = ("0315", "0915")


def _draw_mask(rng, structure, size=ALS_TILE_SIZE):
    chance, max_count, lo, hi = STRUCTURE_LAYOUT[structure]
    mask = np.zeros((size, size), dtype=bool)
    if rng.random() >= chance:
        return mask
    rows, cols = np.ogrid[:size, :size]
    for _ in range(int(rng.integers(1, max_count + 1))):
        h, w = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        top, left = int(rng.integers(0, size - h + 1)), int(rng.integers(0, size - w + 1))
        if structure == StructureClass.AGUADA:
            cy, cx, r = top + h / 2, left + w / 2, min(h, w) / 2
            mask |= (rows - cy) ** 2 + (cols - cx) ** 2 <= r * r
        else:
            mask[top:top + h, left:left + w] = True
    return mask


def make_tile(tile_id, seed):
    """
    One synthetic tile with ALS, masks and Sentinel rasters.

    Every structure shifts one ALS band by a fixed contrast, so simple band
    thresholds can recover the masks.
    """
    size = ALS_TILE_SIZE
    rng = item_rng(seed, tile_id)
    masks = {s: _draw_mask(rng, s, size) for s in STRUCTURE_CLASSES}

    als = np.empty((size, size, 3), dtype=np.float64)
    for band, level in enumerate(BACKGROUND_LEVELS):
        als[:, :, band] = level + rng.normal(0.0, BACKGROUND_NOISE, size=(size, size))
    for structure, mask in masks.items():
        band, sign = STRUCTURE_BANDS[structure]
        als[:, :, band][mask] += sign * STRUCTURE_CONTRAST
    als = np.floor(np.clip(als, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)

    record = TileRecord(tile_id)
    record.add(ModalityKind.ALS, Raster(als))
    for structure, mask in masks.items():
        record.add(mask_kind(structure), mask_encode(mask))
    for kind in (ModalityKind.S1, ModalityKind.S2):
        shape = KIND_SHAPES[kind]
        data = rng.random((shape.height, shape.width, shape.bands)).astype(np.float32)
        if kind == ModalityKind.S2:
            # the per-date cloud mask band holds 0 or 1
            data[:, :, len(S2Layout.BANDS)::len(S2Layout.PER_DATE)] = \
                (data[:, :, len(S2Layout.BANDS)::len(S2Layout.PER_DATE)] < 0.2).astype(np.float32)
        record.add(kind, Raster(data))
    return record


def raw_s1_acquisitions(tile_id, seed):
    """Per-date linear sigma0 rasters: (polarization, orbit, date) -> Raster."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(tile_id), 1]))
    acquisitions = {}
    for polarization in S1Layout.POLARIZATIONS:
        for orbit in S1Layout.ORBITS:
            for year in S1Layout.YEARS:
                for day in RAW_S1_DATES_PER_YEAR:
                    db = rng.uniform(-25.0, 0.0, size=(SENTINEL_TILE_SIZE, SENTINEL_TILE_SIZE))
                    sigma0 = np.power(10.0, db / 10.0).astype(np.float32)
                    acquisitions[(polarization, orbit, f"{year}{day}")] = Raster(sigma0)
    return acquisitions


def write_record(record, out_dir, pattern=FileNaming.DEFAULT_PATTERN):
    written = []
    for kind in sorted(record.rasters, key=lambda k: k.value):
        path = os.path.join(out_dir, tile_file_name(record.tile_id, kind, pattern))
        write_tiff_file(path, record.rasters[kind])
        written.append(path)
    return written


def write_fixtures(out_dir, count=DEFAULT_TILE_COUNT, seed=0, raw_s1=False, jobs=1, first_id=1):
    """
    Write ``count`` synthetic tiles to ``out_dir``.

    :return: sorted list of written file paths
    """
    os.makedirs(out_dir, exist_ok=True)

    def build(tile_id):
        written = write_record(make_tile(tile_id, seed), out_dir)
        if raw_s1:
            for (polarization, orbit, date), raster in raw_s1_acquisitions(tile_id, seed).items():
                name = FileNaming.S1_RAW_PATTERN.format(id=tile_id, polarization=polarization, orbit=orbit,
                                                        date=date)
                path = os.path.join(out_dir, name)
                write_tiff_file(path, raster)
                written.append(path)
        return written

    written = [p for paths in parallel_map(build, range(first_id, first_id + count), jobs) for p in paths]
    logger.info("Wrote %d fixture tiles (%d files) to %s", count, len(written), out_dir)
    return sorted(written)
