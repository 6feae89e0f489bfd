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

import numpy as np
import pytest

from mayakit.common import STRUCTURE_CLASSES, ModalityKind, mask_kind
from mayakit.fixtures import write_fixtures
from mayakit.preprocess import mask_encode
from mayakit.raster_io import Raster, TileRecord


@pytest.fixture
def rng():
    return np.random.default_rng(20230601)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Three synthetic challenge tiles shared by the read-only tests."""
    directory = tmp_path_factory.mktemp("fixtures")
    write_fixtures(str(directory), count=3, seed=7)
    return str(directory)


def small_record(tile_id, image, masks=None, pseudo=False):
    """
    TileRecord with an ALS-like image and optional masks of any size.

    Rasters are put in place directly, so shapes other than 480x480 are allowed.
    """
    rasters = {ModalityKind.ALS: Raster(np.asarray(image))}
    for structure in STRUCTURE_CLASSES:
        if masks is not None:
            rasters[mask_kind(structure)] = mask_encode(masks.get(structure.value, np.zeros(image.shape[:2], bool)))
    return TileRecord(tile_id, rasters, pseudo=pseudo)


@pytest.fixture
def make_record():
    return small_record
