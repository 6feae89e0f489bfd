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

"""Predictors, dihedral test-time augmentation and voting"""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mayakit.augment import ELEMENTS, dihedral_apply, inverse
from mayakit.common import ALS_TILE_SIZE, STRUCTURE_CLASSES, ModalityKind, StructureClass, prob_file_name, prob_kind
from mayakit.errors import ConfigInvalid, EmptyEnsemble, MissingProbMap, ShapeMismatch
from mayakit.manifest import SchemaName, load_json
from mayakit.postprocess import binarize
from mayakit.raster_io import Raster, TileRecord, read_tiff_file
from mayakit.utils import parallel_map

logger = logging.getLogger(__name__)


class VoteMethod:
    SOFT = "soft"
    HARD = "hard"


def _mean_of_sorted(stack):
    """
    Per-pixel mean of stacked maps, summed in ascending order in float64.

    Sorting makes the result independent of member order and exact for
    identical members.
    """
    stack = np.sort(np.asarray(stack, dtype=np.float64), axis=0)
    return (stack.sum(axis=0) / stack.shape[0]).astype(np.float32)


def _prob_array(prob):
    data = prob.data if isinstance(prob, Raster) else np.asarray(prob)
    return data[:, :, 0] if data.ndim == 3 else data


def transform_record(record, element):
    """Copy of a record with every raster transformed by a dihedral element."""
    rasters = {kind: dihedral_apply(raster, element) for kind, raster in record.rasters.items()}
    return TileRecord(record.tile_id, rasters, pseudo=record.pseudo)


class Predictor(ABC):
    """
    Maps a TileRecord to a probability map per structure class.

    ``prepare`` runs once per tile before any transform, so inputs a
    predictor loads on its own are transformed along with the record.
    Implementations must be safe to call from several threads on distinct
    tiles.
    """

    name = "predictor"

    def prepare(self, record):
        return record

    @abstractmethod
    def predict(self, record, structure):
        pass


class ConstantPredictor(Predictor):

    def __init__(self, value, size=ALS_TILE_SIZE):
        if not 0.0 <= value <= 1.0:
            raise ConfigInvalid("Constant prediction must lie in [0, 1]", value=value)
        self.value = float(value)
        self.size = size
        self.name = f"constant-{value:g}"

    def predict(self, record, structure):
        als = record.get(ModalityKind.ALS)
        shape = (als.height, als.width) if als is not None else (self.size,) * 2
        return np.full(shape, self.value, dtype=np.float32)


class FileBackedPredictor(Predictor):
    """Serves precomputed ``tile_<id>_prob_<class>_<model>.tif`` rasters."""

    def __init__(self, directory, model):
        self.directory = directory
        self.model = model
        self.name = model

    def prepare(self, record):
        prepared = TileRecord(record.tile_id, dict(record.rasters), pseudo=record.pseudo)
        for structure in STRUCTURE_CLASSES:
            path = os.path.join(self.directory, prob_file_name(record.tile_id, structure, self.model))
            if os.path.isfile(path):
                prepared.rasters[prob_kind(structure)] = read_tiff_file(path, expected_kind=prob_kind(structure))
        return prepared

    def predict(self, record, structure):
        raster = record.get(prob_kind(structure))
        if raster is None:
            raise MissingProbMap(f"No {self.model} probability map for tile {record.tile_id}",
                                 tile_id=record.tile_id, structure=StructureClass(structure).value)
        return _prob_array(raster).astype(np.float32)


class HeuristicBaseline(Predictor):
    """
    Per-pixel logistic score of one ALS band per class, smoothed with a 5x5
    box filter. Buildings respond to slope, platforms to openness and aguadas
    to a low sky-view factor.
    """

    # band index, sign
    FEATURES = {
        StructureClass.AGUADA: (0, -1.0),
        StructureClass.PLATFORM: (1, 1.0),
        StructureClass.BUILDING: (2, 1.0),
    }
    GAIN = 12.0
    CENTER = 0.55
    SMOOTHING = 5

    def __init__(self, jitter=0):
        self.jitter = int(jitter)
        self.name = f"heuristic-j{self.jitter}"
        self.gain = self.GAIN
        self.center = self.CENTER
        if self.jitter:
            rng = np.random.default_rng(self.jitter)
            self.gain = self.GAIN * float(rng.uniform(0.8, 1.2))
            self.center = self.CENTER + float(rng.uniform(-0.05, 0.05))

    def predict(self, record, structure):
        als = record.get(ModalityKind.ALS)
        if als is None:
            raise MissingProbMap(f"Tile {record.tile_id} has no ALS raster", tile_id=record.tile_id)
        band, sign = self.FEATURES[StructureClass(structure)]
        values = als.data[:, :, band].astype(np.float64) / 255.0
        feature = values if sign > 0 else 1.0 - values
        score = 1.0 / (1.0 + np.exp(-self.gain * (feature - self.center)))
        smoothed = ndimage.uniform_filter(score, size=self.SMOOTHING, mode="reflect")
        return np.clip(smoothed, 0.0, 1.0).astype(np.float32)


def create_predictor(source, jitter=0):
    """
    Predictor from its command line form: ``heuristic``, ``constant:<v>`` or
    ``file:<directory>:<model>``.
    """
    kind, _, rest = source.partition(":")
    if kind == "heuristic":
        return HeuristicBaseline(jitter)
    if kind == "constant":
        try:
            return ConstantPredictor(float(rest))
        except ValueError:
            raise ConfigInvalid(f"Invalid constant predictor {source}")
    if kind == "file":
        directory, _, model = rest.rpartition(":")
        if not directory or not model:
            raise ConfigInvalid(f"File predictor needs file:<directory>:<model>, got {source}")
        return FileBackedPredictor(directory, model)
    raise ConfigInvalid(f"Unknown predictor {source}")


def tta_predict(predictor, record, structure):
    """Mean over the 8 dihedral elements of the back-transformed predictions."""
    prepared = predictor.prepare(record)
    outputs = []
    for element in ELEMENTS:
        prediction = predictor.predict(transform_record(prepared, element), structure)
        outputs.append(dihedral_apply(np.asarray(prediction), inverse(element)))
    return _mean_of_sorted(outputs)


def predict_tile(predictor, record, structures=STRUCTURE_CLASSES, tta=True):
    if tta:
        return {StructureClass(s).value: tta_predict(predictor, record, s) for s in structures}
    prepared = predictor.prepare(record)
    return {StructureClass(s).value: np.asarray(predictor.predict(prepared, s), dtype=np.float32)
            for s in structures}


def predict_tiles(predictor, records, structures=STRUCTURE_CLASSES, tta=True, jobs=1):
    """Probability maps per tile id and class, computed tile-parallel."""
    maps = parallel_map(lambda r: predict_tile(predictor, r, structures, tta), records, jobs)
    return {r.tile_id: m for r, m in zip(records, maps)}


def _stack(maps, what):
    maps = [_prob_array(m) for m in maps]
    if not maps:
        raise EmptyEnsemble(f"{what} needs at least one member")
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise ShapeMismatch(f"{what} members differ in shape: {sorted(shapes)}")
    return maps


def soft_vote(maps):
    return _mean_of_sorted(_stack(maps, "soft_vote"))


def hard_vote(masks):
    """Strict majority; exact ties are false."""
    masks = _stack(masks, "hard_vote")
    count = np.sum([np.asarray(m, dtype=bool) for m in masks], axis=0)
    return 2 * count > len(masks)


def vote(maps, method=VoteMethod.SOFT, threshold=0.5):
    """
    Combine member probability maps. Hard voting binarizes each member
    first and returns a boolean mask.
    """
    if method == VoteMethod.SOFT:
        return soft_vote(maps)
    if method == VoteMethod.HARD:
        return hard_vote([binarize(m, threshold) for m in _stack(maps, "vote")])
    raise ConfigInvalid(f"Unknown vote method {method}")


@dataclass(frozen=True)
class Roster:
    models: tuple
    members: dict
    vote: str = VoteMethod.SOFT
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, document):
        models = tuple(document["models"])
        members = {}
        for structure in STRUCTURE_CLASSES:
            chosen = tuple(document.get("members", {}).get(structure.value, models))
            unknown = [m for m in chosen if m not in models]
            if unknown:
                raise ConfigInvalid(f"Roster members {unknown} for {structure.value} are not declared models")
            members[structure.value] = chosen
        return cls(models, members, document.get("vote", VoteMethod.SOFT), document.get("threshold", 0.5))


def load_roster(path):
    return Roster.from_dict(load_json(path, SchemaName.ROSTER))


def ensemble_probabilities(roster, prob_dir, tile_id, structure):
    """Vote of the roster members' probability files for one tile and class."""
    structure = StructureClass(structure)
    maps = []
    for model in roster.members[structure.value]:
        path = os.path.join(prob_dir, prob_file_name(tile_id, structure, model))
        if not os.path.isfile(path):
            raise MissingProbMap(f"Missing {path}", tile_id=tile_id, structure=structure.value, model=model)
        maps.append(read_tiff_file(path, expected_kind=prob_kind(structure)))
    result = vote(maps, roster.vote, roster.threshold)
    return result.astype(np.float32)
