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

"""Class distribution, sampling, fold splitting and pseudo labels"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold

from mayakit.common import (BACKGROUND, KIND_SHAPES, SAMPLING_CLASSES, STRUCTURE_CLASSES, UINT8, ModalityKind,
                            StructureClass, mask_kind)
from mayakit.errors import (ConfigInvalid, CropTooLarge, MissingProbMap, NoValidPosition, TooFewTiles,
                            UnsatisfiableWeight)
from mayakit.postprocess import binarize
from mayakit.preprocess import mask_decode, mask_encode
from mayakit.raster_io import TileRecord
from mayakit.utils import parallel_map

logger = logging.getLogger(__name__)

FRACTION_THRESHOLDS = (0.05, 0.15)
DEFAULT_MIN_FRACTION = 0.005

CLASS_CROP_SIZES = {
    StructureClass.BUILDING: 256,
    StructureClass.PLATFORM: 256,
    StructureClass.AGUADA: 352,
}


class SplitStrategy:
    PRESENCE = "presence"
    FRACTION = "fraction"


@dataclass(frozen=True)
class TileSummary:
    """Annotated pixel fraction of every structure class in one tile"""

    tile_id: int
    fractions: dict
    background_fraction: float = 1.0
    pseudo: bool = False

    @property
    def is_background(self):
        return not any(v > 0 for v in self.fractions.values())

    def contains(self, cls):
        if cls == BACKGROUND:
            return self.is_background
        return self.fractions.get(StructureClass(cls).value, 0.0) > 0


@dataclass
class ClassDistribution:
    pixel_fraction: dict
    tile_count: dict
    tiles: int


def record_masks(record, lenient=False):
    """Decoded masks of a record, or None when any class mask is missing."""
    masks = {}
    for structure in STRUCTURE_CLASSES:
        raster = record.get(mask_kind(structure))
        if raster is None:
            return None
        masks[structure.value] = mask_decode(raster, lenient)
    return masks


def summarize(record, lenient=False):
    if isinstance(record, TileSummary):
        return record
    masks = record_masks(record, lenient)
    if masks is None:
        return None
    size = next(iter(masks.values())).size
    union = np.logical_or.reduce(list(masks.values()))
    return TileSummary(
        tile_id=record.tile_id,
        fractions={k: float(np.count_nonzero(v)) / size for k, v in masks.items()},
        background_fraction=float(size - np.count_nonzero(union)) / size,
        pseudo=record.pseudo,
    )


def summarize_tiles(tiles, lenient=False, jobs=1):
    """Summaries of all labeled tiles, skipping records without a full set of masks."""
    summaries = parallel_map(lambda t: summarize(t, lenient), tiles, jobs)
    skipped = sum(1 for s in summaries if s is None)
    if skipped:
        logger.warning("%d tiles without a full set of masks were skipped", skipped)
    return [s for s in summaries if s is not None]


def measure_distribution(tiles, lenient=False, jobs=1):
    """
    Pixel fractions and tile counts per class; background counts pixels and
    tiles without any structure, so fractions may overlap.
    """
    summaries = summarize_tiles(tiles, lenient, jobs)
    if not summaries:
        return ClassDistribution({c: 0.0 for c in SAMPLING_CLASSES}, {c: 0 for c in SAMPLING_CLASSES}, 0)
    pixel_fraction = {BACKGROUND: float(np.mean([s.background_fraction for s in summaries]))}
    tile_count = {BACKGROUND: sum(1 for s in summaries if s.is_background)}
    for structure in STRUCTURE_CLASSES:
        pixel_fraction[structure.value] = float(np.mean([s.fractions[structure.value] for s in summaries]))
        tile_count[structure.value] = sum(1 for s in summaries if s.contains(structure))
    return ClassDistribution(pixel_fraction, tile_count, len(summaries))


@dataclass(frozen=True)
class SamplerWeights:
    weights: dict = field(default_factory=lambda: {c: 1.0 for c in SAMPLING_CLASSES})

    def __post_init__(self):
        unknown = set(self.weights) - set(SAMPLING_CLASSES)
        if unknown:
            raise ConfigInvalid(f"Unknown sampling classes {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigInvalid("Sampling weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            raise UnsatisfiableWeight("At least one sampling weight must be positive")

    @classmethod
    def equal(cls):
        return cls()

    @classmethod
    def from_config(cls, value):
        if value in (None, "equal"):
            return cls.equal()
        if isinstance(value, str):
            raise ConfigInvalid(f"Unknown sampling weight preset {value}")
        return cls({str(c): float(w) for c, w in value.items()})


def weighted_sample(tiles, weights, n, seed):
    """
    Draw ``n`` (class, tile id) pairs: a class proportional to its weight,
    then a tile containing it uniformly.
    """
    summaries = summarize_tiles(tiles)
    classes = [c for c in SAMPLING_CLASSES if weights.weights.get(c, 0.0) > 0]
    pools = {c: [s.tile_id for s in summaries if s.contains(c)] for c in classes}
    empty = [c for c in classes if not pools[c]]
    if empty:
        raise UnsatisfiableWeight(f"No tile contains {empty}", classes=empty)

    rng = np.random.default_rng(seed)
    p = np.array([weights.weights[c] for c in classes], dtype=np.float64)
    drawn = rng.choice(len(classes), size=n, p=p / p.sum())
    picks = rng.random(n)
    draws = []
    for c, u in zip(drawn.tolist(), picks.tolist()):
        pool = pools[classes[c]]
        draws.append((classes[c], pool[min(int(u * len(pool)), len(pool) - 1)]))
    return draws


def oversample(tiles, structure, factor):
    """Repeat tiles containing ``structure`` ``factor`` times, duplicates adjacent."""
    if factor < 1:
        raise ConfigInvalid("Oversampling factor must be at least 1", factor=factor)
    out = []
    for tile in tiles:
        summary = summarize(tile)
        repeat = factor if summary is not None and summary.contains(structure) else 1
        out.extend([tile] * repeat)
    return out


def fraction_bins(fractions, thresholds=FRACTION_THRESHOLDS):
    """Bin index per fraction over [0, t0), [t0, t1), ..., [tn, 1]."""
    return np.digitize(np.asarray(fractions, dtype=np.float64), thresholds).tolist()


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: dict
    strategy: str = SplitStrategy.PRESENCE

    def to_dict(self):
        return {"k": self.k, "strategy": self.strategy,
                "assignment": {str(tile_id): fold for tile_id, fold in sorted(self.assignment.items())}}


def _split_random_state(seed):
    """Seeded legacy generator for scikit-learn; accepts the full 64-bit seed range."""
    return np.random.RandomState(np.random.MT19937(np.random.SeedSequence(int(seed))))


def stratified_kfold(tiles, k=5, strategy=SplitStrategy.PRESENCE, structure=StructureClass.BUILDING, seed=0,
                     thresholds=FRACTION_THRESHOLDS):
    """
    Assign every labeled tile to one of ``k`` folds with ``StratifiedKFold``.

    Strata are the presence of ``structure`` or its binned pixel fraction.
    When no stratum holds ``k`` tiles the split falls back to a shuffled
    ``KFold``.
    """
    if k < 2:
        raise ConfigInvalid("At least 2 folds are required", k=k)
    summaries = sorted(summarize_tiles(tiles), key=lambda s: s.tile_id)
    if len(summaries) < k:
        raise TooFewTiles(f"{len(summaries)} tiles cannot fill {k} folds", tiles=len(summaries), k=k)

    structure = StructureClass(structure).value
    if strategy == SplitStrategy.PRESENCE:
        keys = [int(s.contains(structure)) for s in summaries]
    elif strategy == SplitStrategy.FRACTION:
        keys = fraction_bins([s.fractions[structure] for s in summaries], thresholds)
    else:
        raise ConfigInvalid(f"Unknown split strategy {strategy}")

    keys = np.asarray(keys)
    random_state = _split_random_state(seed)
    if np.bincount(keys).max() >= k:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=random_state)
    else:
        logger.warning("No %s stratum holds %d tiles, splitting without stratification", strategy, k)
        splitter = KFold(n_splits=k, shuffle=True, random_state=random_state)

    assignment = {}
    for fold, (_, valid_index) in enumerate(splitter.split(np.zeros(len(keys)), keys)):
        for index in valid_index.tolist():
            assignment[summaries[index].tile_id] = fold
    logger.info("Assigned %d tiles to %d folds by %s of %s", len(assignment), k, strategy, structure)
    return FoldAssignment(k, assignment, strategy)


def fold_split(assignment, fold):
    """(training ids, validation ids) for one fold."""
    if not 0 <= fold < assignment.k:
        raise ConfigInvalid(f"Fold {fold} out of range 0..{assignment.k - 1}")
    train = sorted(t for t, f in assignment.assignment.items() if f != fold)
    valid = sorted(t for t, f in assignment.assignment.items() if f == fold)
    return train, valid


def valid_crop_positions(mask, crop=256, min_fraction=DEFAULT_MIN_FRACTION):
    """
    Boolean grid over top-left corners whose crop window holds more than
    ``min_fraction`` annotated pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if crop > height or crop > width:
        raise CropTooLarge(f"Crop {crop} exceeds mask {height}x{width}", crop=crop)
    table = np.zeros((height + 1, width + 1), dtype=np.int64)
    table[1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)
    counts = table[crop:, crop:] - table[:-crop, crop:] - table[crop:, :-crop] + table[:-crop, :-crop]
    return counts > min_fraction * crop * crop


def crop_position_sampler(mask, crop=256, min_fraction=DEFAULT_MIN_FRACTION, seed=None):
    """Uniform (top, left) among the valid crop positions."""
    valid = valid_crop_positions(mask, crop, min_fraction)
    candidates = np.flatnonzero(valid)
    if not candidates.size:
        raise NoValidPosition(f"No {crop}x{crop} window has more than {min_fraction} annotated pixels")
    rng = np.random.default_rng(seed)
    index = int(candidates[int(rng.integers(candidates.size))])
    return index // valid.shape[1], index % valid.shape[1]


def pseudo_label_merge(train, unlabeled, prob_maps, threshold=0.5):
    """
    Attach binarized predictions as masks to unlabeled tiles and append them
    to the training set, flagged as pseudo labeled.

    :param prob_maps: mapping tile id -> class -> probability map
    """
    merged = list(train)
    for record in unlabeled:
        maps = prob_maps.get(record.tile_id, {})
        pseudo = TileRecord(record.tile_id, dict(record.rasters), pseudo=True)
        for structure in STRUCTURE_CLASSES:
            prob = maps.get(structure.value, maps.get(structure))
            if prob is None:
                raise MissingProbMap(f"Tile {record.tile_id} has no {structure.value} probability map",
                                     tile_id=record.tile_id, structure=structure.value)
            pseudo.rasters[mask_kind(structure)] = mask_encode(binarize(prob, threshold))
        merged.append(pseudo)
    logger.info("Merged %d pseudo labeled tiles into %d training tiles", len(unlabeled), len(train))
    return merged


def merge_manifest(records):
    return [{"tile_id": r.tile_id, "pseudo": bool(r.pseudo)} for r in records]


# S2 samples are counted at 8 bits
COUNTED_BITS = {ModalityKind.S2: 8}
INFORMATION_KINDS = (ModalityKind.S1, ModalityKind.S2, ModalityKind.ALS)


def information_content(kinds=INFORMATION_KINDS, bits_per_sample=None):
    """Gross bits per tile of each modality and its share of the total."""
    bits_per_sample = COUNTED_BITS if bits_per_sample is None else bits_per_sample
    bits = {}
    for kind in kinds:
        shape = KIND_SHAPES[ModalityKind(kind)]
        sample_bits = bits_per_sample.get(kind, 8 if shape.sample_type == UINT8 else 32)
        bits[ModalityKind(kind).value] = shape.width * shape.height * shape.bands * sample_bits
    total = sum(bits.values())
    return {kind: {"bits": value, "share": value / total} for kind, value in bits.items()}
