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

from collections import Counter

import numpy as np
import pytest
from sklearn.model_selection import StratifiedKFold

from mayakit.common import ModalityKind, StructureClass, mask_kind
from mayakit.dataset import (CLASS_CROP_SIZES, FoldAssignment, SamplerWeights, SplitStrategy, TileSummary,
                             crop_position_sampler, fold_split, fraction_bins, information_content,
                             measure_distribution, merge_manifest, oversample, pseudo_label_merge,
                             stratified_kfold, summarize, summarize_tiles, valid_crop_positions, weighted_sample)
from mayakit.errors import (ConfigInvalid, CropTooLarge, MissingProbMap, NoValidPosition, TooFewTiles,
                            UnsatisfiableWeight)
from mayakit.preprocess import mask_decode
from mayakit.raster_io import TileRecord


def _summary(tile_id, aguada=0.0, platform=0.0, building=0.0):
    return TileSummary(tile_id, {"aguada": aguada, "platform": platform, "building": building},
                       background_fraction=1.0 - aguada - platform - building)


def test_fraction_bins():
    assert fraction_bins([0, 0.01, 0.1, 0.2]) == [0, 0, 1, 2]
    assert fraction_bins([0.05, 0.15, 1.0]) == [1, 2, 2]


def test_summarize_records(make_record):
    mask = np.zeros((10, 10), dtype=bool)
    mask[:5, :2] = True
    record = make_record(3, np.zeros((10, 10, 3), dtype=np.uint8), masks={"building": mask})
    summary = summarize(record)
    assert summary.fractions == {"aguada": 0.0, "platform": 0.0, "building": 0.1}
    assert summary.background_fraction == 0.9
    assert summary.contains("building") and not summary.contains("aguada")
    assert not summary.contains("background")
    assert summarize(summary) is summary

    unlabeled = make_record(4, np.zeros((10, 10, 3), dtype=np.uint8))
    assert summarize(unlabeled) is None
    assert [s.tile_id for s in summarize_tiles([record, unlabeled])] == [3]


def test_measure_distribution():
    summaries = [_summary(1), _summary(2, building=0.2), _summary(3, building=0.1, aguada=0.3)]
    distribution = measure_distribution(summaries)
    assert distribution.tiles == 3
    assert distribution.tile_count == {"background": 1, "aguada": 1, "platform": 0, "building": 2}
    assert distribution.pixel_fraction["building"] == pytest.approx(0.1)
    assert distribution.pixel_fraction["background"] == pytest.approx(0.8)


def test_presence_split_is_balanced_per_stratum():
    summaries = [_summary(i, building=0.1 if i % 3 == 0 else 0.0) for i in range(1, 24)]
    folds = stratified_kfold(summaries, k=5, seed=13)
    assert sorted(folds.assignment) == list(range(1, 24))
    assert set(folds.assignment.values()) == set(range(5))
    for stratum in (True, False):
        counts = Counter(folds.assignment[s.tile_id] for s in summaries if s.contains("building") == stratum)
        sizes = [counts.get(f, 0) for f in range(5)]
        assert max(sizes) - min(sizes) <= 1
    overall = Counter(folds.assignment.values())
    assert max(overall.values()) - min(overall.values()) <= 1

    assert stratified_kfold(summaries, k=5, seed=13) == folds
    assert stratified_kfold(summaries, k=5, seed=14).assignment != folds.assignment


def test_fraction_split():
    fractions = [0.0, 0.01, 0.1, 0.2] * 5
    summaries = [_summary(i, aguada=f) for i, f in enumerate(fractions)]
    folds = stratified_kfold(summaries, k=5, strategy=SplitStrategy.FRACTION, structure="aguada", seed=1)
    for stratum in (0, 1, 2):
        members = [s.tile_id for s, b in zip(summaries, fraction_bins(fractions)) if b == stratum]
        sizes = Counter(folds.assignment[t] for t in members)
        assert max(sizes.values()) - min(sizes.get(f, 0) for f in range(5)) <= 1


def test_presence_split_matches_stratified_kfold():
    summaries = [_summary(i, platform=0.2 if i % 4 == 0 else 0.0) for i in range(1, 21)]
    folds = stratified_kfold(summaries, k=4, structure="platform", seed=2 ** 64 - 1)
    keys = [int(s.contains("platform")) for s in summaries]
    random_state = np.random.RandomState(np.random.MT19937(np.random.SeedSequence(2 ** 64 - 1)))
    splitter = StratifiedKFold(n_splits=4, shuffle=True, random_state=random_state)
    for fold, (_, valid_index) in enumerate(splitter.split(np.zeros(len(keys)), keys)):
        assert sorted(t for t, f in folds.assignment.items() if f == fold) == \
            sorted(summaries[i].tile_id for i in valid_index)


def test_small_strata_split_without_stratification():
    summaries = [_summary(1), _summary(2, building=0.3)]
    folds = stratified_kfold(summaries, k=2, seed=4)
    assert sorted(folds.assignment.values()) == [0, 1]


def test_split_errors():
    summaries = [_summary(i) for i in range(3)]
    with pytest.raises(TooFewTiles):
        stratified_kfold(summaries, k=5)
    with pytest.raises(ConfigInvalid):
        stratified_kfold(summaries, k=1)
    with pytest.raises(ConfigInvalid):
        stratified_kfold(summaries, k=2, strategy="random")


def test_fold_split():
    folds = FoldAssignment(3, {1: 0, 2: 1, 3: 2, 4: 0})
    assert fold_split(folds, 0) == ([2, 3], [1, 4])
    with pytest.raises(ConfigInvalid):
        fold_split(folds, 3)
    assert folds.to_dict()["assignment"] == {"1": 0, "2": 1, "3": 2, "4": 0}


def test_equal_weights_hit_every_class():
    summaries = [_summary(1), _summary(2, aguada=0.1), _summary(3, platform=0.2), _summary(4, building=0.3),
                 _summary(5, platform=0.1, building=0.1)]
    draws = weighted_sample(summaries, SamplerWeights.equal(), 100000, seed=8)
    frequencies = Counter(c for c, _ in draws)
    for cls in ("background", "aguada", "platform", "building"):
        assert abs(frequencies[cls] / 100000 - 0.25) <= 0.02
    for cls, tile_id in draws[:1000]:
        assert next(s for s in summaries if s.tile_id == tile_id).contains(cls)

    assert weighted_sample(summaries, SamplerWeights.equal(), 50, seed=8) == \
        weighted_sample(summaries, SamplerWeights.equal(), 50, seed=8)


def test_sampler_weights():
    weights = SamplerWeights.from_config({"aguada": 2, "building": 1})
    assert weights.weights == {"aguada": 2.0, "building": 1.0}
    assert SamplerWeights.from_config("equal") == SamplerWeights.equal()
    with pytest.raises(ConfigInvalid):
        SamplerWeights.from_config("rare-first")
    with pytest.raises(ConfigInvalid):
        SamplerWeights({"water": 1.0})
    with pytest.raises(UnsatisfiableWeight):
        SamplerWeights({"aguada": 0.0})
    with pytest.raises(UnsatisfiableWeight):
        weighted_sample([_summary(1)], SamplerWeights({"aguada": 1.0}), 10, seed=0)


def test_oversample():
    summaries = [_summary(i, aguada=0.1 if i in (3, 7) else 0.0) for i in range(10)]
    repeated = oversample(summaries, "aguada", 6)
    assert len(repeated) == 20
    assert [s.tile_id for s in repeated].count(3) == 6
    assert [s.tile_id for s in repeated][3:9] == [3] * 6
    with pytest.raises(ConfigInvalid):
        oversample(summaries, "aguada", 0)


def test_valid_crop_positions():
    mask = np.zeros((64, 64), dtype=bool)
    mask[40:44, 40:44] = True
    valid = valid_crop_positions(mask, crop=16, min_fraction=0.005)
    assert valid.shape == (49, 49)
    # more than 0.5 % of 256 pixels means at least 2
    assert valid[28, 28] and valid[40, 40] and valid[42, 42]
    assert not valid[43, 43]
    assert not valid[0, 0] and not valid[44, 44]
    assert not valid_crop_positions(mask, crop=16, min_fraction=16 / 256).any()

    top, left = crop_position_sampler(mask, crop=16, seed=2)
    assert valid[top, left]
    assert crop_position_sampler(mask, crop=16, seed=2) == (top, left)

    with pytest.raises(NoValidPosition):
        crop_position_sampler(np.zeros((64, 64), dtype=bool), crop=16)
    with pytest.raises(CropTooLarge):
        valid_crop_positions(mask, crop=65)
    assert CLASS_CROP_SIZES[StructureClass.AGUADA] == 352


def test_pseudo_label_merge(make_record):
    train = [make_record(1, np.zeros((8, 8, 3), dtype=np.uint8), masks={})]
    unlabeled = [make_record(50, np.zeros((8, 8, 3), dtype=np.uint8))]
    prob = np.zeros((8, 8), dtype=np.float32)
    prob[2:4, 2:4] = 0.9
    maps = {50: {"aguada": prob, "platform": prob * 0, "building": prob * 0}}

    merged = pseudo_label_merge(train, unlabeled, maps, threshold=0.5)
    assert [r.tile_id for r in merged] == [1, 50]
    pseudo = merged[1]
    assert pseudo.pseudo
    assert mask_decode(pseudo.get(mask_kind("aguada"))).sum() == 4
    assert not unlabeled[0].has(mask_kind("aguada"))
    assert merge_manifest(merged) == [{"tile_id": 1, "pseudo": False}, {"tile_id": 50, "pseudo": True}]

    with pytest.raises(MissingProbMap):
        pseudo_label_merge(train, unlabeled, {50: {"aguada": prob}})


def test_information_content():
    content = information_content()
    assert content["s1"]["bits"] == 2211840
    assert content["s2"]["bits"] == 1018368
    assert content["lidar"]["bits"] == 5529600
    assert [round(100 * content[k]["share"]) for k in ("s1", "s2", "lidar")] == [25, 12, 63]
    assert information_content(bits_per_sample={})["s2"]["bits"] == 24 * 24 * 221 * 32
    assert information_content([ModalityKind.ALS])["lidar"]["share"] == 1.0


def test_summaries_from_records_without_all_masks_are_skipped(make_record):
    record = TileRecord(1, {})
    assert summarize_tiles([record]) == []
