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

import json
import os

import numpy as np
import pytest

from mayakit.common import STRUCTURE_CLASSES, mask_file_name
from mayakit.errors import InputMissing, MissingClass, ShapeMismatch
from mayakit.evaluate import (SegMetrics, average_metrics, confusion_counts, dataset_score, leaderboard,
                              render_csv, render_json, round_half_up, score_directories, score_report, tile_iou,
                              tile_metrics)
from mayakit.preprocess import mask_encode
from mayakit.raster_io import write_tiff_file

# name, printed overall, aguada, platform, building
TOP_SUBMISSIONS = [
    ("Aksell", 0.8341, 0.9844, 0.7651, 0.7530),
    ("ArchAI", 0.8316, 0.9873, 0.7611, 0.7464),
    ("German Computer Archaeologists", 0.8275, 0.9851, 0.7404, 0.7569),
    ("dmitrykonov", 0.8262, 0.9836, 0.7542, 0.7409),
    ("The Sentinels", 0.8183, 0.9854, 0.7300, 0.7394),
    ("taka", 0.8127, 0.9771, 0.7354, 0.7256),
    ("cayala", 0.8110, 0.9863, 0.7082, 0.7386),
    ("sankovalev", 0.8110, 0.9844, 0.7421, 0.7066),
]

# class, set, iou_pos, iou_neg, miou, tpr, fpr, tnr, fnr, ppv
FOLD_AVERAGES = [
    ("building", "train", 0.7330, 0.9948, 0.8639, 0.8454, 0.0023, 0.9976, 0.1545, 0.8639),
    ("building", "valid", 0.7215, 0.9946, 0.8581, 0.8269, 0.0024, 0.9976, 0.1730, 0.8560),
    ("platform", "train", 0.7367, 0.9899, 0.8633, 0.8619, 0.0053, 0.9946, 0.1380, 0.8447),
    ("platform", "valid", 0.6350, 0.9899, 0.8125, 0.8201, 0.0061, 0.9938, 0.1798, 0.7464),
    ("aguada", "train", 0.3815, 0.9969, 0.6892, 0.7285, 0.0017, 0.9982, 0.2714, 0.6692),
    ("aguada", "valid", 0.4034, 0.9979, 0.7006, 0.6785, 0.0010, 0.9989, 0.3214, 0.6877),
    ("average", "train", 0.6171, 0.9939, 0.8055, 0.8119, 0.0031, 0.9968, 0.1880, 0.7926),
    ("average", "valid", 0.5866, 0.9941, 0.7904, 0.7752, 0.0032, 0.9968, 0.2247, 0.7634),
]

# printed values carry four decimals
PRINT_TOLERANCE = 5e-5 + 1e-9


def _metrics(row):
    return SegMetrics(*row[2:])


def _oracle_metrics(pred, gt):
    tp = fp = tn = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1

    def ratio(a, b):
        return 1.0 if b == 0 else a / b

    iou_pos = ratio(tp, tp + fp + fn)
    iou_neg = ratio(tn, tn + fp + fn)
    return (tp, fp, tn, fn), SegMetrics(
        iou_pos=iou_pos, iou_neg=iou_neg, miou=(iou_pos + iou_neg) / 2,
        tpr=ratio(tp, tp + fn), fpr=fp / (fp + tn) if fp + tn else 0.0,
        tnr=ratio(tn, tn + fp), fnr=fn / (tp + fn) if tp + fn else 0.0, ppv=ratio(tp, tp + fp))


def test_tile_iou_edge_cases():
    empty = np.zeros((8, 8), dtype=bool)
    full = np.ones((8, 8), dtype=bool)
    assert tile_iou(empty, empty) == 1.0
    assert tile_iou(full, empty) == 0.0
    left = np.zeros((8, 8), dtype=bool)
    left[:, :4] = True
    assert tile_iou(left, ~left) == 0.0
    assert tile_iou(left, full) == 0.5
    with pytest.raises(ShapeMismatch):
        tile_iou(empty, np.zeros((4, 4), dtype=bool))


def test_perfect_prediction_metrics():
    gt = np.zeros((6, 6), dtype=bool)
    gt[1:3, 1:3] = True
    metrics = tile_metrics(gt, gt)
    assert (metrics.iou_pos, metrics.iou_neg, metrics.tpr, metrics.tnr, metrics.ppv) == (1.0,) * 5
    assert (metrics.fpr, metrics.fnr) == (0.0, 0.0)


def test_zero_denominators_keep_rates_complementary():
    empty = np.zeros((4, 4), dtype=bool)
    metrics = tile_metrics(empty, empty)
    assert (metrics.tpr, metrics.fnr) == (1.0, 0.0)
    assert (metrics.tnr, metrics.fpr) == (1.0, 0.0)
    full = np.ones((4, 4), dtype=bool)
    metrics = tile_metrics(full, full)
    assert (metrics.tnr, metrics.fpr) == (1.0, 0.0)
    assert metrics.iou_neg == 1.0
    metrics = tile_metrics(empty, full)
    assert (metrics.tpr, metrics.fnr, metrics.fpr) == (0.0, 1.0, 0.0)


def test_metrics_match_confusion_oracle():
    rng = np.random.default_rng(3)
    for index in range(1000):
        height, width = (int(v) for v in rng.integers(1, 65, size=2))
        pred = rng.random((height, width)) < rng.random()
        gt = rng.random((height, width)) < rng.random()
        if index == 0:
            pred, gt = np.zeros_like(pred), np.zeros_like(gt)
        elif index == 1:
            pred, gt = np.ones_like(pred), np.zeros_like(gt)

        counts, expected = _oracle_metrics(pred, gt)
        assert confusion_counts(pred, gt) == counts
        assert tile_metrics(pred, gt) == expected
        assert tile_iou(pred, gt) == expected.iou_pos

        metrics = expected
        if counts[0] + counts[3]:
            assert metrics.tpr + metrics.fnr == pytest.approx(1.0)
        if counts[1] + counts[2]:
            assert metrics.tnr + metrics.fpr == pytest.approx(1.0)


@pytest.mark.parametrize("row", FOLD_AVERAGES, ids=lambda row: f"{row[0]}-{row[1]}")
def test_fold_average_rows_are_consistent(row):
    printed = _metrics(row)
    recomputed = average_metrics([printed])
    assert abs(recomputed.miou - printed.miou) <= PRINT_TOLERANCE


@pytest.mark.parametrize("split", ["train", "valid"])
def test_class_rows_average_to_the_average_row(split):
    rows = [r for r in FOLD_AVERAGES if r[1] == split]
    averaged = average_metrics([_metrics(r) for r in rows if r[0] != "average"])
    printed = _metrics(next(r for r in rows if r[0] == "average"))
    for name, value in averaged.to_dict().items():
        assert abs(value - getattr(printed, name)) <= PRINT_TOLERANCE, name


def test_average_metrics_needs_entries():
    with pytest.raises(MissingClass):
        average_metrics([])


def test_dataset_score():
    tile_scores = {
        1: {"aguada": 1.0, "platform": 0.5, "building": 0.0},
        2: {"aguada": 0.5, "platform": 0.5, "building": 1.0},
    }
    per_class, overall = dataset_score(tile_scores)
    assert per_class == {"aguada": 0.75, "platform": 0.5, "building": 0.5}
    assert overall == pytest.approx(0.5833333333)

    with pytest.raises(MissingClass):
        dataset_score({1: {"aguada": 1.0, "platform": 1.0}})
    with pytest.raises(MissingClass):
        dataset_score({})


def test_overall_is_mean_of_class_averages():
    per_class = {"aguada": 0.9844, "platform": 0.7651, "building": 0.7530}
    overall = sum(per_class.values()) / 3
    assert overall == pytest.approx(0.834167, abs=1e-6)
    assert abs(overall - 0.8341) < 1e-4


def test_leaderboard_reproduces_the_challenge_ranking():
    entries = [(name, {"aguada": a, "platform": p, "building": b}) for name, _, a, p, b in reversed(TOP_SUBMISSIONS)]
    rows = leaderboard(entries)

    assert [r.name for r in rows] == [row[0] for row in TOP_SUBMISSIONS]
    assert [r.rank for r in rows] == [1, 2, 3, 4, 5, 6, 7, 7]
    for row, (_, printed, *_) in zip(rows, TOP_SUBMISSIONS):
        # the first row is printed truncated (0.834167 -> 0.8341)
        assert abs(row.avg_iou - printed) < 1e-4


def test_leaderboard_shared_and_skipped_ranks():
    rows = leaderboard([("a", {"aguada": 0.9, "platform": 0.9, "building": 0.9}),
                        ("b", {"aguada": 0.9, "platform": 0.9, "building": 0.9}),
                        ("c", {"aguada": 0.1, "platform": 0.1, "building": 0.1})])
    assert [(r.name, r.rank) for r in rows] == [("a", 1), ("b", 1), ("c", 3)]
    with pytest.raises(MissingClass):
        leaderboard([("a", {"aguada": 0.9})])


def test_round_half_up():
    assert round_half_up(0.81105) == 0.8111
    assert round_half_up(0.12345) == 0.1235
    assert round_half_up(0.5) == 0.5


def test_render_leaderboard():
    entries = [(name, {"aguada": a, "platform": p, "building": b}) for name, _, a, p, b in TOP_SUBMISSIONS[-2:]]
    rows = leaderboard(entries)
    lines = render_csv(rows).splitlines()
    assert lines[0] == "rank,name,avg_iou,aguada,platform,building"
    assert lines[1] == "1,cayala,0.8110,0.9863,0.7082,0.7386"
    assert lines[2] == "1,sankovalev,0.8110,0.9844,0.7421,0.7066"

    document = json.loads(render_json(rows))
    assert document[0]["avg_iou"] == 0.811
    assert document[1]["name"] == "sankovalev"


def _write_masks(directory, tile_id, masks):
    for structure in STRUCTURE_CLASSES:
        write_tiff_file(os.path.join(directory, mask_file_name(tile_id, structure)), mask_encode(masks[structure]))


def test_score_directories(tmp_path):
    gt_dir, pred_dir = tmp_path / "gt", tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    truth = {s: np.zeros((480, 480), dtype=bool) for s in STRUCTURE_CLASSES}
    truth[STRUCTURE_CLASSES[1]][:10, :10] = True
    prediction = dict(truth)
    prediction[STRUCTURE_CLASSES[1]] = np.zeros((480, 480), dtype=bool)
    prediction[STRUCTURE_CLASSES[1]][:10, :5] = True
    _write_masks(str(gt_dir), 4, truth)
    _write_masks(str(pred_dir), 4, prediction)

    scores = score_directories(str(pred_dir), str(gt_dir), jobs=2)
    assert scores == {"4": {"aguada": 1.0, "platform": 0.5, "building": 1.0}}
    report = score_report(scores)
    assert report["tiles"] == 1
    assert report["overall"] == pytest.approx(2.5 / 3)

    os.remove(os.path.join(str(pred_dir), mask_file_name(4, STRUCTURE_CLASSES[2])))
    with pytest.raises(MissingClass):
        score_directories(str(pred_dir), str(gt_dir))
    with pytest.raises(InputMissing):
        score_directories(str(tmp_path / "missing"), str(gt_dir))
