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

"""IoU scoring, confusion statistics and leaderboards"""

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from mayakit.common import STRUCTURE_CLASSES, FileNaming, StructureClass, mask_file_name, pattern_to_regex
from mayakit.errors import InputMissing, MissingClass, ShapeMismatch
from mayakit.preprocess import mask_decode
from mayakit.raster_io import read_tiff_file
from mayakit.utils import parallel_map

logger = logging.getLogger(__name__)

DISPLAY_DECIMALS = 4


@dataclass(frozen=True)
class SegMetrics:
    iou_pos: float
    iou_neg: float
    miou: float
    tpr: float
    fpr: float
    tnr: float
    fnr: float
    ppv: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    name: str
    avg_iou: float
    aguada: float
    platform: float
    building: float


def _check_shapes(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"Prediction shape {pred.shape} differs from ground truth {gt.shape}",
                            pred=pred.shape, gt=gt.shape)
    return pred, gt


def _ratio(numerator, denominator):
    # empty agreement counts as perfect
    return 1.0 if denominator == 0 else numerator / denominator


def confusion_counts(pred, gt):
    pred, gt = _check_shapes(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, tn, fn


def tile_iou(pred, gt):
    pred, gt = _check_shapes(pred, gt)
    return _ratio(int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred | gt)))


def tile_metrics(pred, gt):
    tp, fp, tn, fn = confusion_counts(pred, gt)
    iou_pos = _ratio(tp, tp + fp + fn)
    iou_neg = _ratio(tn, tn + fp + fn)
    return SegMetrics(
        iou_pos=iou_pos,
        iou_neg=iou_neg,
        miou=(iou_pos + iou_neg) / 2,
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn) if fp + tn else 0.0,
        tnr=_ratio(tn, tn + fp),
        fnr=_ratio(fn, tp + fn) if tp + fn else 0.0,
        ppv=_ratio(tp, tp + fp),
    )


def average_metrics(metrics):
    """Field-wise mean; miou is recomputed from the averaged IoUs."""
    metrics = list(metrics)
    if not metrics:
        raise MissingClass("average_metrics needs at least one entry")
    means = {f.name: float(np.mean([getattr(m, f.name) for m in metrics])) for f in fields(SegMetrics)}
    means["miou"] = (means["iou_pos"] + means["iou_neg"]) / 2
    return SegMetrics(**means)


def dataset_score(tile_scores):
    """
    Per-class averages over tiles and their mean.

    :param tile_scores: mapping tile id -> mapping class -> IoU
    :return: (dict class -> average IoU, overall average)
    """
    if not tile_scores:
        raise MissingClass("No tiles scored")
    per_class = {}
    for structure in STRUCTURE_CLASSES:
        values = []
        for tile_id in sorted(tile_scores):
            scores = {StructureClass(k): v for k, v in tile_scores[tile_id].items()}
            if structure not in scores:
                raise MissingClass(f"Tile {tile_id} has no {structure.value} score",
                                   tile_id=tile_id, structure=structure.value)
            values.append(scores[structure])
        per_class[structure.value] = float(np.mean(values))
    overall = sum(per_class.values()) / len(per_class)
    return per_class, overall


def round_half_up(value, decimals=DISPLAY_DECIMALS):
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def leaderboard(entries):
    """
    Rank entries by overall average IoU; equal display values share a rank.

    :param entries: iterable of (name, {class: average IoU})
    :return: list of LeaderboardRow, best first
    """
    rows = []
    for name, averages in entries:
        averages = {StructureClass(k).value: float(v) for k, v in averages.items()}
        missing = [s.value for s in STRUCTURE_CLASSES if s.value not in averages]
        if missing:
            raise MissingClass(f"Entry {name} lacks {missing}", name=name)
        overall = sum(averages[s.value] for s in STRUCTURE_CLASSES) / len(STRUCTURE_CLASSES)
        rows.append((name, overall, averages))

    rows.sort(key=lambda row: (-round_half_up(row[1]), row[0]))
    ranked = []
    for position, (name, overall, averages) in enumerate(rows, start=1):
        rank = position
        if ranked and round_half_up(ranked[-1].avg_iou) == round_half_up(overall):
            rank = ranked[-1].rank
        ranked.append(LeaderboardRow(rank=rank, name=name, avg_iou=overall, **averages))
    return ranked


LEADERBOARD_COLUMNS = ("rank", "name", "avg_iou", "aguada", "platform", "building")


def _display(value):
    return f"{round_half_up(value):.{DISPLAY_DECIMALS}f}" if isinstance(value, float) else value


def render_csv(rows, columns=LEADERBOARD_COLUMNS):
    """Rows (dataclasses or dicts) as CSV with 4-decimal floats."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = row if isinstance(row, dict) else asdict(row)
        writer.writerow([_display(values[c]) for c in columns])
    return buffer.getvalue()


def _rounded(value):
    if isinstance(value, float):
        return round_half_up(value)
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    return value


def render_json(report):
    if isinstance(report, list):
        report = [r if isinstance(r, dict) else asdict(r) for r in report]
    return json.dumps(_rounded(report), indent=2, sort_keys=True) + "\n"


def _mask_files(directory):
    if not os.path.isdir(directory):
        raise InputMissing(f"Mask directory {directory} does not exist", path=directory)
    regex = pattern_to_regex(FileNaming.MASK_PATTERN)
    found = {}
    for name in sorted(os.listdir(directory)):
        match = regex.match(name)
        if match:
            found[(match.group("id"), match.group("structure"))] = os.path.join(directory, name)
    return found


def score_directories(pred_dir, gt_dir, jobs=1, lenient=False):
    """
    Score a submission directory against a ground truth directory, both in
    the ``tile_<id>_mask_<class>.tif`` layout.

    :return: mapping tile id -> class -> IoU
    """
    predictions = _mask_files(pred_dir)
    truths = _mask_files(gt_dir)
    tile_ids = sorted({tile_id for tile_id, _ in truths}, key=int)

    pairs = []
    for tile_id in tile_ids:
        for structure in STRUCTURE_CLASSES:
            key = (tile_id, structure.value)
            if key not in truths:
                raise MissingClass(f"Ground truth lacks {mask_file_name(tile_id, structure)}",
                                   tile_id=tile_id, structure=structure.value)
            if key not in predictions:
                raise MissingClass(f"Submission lacks {mask_file_name(tile_id, structure)}",
                                   tile_id=tile_id, structure=structure.value)
            pairs.append((tile_id, structure.value, predictions[key], truths[key]))

    def score(pair):
        tile_id, structure, pred_path, gt_path = pair
        pred = mask_decode(read_tiff_file(pred_path), lenient=lenient)
        gt = mask_decode(read_tiff_file(gt_path), lenient=lenient)
        return tile_id, structure, tile_iou(pred, gt)

    scores = {}
    for tile_id, structure, iou in parallel_map(score, pairs, jobs):
        scores.setdefault(tile_id, {})[structure] = iou
    logger.info("Scored %d tiles from %s", len(scores), pred_dir)
    return scores


def score_report(tile_scores):
    per_class, overall = dataset_score(tile_scores)
    return {
        "tiles": len(tile_scores),
        "per_class": per_class,
        "overall": overall,
        "per_tile": {tile_id: tile_scores[tile_id] for tile_id in sorted(tile_scores, key=int)},
    }
