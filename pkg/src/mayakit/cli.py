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

import argparse
import json
import logging
import os
import sys
from collections import defaultdict

import numpy as np

from mayakit import augment, dataset, ensemble, evaluate, fixtures, postprocess, preprocess, synthgen
from mayakit.common import BACKGROUND, STRUCTURE_CLASSES, FileNaming, ModalityKind, StructureClass, \
    check_naming_pattern, mask_file_name, mask_kind, pattern_to_regex, prob_file_name, tile_file_name
from mayakit.errors import ConfigInvalid, InputMissing, MayaKitError, NoValidPosition, StageFailure
from mayakit.manifest import SchemaName, create_run_manifest, dump_json, load_json, validate_schema, \
    write_run_manifest
from mayakit.raster_io import Raster, read_tiff_file, scan_dataset, write_report, write_tiff_file
from mayakit.utils import Settings, item_rng, parallel_map, resolve_log_level, setup_logging

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64 - 1
STOCHASTIC_SECTIONS = ("synthgen", "sampling", "split", "augment")
# flags that do not change outputs and stay out of manifests
RUNTIME_ONLY_ARGS = ("jobs", "settings", "log_level", "out", "config")

ENSEMBLE_MODEL = "ensemble"


class Reports:
    SYNTH_MANIFEST = "synth_manifest.json"
    PREPROCESS_MANIFEST = "preprocess_manifest.json"
    FOLDS = "folds.json"
    SAMPLING = "sampling.json"
    AUGMENT_MANIFEST = "augment_manifest.json"
    SCORE_JSON = "score.json"
    SCORE_CSV = "score.csv"
    LEADERBOARD_JSON = "leaderboard.json"
    LEADERBOARD_CSV = "leaderboard.csv"


def load_pipeline_config(path):
    """
    Read and check a pipeline configuration. Stochastic stages need a seed and
    referenced paths must exist.
    """
    if not path:
        return {}
    config = load_json(path, SchemaName.PIPELINE)
    stochastic = [s for s in STOCHASTIC_SECTIONS if s in config]
    if stochastic and "seed" not in config:
        raise ConfigInvalid(f"Sections {stochastic} need a seed", sections=stochastic)
    if "naming_pattern" in config.get("dataset", {}):
        check_naming_pattern(config["dataset"]["naming_pattern"])
    base = os.path.dirname(os.path.abspath(path))
    root = config.get("dataset", {}).get("root")
    if root is not None:
        config["dataset"]["root"] = os.path.normpath(os.path.join(base, root))
        if not os.path.isdir(config["dataset"]["root"]):
            raise InputMissing(f"Dataset root {root} does not exist", path=root)
    roster = config.get("ensemble", {}).get("roster")
    if isinstance(roster, str):
        config["ensemble"]["roster"] = os.path.normpath(os.path.join(base, roster))
        if not os.path.isfile(config["ensemble"]["roster"]):
            raise InputMissing(f"Roster {roster} does not exist", path=roster)
    elif isinstance(roster, dict):
        validate_schema(roster, SchemaName.ROSTER)
    return config


def _seed(value):
    seed = int(value)
    if not 0 <= seed <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, {MAX_SEED}]")
    return seed


def _structure(value):
    try:
        return StructureClass(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"structure must be one of {[s.value for s in STRUCTURE_CLASSES]}")


class Run:
    """Resolved flags, settings and config of one command invocation"""

    def __init__(self, args, settings, config):
        self.args = args
        self.settings = settings
        self.config = config
        self.seed = args.seed if args.seed is not None else config.get("seed", 0)
        self.jobs = args.jobs if args.jobs is not None else settings.jobs
        self.out = args.out
        dataset_config = config.get("dataset", {})
        self.pattern = dataset_config.get("naming_pattern", settings.naming_pattern)
        self.strict = dataset_config.get("strict_masks", settings.strict_masks)
        self.artifacts = []
        self.stage = None
        os.makedirs(self.out, exist_ok=True)

    def section(self, name):
        return dict(self.config.get(name, {}))

    def data_dir(self):
        directory = getattr(self.args, "dir", None) or self.config.get("dataset", {}).get("root")
        if not directory:
            raise ConfigInvalid("No dataset directory: pass --dir or set dataset.root")
        if not os.path.isdir(directory):
            raise InputMissing(f"Dataset directory {directory} does not exist", path=directory)
        return directory

    def scan(self, directory=None):
        return scan_dataset(directory or self.data_dir(), self.pattern, self.strict, self.jobs)

    def output(self, name):
        path = os.path.join(self.out, name)
        self.artifacts.append(name)
        return path

    def write_raster(self, name, raster):
        write_tiff_file(self.output(name), raster)

    def write_json(self, name, document):
        dump_json(document, self.output(name))

    def write_text(self, name, text):
        with open(self.output(name), "w", encoding="utf-8") as fp:
            fp.write(text)

    def finish(self):
        arguments = {k: v for k, v in sorted(vars(self.args).items()) if k not in RUNTIME_ONLY_ARGS}
        arguments = json.loads(json.dumps(arguments, default=str))
        manifest = create_run_manifest(self.args.subparser, arguments, self.config, self.seed,
                                       self.artifacts, self.stage)
        write_run_manifest(self.out, manifest)


def _prob_files(directory, model=None):
    """(tile id, class) -> path of probability files, optionally for one model."""
    if not os.path.isdir(directory):
        raise InputMissing(f"Probability directory {directory} does not exist", path=directory)
    regex = pattern_to_regex(FileNaming.PROB_PATTERN)
    found = defaultdict(dict)
    for name in sorted(os.listdir(directory)):
        match = regex.match(name)
        if match and (model is None or match.group("model") == model):
            found[int(match.group("id"))][match.group("structure")] = os.path.join(directory, name)
    return found


def execute_validate(run):
    result = run.scan()
    write_report(result.report, run.output(FileNaming.VALIDATION_REPORT))
    run.stage = {"tiles": len(result.records), "files": len(result.report), "errors": len(result.errors)}
    run.finish()
    if result.errors:
        raise StageFailure(f"{len(result.errors)} files failed validation", errors=len(result.errors))


def execute_preprocess_s1(run):
    directory = run.data_dir()
    normalized = run.args.normalized or run.section("preprocess").get("s1_normalized", False)
    regex = pattern_to_regex(FileNaming.S1_RAW_PATTERN)
    acquisitions = defaultdict(lambda: defaultdict(list))
    for name in sorted(os.listdir(directory)):
        match = regex.match(name)
        if match:
            raster = read_tiff_file(os.path.join(directory, name))
            key = (match.group("polarization"), match.group("orbit"))
            acquisitions[int(match.group("id"))][key].append((int(match.group("date")[:4]), raster.band(0)))
    if not acquisitions:
        raise InputMissing(f"No raw Sentinel-1 acquisitions in {directory}", path=directory)

    tile_ids = sorted(acquisitions)
    tiles = parallel_map(lambda t: preprocess.build_s1_tile(acquisitions[t], normalized=normalized),
                         tile_ids, run.jobs)
    for tile_id, raster in zip(tile_ids, tiles):
        run.write_raster(tile_file_name(tile_id, ModalityKind.S1, run.pattern), raster)
    manifest = preprocess.preprocess_manifest(normalized_s1=normalized)
    manifest["tiles"] = tile_ids
    run.write_json(Reports.PREPROCESS_MANIFEST, manifest)
    run.stage = {"tiles": len(tile_ids)}
    run.finish()


def execute_preprocess_s2(run):
    section = run.section("preprocess")
    channels = run.args.channels or section.get("channels", list(preprocess.S2Layout.DEFAULT_CHANNELS))
    quantile = run.args.upper_quantile if run.args.upper_quantile is not None else section.get("upper_quantile", 0.90)
    cloud = run.args.max_cloud_fraction if run.args.max_cloud_fraction is not None \
        else section.get("max_cloud_fraction")

    records = [r for r in run.scan().records if r.has(ModalityKind.S2)]
    if not records:
        raise InputMissing("No Sentinel-2 rasters found")

    def composite(record):
        raster = preprocess.s2_median_composite(record.get(ModalityKind.S2), channels, cloud)
        return preprocess.robust_minmax(raster, quantile)

    for record, raster in zip(records, parallel_map(composite, records, run.jobs)):
        run.write_raster(FileNaming.S2_COMPOSITE_PATTERN.format(id=record.tile_id), raster)
    manifest = preprocess.preprocess_manifest(quantile, channels, cloud)
    manifest["tiles"] = [r.tile_id for r in records]
    run.write_json(Reports.PREPROCESS_MANIFEST, manifest)
    run.stage = {"tiles": len(records)}
    run.finish()


def execute_synth(run):
    section = run.section("synthgen")
    structure = run.args.structure or StructureClass(section.get("structure", StructureClass.AGUADA.value))
    style = synthgen.CropStyle.parse(run.args.style or section.get("style", synthgen.CropStyleKind.PIXEL_PRECISE))
    count = run.args.count if run.args.count is not None else section.get("count", 10)
    instances = run.args.instances or section.get("instances_per_tile", 1)
    id_start = section.get("id_start", synthgen.DEFAULT_ID_START)
    lenient = not run.strict

    records = run.scan().records
    samples = synthgen.generate_dataset(synthgen.empty_tiles(records, lenient),
                                        synthgen.class_tiles(records, structure, lenient),
                                        structure, style, count, run.seed, instances, id_start, lenient, run.jobs)
    for sample in samples:
        record = synthgen.sample_record(sample, structure)
        for kind, raster in sorted(record.rasters.items(), key=lambda item: item[0].value):
            run.write_raster(tile_file_name(sample.tile_id, kind, run.pattern), raster)
    run.write_json(Reports.SYNTH_MANIFEST, synthgen.synth_manifest(samples, structure, style, run.seed, instances))
    run.stage = {"samples": len(samples), "structure": structure.value, "style": str(style)}
    run.finish()


def execute_split(run):
    section = run.section("split")
    k = run.args.k or section.get("k", 5)
    strategy = run.args.strategy or section.get("strategy", dataset.SplitStrategy.PRESENCE)
    structure = run.args.structure or StructureClass(section.get("structure", StructureClass.BUILDING.value))
    thresholds = tuple(section.get("thresholds", dataset.FRACTION_THRESHOLDS))

    summaries = dataset.summarize_tiles(run.scan().records, not run.strict, run.jobs)
    folds = dataset.stratified_kfold(summaries, k, strategy, structure, run.seed, thresholds)
    report = folds.to_dict()
    report["structure"] = structure.value
    run.write_json(Reports.FOLDS, report)
    run.stage = {"tiles": len(folds.assignment), "k": k}
    run.finish()


def execute_sample(run):
    section = run.section("sampling")
    weights = dataset.SamplerWeights.from_config(
        json.loads(run.args.weights) if run.args.weights and run.args.weights.startswith("{")
        else run.args.weights or section.get("weights"))
    draws = run.args.draws if run.args.draws is not None else section.get("draws", 1000)
    min_fraction = section.get("min_fraction", dataset.DEFAULT_MIN_FRACTION)

    records = {r.tile_id: r for r in run.scan().records}
    summaries = dataset.summarize_tiles(list(records.values()), not run.strict, run.jobs)
    distribution = dataset.measure_distribution(summaries)
    drawn = dataset.weighted_sample(summaries, weights, draws, run.seed)

    def crop_position(item):
        index, (cls, tile_id) = item
        if cls == BACKGROUND:
            return None
        crop = section.get("crop", dataset.CLASS_CROP_SIZES[StructureClass(cls)])
        mask = preprocess.mask_decode(records[tile_id].get(mask_kind(cls)), not run.strict)
        try:
            return list(dataset.crop_position_sampler(mask, crop, min_fraction, item_rng(run.seed, index)))
        except NoValidPosition:
            return None

    positions = parallel_map(crop_position, list(enumerate(drawn)), run.jobs)
    report = {
        "distribution": {"pixel_fraction": distribution.pixel_fraction, "tile_count": distribution.tile_count,
                         "tiles": distribution.tiles},
        "weights": weights.weights,
        "draws": [[c, t, p] for (c, t), p in zip(drawn, positions)],
    }
    oversampling = section.get("oversample")
    if oversampling:
        repeated = dataset.oversample(summaries, oversampling["structure"], oversampling["factor"])
        report["oversampled"] = [s.tile_id for s in repeated]
    run.write_json(Reports.SAMPLING, report)
    run.stage = {"draws": draws, "tiles": len(summaries)}
    run.finish()


def execute_augment(run):
    section = run.section("augment")
    copies = run.args.copies or section.pop("copies", 1)
    section.pop("copies", None)
    if run.args.preset:
        section["preset"] = run.args.preset
    section.setdefault("preset", "ch1")
    config = augment.AugmentConfig.from_dict(section)

    records = [r for r in run.scan().records if r.has(ModalityKind.ALS)]
    items = [(index, record, copy) for index, (record, copy) in
             enumerate((r, c) for r in records for c in range(copies))]

    def augment_item(item):
        index, record, copy = item
        masks = [record.get(mask_kind(s)) for s in STRUCTURE_CLASSES]
        decoded = [preprocess.mask_decode(m, not run.strict) if m is not None else None for m in masks]
        present = [d for d in decoded if d is not None]
        image, out_masks, params = augment.augment_sample(record.get(ModalityKind.ALS), present, config,
                                                          item_rng(run.seed, index))
        return index, record.tile_id, copy, image, out_masks, [d is not None for d in decoded], params

    entries = []
    for index, tile_id, copy, image, masks, has_mask, params in parallel_map(augment_item, items, run.jobs):
        new_id = index + 1
        als = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        run.write_raster(tile_file_name(new_id, ModalityKind.ALS, run.pattern), Raster(als))
        decoded = iter(masks)
        for structure, present in zip(STRUCTURE_CLASSES, has_mask):
            if present:
                run.write_raster(tile_file_name(new_id, mask_kind(structure), run.pattern),
                                 preprocess.mask_encode(next(decoded)))
        entries.append({"tile_id": new_id, "source": tile_id, "copy": copy, "params": params})
    run.write_json(Reports.AUGMENT_MANIFEST, {"config": config.to_dict(), "samples": entries})
    run.stage = {"samples": len(entries)}
    run.finish()


def execute_predict(run):
    section = run.section("ensemble")
    jitter = run.args.jitter if run.args.jitter is not None else section.get("jitter", 0)
    predictor = ensemble.create_predictor(run.args.predictor or section.get("predictor", "heuristic"), jitter)
    tta = not run.args.no_tta and section.get("tta", True)
    model = run.args.model or predictor.name

    records = [r for r in run.scan().records if r.has(ModalityKind.ALS)]
    maps = ensemble.predict_tiles(predictor, records, STRUCTURE_CLASSES, tta, run.jobs)
    for tile_id in sorted(maps):
        for structure, prob in maps[tile_id].items():
            run.write_raster(prob_file_name(tile_id, structure, model), Raster(prob))
    run.stage = {"tiles": len(maps), "model": model, "tta": tta}
    run.finish()


def execute_ensemble(run):
    section = run.section("ensemble")
    if run.args.roster:
        roster = ensemble.load_roster(run.args.roster)
    elif isinstance(section.get("roster"), str):
        roster = ensemble.load_roster(section["roster"])
    elif isinstance(section.get("roster"), dict):
        roster = ensemble.Roster.from_dict(section["roster"])
    else:
        raise ConfigInvalid("No ensemble roster: pass --roster or set ensemble.roster")
    if run.args.vote:
        roster = ensemble.Roster(roster.models, roster.members, run.args.vote, roster.threshold)

    files = _prob_files(run.args.prob_dir)
    tile_ids = sorted(files)
    if not tile_ids:
        raise InputMissing(f"No probability maps in {run.args.prob_dir}", path=run.args.prob_dir)

    def combine(tile_id):
        return {s.value: ensemble.ensemble_probabilities(roster, run.args.prob_dir, tile_id, s)
                for s in STRUCTURE_CLASSES}

    for tile_id, maps in zip(tile_ids, parallel_map(combine, tile_ids, run.jobs)):
        for structure, prob in maps.items():
            run.write_raster(prob_file_name(tile_id, structure, run.args.model), Raster(prob))
    run.stage = {"tiles": len(tile_ids), "vote": roster.vote, "members": roster.members}
    run.finish()


def execute_postprocess(run):
    configs = postprocess.load_class_configs(run.section("postprocess"))
    overrides = {k: v for k, v in (("probability_threshold", run.args.threshold),
                                   ("min_area", run.args.min_area),
                                   ("min_area_boundary", run.args.min_area_boundary),
                                   ("fill_holes", run.args.fill_holes or None)) if v is not None}
    if overrides:
        configs = {s: postprocess.PostprocessConfig.from_dict({**c.to_dict(), **overrides})
                   for s, c in configs.items()}

    files = _prob_files(run.args.prob_dir, run.args.model)
    tile_ids = sorted(files)
    if not tile_ids:
        raise InputMissing(f"No {run.args.model} probability maps in {run.args.prob_dir}", path=run.args.prob_dir)

    def process(tile_id):
        masks = {}
        for structure in STRUCTURE_CLASSES:
            path = files[tile_id].get(structure.value)
            if path is None:
                raise InputMissing(f"Tile {tile_id} lacks a {structure.value} probability map", tile_id=tile_id)
            masks[structure] = postprocess.postprocess_pipeline(read_tiff_file(path), configs[structure])
        return masks

    for tile_id, masks in zip(tile_ids, parallel_map(process, tile_ids, run.jobs)):
        for structure, mask in masks.items():
            run.write_raster(mask_file_name(tile_id, structure), preprocess.mask_encode(mask))
    run.stage = {"tiles": len(tile_ids), "configs": {s.value: c.to_dict() for s, c in configs.items()}}
    run.finish()


def execute_score(run):
    gt_dir = run.args.gt_dir or run.config.get("dataset", {}).get("root")
    if not gt_dir:
        raise ConfigInvalid("No ground truth directory: pass --gt-dir or set dataset.root")
    scores = evaluate.score_directories(run.args.pred_dir, gt_dir, run.jobs, lenient=not run.strict)
    report = evaluate.score_report(scores)
    run.write_text(Reports.SCORE_JSON, evaluate.render_json(report))
    rows = [{"tile_id": tile_id, **values} for tile_id, values in report["per_tile"].items()]
    rows.append({"tile_id": "average", **report["per_class"]})
    columns = ("tile_id",) + tuple(s.value for s in STRUCTURE_CLASSES)
    run.write_text(Reports.SCORE_CSV, evaluate.render_csv(rows, columns))
    logger.info("Overall IoU %.4f (%s)", report["overall"],
                ", ".join(f"{k} {v:.4f}" for k, v in report["per_class"].items()))
    run.stage = {"tiles": report["tiles"], "overall": evaluate.round_half_up(report["overall"])}
    run.finish()


def execute_leaderboard(run):
    entries = load_json(run.args.entries)
    if not isinstance(entries, list) or not entries:
        raise ConfigInvalid("Leaderboard entries must be a nonempty list")
    try:
        pairs = [(e["name"], {s.value: e[s.value] for s in STRUCTURE_CLASSES}) for e in entries]
    except (KeyError, TypeError) as e:
        raise ConfigInvalid(f"Leaderboard entry lacks {e}")
    rows = evaluate.leaderboard(pairs)
    run.write_text(Reports.LEADERBOARD_JSON, evaluate.render_json(rows))
    run.write_text(Reports.LEADERBOARD_CSV, evaluate.render_csv(rows))
    run.stage = {"entries": len(rows)}
    run.finish()


def execute_fixtures(run):
    written = fixtures.write_fixtures(run.out, run.args.count, run.seed, run.args.raw_s1, run.jobs)
    run.artifacts.extend(os.path.relpath(p, run.out) for p in written)
    run.stage = {"tiles": run.args.count}
    run.finish()


COMMANDS = {
    "validate": execute_validate,
    "preprocess-s1": execute_preprocess_s1,
    "preprocess-s2": execute_preprocess_s2,
    "synth": execute_synth,
    "split": execute_split,
    "sample": execute_sample,
    "augment": execute_augment,
    "predict": execute_predict,
    "ensemble": execute_ensemble,
    "postprocess": execute_postprocess,
    "score": execute_score,
    "leaderboard": execute_leaderboard,
    "fixtures": execute_fixtures,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mayakit", description="Maya structure segmentation toolkit")
    parser.add_argument("--config", dest="config", help="Pipeline configuration (JSON)")
    parser.add_argument("--seed", dest="seed", type=_seed, help="Random seed, defaults to the config seed or 0")
    parser.add_argument("--jobs", dest="jobs", type=int, help="Worker threads")
    parser.add_argument("--out", dest="out", default="output", help="Output directory")
    parser.add_argument("--preset", dest="preset", choices=augment.PRESET_NAMES, help="Augmentation preset")
    parser.add_argument("--settings", dest="settings", help="Runtime settings (INI)")
    parser.add_argument("--log-level", dest="log_level", help="debug, info, warning or error")
    subparsers = parser.add_subparsers(dest="subparser", required=True)

    # validate
    parser_validate = subparsers.add_parser("validate", help="Validate every raster of a dataset")
    parser_validate.add_argument("-d", "--dir", dest="dir", help="Dataset directory")

    # preprocess-s1
    parser_s1 = subparsers.add_parser("preprocess-s1", help="Build 120-band Sentinel-1 statistics tiles")
    parser_s1.add_argument("-d", "--dir", dest="dir", help="Directory of raw per-date acquisitions")
    parser_s1.add_argument("--normalized", dest="normalized", action="store_true", default=False,
                           help="Acquisitions already hold unit-interval values")

    # preprocess-s2
    parser_s2 = subparsers.add_parser("preprocess-s2", help="Cloud-free Sentinel-2 median composites")
    parser_s2.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_s2.add_argument("--channels", dest="channels", nargs="+", help="Spectral bands, e.g. B02 B03 B04 B08")
    parser_s2.add_argument("--upper-quantile", dest="upper_quantile", type=float)
    parser_s2.add_argument("--max-cloud-fraction", dest="max_cloud_fraction", type=float)

    # synth
    parser_synth = subparsers.add_parser("synth", help="Generate copy/paste synthetic tiles")
    parser_synth.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_synth.add_argument("-s", "--structure", dest="structure", type=_structure)
    parser_synth.add_argument("--style", dest="style", help="rectangular, pixel-precise or padded:<n>")
    parser_synth.add_argument("-n", "--count", dest="count", type=int)
    parser_synth.add_argument("--instances", dest="instances", type=int, help="Instances pasted per tile")

    # split
    parser_split = subparsers.add_parser("split", help="Stratified k-fold assignment")
    parser_split.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_split.add_argument("-k", dest="k", type=int)
    parser_split.add_argument("--strategy", dest="strategy", choices=("presence", "fraction"))
    parser_split.add_argument("-s", "--structure", dest="structure", type=_structure)

    # sample
    parser_sample = subparsers.add_parser("sample", help="Class distribution and weighted tile draws")
    parser_sample.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_sample.add_argument("-n", "--draws", dest="draws", type=int)
    parser_sample.add_argument("-w", "--weights", dest="weights", help="'equal' or a JSON object of class weights")

    # augment
    parser_augment = subparsers.add_parser("augment", help="Write augmented copies of ALS tiles and masks")
    parser_augment.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_augment.add_argument("-c", "--copies", dest="copies", type=int, help="Augmented copies per tile")

    # predict
    parser_predict = subparsers.add_parser("predict", help="Probability maps from a predictor with TTA")
    parser_predict.add_argument("-d", "--dir", dest="dir", help="Dataset directory")
    parser_predict.add_argument("-p", "--predictor", dest="predictor",
                                help="heuristic, constant:<v> or file:<dir>:<model>")
    parser_predict.add_argument("--jitter", dest="jitter", type=int, help="Weight perturbation of the heuristic")
    parser_predict.add_argument("--no-tta", dest="no_tta", action="store_true", default=False)
    parser_predict.add_argument("-m", "--model", dest="model", help="Model id used in output file names")

    # ensemble
    parser_ensemble = subparsers.add_parser("ensemble", help="Vote member probability maps")
    parser_ensemble.add_argument("--prob-dir", dest="prob_dir", required=True)
    parser_ensemble.add_argument("-r", "--roster", dest="roster", help="Roster (JSON)")
    parser_ensemble.add_argument("--vote", dest="vote", choices=("soft", "hard"))
    parser_ensemble.add_argument("-m", "--model", dest="model", default=ENSEMBLE_MODEL)

    # postprocess
    parser_post = subparsers.add_parser("postprocess", help="Binarize, filter blobs and fill holes")
    parser_post.add_argument("--prob-dir", dest="prob_dir", required=True)
    parser_post.add_argument("-m", "--model", dest="model", default=ENSEMBLE_MODEL)
    parser_post.add_argument("-t", "--threshold", dest="threshold", type=float)
    parser_post.add_argument("--min-area", dest="min_area", type=int)
    parser_post.add_argument("--min-area-boundary", dest="min_area_boundary", type=int)
    parser_post.add_argument("--fill-holes", dest="fill_holes", action="store_true", default=False)

    # score
    parser_score = subparsers.add_parser("score", help="Average IoU of a submission")
    parser_score.add_argument("--pred-dir", dest="pred_dir", required=True)
    parser_score.add_argument("--gt-dir", dest="gt_dir")

    # leaderboard
    parser_board = subparsers.add_parser("leaderboard", help="Rank submissions by average IoU")
    parser_board.add_argument("-e", "--entries", dest="entries", required=True,
                              help="JSON list of {name, aguada, platform, building}")

    # fixtures
    parser_fixtures = subparsers.add_parser("fixtures", help="Write the synthetic desk-scale dataset")
    parser_fixtures.add_argument("-n", "--count", dest="count", type=int, default=fixtures.DEFAULT_TILE_COUNT)
    parser_fixtures.add_argument("--raw-s1", dest="raw_s1", action="store_true", default=False,
                                 help="Also write per-date Sentinel-1 acquisitions")
    return parser


def _print_error(error):
    sys.stderr.write(json.dumps(error.to_dict(), sort_keys=True) + "\n")


def main(argv=None):
    parser = build_parser()
    parsed_args = parser.parse_args(argv)

    try:
        settings = Settings.load(parsed_args.settings)
        setup_logging(resolve_log_level(parsed_args.log_level, settings), settings.log_file)
        logger.debug("args: %s", parsed_args)
        config = load_pipeline_config(parsed_args.config)
        COMMANDS[parsed_args.subparser](Run(parsed_args, settings, config))
    except (ConfigInvalid, InputMissing, StageFailure) as e:
        logger.error("%s: %s", e.code, e.message)
        _print_error(e)
        return e.exit_code
    except MayaKitError as e:
        logger.error("%s failed: %s: %s", parsed_args.subparser, e.code, e.message)
        wrapped = StageFailure(e.message, stage=parsed_args.subparser, cause=e.code, **e.details)
        _print_error(wrapped)
        return wrapped.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
