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

"""Run manifests, canonical JSON and schema validation"""

import hashlib
import json
import logging
import os

import jsonschema

from mayakit import __version__
from mayakit.common import FileNaming
from mayakit.errors import ConfigInvalid, InputMissing

logger = logging.getLogger(__name__)

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas")


class RunManifest:
    TAG_COMMAND = "command"
    TAG_ARGUMENTS = "arguments"
    TAG_CONFIG_HASH = "config_hash"
    TAG_SEED = "seed"
    TAG_VERSIONS = "versions"
    TAG_ARTIFACTS = "artifacts"
    TAG_STAGE = "stage"


class SchemaName:
    PIPELINE = "pipeline"
    ROSTER = "roster"
    MANIFEST = "manifest"


def load_schemas(schema_path=SCHEMA_PATH):
    """All ``*.schema.json`` files of a directory, keyed by their base name."""
    dict_schemas = dict()
    for file in sorted(os.listdir(schema_path)):
        if file.endswith(".schema.json"):
            with open(os.path.join(schema_path, file), "r", encoding="utf-8") as fp:
                dict_schemas[file[:-len(".schema.json")]] = json.load(fp)
    return dict_schemas


def validate_schema(document, schema_name, dict_schemas=None):
    dict_schemas = dict_schemas or load_schemas()
    schema = dict_schemas.get(schema_name)
    if schema is None:
        raise ConfigInvalid(f"Unknown schema {schema_name}")
    try:
        jsonschema.validate(document, schema)
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path)
        raise ConfigInvalid(f"{schema_name} document invalid at '{location}': {e.message}",
                            schema=schema_name, path=location)


def canonical_json(document):
    return json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(document):
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def dump_json(document, path):
    """Write JSON with sorted keys and a trailing newline; reruns produce identical bytes."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(document, fp, indent=2, sort_keys=True, ensure_ascii=False)
        fp.write("\n")
    return path


def load_json(path, schema_name=None):
    if not os.path.isfile(path):
        raise InputMissing(f"File {path} does not exist", path=path)
    with open(path, "r", encoding="utf-8") as fp:
        try:
            document = json.load(fp)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{path} is not valid JSON: {e}", path=path)
    if schema_name:
        validate_schema(document, schema_name)
    return document


def package_versions():
    import numpy
    import scipy

    return {"mayakit": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}


def create_run_manifest(command, arguments, config, seed, artifacts, stage=None):
    """Worker count is left out so manifests do not depend on it."""
    manifest = {
        RunManifest.TAG_COMMAND: command,
        RunManifest.TAG_ARGUMENTS: arguments,
        RunManifest.TAG_CONFIG_HASH: config_hash(config),
        RunManifest.TAG_SEED: seed,
        RunManifest.TAG_VERSIONS: package_versions(),
        RunManifest.TAG_ARTIFACTS: sorted(artifacts),
    }
    if stage is not None:
        manifest[RunManifest.TAG_STAGE] = stage
    validate_schema(manifest, SchemaName.MANIFEST)
    return manifest


def write_run_manifest(out_dir, manifest):
    path = dump_json(manifest, os.path.join(out_dir, FileNaming.RUN_MANIFEST))
    logger.info("Run manifest written to %s", path)
    return path
