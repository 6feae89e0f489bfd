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

import logging
import os
from configparser import RawConfigParser

import numpy as np
from joblib import Parallel, delayed

from mayakit.common import FileNaming, check_naming_pattern
from mayakit.errors import ConfigInvalid

logger = logging.getLogger(__name__)

LOG_ENV_VAR = "MAYAKIT_LOG"
SETTINGS_ENV_VAR = "MAYAKIT_SETTINGS"

LOG_FILE_FORMAT = "%(asctime)s [%(name)-14.14s] [%(levelname)-7.7s]  %(message)s"
LOG_CONSOLE_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


class Settings:
    """
    Runtime settings read from an INI file.

    Simple usage:
    settings = Settings.load("output/mayakit.ini")
    print(settings.jobs)

    Recognised keys:
    [LOGGING]
    level = <debug|info|warning|error>
    file = <path of an optional log file>

    [RUNTIME]
    jobs = <worker count>
    naming_pattern = tile_{id}_{modality}.tif
    strict_masks = <true|false>
    """

    def __init__(self, config=None):
        self._config = config if config is not None else RawConfigParser()

    @classmethod
    def load(cls, path=None):
        path = path or os.environ.get(SETTINGS_ENV_VAR)
        config = RawConfigParser()
        if path:
            if not os.path.isfile(path):
                raise ConfigInvalid(f"Settings file {path} does not exist", path=path)
            config.read(path, encoding="utf-8")
            logger.debug("Loaded settings from %s", path)
        return cls(config)

    @property
    def log_level(self):
        return self._config.get("LOGGING", "level", fallback=None)

    @property
    def log_file(self):
        return self._config.get("LOGGING", "file", fallback=None)

    @property
    def jobs(self):
        try:
            return self._config.getint("RUNTIME", "jobs", fallback=1)
        except ValueError as e:
            raise ConfigInvalid(f"[RUNTIME] jobs must be an integer: {e}")

    @property
    def naming_pattern(self):
        return check_naming_pattern(self._config.get("RUNTIME", "naming_pattern", fallback=FileNaming.DEFAULT_PATTERN))

    @property
    def strict_masks(self):
        try:
            return self._config.getboolean("RUNTIME", "strict_masks", fallback=True)
        except ValueError as e:
            raise ConfigInvalid(f"[RUNTIME] strict_masks must be a boolean: {e}")


def resolve_log_level(flag_level=None, settings=None):
    name = flag_level or os.environ.get(LOG_ENV_VAR) or (settings.log_level if settings else None) or "info"
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ConfigInvalid("Valid log levels are DEBUG, INFO, WARNING and ERROR", level=name)
    return level


def setup_logging(level=logging.INFO, log_file=None):
    import coloredlogs

    field_styles = dict(
        asctime=dict(color='green'),
        hostname=dict(color='magenta'),
        levelname=dict(color='green', bold=coloredlogs.CAN_USE_BOLD_FONT),
        filename=dict(color='magenta'),
        name=dict(color='blue'),
        threadName=dict(color='green')
    )
    package_logger = logging.getLogger("mayakit")
    coloredlogs.install(
        level=level,
        logger=package_logger,
        fmt=LOG_CONSOLE_FORMAT,
        field_styles=field_styles
    )

    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(LOG_FILE_FORMAT))
        package_logger.addHandler(handler)
        logger.info("Saving operation logs to %s", log_file)

    return package_logger


def item_rng(seed, index):
    """Independent random stream for item ``index`` of a seeded run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def parallel_map(func, items, jobs=1):
    """
    Apply ``func`` to every item, in order, on ``jobs`` threads.

    Results keep the input order, so seeded work stays reproducible whatever
    the worker count.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug("Dispatching %d items to %d workers", len(items), jobs)
    return Parallel(n_jobs=jobs, prefer="threads")(delayed(func)(item) for item in items)
