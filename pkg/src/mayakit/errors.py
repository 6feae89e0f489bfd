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

"""Exception hierarchy shared by all mayakit stages"""


class MayaKitError(Exception):
    """
    Base class for domain errors.

    Every subclass carries a stable ``code`` (the class name) so reports and
    the command line can refer to an error family without parsing messages.
    """

    def __init__(self, message="", **details):
        super().__init__(message)
        self.message = message
        self.details = details

    @property
    def code(self):
        return type(self).__name__

    def to_dict(self):
        return {
            "error": self.code,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()}
        }


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


# raster-io
class UnsupportedFeature(MayaKitError):
    pass


class Malformed(MayaKitError):
    pass


class ShapeMismatch(MayaKitError):
    pass


class DuplicateModality(MayaKitError):
    pass


# preprocess
class EmptySeries(MayaKitError):
    pass


class MissingGroup(MayaKitError):
    pass


class NoChannels(MayaKitError):
    pass


class InvalidMaskValue(MayaKitError):
    pass


# synthgen
class EmptyMask(MayaKitError):
    pass


class PatchTooLarge(MayaKitError):
    pass


class NonEmptyBackground(MayaKitError):
    pass


class NoDonors(MayaKitError):
    pass


class NoBackgrounds(MayaKitError):
    pass


# dataset
class UnsatisfiableWeight(MayaKitError):
    pass


class TooFewTiles(MayaKitError):
    pass


class NoValidPosition(MayaKitError):
    pass


class MissingProbMap(MayaKitError):
    pass


# augment
class NonSquare(MayaKitError):
    pass


class CropTooLarge(MayaKitError):
    pass


# ensemble
class EmptyEnsemble(MayaKitError):
    pass


# evaluate
class MissingClass(MayaKitError):
    pass


# cli
class ConfigInvalid(MayaKitError):
    exit_code = 2


class InputMissing(MayaKitError):
    exit_code = 3


class StageFailure(MayaKitError):
    exit_code = 4
