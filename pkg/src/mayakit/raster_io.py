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

"""
Raster container, a bit-exact reader/writer for a small TIFF subset and
dataset directory discovery.

Supported TIFF files are little-endian, single IFD, uncompressed,
strip-organised, pixel-interleaved (PlanarConfiguration=1), with 8-bit
unsigned or 32-bit IEEE float samples.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from mayakit.common import FLOAT32, KIND_SHAPES, SAMPLE_TYPES, UINT8, FileNaming, ModalityKind, pattern_to_regex
from mayakit.errors import (DuplicateModality, InvalidMaskValue, Malformed, MayaKitError, ShapeMismatch,
                            UnsupportedFeature)
from mayakit.utils import parallel_map

logger = logging.getLogger(__name__)


class TiffTag:
    """Baseline TIFF tag ids used by the reader and writer"""

    IMAGE_WIDTH = 256
    IMAGE_LENGTH = 257
    BITS_PER_SAMPLE = 258
    COMPRESSION = 259
    PHOTOMETRIC = 262
    STRIP_OFFSETS = 273
    SAMPLES_PER_PIXEL = 277
    ROWS_PER_STRIP = 278
    STRIP_BYTE_COUNTS = 279
    PLANAR_CONFIGURATION = 284
    PREDICTOR = 317
    TILE_WIDTH = 322
    TILE_LENGTH = 323
    TILE_OFFSETS = 324
    TILE_BYTE_COUNTS = 325
    EXTRA_SAMPLES = 338
    SAMPLE_FORMAT = 339


class TiffType:
    BYTE = 1
    ASCII = 2
    SHORT = 3
    LONG = 4
    RATIONAL = 5


# field type -> (struct character, item size)
_TYPE_FORMATS = {
    1: ("B", 1), 2: ("s", 1), 3: ("H", 2), 4: ("I", 4), 5: ("II", 8),
    6: ("b", 1), 7: ("B", 1), 8: ("h", 2), 9: ("i", 4), 10: ("ii", 8),
    11: ("f", 4), 12: ("d", 8), 13: ("I", 4), 16: ("Q", 8), 17: ("q", 8), 18: ("Q", 8),
}

SAMPLE_FORMAT_UINT = 1
SAMPLE_FORMAT_FLOAT = 3

PHOTOMETRIC_MINISBLACK = 1
PHOTOMETRIC_RGB = 2

TARGET_STRIP_BYTES = 8192

_NUMPY_TYPES = {UINT8: np.dtype("u1"), FLOAT32: np.dtype("<f4")}


@dataclass(frozen=True, eq=False)
class Raster:
    """
    A width x height x bands grid of samples.

    ``data`` is a C-ordered array of shape (height, width, bands), which is the
    row-major, band-interleaved-by-pixel buffer of the TIFF payload.
    """

    data: np.ndarray
    has_fill: bool = False

    def __post_init__(self):
        data = self.data
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3:
            raise ShapeMismatch(f"Raster data must be 2-D or 3-D, got shape {data.shape}")
        if data.dtype == np.bool_:
            raise ShapeMismatch("Boolean arrays are masks, encode them before building a raster")
        sample_type = data.dtype.name
        if sample_type not in SAMPLE_TYPES:
            raise ShapeMismatch(f"Unsupported sample type {sample_type}", sample_type=sample_type)
        if min(data.shape) < 1:
            raise ShapeMismatch(f"Raster dimensions must be >= 1, got {data.shape}")
        data = np.ascontiguousarray(data)
        if sample_type == FLOAT32 and not self.has_fill and not np.isfinite(data).all():
            raise ShapeMismatch("Float raster contains non-finite samples but is not flagged as holding fill values")
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def sample_type(self):
        return self.data.dtype.name

    def band(self, index):
        return self.data[:, :, index]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (self.data.shape == other.data.shape
                and self.sample_type == other.sample_type
                and self.data.tobytes() == other.data.tobytes())

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.bands} {self.sample_type})"


@dataclass
class TileRecord:
    """A tile id bound to its modality rasters; at most one raster per kind"""

    tile_id: int
    rasters: dict = field(default_factory=dict)
    pseudo: bool = False

    def get(self, kind):
        return self.rasters.get(ModalityKind(kind))

    def has(self, kind):
        return ModalityKind(kind) in self.rasters

    def add(self, kind, raster, strict=True):
        kind = ModalityKind(kind)
        if kind in self.rasters:
            raise DuplicateModality(f"Tile {self.tile_id} already has a {kind.value} raster",
                                    tile_id=self.tile_id, kind=kind.value)
        validate_kind(raster, kind, strict=strict)
        self.rasters[kind] = raster


def validate_kind(raster, kind, strict=True):
    """
    Check a raster against the shape and value rules of its modality kind.

    Masks must hold only 0 and 255 in strict mode; probability rasters must lie
    in [0, 1].
    """
    kind = ModalityKind(kind)
    expected = KIND_SHAPES[kind]
    actual = (raster.width, raster.height, raster.bands, raster.sample_type)
    if actual != (expected.width, expected.height, expected.bands, expected.sample_type):
        raise ShapeMismatch(
            f"{kind.value} expects {expected.width}x{expected.height}x{expected.bands} {expected.sample_type}, "
            f"got {raster.width}x{raster.height}x{raster.bands} {raster.sample_type}",
            kind=kind.value)
    if kind.is_mask and strict:
        bad = (raster.data != 0) & (raster.data != 255)
        if bad.any():
            values = np.unique(raster.data[bad])[:8].tolist()
            raise InvalidMaskValue(f"{kind.value} holds values other than 0/255: {values}", kind=kind.value)
    if kind.is_prob:
        values = raster.data
        if not np.isfinite(values).all() or values.min() < 0.0 or values.max() > 1.0:
            raise ShapeMismatch(f"{kind.value} values must be finite and within [0, 1]", kind=kind.value)


def _read_values(buffer, offset, type_id, count):
    fmt, size = _TYPE_FORMATS[type_id]
    if fmt == "s":
        return buffer[offset:offset + count]
    length = size * count
    if offset + length > len(buffer):
        raise Malformed(f"Tag values run past end of file (offset {offset}, {length} bytes)")
    values = struct.unpack_from("<" + fmt * count, buffer, offset)
    if type_id in (TiffType.RATIONAL, 10):
        values = tuple(values[i] / values[i + 1] if values[i + 1] else 0.0 for i in range(0, len(values), 2))
    return values


def _read_ifd(buffer, ifd_offset):
    if ifd_offset + 2 > len(buffer):
        raise Malformed(f"IFD offset {ifd_offset} outside file of {len(buffer)} bytes")
    (entry_count,) = struct.unpack_from("<H", buffer, ifd_offset)
    end = ifd_offset + 2 + 12 * entry_count
    if end + 4 > len(buffer):
        raise Malformed("IFD is truncated")

    tags = {}
    for i in range(entry_count):
        tag, type_id, count = struct.unpack_from("<HHI", buffer, ifd_offset + 2 + 12 * i)
        if type_id not in _TYPE_FORMATS:
            logger.debug("Skipping tag %d with unknown field type %d", tag, type_id)
            continue
        if tag in tags:
            raise Malformed(f"Tag {tag} appears twice in the IFD", tag=tag)
        size = _TYPE_FORMATS[type_id][1] * count
        value_offset = ifd_offset + 2 + 12 * i + 8
        if size > 4:
            (value_offset,) = struct.unpack_from("<I", buffer, value_offset)
        tags[tag] = _read_values(buffer, value_offset, type_id, count)

    (next_ifd,) = struct.unpack_from("<I", buffer, end)
    return tags, next_ifd


def _single(tags, tag, default=None):
    values = tags.get(tag)
    if values is None:
        if default is None:
            raise Malformed(f"Required tag {tag} is missing", tag=tag)
        return default
    if len(values) != 1:
        raise Malformed(f"Tag {tag} must hold exactly one value", tag=tag)
    return values[0]


def _uniform(tags, tag, spp, default):
    values = tags.get(tag, (default,) * spp)
    if len(values) not in (1, spp) or len(set(values)) != 1:
        raise UnsupportedFeature(f"Tag {tag} must be identical for all {spp} samples, got {values}", tag=tag)
    return values[0]


def read_tiff(data, expected_kind=None, strict=True):
    """
    Decode TIFF bytes into a Raster with the exact stored sample values.

    :param bytes data: full file contents
    :param ModalityKind expected_kind: if given, the raster is validated against it
    :param bool strict: strict mask validation (only 0/255 allowed)
    :return: Raster
    """
    buffer = bytes(data)
    if len(buffer) < 8:
        raise Malformed("File shorter than a TIFF header")
    byte_order = buffer[:2]
    if byte_order == b"MM":
        raise UnsupportedFeature("Big-endian TIFF is not supported")
    if byte_order != b"II":
        raise Malformed(f"Not a TIFF file (byte order mark {byte_order!r})")
    (magic,) = struct.unpack_from("<H", buffer, 2)
    if magic == 43:
        raise UnsupportedFeature("BigTIFF is not supported")
    if magic != 42:
        raise Malformed(f"Bad TIFF magic number {magic}")

    (ifd_offset,) = struct.unpack_from("<I", buffer, 4)
    tags, next_ifd = _read_ifd(buffer, ifd_offset)
    if next_ifd != 0:
        raise UnsupportedFeature("Multi-IFD TIFF files are not supported")

    if TiffTag.TILE_WIDTH in tags or TiffTag.TILE_OFFSETS in tags:
        raise UnsupportedFeature("Tiled TIFF layouts are not supported")
    compression = _single(tags, TiffTag.COMPRESSION, 1)
    if compression != 1:
        raise UnsupportedFeature(f"Compression {compression} is not supported", compression=compression)
    if _single(tags, TiffTag.PREDICTOR, 1) != 1:
        raise UnsupportedFeature("Predictor tags are not supported")
    if _single(tags, TiffTag.PLANAR_CONFIGURATION, 1) != 1:
        raise UnsupportedFeature("Only pixel-interleaved (PlanarConfiguration=1) data is supported")

    width = _single(tags, TiffTag.IMAGE_WIDTH)
    height = _single(tags, TiffTag.IMAGE_LENGTH)
    spp = _single(tags, TiffTag.SAMPLES_PER_PIXEL, 1)
    if width < 1 or height < 1 or spp < 1:
        raise Malformed(f"Invalid dimensions {width}x{height}x{spp}")
    bits = _uniform(tags, TiffTag.BITS_PER_SAMPLE, spp, 1)
    sample_format = _uniform(tags, TiffTag.SAMPLE_FORMAT, spp, SAMPLE_FORMAT_UINT)
    if (bits, sample_format) == (8, SAMPLE_FORMAT_UINT):
        sample_type = UINT8
    elif (bits, sample_format) == (32, SAMPLE_FORMAT_FLOAT):
        sample_type = FLOAT32
    else:
        raise UnsupportedFeature(f"Unsupported sample layout: {bits} bits, format {sample_format}")

    offsets = tags.get(TiffTag.STRIP_OFFSETS)
    counts = tags.get(TiffTag.STRIP_BYTE_COUNTS)
    if offsets is None or counts is None:
        raise Malformed("StripOffsets and StripByteCounts are required")
    if len(offsets) != len(counts):
        raise Malformed(f"{len(offsets)} strip offsets but {len(counts)} strip byte counts")
    rows_per_strip = min(_single(tags, TiffTag.ROWS_PER_STRIP, height), height)
    if rows_per_strip < 1:
        raise Malformed("RowsPerStrip must be positive")
    strip_count = -(-height // rows_per_strip)
    if len(offsets) != strip_count:
        raise Malformed(f"Expected {strip_count} strips, found {len(offsets)}")

    dtype = _NUMPY_TYPES[sample_type]
    row_bytes = width * spp * dtype.itemsize
    payload = bytearray()
    for index, (offset, count) in enumerate(zip(offsets, counts)):
        rows = min(rows_per_strip, height - index * rows_per_strip)
        expected = rows * row_bytes
        if count < expected or offset + expected > len(buffer):
            raise Malformed(f"Strip {index} is truncated ({count} bytes declared, {expected} needed)", strip=index)
        payload += buffer[offset:offset + expected]

    array = np.frombuffer(bytes(payload), dtype=dtype).reshape(height, width, spp)
    array = array.astype(dtype.newbyteorder("="), copy=True)
    has_fill = sample_type == FLOAT32 and not np.isfinite(array).all()
    raster = Raster(array, has_fill=has_fill)

    if expected_kind is not None:
        validate_kind(raster, expected_kind, strict=strict)
    return raster


def _entry(tag, type_id, values):
    return (tag, type_id, tuple(values))


def write_tiff(raster):
    """
    Encode a Raster as an uncompressed little-endian TIFF.

    Layout: header, IFD, out-of-line tag values, strip data.
    """
    height, width, spp = raster.data.shape
    dtype = _NUMPY_TYPES[raster.sample_type]
    bits = dtype.itemsize * 8
    sample_format = SAMPLE_FORMAT_FLOAT if raster.sample_type == FLOAT32 else SAMPLE_FORMAT_UINT
    photometric = PHOTOMETRIC_RGB if (spp == 3 and raster.sample_type == UINT8) else PHOTOMETRIC_MINISBLACK
    extra_samples = spp - (3 if photometric == PHOTOMETRIC_RGB else 1)

    row_bytes = width * spp * dtype.itemsize
    rows_per_strip = max(1, min(height, TARGET_STRIP_BYTES // row_bytes))
    strip_count = -(-height // rows_per_strip)
    strip_sizes = [min(rows_per_strip, height - i * rows_per_strip) * row_bytes for i in range(strip_count)]

    entries = [
        _entry(TiffTag.IMAGE_WIDTH, TiffType.LONG, [width]),
        _entry(TiffTag.IMAGE_LENGTH, TiffType.LONG, [height]),
        _entry(TiffTag.BITS_PER_SAMPLE, TiffType.SHORT, [bits] * spp),
        _entry(TiffTag.COMPRESSION, TiffType.SHORT, [1]),
        _entry(TiffTag.PHOTOMETRIC, TiffType.SHORT, [photometric]),
        _entry(TiffTag.STRIP_OFFSETS, TiffType.LONG, [0] * strip_count),
        _entry(TiffTag.SAMPLES_PER_PIXEL, TiffType.SHORT, [spp]),
        _entry(TiffTag.ROWS_PER_STRIP, TiffType.LONG, [rows_per_strip]),
        _entry(TiffTag.STRIP_BYTE_COUNTS, TiffType.LONG, strip_sizes),
        _entry(TiffTag.PLANAR_CONFIGURATION, TiffType.SHORT, [1]),
    ]
    if extra_samples > 0:
        entries.append(_entry(TiffTag.EXTRA_SAMPLES, TiffType.SHORT, [0] * extra_samples))
    entries.append(_entry(TiffTag.SAMPLE_FORMAT, TiffType.SHORT, [sample_format] * spp))

    ifd_offset = 8
    ifd_size = 2 + 12 * len(entries) + 4
    # out-of-line values follow the IFD, each aligned to a word boundary
    extra_offsets = {}
    cursor = ifd_offset + ifd_size
    for tag, type_id, values in entries:
        size = _TYPE_FORMATS[type_id][1] * len(values)
        if size > 4:
            extra_offsets[tag] = cursor
            cursor += size + (size % 2)
    data_offset = cursor + (cursor % 2)

    strip_offsets = []
    position = data_offset
    for size in strip_sizes:
        strip_offsets.append(position)
        position += size
    entries[5] = _entry(TiffTag.STRIP_OFFSETS, TiffType.LONG, strip_offsets)

    out = bytearray(struct.pack("<2sHI", b"II", 42, ifd_offset))
    out += struct.pack("<H", len(entries))
    extra = bytearray()
    for tag, type_id, values in entries:
        fmt, size = _TYPE_FORMATS[type_id]
        packed = struct.pack("<" + fmt * len(values), *values)
        if len(packed) > 4:
            out += struct.pack("<HHII", tag, type_id, len(values), extra_offsets[tag])
            extra += packed + (b"\0" if len(packed) % 2 else b"")
        else:
            out += struct.pack("<HHI", tag, type_id, len(values)) + packed.ljust(4, b"\0")
    out += struct.pack("<I", 0)
    out += extra
    out += b"\0" * (data_offset - len(out))
    out += np.ascontiguousarray(raster.data, dtype=dtype).tobytes()
    return bytes(out)


def read_tiff_file(path, expected_kind=None, strict=True):
    with open(path, "rb") as fp:
        return read_tiff(fp.read(), expected_kind=expected_kind, strict=strict)


def write_tiff_file(path, raster):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fp:
        fp.write(write_tiff(raster))
    logger.debug("Wrote %r to %s", raster, path)


@dataclass
class ScanResult:
    records: list
    report: list

    @property
    def errors(self):
        return [entry for entry in self.report if entry["status"] == "error"]


def _report_entry(path, kind, status, message=""):
    return {"path": path, "kind": kind, "status": status, "message": message}


def _load_file(item):
    path, kind, strict = item
    try:
        return read_tiff_file(path, expected_kind=kind, strict=strict), None
    except (MayaKitError, OSError) as e:
        code = e.code if isinstance(e, MayaKitError) else type(e).__name__
        return None, f"{code}: {e}"


def scan_dataset(directory, pattern=FileNaming.DEFAULT_PATTERN, strict=True, jobs=1):
    """
    Discover tiles in ``directory`` and validate every raster against its kind.

    Files that do not match the naming pattern or name an unknown modality are
    reported as skipped. Validation errors are reported per file and never stop
    the scan.

    :return: ScanResult with records sorted by tile id and one report entry per file
    """
    regex = pattern_to_regex(pattern)
    names = sorted(os.listdir(directory)) if os.path.isdir(directory) else []

    candidates = []
    report = []
    for name in names:
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        match = regex.match(name)
        if match is None:
            report.append(_report_entry(path, None, "skipped", "name does not match pattern"))
            continue
        try:
            kind = ModalityKind(match.group("modality"))
        except ValueError:
            report.append(_report_entry(path, match.group("modality"), "skipped", "unknown modality"))
            continue
        candidates.append((int(match.group("id")), kind, path))

    loaded = parallel_map(_load_file, [(path, kind, strict) for _, kind, path in candidates], jobs=jobs)

    records = {}
    for (tile_id, kind, path), (raster, error) in zip(candidates, loaded):
        record = records.setdefault(tile_id, TileRecord(tile_id))
        if error is not None:
            logger.warning("Validation failed for %s: %s", path, error)
            report.append(_report_entry(path, kind.value, "error", error))
            continue
        if record.has(kind):
            message = f"DuplicateModality: tile {tile_id} already has {kind.value}"
            logger.warning("%s (%s)", message, path)
            report.append(_report_entry(path, kind.value, "error", message))
            continue
        record.rasters[kind] = raster
        report.append(_report_entry(path, kind.value, "ok"))

    report.sort(key=lambda entry: entry["path"])
    result = ScanResult([records[k] for k in sorted(records)], report)
    logger.info("Scanned %s: %d tiles, %d files, %d errors",
                directory, len(result.records), len(report), len(result.errors))
    return result


def write_report(entries, path):
    """Write a validation report as JSON lines, one object per file."""
    with open(path, "w", encoding="utf-8") as fp:
        for entry in entries:
            fp.write(json.dumps(entry, sort_keys=True) + "\n")
    logger.info("Validation report saved to %s", path)
