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

"""Sentinel-1/Sentinel-2 preprocessing and mask encoding"""

import logging
import warnings

import numpy as np

from mayakit.errors import EmptySeries, InvalidMaskValue, Malformed, MissingGroup, NoChannels, ShapeMismatch
from mayakit.raster_io import Raster

logger = logging.getLogger(__name__)

DB_MIN = -30.0
DB_MAX = 5.0

CV_MEAN_EPSILON = 1e-12


class S1Layout:
    """Band order of a 120-band Sentinel-1 statistics tile"""

    STATISTICS = ("mean", "median", "std", "cv", "p5", "p95")
    POLARIZATIONS = ("VV", "VH")
    ORBITS = ("ascending", "descending")
    YEARS = (2017, 2018, 2019, 2020)
    WHOLE_PERIOD = "2017-2020"
    PERIODS = YEARS + (WHOLE_PERIOD,)

    BAND_COUNT = len(STATISTICS) * len(POLARIZATIONS) * len(ORBITS) * len(PERIODS)


def s1_band_index(period, orbit, polarization, statistic):
    """band = ((period * 2 + orbit) * 2 + polarization) * 6 + statistic"""
    p = S1Layout.PERIODS.index(period)
    o = S1Layout.ORBITS.index(orbit)
    pol = S1Layout.POLARIZATIONS.index(polarization)
    s = S1Layout.STATISTICS.index(statistic)
    return ((p * len(S1Layout.ORBITS) + o) * len(S1Layout.POLARIZATIONS) + pol) * len(S1Layout.STATISTICS) + s


def s1_band_names():
    names = [None] * S1Layout.BAND_COUNT
    for period in S1Layout.PERIODS:
        for orbit in S1Layout.ORBITS:
            for polarization in S1Layout.POLARIZATIONS:
                for statistic in S1Layout.STATISTICS:
                    names[s1_band_index(period, orbit, polarization, statistic)] = \
                        f"{period}_{orbit}_{polarization}_{statistic}"
    return names


class S2Layout:
    """Band order within one Sentinel-2 acquisition date"""

    BANDS = ("B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B11", "B12")
    CLOUD_MASK = "cloud_mask"
    PER_DATE = BANDS + (CLOUD_MASK,)
    DATES = 17
    # blue, green, red and near infrared
    DEFAULT_CHANNELS = ("B02", "B03", "B04", "B08")

    FILL_POLICY = "tile-clear-median"


def db_to_unit(db):
    """Clamp decibels to [-30, 5] and map affinely onto [0, 1]."""
    db = np.clip(np.asarray(db, dtype=np.float64), DB_MIN, DB_MAX)
    unit = (db - DB_MIN) / (DB_MAX - DB_MIN)
    return unit if unit.ndim else float(unit)


def sigma0_to_unit(sigma0_linear):
    """
    Normalise a linear backscatter coefficient to the unit interval.

    Zero maps to -inf dB and is clamped to the lower bound.
    """
    sigma0 = np.asarray(sigma0_linear, dtype=np.float64)
    if np.any(sigma0 < 0):
        raise Malformed("Linear backscatter must be non-negative", negative=int(np.count_nonzero(sigma0 < 0)))
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(sigma0)
    return db_to_unit(db)


def temporal_stats(samples, axis=0):
    """
    Per-series statistics [mean, median, std, cv, p5, p95].

    std is the population standard deviation, cv is 0 when the mean is below
    1e-12 and quantiles use linear interpolation at rank (n - 1) * q.

    :param samples: values along ``axis``; other axes are independent series
    :return: array with the 6 statistics stacked on the first axis
    """
    values = np.asarray(samples, dtype=np.float64)
    if values.ndim == 0 or values.shape[axis] == 0:
        raise EmptySeries("temporal_stats needs at least one sample")
    values = np.moveaxis(values, axis, 0)

    mean = values.mean(axis=0)
    std = values.std(axis=0)
    safe_mean = np.where(np.abs(mean) < CV_MEAN_EPSILON, 1.0, mean)
    cv = np.where(np.abs(mean) < CV_MEAN_EPSILON, 0.0, std / safe_mean)
    median, p5, p95 = np.quantile(values, [0.5, 0.05, 0.95], axis=0, method="linear")
    return np.stack([mean, median, std, cv, p5, p95])


def build_s1_tile(groups, years=S1Layout.YEARS, normalized=False):
    """
    Build the 120-band statistics tile from per-date acquisitions.

    :param groups: mapping (polarization, orbit) -> list of (year, 2-D array)
    :param years: years of the individual periods; the whole period pools them
    :param bool normalized: inputs are already unit-interval values
    :return: float32 Raster in S1Layout band order
    """
    shape = None
    stats_by_band = {}
    for polarization in S1Layout.POLARIZATIONS:
        for orbit in S1Layout.ORBITS:
            acquisitions = groups.get((polarization, orbit), [])
            periods = [(year, [a for y, a in acquisitions if y == year]) for year in years]
            periods.append((S1Layout.WHOLE_PERIOD, [a for y, a in acquisitions if y in years]))
            for period, arrays in periods:
                if not arrays:
                    raise MissingGroup(f"No acquisitions for {polarization}/{orbit}/{period}",
                                       polarization=polarization, orbit=orbit, period=period)
                stack = np.stack([np.asarray(a, dtype=np.float64) for a in arrays])
                if shape is None:
                    shape = stack.shape[1:]
                elif stack.shape[1:] != shape:
                    raise ShapeMismatch(f"Acquisition shape {stack.shape[1:]} differs from {shape}")
                unit = stack if normalized else sigma0_to_unit(stack)
                stats = temporal_stats(unit, axis=0)
                layout_period = period if period == S1Layout.WHOLE_PERIOD else \
                    S1Layout.YEARS[list(years).index(period)]
                for s, statistic in enumerate(S1Layout.STATISTICS):
                    band = s1_band_index(layout_period, orbit, polarization, statistic)
                    stats_by_band[band] = stats[s]

    data = np.stack([stats_by_band[b] for b in range(S1Layout.BAND_COUNT)], axis=-1).astype(np.float32)
    logger.debug("Built S1 tile %s from %d groups", data.shape, len(groups))
    return Raster(data)


def _as_array(stack):
    return stack.data if isinstance(stack, Raster) else np.asarray(stack)


def s2_median_composite(stack, channels=S2Layout.DEFAULT_CHANNELS, max_cloud_fraction=None):
    """
    Per-pixel median of cloud-free acquisitions.

    Pixels without any clear date receive the per-channel median of all clear
    observations of the tile; if the tile has none at all they become 0.

    :param stack: Raster or (H, W, dates*13) array
    :param channels: spectral band names to composite
    :param max_cloud_fraction: drop dates whose tile cloud fraction exceeds it
    :return: float32 Raster with one band per channel
    """
    if not channels:
        raise NoChannels("At least one spectral channel is required")
    unknown = [c for c in channels if c not in S2Layout.BANDS]
    if unknown:
        raise NoChannels(f"Unknown Sentinel-2 channels {unknown}", channels=unknown)

    data = _as_array(stack).astype(np.float64)
    per_date = len(S2Layout.PER_DATE)
    if data.ndim != 3 or data.shape[2] % per_date:
        raise ShapeMismatch(f"Sentinel-2 stack must have a multiple of {per_date} bands, got {data.shape}")
    height, width = data.shape[:2]
    dates = data.reshape(height, width, -1, per_date)
    cloudy = dates[..., -1] != 0

    if max_cloud_fraction is not None:
        keep = cloudy.mean(axis=(0, 1)) <= max_cloud_fraction
        logger.debug("Keeping %d of %d dates under cloud fraction %s", keep.sum(), keep.size, max_cloud_fraction)
        dates = dates[:, :, keep]
        cloudy = cloudy[:, :, keep]

    indexes = [S2Layout.PER_DATE.index(c) for c in channels]
    values = dates[..., indexes]
    masked = np.where(cloudy[..., np.newaxis], np.nan, values)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        composite = np.nanmedian(masked, axis=2) if masked.shape[2] else np.full((height, width, len(indexes)), np.nan)

    for c in range(len(indexes)):
        holes = np.isnan(composite[..., c])
        if not holes.any():
            continue
        clear = values[..., c][~cloudy]
        fill = float(np.median(clear)) if clear.size else 0.0
        if not clear.size:
            logger.warning("No clear observation for channel %s; filling with 0", channels[c])
        composite[..., c][holes] = fill

    return Raster(composite.astype(np.float32))


def robust_minmax(raster, upper_quantile=0.90):
    """
    Per-band scaling with the band minimum as 0 and a quantile as 1.

    Values above the quantile clamp to 1; a degenerate band becomes all zeros.
    """
    data = _as_array(raster).astype(np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.size == 0:
        raise ShapeMismatch("robust_minmax needs a nonempty raster")
    out = np.zeros(data.shape, dtype=np.float64)
    for b in range(data.shape[2]):
        band = data[:, :, b]
        lo = band.min()
        hi = np.quantile(band, upper_quantile, method="linear")
        if hi > lo:
            out[:, :, b] = np.clip((band - lo) / (hi - lo), 0.0, 1.0)
    return Raster(out.astype(np.float32))


def mask_decode(raster, lenient=False):
    """
    Decode a 0/255 mask raster: 0 means the structure is present.

    :param bool lenient: map every value below 128 to present instead of failing
    :return: 2-D boolean array
    """
    data = _as_array(raster)
    if data.ndim == 3:
        if data.shape[2] != 1:
            raise ShapeMismatch(f"Mask raster must have one band, got {data.shape[2]}")
        data = data[:, :, 0]
    if data.dtype != np.uint8:
        raise ShapeMismatch(f"Mask raster must be uint8, got {data.dtype}")
    if lenient:
        return data < 128
    if np.any((data != 0) & (data != 255)):
        raise InvalidMaskValue("Mask values must be 0 or 255 in strict mode")
    return data == 0


def mask_encode(mask):
    """Inverse of strict ``mask_decode``."""
    mask = np.asarray(mask, dtype=bool)
    return Raster(np.where(mask, 0, 255).astype(np.uint8))


def preprocess_manifest(upper_quantile=None, channels=None, max_cloud_fraction=None, normalized_s1=None):
    """Parameters needed to reproduce a preprocessing run."""
    manifest = {
        "s1_layout": {
            "statistics": list(S1Layout.STATISTICS),
            "polarizations": list(S1Layout.POLARIZATIONS),
            "orbits": list(S1Layout.ORBITS),
            "periods": [str(p) for p in S1Layout.PERIODS],
            "db_range": [DB_MIN, DB_MAX],
        },
        "s2_fill_policy": S2Layout.FILL_POLICY,
    }
    if upper_quantile is not None:
        manifest["upper_quantile"] = upper_quantile
    if channels is not None:
        manifest["channels"] = list(channels)
    if max_cloud_fraction is not None:
        manifest["max_cloud_fraction"] = max_cloud_fraction
    if normalized_s1 is not None:
        manifest["s1_inputs_normalized"] = normalized_s1
    return manifest
