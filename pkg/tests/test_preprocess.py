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

import math

import numpy as np
import pytest

from mayakit.errors import EmptySeries, InvalidMaskValue, Malformed, MissingGroup, NoChannels
from mayakit.preprocess import (S1Layout, S2Layout, build_s1_tile, db_to_unit, mask_decode, mask_encode,
                                preprocess_manifest, robust_minmax, s1_band_index, s1_band_names,
                                s2_median_composite, sigma0_to_unit, temporal_stats)
from mayakit.raster_io import Raster


def _quantile(ordered, q):
    rank = (len(ordered) - 1) * q
    low = math.floor(rank)
    high = min(low + 1, len(ordered) - 1)
    return ordered[low] + (ordered[high] - ordered[low]) * (rank - low)


def _scalar_stats(series):
    n = len(series)
    mean = sum(series) / n
    std = math.sqrt(sum((x - mean) ** 2 for x in series) / n)
    cv = 0.0 if abs(mean) < 1e-12 else std / mean
    ordered = sorted(series)
    return [mean, _quantile(ordered, 0.5), std, cv, _quantile(ordered, 0.05), _quantile(ordered, 0.95)]


def test_decibel_anchors():
    assert db_to_unit(-30.0) == 0.0
    assert db_to_unit(5.0) == 1.0
    assert db_to_unit(-12.5) == 0.5
    assert db_to_unit(-45.0) == 0.0
    assert db_to_unit(9.0) == 1.0


def test_sigma0_to_unit():
    assert sigma0_to_unit(10 ** -3) == pytest.approx(0.0, abs=1e-12)
    assert sigma0_to_unit(10 ** 0.5) == pytest.approx(1.0, abs=1e-12)
    assert sigma0_to_unit(10 ** -1.25) == pytest.approx(0.5, abs=1e-12)
    assert sigma0_to_unit(0.0) == 0.0
    with pytest.raises(Malformed) as e:
        sigma0_to_unit([0.5, -1.0, -2.0])
    assert e.value.details["negative"] == 2


def test_temporal_stats_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10000):
        series = rng.random(int(rng.integers(1, 33))).tolist()
        stats = temporal_stats(series)
        expected = _scalar_stats(series)
        assert stats.tolist() == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_temporal_stats_edge_cases():
    single = temporal_stats([0.4])
    assert single.tolist() == pytest.approx([0.4, 0.4, 0.0, 0.0, 0.4, 0.4])
    zeros = temporal_stats([0.0, 0.0, 0.0])
    assert zeros[3] == 0.0
    with pytest.raises(EmptySeries):
        temporal_stats([])


def test_temporal_stats_along_axis():
    values = np.arange(24, dtype=np.float64).reshape(4, 3, 2)
    stats = temporal_stats(values, axis=0)
    assert stats.shape == (6, 3, 2)
    np.testing.assert_allclose(stats[0], values.mean(axis=0))


def test_s1_band_layout():
    assert S1Layout.BAND_COUNT == 120
    assert s1_band_index(2017, "ascending", "VV", "mean") == 0
    assert s1_band_index(2017, "ascending", "VH", "mean") == 6
    assert s1_band_index(2017, "descending", "VV", "mean") == 12
    assert s1_band_index(2018, "ascending", "VV", "mean") == 24
    assert s1_band_index(S1Layout.WHOLE_PERIOD, "descending", "VH", "p95") == 119
    names = s1_band_names()
    assert len(names) == len(set(names)) == 120
    assert names[0] == "2017_ascending_VV_mean"


def _groups(rng, per_year=2, shape=(24, 24)):
    return {(pol, orbit): [(year, rng.random(shape)) for year in S1Layout.YEARS for _ in range(per_year)]
            for pol in S1Layout.POLARIZATIONS for orbit in S1Layout.ORBITS}


def test_build_s1_tile(rng):
    groups = _groups(rng)
    raster = build_s1_tile(groups, normalized=True)
    assert (raster.height, raster.width, raster.bands, raster.sample_type) == (24, 24, 120, "float32")

    year_2019 = [a for y, a in groups[("VH", "descending")] if y == 2019]
    band = s1_band_index(2019, "descending", "VH", "mean")
    np.testing.assert_allclose(raster.band(band), np.mean(year_2019, axis=0), rtol=1e-6)

    pooled = [a for _, a in groups[("VV", "ascending")]]
    band = s1_band_index(S1Layout.WHOLE_PERIOD, "ascending", "VV", "p95")
    np.testing.assert_allclose(raster.band(band), np.quantile(pooled, 0.95, axis=0), rtol=1e-6)


def test_build_s1_tile_from_linear_sigma0(rng):
    groups = {key: [(year, np.full((2, 2), 10 ** -1.25)) for year, _ in values]
              for key, values in _groups(rng, per_year=1, shape=(2, 2)).items()}
    raster = build_s1_tile(groups)
    means = raster.data[:, :, 0::6]
    np.testing.assert_allclose(means, 0.5, atol=1e-6)


def test_build_s1_tile_missing_group(rng):
    groups = _groups(rng)
    groups[("VV", "ascending")] = [(y, a) for y, a in groups[("VV", "ascending")] if y != 2018]
    with pytest.raises(MissingGroup):
        build_s1_tile(groups, normalized=True)
    del groups[("VV", "ascending")]
    with pytest.raises(MissingGroup):
        build_s1_tile(groups, normalized=True)


def _s2_stack():
    """2x2 pixels, 3 dates; channel B02 holds date + 1 + 10 * pixel."""
    per_date = len(S2Layout.PER_DATE)
    channel = S2Layout.PER_DATE.index("B02")
    stack = np.zeros((2, 2, 3 * per_date), dtype=np.float32)
    for date in range(3):
        for pixel in range(4):
            stack[pixel // 2, pixel % 2, date * per_date + channel] = date + 1 + 10 * pixel
    cloud = per_date - 1
    stack[0, 0, 0 * per_date + cloud] = 1
    for date in range(3):
        stack[1, 1, date * per_date + cloud] = 1
    return stack


def test_s2_median_composite():
    composite = s2_median_composite(_s2_stack(), channels=("B02",))
    assert composite.bands == 1
    values = composite.band(0)
    assert values[0, 0] == 2.5
    assert values[0, 1] == 12.0
    assert values[1, 0] == 22.0
    # no clear date: median of all clear observations of the tile
    assert values[1, 1] == 12.5


def test_s2_median_composite_drops_cloudy_dates():
    composite = s2_median_composite(_s2_stack(), channels=("B02",), max_cloud_fraction=0.3)
    values = composite.band(0)
    assert values[0, 1] == 12.5
    assert values[1, 0] == 22.5


def test_s2_median_composite_channels():
    with pytest.raises(NoChannels):
        s2_median_composite(_s2_stack(), channels=())
    with pytest.raises(NoChannels):
        s2_median_composite(_s2_stack(), channels=("B99",))
    composite = s2_median_composite(Raster(_s2_stack()))
    assert composite.bands == len(S2Layout.DEFAULT_CHANNELS)


def test_s2_median_composite_without_clear_observations():
    stack = np.zeros((2, 2, len(S2Layout.PER_DATE)), dtype=np.float32)
    stack[:, :, -1] = 1
    stack[:, :, 1] = 7
    composite = s2_median_composite(stack, channels=("B02",))
    assert not composite.data.any()


def test_robust_minmax():
    band = np.arange(10, dtype=np.float32).reshape(2, 5)
    flat = np.full((2, 5), 3.0, dtype=np.float32)
    scaled = robust_minmax(np.stack([band, flat], axis=-1))
    # 0.9 quantile of 0..9 is 8.1
    np.testing.assert_allclose(scaled.band(0), np.clip(band / 8.1, 0, 1), rtol=1e-6)
    assert scaled.band(0).max() == 1.0
    assert not scaled.band(1).any()


def test_mask_codec():
    raster = Raster(np.array([[0, 255], [255, 0]], dtype=np.uint8))
    mask = mask_decode(raster)
    assert mask.tolist() == [[True, False], [False, True]]
    assert mask_encode(mask) == raster

    noisy = Raster(np.array([[3, 250], [127, 128]], dtype=np.uint8))
    with pytest.raises(InvalidMaskValue):
        mask_decode(noisy)
    assert mask_decode(noisy, lenient=True).tolist() == [[True, False], [True, False]]


def test_preprocess_manifest():
    manifest = preprocess_manifest(0.9, ["B02"], 0.05)
    assert manifest["upper_quantile"] == 0.9
    assert manifest["s2_fill_policy"] == S2Layout.FILL_POLICY
    assert manifest["s1_layout"]["db_range"] == [-30.0, 5.0]
    assert "s1_inputs_normalized" not in manifest
