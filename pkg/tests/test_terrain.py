import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadload.errors import ContractViolation
from quadload.terrain import TerrainBatch, TerrainProfile, sample_height


def test_plane_is_zero():
    t = TerrainProfile("plane")
    assert sample_height(t, 0.0) == 0.0
    assert np.all(t.height(np.linspace(-5, 5, 11)) == 0.0)


def test_stair_height_frozen_value():
    # 5 cm steps, 20 cm wide: x=0.45 sits on the third tread
    t = TerrainProfile("stair", step_height=0.05, step_width=0.2)
    assert sample_height(t, 0.45) == pytest.approx(0.10, abs=1e-12)
    assert sample_height(t, 0.0) == 0.0
    assert sample_height(t, -0.01) == pytest.approx(-0.05)


def test_slope_frozen_value():
    t = TerrainProfile("slope", slope_angle=np.deg2rad(26.0))
    assert sample_height(t, 1.0) == pytest.approx(np.tan(np.deg2rad(26.0)), rel=1e-12)
    assert t.slope(3.3) == pytest.approx(np.tan(np.deg2rad(26.0)))


def test_rough_bounded_and_deterministic():
    t = TerrainProfile("rough", rough_amplitude=0.04, rough_corr_len=0.15, seed=42)
    x = np.linspace(-3, 3, 400)
    h1 = t.height(x)
    h2 = TerrainProfile("rough", rough_amplitude=0.04, rough_corr_len=0.15, seed=42).height(x)
    np.testing.assert_array_equal(h1, h2)
    assert np.max(np.abs(h1)) <= 0.04 + 1e-12
    # different seed, different field
    h3 = TerrainProfile("rough", rough_amplitude=0.04, rough_corr_len=0.15, seed=7).height(x)
    assert np.max(np.abs(h1 - h3)) > 1e-4


def test_rough_is_continuous_piecewise_linear():
    t = TerrainProfile("rough", rough_amplitude=0.05, rough_corr_len=0.2, seed=3)
    # continuity across a cell boundary
    eps = 1e-9
    assert t.height(0.2 - eps) == pytest.approx(t.height(0.2 + eps), abs=1e-6)
    # linear inside a cell: midpoint equals average of ends
    a, b = 0.41, 0.59
    assert t.height(0.5) == pytest.approx(0.5 * (t.height(a) + t.height(b)), abs=1e-9)


def test_bad_kind_rejected():
    with pytest.raises(ContractViolation):
        TerrainProfile("lava")
    with pytest.raises(ContractViolation):
        TerrainProfile("stair", step_width=0.0)


def test_nonfinite_query_rejected():
    with pytest.raises(ContractViolation):
        TerrainProfile("plane").height(np.nan)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 2**31 - 1))
def test_rough_height_within_amplitude(x, seed):
    t = TerrainProfile("rough", rough_amplitude=0.03, rough_corr_len=0.1, seed=seed)
    assert abs(float(t.height(x))) <= 0.03 + 1e-12


def test_batch_matches_profiles():
    profiles = [
        TerrainProfile("plane"),
        TerrainProfile("slope", slope_angle=0.3),
        TerrainProfile("stair", step_height=0.06, step_width=0.25),
        TerrainProfile("rough", rough_amplitude=0.05, rough_corr_len=0.15, seed=11),
    ]
    batch = TerrainBatch.from_profiles(profiles)
    x = np.linspace(-2, 2, 33)
    xs = np.tile(x, (4, 1))
    hb = batch.heights(xs)
    sb = batch.slopes(xs)
    for i, p in enumerate(profiles):
        np.testing.assert_allclose(hb[i], p.height(x), atol=1e-12)
        np.testing.assert_allclose(sb[i], p.slope(x), atol=1e-12)


def test_batch_set_profile_swaps_row():
    batch = TerrainBatch.from_profiles([TerrainProfile("plane")] * 2)
    batch.set_profile(1, TerrainProfile("slope", slope_angle=0.2))
    h = batch.heights(np.array([[1.0], [1.0]]))
    assert h[0, 0] == 0.0
    assert h[1, 0] == pytest.approx(np.tan(0.2))
