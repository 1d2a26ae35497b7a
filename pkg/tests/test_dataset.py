import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from releaseflow import dataset as ds
from releaseflow.errors import ValidationError


def test_fick_series_known_value():
    # frozen oracle: d_hat = 0.01 at t = 1; early-time law 4 sqrt(d/pi)
    # agrees to ~1e-11 at this dt, which corroborates the series value
    assert ds.fick_series_release(0.01, 1.0) == pytest.approx(0.2256758334, abs=1e-9)


def test_fick_series_zero_time_is_exact_zero():
    assert ds.fick_series_release(0.01, 0.0) == 0.0


def test_fick_series_limits():
    assert ds.fick_series_release(5.0, 10.0) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < ds.fick_series_release(1e-4, 0.5) < 0.05


def test_fick_series_monotone_in_time():
    t = np.linspace(0.0, 2.0, 80)
    f = ds.fickian_fractions(0.05, t)
    assert np.all(np.diff(f) > 0)


def test_fick_series_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        ds.fick_series_release(-0.01, 1.0)
    with pytest.raises(ValidationError):
        ds.fick_series_release(0.0, 1.0)
    with pytest.raises(ValidationError):
        ds.fick_series_release(0.01, -1.0)


@given(st.floats(1e-4, 1.0), st.floats(0.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_fick_series_always_in_unit_interval(d, t):
    f = ds.fick_series_release(d, t)
    assert 0.0 <= f <= 1.0


def test_canonical_grid():
    t = ds.canonical_times()
    assert len(t) == 15
    assert t[0] == 0.0
    assert t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    # third canonical point is 10 minutes of a 2880-minute protocol
    assert t[2] == pytest.approx(10.0 / 2880.0)


def test_synthesize_fickian_shape_and_bounds():
    c = ds.synthesize_fickian(0.01, 15)
    assert len(c) == 15
    assert c.times[0] == 0.0 and c.times[-1] == 1.0
    assert c.fractions[0] == 0.0
    assert np.all(np.diff(c.fractions) > 0)
    assert c.film is ds.FilmType.Flat
    assert c.noise_sigma is None


def test_release_curve_validation():
    t = np.array([0.0, 0.5, 1.0])
    with pytest.raises(ds.NonMonotoneTime):
        ds.ReleaseCurve(ds.FilmType.Flat, t[::-1].copy(), np.array([0.0, 0.1, 0.2]))
    with pytest.raises(ValidationError):
        ds.ReleaseCurve(ds.FilmType.Flat, t, np.array([0.0, 0.1]))
    with pytest.raises(ValidationError):  # noiseless must be monotone
        ds.ReleaseCurve(ds.FilmType.Flat, t, np.array([0.0, 0.3, 0.2]))
    with pytest.raises(ValidationError):  # noiseless must stay in [0, 1]
        ds.ReleaseCurve(ds.FilmType.Flat, t, np.array([0.0, 0.5, 1.2]))


def test_noisy_curve_downgrades_to_warning():
    t = np.array([0.0, 0.5, 1.0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        c = ds.ReleaseCurve(ds.FilmType.Flat, t, np.array([0.0, 0.3, 0.25]),
                            noise_sigma=0.1)
    assert len(caught) == 1
    assert c.noise_sigma == 0.1


def test_curve_arrays_are_frozen():
    c = ds.synthesize_fickian(0.01, 8)
    with pytest.raises(ValueError):
        c.times[0] = 0.5


def test_film_type_parse():
    assert ds.FilmType.parse("flat") is ds.FilmType.Flat
    assert ds.FilmType.parse("Wrinkled_1D") is ds.FilmType.Wrinkled1D
    assert ds.FilmType.parse("crumpled") is ds.FilmType.Crumpled2D
    with pytest.raises(ValidationError):
        ds.FilmType.parse("folded")


def test_add_gaussian_noise_seeded():
    c = ds.synthesize_fickian(0.05, 15)
    n1 = ds.add_gaussian_noise(c, 0.05, seed=7)
    n2 = ds.add_gaussian_noise(c, 0.05, seed=7)
    n3 = ds.add_gaussian_noise(c, 0.05, seed=8)
    assert np.array_equal(n1.fractions, n2.fractions)
    assert not np.array_equal(n1.fractions, n3.fractions)
    assert n1.noise_sigma == 0.05
    # zero sigma is the identity
    assert ds.add_gaussian_noise(c, 0.0, seed=1) is c
    with pytest.raises(ValidationError):
        ds.add_gaussian_noise(c, -0.1, seed=1)


def test_noise_statistics():
    # sample std of (out - in) over 10,000 points lands within 5% of sigma
    sigma = 0.1
    c = ds.fickian_on_grid(0.05, np.linspace(0.0, 1.0, 10000))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        noisy = ds.add_gaussian_noise(c, sigma, seed=0)
    delta = noisy.fractions - c.fractions
    assert abs(float(np.mean(delta))) < 3 * sigma / math.sqrt(delta.size)
    assert float(np.std(delta, ddof=1)) == pytest.approx(sigma, rel=0.05)


def test_split_first_n():
    c = ds.synthesize_fickian(0.01, 15)
    sp = ds.split_first_n(c, 5)
    assert len(sp.train) == 5
    assert len(sp.test) == 10
    assert sp.n == 5
    assert np.array_equal(sp.train.times, c.times[:5])
    assert np.array_equal(sp.test.times, c.times[5:])
    with pytest.raises(ValidationError):
        ds.split_first_n(c, 1)
    with pytest.raises(ValidationError):
        ds.split_first_n(c, 15)


def test_csv_round_trip(tmp_path):
    c = ds.add_gaussian_noise(ds.synthesize_fickian(0.01, 15), 0.03, seed=3)
    p = tmp_path / "curve.csv"
    ds.save_curve(c, p)
    back = ds.load_curve(p)
    assert back.film is c.film
    np.testing.assert_array_equal(back.times, c.times)
    np.testing.assert_array_equal(back.fractions, c.fractions)
    assert back.noise_sigma == c.noise_sigma


def test_csv_round_trip_awkward_floats(tmp_path):
    # values that do not survive %.6f must still round-trip exactly
    t = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    f = np.array([0.0, 0.1 + 1e-12, 0.2, 0.3])
    c = ds.ReleaseCurve(ds.FilmType.Flat, t, f)
    p = tmp_path / "odd.csv"
    ds.save_curve(c, p)
    back = ds.load_curve(p)
    np.testing.assert_array_equal(back.times, t)
    np.testing.assert_array_equal(back.fractions, f)


def test_load_curve_physical_units(tmp_path):
    p = tmp_path / "mins.csv"
    p.write_text(
        "#film=wrinkled_1d\n#time_unit=minutes\n"
        "0,0\n720,0.4\n1440,0.6\n2880,0.9\n"
    )
    c = ds.load_curve(p)
    assert c.film is ds.FilmType.Wrinkled1D
    np.testing.assert_allclose(c.times, [0.0, 0.25, 0.5, 1.0])
    assert c.fractions[-1] == 0.9


def test_load_curve_malformed_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("#film=flat\n#time_unit=normalized\n0,0\n0.5,oops\n")
    with pytest.raises(ds.CurveFormatError) as err:
        ds.load_curve(p)
    assert "4" in str(err.value)  # line number reported

    p2 = tmp_path / "wild.csv"
    p2.write_text("#film=flat\n#time_unit=normalized\n0,0\n0.5,7.0\n")
    with pytest.raises(ds.CurveFormatError):
        ds.load_curve(p2)  # fraction outside the plausibility window


def test_load_curve_film_conflict(tmp_path):
    p = tmp_path / "conflict.csv"
    p.write_text("#film=flat\n#time_unit=normalized\n0,0\n0.5,0.2\n1,0.4\n")
    with pytest.raises(ValidationError):
        ds.load_curve(p, film=ds.FilmType.Crumpled2D)
    # matching film argument is fine
    c = ds.load_curve(p, film=ds.FilmType.Flat)
    assert c.film is ds.FilmType.Flat


def test_load_curve_film_from_argument_when_header_missing(tmp_path):
    p = tmp_path / "nofilm.csv"
    p.write_text("#time_unit=normalized\n0,0\n0.5,0.2\n1,0.4\n")
    c = ds.load_curve(p, film=ds.FilmType.Crumpled2D)
    assert c.film is ds.FilmType.Crumpled2D
    with pytest.raises(ValidationError):
        ds.load_curve(p)  # no film anywhere
