"""Release-curve ingestion, validation, synthesis, and perturbation.

A curve is a series of (normalized time, cumulative release fraction)
points for one film type.  Time 1.0 corresponds to the 48-hour end of the
release window; fractions are dimensionless in [0, 1] for clean data.
All values here are immutable after construction and safe to share.
"""

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError


class NonMonotoneTime(ValidationError):
    """Time stamps are not strictly increasing."""


class CurveFormatError(ValidationError):
    """CSV file does not conform to the release-curve format."""


class FilmType(enum.Enum):
    Flat = "flat"
    Wrinkled1D = "wrinkled_1d"
    Crumpled2D = "crumpled_2d"

    @classmethod
    def parse(cls, label):
        key = label.strip().lower()
        aliases = {
            "flat": cls.Flat,
            "wrinkled_1d": cls.Wrinkled1D,
            "wrinkled": cls.Wrinkled1D,
            "1d": cls.Wrinkled1D,
            "crumpled_2d": cls.Crumpled2D,
            "crumpled": cls.Crumpled2D,
            "2d": cls.Crumpled2D,
        }
        if key not in aliases:
            raise ValidationError(f"unknown film type {label!r}")
        return aliases[key]


# The 15 canonical sampling times, in minutes out of the 48 h window.
CANONICAL_MINUTES = (0, 5, 10, 20, 30, 60, 120, 240, 360, 480, 720, 1080, 1440, 2160, 2880)


def canonical_times():
    """Default 15-point normalized time grid for synthetic experiments."""
    return np.array(CANONICAL_MINUTES, dtype=np.float64) / CANONICAL_MINUTES[-1]


@dataclass(frozen=True)
class ReleaseCurve:
    film: FilmType
    times: np.ndarray
    fractions: np.ndarray
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=np.float64)
        fractions = np.ascontiguousarray(self.fractions, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fractions", fractions)
        if times.ndim != 1 or fractions.ndim != 1 or times.size != fractions.size:
            raise ValidationError("times and fractions must be 1-D and of equal length")
        if times.size < 2:
            raise ValidationError("a curve needs at least 2 points")
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTime("times must be strictly increasing")
        if times[0] < 0 or times[-1] > 1:
            raise ValidationError("normalized times must lie in [0, 1]")
        noisy = self.noise_sigma is not None
        if np.any(np.diff(fractions) < 0):
            if noisy:
                warnings.warn("noisy curve: fractions are not non-decreasing", stacklevel=2)
            else:
                raise ValidationError("fractions must be non-decreasing for noiseless curves")
        if fractions.min() < 0 or fractions.max() > 1:
            if noisy:
                warnings.warn("noisy curve: fractions leave [0, 1]", stacklevel=2)
            else:
                raise ValidationError("fractions must lie in [0, 1] for noiseless curves")
        times.flags.writeable = False
        fractions.flags.writeable = False

    def __len__(self):
        return self.times.size

    def with_film(self, film):
        return ReleaseCurve(film, self.times, self.fractions, self.noise_sigma)


@dataclass(frozen=True)
class SplitCurve:
    train: ReleaseCurve
    test: ReleaseCurve
    n: int


def fick_series_release(d_hat, t):
    """Cumulative release fraction of a unit slab at normalized time t.

    Plane-sheet solution with uniform initial concentration and perfect
    sinks at both faces, domain [0, 1], diffusivity d_hat = D / L^2:

        M_t / M_inf = 1 - sum_k 8 / ((2k+1)^2 pi^2) exp(-(2k+1)^2 pi^2 d_hat t)

    The series is truncated once the next term drops below 1e-12 (or at
    k = 10000 as a hard cap); t = 0 returns exactly 0.
    """
    if d_hat <= 0:
        raise ValidationError("d_hat must be positive")
    if t < 0:
        raise ValidationError("t must be non-negative")
    if t == 0.0:
        return 0.0
    acc = 0.0
    pisq = math.pi * math.pi
    for k in range(10001):
        odd = 2 * k + 1
        term = 8.0 / (odd * odd * pisq) * math.exp(-odd * odd * pisq * d_hat * t)
        acc += term
        if term < 1e-12:
            break
    return 1.0 - acc


def fickian_fractions(d_hat, times):
    return np.array([fick_series_release(d_hat, float(t)) for t in np.asarray(times)])


def synthesize_fickian(d_hat, n_points, t_max=1.0, film=FilmType.Flat):
    """Noiseless Fickian curve on a uniform grid of n_points over [0, t_max]."""
    if n_points < 2:
        raise ValidationError("n_points must be >= 2")
    times = np.linspace(0.0, t_max, n_points)
    return ReleaseCurve(film, times, fickian_fractions(d_hat, times))


def fickian_on_grid(d_hat, times, film=FilmType.Flat):
    """Noiseless Fickian curve on an explicit time grid."""
    times = np.asarray(times, dtype=np.float64)
    return ReleaseCurve(film, times, fickian_fractions(d_hat, times))


def add_gaussian_noise(curve, sigma, seed):
    """Seeded Gaussian perturbation of the fractions; sigma = 0 is the identity."""
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        return curve
    rng = np.random.default_rng(seed)
    noisy = curve.fractions + rng.normal(0.0, sigma, size=curve.fractions.size)
    return ReleaseCurve(curve.film, curve.times, noisy, noise_sigma=sigma)


def split_first_n(curve, n):
    """First n points for training, the remainder held out."""
    if not 2 <= n < len(curve):
        raise ValidationError(f"n must satisfy 2 <= n < {len(curve)}, got {n}")
    train = ReleaseCurve(curve.film, curve.times[:n], curve.fractions[:n], curve.noise_sigma)
    test = ReleaseCurve(curve.film, curve.times[n:], curve.fractions[n:], curve.noise_sigma)
    return SplitCurve(train, test, n)


_TIME_UNITS = ("normalized", "minutes", "hours")


def _format_value(v):
    # Six decimals when that is lossless, otherwise enough digits to round-trip.
    v = float(v)
    for fmt in ("%.6f", "%.9g"):
        s = fmt % v
        if float(s) == v:
            return s
    return repr(v)


def save_curve(curve, path):
    """Write the canonical CSV form (header comments + time,fraction rows)."""
    lines = [f"#film={curve.film.value}", "#time_unit=normalized"]
    if curve.noise_sigma is not None:
        lines.append(f"#noise_sigma={_format_value(curve.noise_sigma)}")
    for t, f in zip(curve.times, curve.fractions):
        lines.append(f"{_format_value(t)},{_format_value(f)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_curve(path, film=None):
    """Read a release-curve CSV.

    Header lines are `#key=value` with keys `film`, `time_unit`
    (normalized | minutes | hours) and optional `noise_sigma`.  Physical
    time units are normalized by the maximum time in the file.  A `film`
    argument overrides nothing: if both the header and the argument give a
    film they must agree.
    """
    header = {}
    times, fractions = [], []
    try:
        fh = open(path)
    except OSError as exc:
        raise CurveFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise CurveFormatError(f"{path}:{lineno}: malformed header line {line!r}")
                key, _, value = body.partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CurveFormatError(f"{path}:{lineno}: expected 'time,fraction', got {line!r}")
            try:
                t, f = float(parts[0]), float(parts[1])
            except ValueError:
                raise CurveFormatError(f"{path}:{lineno}: non-numeric row {line!r}") from None
            if not -0.5 <= f <= 1.5:
                raise CurveFormatError(f"{path}:{lineno}: fraction {f} outside [-0.5, 1.5]")
            times.append(t)
            fractions.append(f)

    unit = header.get("time_unit", "normalized")
    if unit not in _TIME_UNITS:
        raise CurveFormatError(f"{path}: unknown time_unit {unit!r}")
    header_film = FilmType.parse(header["film"]) if "film" in header else None
    if film is not None and header_film is not None and film != header_film:
        raise CurveFormatError(f"{path}: header film {header_film.value!r} conflicts with {film}")
    resolved = film or header_film
    if resolved is None:
        raise CurveFormatError(f"{path}: no film given (header or argument)")

    times = np.asarray(times, dtype=np.float64)
    fractions = np.asarray(fractions, dtype=np.float64)
    if times.size and np.any(np.diff(times) <= 0):
        raise NonMonotoneTime(f"{path}: times must be strictly increasing")
    if unit != "normalized":
        if times.size == 0 or times.max() <= 0:
            raise CurveFormatError(f"{path}: cannot normalize times with max <= 0")
        times = times / times.max()

    sigma = None
    if "noise_sigma" in header:
        try:
            sigma = float(header["noise_sigma"])
        except ValueError:
            raise CurveFormatError(f"{path}: bad noise_sigma {header['noise_sigma']!r}") from None
    return ReleaseCurve(resolved, times, fractions, noise_sigma=sigma)
