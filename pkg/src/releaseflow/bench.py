"""Benchmark protocols for the release models.

Provides the finite-difference oracle for the diffusion problem
(Crank-Nicolson with a hand-rolled Thomas solve), the MAE/RMSE metrics,
three shipped synthetic film curves of graded non-Fickian character, and
the three experiment protocols: classical-vs-PINN comparison, noisy-data
uncertainty bands (ensemble vs MC dropout), and limited-data prediction.
Reports serialize to JSON losslessly and emit plot-ready CSV files.
"""

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classical
from . import dataset
from . import pinn
from . import uq
from .dataset import FilmType
from .errors import ValidationError


class MissingFilm(ValidationError):
    """A protocol needs one curve per film type and one is absent."""


class WrongCurveLength(ValidationError):
    """The limited-data protocol requires 15-point curves."""


class LengthMismatch(ValidationError):
    """Metric inputs differ in length (or are empty)."""


FILM_ORDER = (FilmType.Flat, FilmType.Wrinkled1D, FilmType.Crumpled2D)
CLASSICAL_KINDS = (classical.ModelKind.FickSeries, classical.ModelKind.Higuchi,
                   classical.ModelKind.Peppas)
PINN_LABEL = "pinn"
MODEL_LABELS = tuple(k.value for k in CLASSICAL_KINDS) + (PINN_LABEL,)
N_RANGE = tuple(range(2, 15))  # training-point counts on the 15-point grid


def metrics(y_true, y_pred):
    """(MAE, RMSE) of predictions against references.

    MAE = mean |y_i - yhat_i|, RMSE = sqrt(mean (y_i - yhat_i)^2).
    """
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"got {a.size} references but {b.size} predictions")
    if a.size == 0:
        raise LengthMismatch("metrics need at least one pair")
    r = b - a
    return float(np.mean(np.abs(r))), float(np.sqrt(np.mean(r * r)))


# ---------------------------------------------------------------------------
# PDE oracle: Crank-Nicolson on u_t = d * u_xx, unit IC, absorbing walls

@dataclass(frozen=True)
class PdeOracleSolution:
    x: np.ndarray   # (nx,) space grid on [0, 1]
    t: np.ndarray   # (nt,) time grid on [0, 1]
    u: np.ndarray   # (nt, nx) concentration field
    d_hat: float

    def __post_init__(self):
        for name in ("x", "t", "u"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.u.shape != (self.t.size, self.x.size):
            raise ValidationError("u must have shape (nt, nx)")

    def release_curve(self):
        """Release fraction 1 - integral(u dx) at every stored time."""
        return 1.0 - np.trapezoid(self.u, self.x, axis=1)

    def release_at(self, times):
        """Release fraction at arbitrary times, linear in the time grid."""
        return np.interp(np.asarray(times, dtype=np.float64),
                         self.t, self.release_curve())


def _thomas_factor(lower, diag, upper):
    """Forward-elimination coefficients for a constant tridiagonal matrix."""
    m = diag.size
    w = np.zeros(m)
    bp = diag.copy()
    for i in range(1, m):
        w[i] = lower[i] / bp[i - 1]
        bp[i] = diag[i] - w[i] * upper[i - 1]
    return w, bp


def _thomas_solve(w, bp, upper, rhs):
    """Solve with precomputed elimination; O(m) per right-hand side."""
    m = rhs.size
    d = rhs.copy()
    for i in range(1, m):
        d[i] -= w[i] * d[i - 1]
    out = np.empty(m)
    out[-1] = d[-1] / bp[-1]
    for i in range(m - 2, -1, -1):
        out[i] = (d[i] - upper[i] * out[i + 1]) / bp[i]
    return out


def solve_pde_oracle(d_hat, nx, nt):
    """Finite-difference solve of u_t = d_hat * u_xx on the unit square.

    Unit initial concentration (stored as the full pre-quench state at
    t = 0, so the discrete mass starts at exactly 1), zero Dirichlet
    walls from the first evolved step on.  Crank-Nicolson time stepping
    with a Thomas tridiagonal solve; the first two steps are smoothed
    Rannacher-style (two implicit-Euler half-steps each) so the
    discontinuous corner data cannot ring through the maximum principle.
    """
    if d_hat < 0:
        raise ValidationError("d_hat must be >= 0")
    if nx < 3:
        raise ValidationError("need nx >= 3 for an interior")
    if nt < 2:
        raise ValidationError("need nt >= 2 time levels")
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    dx = x[1] - x[0]
    dt = t[1] - t[0]
    m = nx - 2

    u = np.zeros((nt, nx))
    # initial row: the pre-quench state u = 1 everywhere, so the trapezoid
    # mass at t = 0 is exactly 1; the absorbing walls act from step 1 on
    u[0] = 1.0
    v = np.ones(m)

    # Crank-Nicolson matrix (I - r*T) with T the second-difference stencil
    r = d_hat * dt / (2.0 * dx * dx)
    cn_low = np.full(m, -r)
    cn_diag = np.full(m, 1.0 + 2.0 * r)
    cn_up = np.full(m, -r)
    cn_w, cn_bp = _thomas_factor(cn_low, cn_diag, cn_up)

    # implicit-Euler matrix for the startup half-steps
    rb = d_hat * (0.5 * dt) / (dx * dx)
    be_low = np.full(m, -rb)
    be_diag = np.full(m, 1.0 + 2.0 * rb)
    be_up = np.full(m, -rb)
    be_w, be_bp = _thomas_factor(be_low, be_diag, be_up)

    n_smooth = min(2, nt - 1)
    for step in range(1, nt):
        if step <= n_smooth:
            for _ in range(2):
                v = _thomas_solve(be_w, be_bp, be_up, v)
        else:
            rhs = (1.0 - 2.0 * r) * v
            rhs[1:] += r * v[:-1]
            rhs[:-1] += r * v[1:]
            v = _thomas_solve(cn_w, cn_bp, cn_up, rhs)
        u[step, 1:-1] = v
    return PdeOracleSolution(x, t, u, float(d_hat))


# ---------------------------------------------------------------------------
# shipped synthetic films

# Flat: Fickian bimodal film -- two slab populations with distinct reduced
# diffusivities (thin and thick regions), each following the plane-sheet
# series.  Wrinkled: Peppas power law (anomalous transport exponent) with a
# burst offset.  Crumpled: two-timescale biexponential (fast surface pool
# plus slow bulk pool).  Constants chosen so the three curves deviate from
# single-mechanism ideality by graded amounts.
_FLAT_MIX = ((0.7, 0.25), (0.3, 0.035))        # (weight, d_hat) pairs
_WRINKLED_BURST = 0.05
_WRINKLED_K = 0.9
_WRINKLED_N = 0.35
_CRUMPLED_FAST = (0.55, 0.05)                  # (weight, tau)
_CRUMPLED_SLOW = (0.45, 0.65)


def flat_fractions(times):
    times = np.asarray(times, dtype=np.float64)
    out = np.zeros_like(times)
    for weight, d_hat in _FLAT_MIX:
        out += weight * dataset.fickian_fractions(d_hat, times)
    return out


def wrinkled_fractions(times):
    times = np.asarray(times, dtype=np.float64)
    out = np.where(times > 0.0,
                   _WRINKLED_BURST + _WRINKLED_K * times ** _WRINKLED_N,
                   0.0)
    return np.minimum(out, 1.0)


def crumpled_fractions(times):
    times = np.asarray(times, dtype=np.float64)
    a, tau_fast = _CRUMPLED_FAST
    b, tau_slow = _CRUMPLED_SLOW
    out = 1.0 - a * np.exp(-times / tau_fast) - b * np.exp(-times / tau_slow)
    return np.maximum(out, 0.0)  # the t = 0 sum can land a few ulp below zero


_FILM_GENERATORS = {
    FilmType.Flat: flat_fractions,
    FilmType.Wrinkled1D: wrinkled_fractions,
    FilmType.Crumpled2D: crumpled_fractions,
}


def shipped_curve(film, times=None):
    """The reference synthetic curve for one film on the canonical grid."""
    if times is None:
        times = dataset.canonical_times()
    return dataset.ReleaseCurve(film, times, _FILM_GENERATORS[film](times))


def shipped_curves(times=None):
    """All three reference curves keyed by film type."""
    return {film: shipped_curve(film, times) for film in FILM_ORDER}


def _require_films(curves):
    for film in FILM_ORDER:
        if film not in curves:
            raise MissingFilm(f"no curve supplied for film {film.value!r}")
    return {film: curves[film] for film in FILM_ORDER}


def _with_film_context(film, err):
    err.args = (f"[{film.value}] {err}",)
    return err


# ---------------------------------------------------------------------------
# reports

def _check_cell(value, what):
    v = float(value)
    if not np.isfinite(v) or v < 0:
        raise ValidationError(f"{what} must be finite and >= 0, got {value!r}")
    return v


@dataclass(frozen=True)
class ComparisonReport:
    """MAE/RMSE per (film, model), plus the per-film winner by RMSE.

    `cells[film_label][model_label]` is {"mae": float, "rmse": float};
    ties go to the classical model, never the PINN.
    """
    cells: dict
    winners: dict

    def __post_init__(self):
        for film in FILM_ORDER:
            row = self.cells[film.value]
            for label in MODEL_LABELS:
                for metric_name in ("mae", "rmse"):
                    _check_cell(row[label][metric_name],
                                f"{film.value}/{label}/{metric_name}")
            if self.winners[film.value] not in MODEL_LABELS:
                raise ValidationError(f"unknown winner for {film.value}")

    def cell(self, film, model):
        film = film.value if isinstance(film, FilmType) else film
        entry = self.cells[film][model]
        return entry["mae"], entry["rmse"]

    def winner(self, film):
        film = film.value if isinstance(film, FilmType) else film
        return self.winners[film]

    def to_dict(self):
        return {"cells": self.cells, "winners": self.winners}

    @classmethod
    def from_dict(cls, payload):
        return cls(payload["cells"], payload["winners"])

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("film,model,mae,rmse,winner\n")
            for film in FILM_ORDER:
                for label in MODEL_LABELS:
                    mae, rmse = self.cell(film, label)
                    flag = int(self.winners[film.value] == label)
                    fh.write(f"{film.value},{label},{mae!r},{rmse!r},{flag}\n")


def _pick_winner(rmse_by_label):
    best_classical = min((label for label in MODEL_LABELS if label != PINN_LABEL),
                         key=lambda lab: rmse_by_label[lab])
    if rmse_by_label[PINN_LABEL] < rmse_by_label[best_classical]:
        return PINN_LABEL
    return best_classical


@dataclass(frozen=True)
class NoiseBenchReport:
    """Uncertainty bands and band-mean errors per film and method.

    `bands[film_label][method_label]` is an UncertaintyBand on the
    101-point grid; `errors` holds {"mae", "rmse"} of the band mean
    against the noiseless reference curve.
    """
    bands: dict
    errors: dict
    noise_sigma: float
    n_members: int
    n_passes: int

    METHOD_LABELS = (uq.BandMethod.Ensemble.value, uq.BandMethod.McDropout.value)
    BPINN_LABELS = (uq.BandMethod.McDropout.value, uq.BandMethod.Hmc.value)

    def bpinn_label(self):
        """Label of the BPINN band: "mc_dropout" or "hmc"."""
        row = self.bands[FILM_ORDER[0].value]
        return next(k for k in row if k != uq.BandMethod.Ensemble.value)

    def __post_init__(self):
        first = self.bands[FILM_ORDER[0].value]
        extra = [k for k in first if k != uq.BandMethod.Ensemble.value]
        if len(extra) != 1 or extra[0] not in self.BPINN_LABELS:
            raise ValidationError(
                "bands must hold ensemble plus exactly one BPINN method")
        labels = (uq.BandMethod.Ensemble.value, extra[0])
        for film in FILM_ORDER:
            for method in labels:
                band = self.bands[film.value][method]
                if not isinstance(band, uq.UncertaintyBand):
                    raise ValidationError("bands must hold UncertaintyBand values")
                for metric_name in ("mae", "rmse"):
                    _check_cell(self.errors[film.value][method][metric_name],
                                f"{film.value}/{method}/{metric_name}")

    def band(self, film, method):
        film = film.value if isinstance(film, FilmType) else film
        method = method.value if isinstance(method, uq.BandMethod) else method
        return self.bands[film][method]

    def to_dict(self):
        bands = {
            film: {
                method: {
                    "times": [float(v) for v in band.times],
                    "mean": [float(v) for v in band.mean],
                    "std": [float(v) for v in band.std],
                    "n_samples": band.n_samples,
                }
                for method, band in row.items()
            }
            for film, row in self.bands.items()
        }
        return {"bands": bands, "errors": self.errors,
                "noise_sigma": self.noise_sigma, "n_members": self.n_members,
                "n_passes": self.n_passes}

    @classmethod
    def from_dict(cls, payload):
        bands = {
            film: {
                method: uq.UncertaintyBand(
                    np.asarray(entry["times"]), np.asarray(entry["mean"]),
                    np.asarray(entry["std"]), entry["n_samples"],
                    uq.BandMethod(method))
                for method, entry in row.items()
            }
            for film, row in payload["bands"].items()
        }
        return cls(bands, payload["errors"], payload["noise_sigma"],
                   payload["n_members"], payload["n_passes"])

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csvs(self, directory):
        """One noise_bands_<film>.csv per film with both methods' bands."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        lab = self.bpinn_label()
        for film in FILM_ORDER:
            ens = self.band(film, uq.BandMethod.Ensemble)
            drop = self.band(film, lab)
            path = directory / f"noise_bands_{film.value}.csv"
            with open(path, "w") as fh:
                fh.write(f"t,ensemble_mean,ensemble_std,"
                         f"{lab}_mean,{lab}_std\n")
                for i, tv in enumerate(ens.times):
                    fh.write(f"{float(tv)!r},{float(ens.mean[i])!r},"
                             f"{float(ens.std[i])!r},{float(drop.mean[i])!r},"
                             f"{float(drop.std[i])!r}\n")
            paths.append(path)
        return paths


@dataclass(frozen=True)
class LimitedDataReport:
    """Held-out RMSE per (film, model, n) and the minimal passing n.

    `rmse[film_label][model_label][n]` is the RMSE of the model trained
    on the first n points and evaluated on the remaining 15 - n;
    `minimal_n[film_label][model_label]` is the smallest n with RMSE
    below the threshold, or None if no n passes.
    """
    threshold: float
    rmse: dict
    minimal_n: dict

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValidationError("threshold must be > 0")
        for film in FILM_ORDER:
            for label in MODEL_LABELS:
                per_n = self.rmse[film.value][label]
                if tuple(sorted(per_n)) != N_RANGE:
                    raise ValidationError(
                        f"{film.value}/{label}: n must range exactly 2..14")
                for n, value in per_n.items():
                    _check_cell(value, f"{film.value}/{label}/n={n}")
                m = self.minimal_n[film.value][label]
                if m is not None and m not in N_RANGE:
                    raise ValidationError("minimal n must lie in 2..14 or be None")

    def rmse_at(self, film, model, n):
        film = film.value if isinstance(film, FilmType) else film
        return self.rmse[film][model][n]

    def minimal(self, film, model):
        film = film.value if isinstance(film, FilmType) else film
        return self.minimal_n[film][model]

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "rmse": {film: {label: {str(n): v for n, v in per_n.items()}
                            for label, per_n in row.items()}
                     for film, row in self.rmse.items()},
            "minimal_n": self.minimal_n,
        }

    @classmethod
    def from_dict(cls, payload):
        rmse = {film: {label: {int(n): v for n, v in per_n.items()}
                       for label, per_n in row.items()}
                for film, row in payload["rmse"].items()}
        return cls(payload["threshold"], rmse, payload["minimal_n"])

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("film,model,n,rmse\n")
            for film in FILM_ORDER:
                for label in MODEL_LABELS:
                    for n in N_RANGE:
                        v = self.rmse[film.value][label][n]
                        fh.write(f"{film.value},{label},{n},{v!r}\n")


# ---------------------------------------------------------------------------
# work queue

def _map_jobs(fn, argslist, n_jobs):
    """Run independent jobs, optionally on a process pool, order-stable."""
    if n_jobs <= 1 or len(argslist) <= 1:
        return [fn(args) for args in argslist]
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(argslist))) as pool:
        return list(pool.map(fn, argslist))


def _train_release_job(args):
    """Train one PINN and evaluate its release curve at given times."""
    cfg, curve, times = args
    trained = pinn.train(cfg, curve)
    return trained.release(np.asarray(times, dtype=np.float64))


def _ensemble_member_job(args):
    """One ensemble member: re-noise, warm-start d, train, predict.

    Follows uq.train_ensemble's member recipe (noise seed = config seed =
    base + k) plus the protocol-level warm start on the member's own
    noisy data.
    """
    member_cfg, curve, noise_sigma, member_seed = args
    noisy = dataset.add_gaussian_noise(curve, noise_sigma, seed=member_seed)
    try:
        trained = pinn.train(_warm_start(member_cfg, noisy), noisy)
    except pinn.NonFiniteLoss as err:
        # exceptions with extra fields do not survive a process pool; report
        # the failure as data and re-raise in the parent
        return ("failed", member_seed, err.epoch, err.value)
    return trained.release(uq.band_time_grid())


# ---------------------------------------------------------------------------
# protocols

# Data-loss weight for the protocol defaults.  The burst-bearing films
# carry features a diffusion field cannot represent, so the data term must
# dominate where the physics cannot follow; the PDE/IC/BC terms still
# regularize the extrapolation.
_PROTOCOL_WEIGHTS = (25.0, 1.0, 1.0, 1.0)


def default_comparison_config():
    """Per-film PINN settings for the comparison protocol."""
    return pinn.PinnConfig(d_mode=pinn.Learnable(0.01),
                           loss_weights=_PROTOCOL_WEIGHTS)


def default_ensemble_config():
    """Member settings for the noise protocol's ensemble."""
    return pinn.PinnConfig(epochs=5000, d_mode=pinn.Learnable(0.01),
                           loss_weights=_PROTOCOL_WEIGHTS)


def default_bpinn_config():
    """Dropout-network settings for the noise protocol's BPINN."""
    return pinn.PinnConfig(epochs=10000, d_mode=pinn.Learnable(0.01),
                           p_keep=0.95, loss_weights=_PROTOCOL_WEIGHTS)


def default_limited_config():
    """Per-(film, n) PINN settings for the limited-data protocol."""
    return pinn.PinnConfig(epochs=2000, n_collocation=1000,
                           d_mode=pinn.Learnable(0.01),
                           loss_weights=_PROTOCOL_WEIGHTS)


def _warm_start(cfg, train_curve):
    """Re-seed a learnable diffusivity from the classical Fick fit.

    The log-space optimizer moves d by at most a few e-folds within a
    training budget, so starting it at the single-d Fick estimate of the
    training points puts the physics in the right regime from epoch one.
    Fixed-d configurations pass through untouched.
    """
    if not cfg.d_mode.is_learnable:
        return cfg
    d0 = classical.fit(classical.ModelKind.FickSeries,
                       train_curve).model.params[0]
    return dataclasses.replace(cfg, d_mode=pinn.Learnable(float(d0)))


def run_comparison(curves, pinn_cfg=None, n_jobs=1):
    """Fit the three classical models and train one PINN per film.

    A learnable diffusivity is warm-started per film from the classical
    Fick fit of that film's curve.
    """
    films = _require_films(curves)
    cfg = default_comparison_config() if pinn_cfg is None else pinn_cfg

    jobs = [(_warm_start(dataclasses.replace(cfg, seed=cfg.seed + i),
                         films[film]), films[film], films[film].times)
            for i, film in enumerate(FILM_ORDER)]
    pinn_preds = _map_jobs(_train_release_job, jobs, n_jobs)

    cells = {}
    winners = {}
    for i, film in enumerate(FILM_ORDER):
        curve = films[film]
        row = {}
        for kind in CLASSICAL_KINDS:
            try:
                res = classical.fit(kind, curve)
            except ValidationError as err:
                raise _with_film_context(film, err)
            row[kind.value] = {"mae": res.mae, "rmse": res.rmse}
        mae, rmse = metrics(curve.fractions, pinn_preds[i])
        row[PINN_LABEL] = {"mae": mae, "rmse": rmse}
        cells[film.value] = row
        winners[film.value] = _pick_winner(
            {label: row[label]["rmse"] for label in MODEL_LABELS})
    return ComparisonReport(cells, winners)


def run_noise_benchmark(curves, ens_cfg=None, bpinn_cfg=None, *, n_members=50,
                        noise_sigma=0.1, n_passes=100, hmc_cfg=None, n_jobs=1):
    """Ensemble and BPINN bands per film, with band-mean errors.

    Member k of a film's ensemble trains on independently re-noised data
    (seed base + k), exactly as uq.train_ensemble does, but the member
    grid runs on the shared work queue.  The BPINN trains once per film
    on one noisy replicate and is sampled with n_passes dropout masks —
    or, when `hmc_cfg` is given, by HMC around that trained MAP estimate.
    Errors compare each band mean (interpolated to the reference grid)
    against the noiseless reference fractions.
    """
    films = _require_films(curves)
    ens_cfg = default_ensemble_config() if ens_cfg is None else ens_cfg
    bpinn_cfg = default_bpinn_config() if bpinn_cfg is None else bpinn_cfg
    if n_members < 2:
        raise ValidationError("ensemble needs at least 2 members")
    if hmc_cfg is None:
        if n_passes < 2:
            raise ValidationError("MC dropout needs at least 2 passes")
        if not bpinn_cfg.p_keep < 1.0:
            raise ValidationError("bpinn_cfg must enable dropout (p_keep < 1)")

    member_jobs = []
    for i, film in enumerate(FILM_ORDER):
        base_seed = ens_cfg.seed + 1000 * i
        for k in range(n_members):
            member_seed = base_seed + k
            member_jobs.append((dataclasses.replace(ens_cfg, seed=member_seed),
                                films[film], noise_sigma, member_seed))
    member_rows = _map_jobs(_ensemble_member_job, member_jobs, n_jobs)

    grid = uq.band_time_grid()
    bands = {}
    errors = {}
    for i, film in enumerate(FILM_ORDER):
        rows = member_rows[i * n_members:(i + 1) * n_members]
        for row in rows:
            if isinstance(row, tuple) and row[0] == "failed":
                raise _with_film_context(
                    film, uq.EnsembleMemberFailure(row[1], row[2], row[3]))
        ens_band = uq.band_from_samples(grid, np.vstack(rows),
                                        uq.BandMethod.Ensemble)

        bpinn_seed = bpinn_cfg.seed + 1000 * i
        noisy = dataset.add_gaussian_noise(films[film], noise_sigma,
                                           seed=bpinn_seed)
        try:
            trained = pinn.train(
                _warm_start(dataclasses.replace(bpinn_cfg, seed=bpinn_seed),
                            noisy), noisy)
        except ValidationError as err:
            raise _with_film_context(film, err)
        if hmc_cfg is None:
            bp_label = uq.BandMethod.McDropout.value
            bp_band = uq.mc_dropout_band(trained, n_passes, seed=bpinn_seed)
            recorded_passes = n_passes
        else:
            bp_label = uq.BandMethod.Hmc.value
            colloc = pinn.sample_lhs(bpinn_cfg.n_collocation,
                                     seed=bpinn_seed + 1)
            film_hmc = dataclasses.replace(hmc_cfg,
                                           seed=hmc_cfg.seed + 1000 * i)
            try:
                samples = uq.hmc_sample(noisy, colloc, film_hmc,
                                        (trained.params, trained.d_value))
            except uq.DivergentTrajectory as err:
                raise _with_film_context(film, err)
            bp_band = uq.posterior_band(samples, grid)
            recorded_passes = len(samples)

        bands[film.value] = {uq.BandMethod.Ensemble.value: ens_band,
                             bp_label: bp_band}
        row_err = {}
        for method, band in bands[film.value].items():
            mean_at_ref = np.interp(films[film].times, band.times, band.mean)
            mae, rmse = metrics(films[film].fractions, mean_at_ref)
            row_err[method] = {"mae": mae, "rmse": rmse}
        errors[film.value] = row_err
    return NoiseBenchReport(bands, errors, float(noise_sigma), int(n_members),
                            int(recorded_passes))


def run_limited_data(curves, pinn_cfg=None, threshold=0.05, n_jobs=1):
    """Train on the first n points, score on the held-out remainder.

    For every film and every n in 2..14: the PINN trains on the first n
    points (learnable d warm-started from the Fick fit of those points);
    the classical models fit the same prefix; all are scored by RMSE on
    the remaining 15 - n points only.
    """
    films = _require_films(curves)
    if not threshold > 0:
        raise ValidationError("threshold must be > 0")
    cfg = default_limited_config() if pinn_cfg is None else pinn_cfg
    for film, curve in films.items():
        if len(curve) != 15:
            raise WrongCurveLength(
                f"limited-data protocol needs 15-point curves; "
                f"{film.value} has {len(curve)}")

    # n = 14 leaves a single held-out point, which a ReleaseCurve cannot
    # represent, so the prefix/tail split is taken on the raw arrays
    def _prefix(curve, n):
        return dataset.ReleaseCurve(curve.film, curve.times[:n],
                                    curve.fractions[:n], curve.noise_sigma)

    jobs = []
    order = []
    for i, film in enumerate(FILM_ORDER):
        curve = films[film]
        for n in N_RANGE:
            head = _prefix(curve, n)
            job_cfg = _warm_start(
                dataclasses.replace(cfg, seed=cfg.seed + 100 * i + n), head)
            jobs.append((job_cfg, head, curve.times[n:]))
            order.append((film, n))
    preds = _map_jobs(_train_release_job, jobs, n_jobs)

    rmse = {film.value: {label: {} for label in MODEL_LABELS}
            for film in FILM_ORDER}
    for (film, n), pred in zip(order, preds):
        curve = films[film]
        head = _prefix(curve, n)
        tail_y = curve.fractions[n:]
        rmse[film.value][PINN_LABEL][n] = metrics(tail_y, pred)[1]
        for kind in CLASSICAL_KINDS:
            try:
                res = classical.fit(kind, head)
            except ValidationError as err:
                raise _with_film_context(film, err)
            tail_pred = classical.predict(res.model, curve.times[n:])
            rmse[film.value][kind.value][n] = metrics(tail_y, tail_pred)[1]

    minimal = {
        film.value: {
            label: next((n for n in N_RANGE
                         if rmse[film.value][label][n] < threshold), None)
            for label in MODEL_LABELS
        }
        for film in FILM_ORDER
    }
    return LimitedDataReport(float(threshold), rmse, minimal)
