"""Uncertainty quantification for release predictions.

Three routes, all reporting pointwise (mean, std) bands over a time grid:

* deep ensemble -- retrain the PINN on independently re-noised copies of
  the curve with different initializations and pool the predictions;
* MC dropout -- stochastic forward passes through a dropout-trained
  network with fresh masks;
* HMC -- Hamiltonian Monte Carlo over the joint (weights, log d)
  posterior, with Gaussian likelihoods for the data, residual and IC/BC
  terms and Gaussian / log-normal priors.

Ensemble and dropout stds use the population estimator (divide by N).
The HMC position space is (theta, rho = ln d), which makes the log-normal
prior on d an ordinary Gaussian in rho and keeps d positive by
construction.
"""

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import backend, dataset, nnengine, pinn
from .errors import ReleaseflowError, ValidationError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_BAND_GRID = 101


class DropoutDisabled(ReleaseflowError):
    """MC dropout asked of a model trained with p_keep = 1."""


class DivergentTrajectory(ReleaseflowError):
    """More than half of the HMC trajectories produced non-finite energy."""


class EnsembleMemberFailure(pinn.NonFiniteLoss):
    """One ensemble member diverged; carries the failing member seed."""

    def __init__(self, member_seed, epoch, value):
        ReleaseflowError.__init__(
            self,
            f"ensemble member with seed {member_seed} diverged: "
            f"non-finite loss {value!r} at epoch {epoch}",
        )
        self.member_seed = member_seed
        self.epoch = epoch
        self.value = value


class BandMethod(enum.Enum):
    Ensemble = "ensemble"
    McDropout = "mc_dropout"
    Hmc = "hmc"


@dataclass(frozen=True)
class UncertaintyBand:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_samples: int
    method: BandMethod

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        m = np.ascontiguousarray(self.mean, dtype=np.float64)
        s = np.ascontiguousarray(self.std, dtype=np.float64)
        if not (t.ndim == m.ndim == s.ndim == 1 and t.size == m.size == s.size):
            raise ValidationError("band arrays must be 1-D and of equal length")
        if np.any(s < 0):
            raise ValidationError("band std must be elementwise >= 0")
        if self.n_samples < 2:
            raise ValidationError("a band needs at least 2 samples")
        for name, arr in (("times", t), ("mean", m), ("std", s)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def mean_std(self):
        """Average band half-width; the benchmark's width statistic."""
        return float(np.mean(self.std))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,mean,std\n")
            for t, m, s in zip(self.times, self.mean, self.std):
                fh.write(f"{float(t)!r},{float(m)!r},{float(s)!r}\n")

    @classmethod
    def from_csv(cls, path, method, n_samples):
        rows = Path(path).read_text().strip().splitlines()
        if not rows or rows[0].strip() != "t,mean,std":
            raise ValidationError(f"{path}: expected a 't,mean,std' header")
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1], data[:, 2], n_samples, method)


def band_from_samples(times, samples, method):
    """Pointwise mean/std band over sample rows (population std)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValidationError("need a (n_samples >= 2, n_times) sample matrix")
    return UncertaintyBand(
        times=np.asarray(times, dtype=np.float64),
        mean=samples.mean(axis=0),
        std=samples.std(axis=0, ddof=0),
        n_samples=samples.shape[0],
        method=method,
    )


def band_time_grid(n=_BAND_GRID):
    return np.linspace(0.0, 1.0, n)


def train_ensemble(base, curve, n_members, noise_sigma):
    """Deep ensemble: n_members PINNs on independently re-noised data.

    Member k trains on add_gaussian_noise(curve, noise_sigma, seed
    base.seed + k) with network init seed base.seed + k, so the band
    reflects both data noise and initialization variation.  Deterministic
    in base.seed.  A diverging member aborts with its seed in the error.
    """
    if n_members < 2:
        raise ValidationError("ensemble needs at least 2 members")
    grid = band_time_grid()
    preds = np.empty((n_members, grid.size))
    for k in range(n_members):
        member_seed = base.seed + k
        noisy = dataset.add_gaussian_noise(curve, noise_sigma, seed=member_seed)
        member_cfg = replace(base, seed=member_seed)
        try:
            trained = pinn.train(member_cfg, noisy)
        except pinn.NonFiniteLoss as err:
            raise EnsembleMemberFailure(member_seed, err.epoch, err.value) from err
        preds[k] = trained.release(grid)
    return band_from_samples(grid, preds, BandMethod.Ensemble)


def mc_dropout_band(trained, n_passes, seed, allow_deterministic=False):
    """Stochastic forward passes with fresh dropout masks.

    `allow_deterministic` is the test hook that lets a p_keep = 1 model
    through the DropoutDisabled guard (every pass then produces the same
    prediction, so the band mean equals the deterministic forward and the
    std is exactly zero).
    """
    if n_passes < 2:
        raise ValidationError("MC dropout needs at least 2 passes")
    p_keep = trained.config.p_keep
    if p_keep >= 1.0 and not allow_deterministic:
        raise DropoutDisabled(
            "model was trained with p_keep = 1; no stochastic passes to draw"
        )
    grid = band_time_grid()
    preds = np.empty((n_passes, grid.size))
    for i in range(n_passes):
        mask = nnengine.DropoutMask.draw(trained.params.arch, p_keep, seed=seed + i)
        preds[i] = trained.release(grid, mask=mask)
    return band_from_samples(grid, preds, BandMethod.McDropout)


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings; n_samples counts total iterations, the first
    burn_in of which are discarded."""

    n_samples: int = 2000
    burn_in: int = 1000
    leapfrog_steps: int = 50
    step_size: float = 1e-3
    prior_std_weights: float = 1.0
    noise_std_data: float = 0.05
    noise_std_pde: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValidationError("step_size must be positive")
        if self.leapfrog_steps < 1:
            raise ValidationError("leapfrog_steps must be >= 1")
        if not 0 <= self.burn_in < self.n_samples:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < n_samples")
        for name in ("prior_std_weights", "noise_std_data", "noise_std_pde"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "burn_in": self.burn_in,
            "leapfrog_steps": self.leapfrog_steps,
            "step_size": self.step_size,
            "prior_std_weights": self.prior_std_weights,
            "noise_std_data": self.noise_std_data,
            "noise_std_pde": self.noise_std_pde,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class PosteriorSamples:
    """Retained HMC draws: theta rows paired with d values."""

    arch: nnengine.MlpArchitecture
    thetas: np.ndarray  # (n_draws, n_params)
    d_values: np.ndarray  # (n_draws,)
    acceptance_rate: float
    divergences: int = 0

    def __post_init__(self):
        thetas = np.ascontiguousarray(self.thetas, dtype=np.float64)
        d_values = np.ascontiguousarray(self.d_values, dtype=np.float64)
        if thetas.ndim != 2 or thetas.shape[1] != self.arch.n_params:
            raise ValidationError("theta draws must be (n, n_params)")
        if d_values.shape != (thetas.shape[0],):
            raise ValidationError("one d value per theta draw")
        if d_values.size and not np.all(d_values > 0):
            raise ValidationError("all d draws must be positive")
        if not 0 < self.acceptance_rate <= 1:
            raise ValidationError("acceptance_rate must lie in (0, 1]")
        for name, arr in (("thetas", thetas), ("d_values", d_values)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.thetas.shape[0]

    def __getitem__(self, i):
        return self.thetas[i], float(self.d_values[i])

    def d_interval(self, central=0.95):
        lo = 100.0 * (1.0 - central) / 2.0
        return tuple(np.percentile(self.d_values, [lo, 100.0 - lo]))

    def to_summary(self):
        lo, hi = self.d_interval()
        return {
            "n_draws": len(self),
            "acceptance_rate": self.acceptance_rate,
            "divergences": self.divergences,
            "arch": self.arch.to_dict(),
            "d_mean": float(self.d_values.mean()),
            "d_std": float(self.d_values.std(ddof=0)),
            "d_interval_95": [float(lo), float(hi)],
        }

    _MAGIC = b"RFPS\x01"

    def save(self, path):
        """Binary: magic, dims header, counts, then contiguous LE draws."""
        dims = self.arch.dims
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(struct.pack("<QdQ", len(self), self.acceptance_rate,
                                 self.divergences))
            fh.write(np.ascontiguousarray(self.thetas, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.d_values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:5] != cls._MAGIC:
            raise ValidationError(f"{path}: not a posterior-samples file")
        off = 5
        (ndims,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{ndims}I", raw, off)
        off += 4 * ndims
        n, acc, div = struct.unpack_from("<QdQ", raw, off)
        off += struct.calcsize("<QdQ")
        arch = nnengine.MlpArchitecture(
            input_dim=dims[0],
            hidden_layers=len(dims) - 2,
            neurons_per_layer=dims[1] if len(dims) > 2 else 1,
            output_dim=dims[-1],
        )
        n_params = arch.n_params
        expect = 5 + 4 + 4 * ndims + struct.calcsize("<QdQ") + 8 * n * (n_params + 1)
        if len(raw) != expect:
            raise ValidationError(f"{path}: truncated posterior-samples file")
        thetas = np.frombuffer(raw, dtype="<f8", count=n * n_params, offset=off)
        off += 8 * n * n_params
        d_values = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
        return cls(arch, thetas.reshape(n, n_params).copy(), d_values.copy(),
                   acc, int(div))


def _icbc_batches():
    g = np.linspace(0.0, 1.0, _BAND_GRID)
    ic = np.column_stack([g, np.zeros(g.size)])
    bc = np.vstack(
        [np.column_stack([np.zeros(g.size), g]),
         np.column_stack([np.ones(g.size), g])]
    )
    return ic, bc


def log_posterior(params, d, curve, colloc, hmc_cfg, d_prior_median=1.0,
                  quadrature_points=101):
    """Joint log density of (theta, rho = ln d) up to parameterization.

    Likelihood: Gaussian release residuals (std noise_std_data), Gaussian
    PDE residuals at the collocation points and Gaussian IC/BC residuals
    (both std noise_std_pde), all with their normalization constants.
    Priors: Normal(0, prior_std_weights^2) per weight and
    Normal(ln d_prior_median, 1) on rho.  With no observations at all
    (empty curve and empty collocation set) only the priors remain.
    """
    if not d > 0:
        raise ValidationError("diffusivity must be positive")
    theta = params.values
    sw = hmc_cfg.prior_std_weights
    lp = -0.5 * float(theta @ theta) / sw**2 - theta.size * (
        _LOG_SQRT_2PI + np.log(sw)
    )
    rho = np.log(d)
    mu = np.log(d_prior_median)
    lp += -0.5 * (rho - mu) ** 2 - _LOG_SQRT_2PI

    n_data = 0 if curve is None else len(curve)
    n_pde = 0 if colloc is None else len(colloc)
    if n_data == 0 and n_pde == 0:
        return float(lp)

    sr, sf = hmc_cfg.noise_std_data, hmc_cfg.noise_std_pde
    if n_data:
        resid = pinn.release_fraction(params, curve.times, quadrature_points) \
            - curve.fractions
        lp += -0.5 * float(resid @ resid) / sr**2 - n_data * (
            _LOG_SQRT_2PI + np.log(sr)
        )
    if n_pde:
        r = pinn.pde_residual(params, d, colloc)
        lp += -0.5 * float(r @ r) / sf**2 - n_pde * (_LOG_SQRT_2PI + np.log(sf))

    ic_pts, bc_pts = _icbc_batches()
    u_ic = nnengine.forward_batch(params, ic_pts) - 1.0
    u_bc = nnengine.forward_batch(params, bc_pts)
    ssq = float(u_ic @ u_ic) + float(u_bc @ u_bc)
    n_icbc = ic_pts.shape[0] + bc_pts.shape[0]
    lp += -0.5 * ssq / sf**2 - n_icbc * (_LOG_SQRT_2PI + np.log(sf))
    return float(lp)


def hmc_chain(value_and_grad, initial, n_samples, burn_in, leapfrog_steps,
              step_size, seed):
    """Generic HMC over a log density; returns (draws, acceptance, divergences).

    `value_and_grad(q) -> (log_density, grad_log_density)`.  Unit mass,
    momentum resampled per iteration, Metropolis-corrected leapfrog,
    deterministic in seed.  Trajectories ending with non-finite energy are
    rejected and counted; more than 50% of them aborts the run.
    """
    rng = np.random.default_rng(seed)
    q = np.ascontiguousarray(initial, dtype=np.float64).copy()
    lp, grad = value_and_grad(q)
    draws = np.empty((n_samples - burn_in, q.size))
    accepted = 0
    divergences = 0
    for it in range(n_samples):
        p0 = rng.standard_normal(q.size)
        h0 = -lp + 0.5 * float(p0 @ p0)

        q_new = q.copy()
        lp_new, grad_new = lp, grad
        p = p0 + 0.5 * step_size * grad_new
        for s in range(leapfrog_steps):
            q_new = q_new + step_size * p
            lp_new, grad_new = value_and_grad(q_new)
            p = p + (step_size if s < leapfrog_steps - 1 else 0.5 * step_size) * grad_new
        h1 = -lp_new + 0.5 * float(p @ p)

        if not np.isfinite(h1):
            divergences += 1
            if 2 * divergences > n_samples:
                raise DivergentTrajectory(
                    f"{divergences} of {it + 1} trajectories diverged; "
                    "reduce step_size"
                )
        elif float(rng.uniform()) < np.exp(min(0.0, h0 - h1)):
            q, lp, grad = q_new, lp_new, grad_new
            accepted += 1
        if it >= burn_in:
            draws[it - burn_in] = q
    return draws, accepted / n_samples, divergences


def leapfrog(value_and_grad, q, p, step_size, n_steps):
    """One leapfrog trajectory; returns (q, p, log_density at q).

    Exposed for the energy-conservation and reversibility checks.
    """
    q = np.asarray(q, dtype=np.float64).copy()
    p = np.asarray(p, dtype=np.float64).copy()
    lp, grad = value_and_grad(q)
    p = p + 0.5 * step_size * grad
    for s in range(n_steps):
        q = q + step_size * p
        lp, grad = value_and_grad(q)
        p = p + (step_size if s < n_steps - 1 else 0.5 * step_size) * grad
    return q, p, lp


def _posterior_value_and_grad(arch, curve, colloc, hmc_cfg, d_prior_median,
                              quadrature_points):
    """Closure over q = (theta, rho) returning (log density, gradient).

    The value omits the sigma-dependent normalization constants (they
    cancel in Metropolis ratios and in finite differences); the gradient
    is exact and is the one the sampler integrates.
    """
    kern = backend.kernels()
    dims = arch.dims
    asm = pinn._LossAssembly(curve, quadrature_points)
    n_data = len(curve)
    n_pde = len(colloc)
    if n_pde < 1:
        raise ValidationError("HMC needs a non-empty collocation set")
    sr, sf, sw = (hmc_cfg.noise_std_data, hmc_cfg.noise_std_pde,
                  hmc_cfg.prior_std_weights)
    # weighted sum-of-squares losses turn the mean-squared components into
    # the Gaussian exponents: N L_data / (2 sr^2) etc.
    weights = (
        n_data / (2.0 * sr**2),
        n_pde / (2.0 * sf**2),
        _BAND_GRID / (2.0 * sf**2),
        _BAND_GRID / (2.0 * sf**2),
    )
    mu_rho = np.log(d_prior_median)

    def value_and_grad(q):
        theta, rho = q[:-1], q[-1]
        d = np.exp(rho)
        comps, g_theta, g_d_w = asm.loss_and_grad(
            kern, theta, dims, d, colloc, weights, None
        )
        u = comps[0] + 0.5 * float(theta @ theta) / sw**2 \
            + 0.5 * (rho - mu_rho) ** 2
        grad = np.empty(q.size)
        grad[:-1] = -(g_theta + theta / sw**2)
        grad[-1] = -(g_d_w * d + (rho - mu_rho))
        return -u, grad

    return value_and_grad


def log_posterior_grad(params, d, curve, colloc, hmc_cfg, d_prior_median=1.0,
                       quadrature_points=101):
    """Exact gradient of the log posterior w.r.t. (theta, rho = ln d).

    Matches finite differences of :func:`log_posterior` (the constants
    drop out); this is the same gradient :func:`hmc_sample` integrates.
    """
    if not d > 0:
        raise ValidationError("diffusivity must be positive")
    vag = _posterior_value_and_grad(
        params.arch, curve, colloc, hmc_cfg, d_prior_median, quadrature_points
    )
    _, grad = vag(np.concatenate([params.values, [np.log(d)]]))
    return grad[:-1], float(grad[-1])


def hmc_sample(curve, colloc, hmc_cfg, init, quadrature_points=101):
    """HMC posterior over (theta, ln d) for the release problem.

    `init` is a (MlpParams, d) pair -- typically an Adam-trained MAP
    estimate; its d doubles as the log-normal prior median.
    """
    params, d_init = init
    if not d_init > 0:
        raise ValidationError("initial diffusivity must be positive")
    arch = params.arch
    value_and_grad = _posterior_value_and_grad(
        arch, curve, colloc, hmc_cfg, d_init, quadrature_points
    )
    q0 = np.concatenate([params.values, [np.log(d_init)]])
    draws, acceptance, divergences = hmc_chain(
        value_and_grad, q0, hmc_cfg.n_samples, hmc_cfg.burn_in,
        hmc_cfg.leapfrog_steps, hmc_cfg.step_size, hmc_cfg.seed,
    )
    return PosteriorSamples(
        arch=arch,
        thetas=draws[:, :-1],
        d_values=np.exp(draws[:, -1]),
        acceptance_rate=acceptance,
        divergences=divergences,
    )


def posterior_band(samples, times):
    """Pointwise release band over posterior draws."""
    if len(samples) < 2:
        raise ValidationError("need at least 2 posterior draws")
    times = np.asarray(times, dtype=np.float64)
    preds = np.empty((len(samples), times.size))
    for i in range(len(samples)):
        theta, _ = samples[i]
        member = nnengine.MlpParams.from_flat(samples.arch, theta)
        preds[i] = pinn.release_fraction(member, times)
    return band_from_samples(times, preds, BandMethod.Hmc)
