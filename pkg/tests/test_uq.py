import struct
import warnings
from pathlib import Path

import numpy as np
import pytest

from releaseflow import classical, dataset as ds
from releaseflow import nnengine, pinn, uq
from releaseflow.errors import ValidationError

SMALL = nnengine.MlpArchitecture(hidden_layers=2, neurons_per_layer=8)
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _fick_curve(n=12, d=0.05):
    t = np.linspace(0.0, 1.0, n)
    y = classical.predict(classical.ClassicalModel(classical.ModelKind.FickSeries, [d]), t)
    return ds.ReleaseCurve(ds.FilmType.Flat, t, y)


def _base_config(**kw):
    opts = dict(arch=SMALL, epochs=200, n_collocation=256,
                d_mode=pinn.Fixed(0.05), seed=10)
    opts.update(kw)
    return pinn.PinnConfig(**opts)


def _gaussian_vag(q):
    """log density and gradient of a standard normal (any dimension)."""
    return -0.5 * float(q @ q), -q


# ---------------------------------------------------------------------------
# bands

def test_band_validation():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValidationError):
        uq.UncertaintyBand(t, np.zeros(4), np.zeros(5), 3, uq.BandMethod.Ensemble)
    with pytest.raises(ValidationError):
        uq.UncertaintyBand(t, np.zeros((5, 1)), np.zeros(5), 3, uq.BandMethod.Ensemble)
    with pytest.raises(ValidationError):
        uq.UncertaintyBand(t, np.zeros(5), np.full(5, -1e-9), 3, uq.BandMethod.Ensemble)
    with pytest.raises(ValidationError):
        uq.UncertaintyBand(t, np.zeros(5), np.zeros(5), 1, uq.BandMethod.Ensemble)
    band = uq.UncertaintyBand(t, np.zeros(5), np.zeros(5), 2, uq.BandMethod.Ensemble)
    with pytest.raises(ValueError):
        band.mean[0] = 1.0  # frozen


def test_band_from_samples():
    t = np.array([0.0, 0.5, 1.0])
    rows = np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 4.0]])
    band = uq.band_from_samples(t, rows, uq.BandMethod.McDropout)
    np.testing.assert_array_equal(band.mean, [1.0, 1.0, 3.0])
    np.testing.assert_array_equal(band.std, [1.0, 0.0, 1.0])  # population std
    assert band.n_samples == 2 and band.method is uq.BandMethod.McDropout
    # identical rows collapse to zero width
    same = uq.band_from_samples(t, np.tile(rows[:1], (4, 1)), uq.BandMethod.Ensemble)
    assert np.all(same.std == 0.0)
    with pytest.raises(ValidationError):
        uq.band_from_samples(t, rows[:1], uq.BandMethod.Ensemble)


def test_band_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    band = uq.UncertaintyBand(uq.band_time_grid(7), rng.uniform(size=7),
                              rng.uniform(size=7), 5, uq.BandMethod.Hmc)
    path = tmp_path / "band.csv"
    band.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,mean,std"
    back = uq.UncertaintyBand.from_csv(path, uq.BandMethod.Hmc, 5)
    np.testing.assert_array_equal(back.times, band.times)  # repr round trip is exact
    np.testing.assert_array_equal(back.mean, band.mean)
    np.testing.assert_array_equal(back.std, band.std)
    bad = tmp_path / "bad.csv"
    bad.write_text("time,avg,sd\n0.0,0.0,0.0\n")
    with pytest.raises(ValidationError):
        uq.UncertaintyBand.from_csv(bad, uq.BandMethod.Hmc, 5)


def test_band_time_grid():
    g = uq.band_time_grid()
    assert g.shape == (101,) and g[0] == 0.0 and g[-1] == 1.0


# ---------------------------------------------------------------------------
# deep ensembles

def test_ensemble_band_deterministic():
    curve = _fick_curve()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = uq.train_ensemble(_base_config(), curve, n_members=2, noise_sigma=0.05)
        b = uq.train_ensemble(_base_config(), curve, n_members=2, noise_sigma=0.05)
    assert a.method is uq.BandMethod.Ensemble and a.n_samples == 2
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.std, b.std)


def test_ensemble_noise_widens_band():
    curve = _fick_curve()
    clean = uq.train_ensemble(_base_config(), curve, n_members=3, noise_sigma=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # noisy replicates trip the curve checks
        noisy = uq.train_ensemble(_base_config(), curve, n_members=3, noise_sigma=0.1)
    assert clean.mean_std < noisy.mean_std


def test_ensemble_needs_two_members():
    with pytest.raises(ValidationError):
        uq.train_ensemble(_base_config(), _fick_curve(), n_members=1, noise_sigma=0.0)


def test_ensemble_member_failure_reports_seed():
    cfg = _base_config(epochs=30, n_collocation=64, seed=2, learning_rate=1e155)
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(uq.EnsembleMemberFailure) as err:
        uq.train_ensemble(cfg, _fick_curve(), n_members=2, noise_sigma=0.0)
    assert err.value.member_seed == 2  # first member inherits the base seed
    assert isinstance(err.value, pinn.NonFiniteLoss)


# ---------------------------------------------------------------------------
# MC dropout

def test_mc_dropout_requires_dropout_training():
    trained = pinn.train(_base_config(epochs=20, n_collocation=64), _fick_curve())
    with pytest.raises(uq.DropoutDisabled):
        uq.mc_dropout_band(trained, n_passes=10, seed=0)


def test_mc_dropout_band_deterministic_in_seed():
    trained = pinn.train(_base_config(seed=3, p_keep=0.9), _fick_curve())
    a = uq.mc_dropout_band(trained, n_passes=16, seed=7)
    b = uq.mc_dropout_band(trained, n_passes=16, seed=7)
    c = uq.mc_dropout_band(trained, n_passes=16, seed=8)
    assert a.method is uq.BandMethod.McDropout and a.n_samples == 16
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.std, b.std)
    assert not np.array_equal(a.mean, c.mean)
    assert np.any(a.std > 0)


def test_mc_dropout_deterministic_hook():
    trained = pinn.train(_base_config(epochs=50, n_collocation=128), _fick_curve())
    band = uq.mc_dropout_band(trained, n_passes=5, seed=0, allow_deterministic=True)
    np.testing.assert_array_equal(band.std, np.zeros(101))
    np.testing.assert_array_equal(band.mean, trained.release(uq.band_time_grid()))


def test_mc_dropout_band_converges_with_passes():
    # deterministic surrogate for the 1/sqrt(N) MC error decay: distance to a
    # 400-pass reference shrinks as the number of passes grows
    trained = pinn.train(_base_config(seed=3, p_keep=0.9), _fick_curve())
    ref = uq.mc_dropout_band(trained, n_passes=400, seed=100).mean
    err = {n: np.abs(uq.mc_dropout_band(trained, n_passes=n, seed=100).mean - ref).max()
           for n in (25, 100)}
    assert err[25] > err[100]
    assert err[100] < 0.05


def test_mc_dropout_needs_two_passes():
    trained = pinn.train(_base_config(epochs=20, p_keep=0.9), _fick_curve())
    with pytest.raises(ValidationError):
        uq.mc_dropout_band(trained, n_passes=1, seed=0)


# ---------------------------------------------------------------------------
# posterior density

def test_log_posterior_priors_only():
    cfg = uq.HmcConfig(prior_std_weights=0.7)
    params = nnengine.init_params(SMALL, seed=4)
    theta = params.values
    d = 0.03
    expect = (-0.5 * float(theta @ theta) / 0.7**2
              - theta.size * (LOG_SQRT_2PI + np.log(0.7))
              - 0.5 * (np.log(d) - np.log(0.05)) ** 2 - LOG_SQRT_2PI)
    got = uq.log_posterior(params, d, None, None, cfg, d_prior_median=0.05)
    assert got == pytest.approx(expect, rel=1e-12)


def test_log_posterior_rejects_nonpositive_d():
    params = nnengine.init_params(SMALL, seed=0)
    for d in (0.0, -0.1):
        with pytest.raises(ValidationError):
            uq.log_posterior(params, d, None, None, uq.HmcConfig())


def test_log_posterior_perfect_fit_data_term():
    # the zero network has u == 0, so R(t) == 1 and the pde residual vanishes;
    # against an all-ones curve the data term must equal its normalization
    # constant -N log(sqrt(2 pi) sigma_r) exactly
    params = nnengine.MlpParams.from_flat(SMALL, np.zeros(SMALL.n_params))
    t = np.linspace(0.0, 1.0, 9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = ds.ReleaseCurve(ds.FilmType.Flat, t, np.ones(9))
    colloc = pinn.sample_lhs(32, seed=0)
    cfg = uq.HmcConfig(noise_std_data=0.05)
    delta = (uq.log_posterior(params, 0.05, curve, colloc, cfg)
             - uq.log_posterior(params, 0.05, None, colloc, cfg))
    assert delta == pytest.approx(-9 * (LOG_SQRT_2PI + np.log(0.05)), abs=1e-10)


def test_log_posterior_noise_scale():
    # widening the data noise softens the misfit penalty on an imperfect fit
    params = nnengine.init_params(SMALL, seed=1)
    curve = _fick_curve(9)
    colloc = pinn.sample_lhs(16, seed=1)
    tight = uq.log_posterior(params, 0.05, curve, colloc,
                             uq.HmcConfig(noise_std_data=0.05))
    loose = uq.log_posterior(params, 0.05, curve, colloc,
                             uq.HmcConfig(noise_std_data=0.1))
    assert loose > tight


def test_log_posterior_grad_matches_finite_differences():
    arch = nnengine.MlpArchitecture(hidden_layers=1, neurons_per_layer=6)
    params = nnengine.init_params(arch, seed=5)
    curve = _fick_curve(8)
    colloc = pinn.sample_lhs(24, seed=2)
    cfg = uq.HmcConfig()
    d = 0.04

    g_theta, g_rho = uq.log_posterior_grad(params, d, curve, colloc, cfg,
                                           d_prior_median=0.05)
    lp = lambda p, dd: uq.log_posterior(p, dd, curve, colloc, cfg,
                                        d_prior_median=0.05)
    h = 1e-6
    flat = params.values.copy()
    rng = np.random.default_rng(0)
    for i in rng.choice(flat.size, size=15, replace=False):
        bump = np.zeros_like(flat)
        bump[i] = h
        fd = (lp(nnengine.MlpParams.from_flat(arch, flat + bump), d)
              - lp(nnengine.MlpParams.from_flat(arch, flat - bump), d)) / (2 * h)
        assert g_theta[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    rho = np.log(d)
    fd_rho = (lp(params, np.exp(rho + h)) - lp(params, np.exp(rho - h))) / (2 * h)
    assert g_rho == pytest.approx(fd_rho, rel=1e-6)


# ---------------------------------------------------------------------------
# leapfrog + chain mechanics

def test_leapfrog_energy_conservation():
    rng = np.random.default_rng(3)
    q0, p0 = rng.standard_normal(4), rng.standard_normal(4)
    lp0, _ = _gaussian_vag(q0)
    h0 = -lp0 + 0.5 * float(p0 @ p0)
    q1, p1, lp1 = uq.leapfrog(_gaussian_vag, q0, p0, step_size=1e-4, n_steps=50)
    h1 = -lp1 + 0.5 * float(p1 @ p1)
    assert abs(h1 - h0) < 1e-6


def test_leapfrog_reversibility():
    rng = np.random.default_rng(4)
    q0, p0 = rng.standard_normal(3), rng.standard_normal(3)
    q1, p1, _ = uq.leapfrog(_gaussian_vag, q0, p0, step_size=0.05, n_steps=30)
    q2, p2, _ = uq.leapfrog(_gaussian_vag, q1, -p1, step_size=0.05, n_steps=30)
    assert np.abs(q2 - q0).max() < 1e-10
    assert np.abs(-p2 - p0).max() < 1e-10


def test_hmc_chain_standard_gaussian():
    draws, acc, div = uq.hmc_chain(_gaussian_vag, np.zeros(2), n_samples=4000,
                                   burn_in=1000, leapfrog_steps=20,
                                   step_size=0.2, seed=0)
    assert draws.shape == (3000, 2) and div == 0
    assert acc > 0.9
    assert np.abs(draws.mean(axis=0)).max() < 0.05
    assert np.abs(np.cov(draws.T) - np.eye(2)).max() < 0.1


def test_hmc_chain_tiny_step_accepts_everything():
    _, acc, div = uq.hmc_chain(_gaussian_vag, np.zeros(3), n_samples=50,
                               burn_in=0, leapfrog_steps=3, step_size=1e-4,
                               seed=1)
    assert acc == 1.0 and div == 0


def test_hmc_chain_deterministic_in_seed():
    a, acc_a, _ = uq.hmc_chain(_gaussian_vag, np.zeros(2), 200, 50, 10, 0.2, seed=9)
    b, acc_b, _ = uq.hmc_chain(_gaussian_vag, np.zeros(2), 200, 50, 10, 0.2, seed=9)
    np.testing.assert_array_equal(a, b)
    assert acc_a == acc_b


def test_hmc_chain_divergence_abort():
    steep = lambda q: (-1e150 * float(q @ q), -2e150 * q)
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(uq.DivergentTrajectory):
        uq.hmc_chain(steep, np.ones(2), n_samples=20, burn_in=0,
                     leapfrog_steps=5, step_size=1.0, seed=0)


def test_hmc_config_round_trip_and_validation():
    cfg = uq.HmcConfig(n_samples=100, burn_in=10, leapfrog_steps=5,
                       step_size=1e-2, seed=3)
    assert uq.HmcConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        uq.HmcConfig(step_size=0.0)
    with pytest.raises(ValidationError):
        uq.HmcConfig(leapfrog_steps=0)
    with pytest.raises(ValidationError):
        uq.HmcConfig(n_samples=100, burn_in=100)  # burn-in must leave draws
    with pytest.raises(ValidationError):
        uq.HmcConfig(noise_std_data=0.0)


# ---------------------------------------------------------------------------
# posterior sampling end to end

def _short_posterior(n_samples=30, burn_in=10, seed=0):
    curve = _fick_curve()
    trained = pinn.train(_base_config(epochs=300, d_mode=pinn.Learnable(0.03),
                                      seed=1), curve)
    colloc = pinn.sample_lhs(128, seed=9)
    cfg = uq.HmcConfig(n_samples=n_samples, burn_in=burn_in, leapfrog_steps=10,
                       step_size=2e-4, seed=seed)
    return uq.hmc_sample(curve, colloc, cfg, (trained.params, trained.d_value))


def test_hmc_sample_structure_and_determinism():
    post = _short_posterior()
    again = _short_posterior()
    assert len(post) == 20
    assert post.thetas.shape == (20, SMALL.n_params)
    assert np.all(post.d_values > 0)
    assert 0.0 < post.acceptance_rate <= 1.0
    np.testing.assert_array_equal(post.thetas, again.thetas)
    np.testing.assert_array_equal(post.d_values, again.d_values)
    theta, d = post[3]
    np.testing.assert_array_equal(theta, post.thetas[3])
    assert d == post.d_values[3]


def test_posterior_band_from_samples():
    post = _short_posterior()
    band = uq.posterior_band(post, uq.band_time_grid())
    assert band.method is uq.BandMethod.Hmc and band.n_samples == len(post)
    assert np.all((band.mean > -0.5) & (band.mean < 1.5))
    # duplicated draws produce a zero-width band
    dup = uq.PosteriorSamples(post.arch, np.tile(post.thetas[:1], (3, 1)),
                              np.full(3, post.d_values[0]), 1.0)
    flat_band = uq.posterior_band(dup, uq.band_time_grid(11))
    assert np.all(flat_band.std == 0.0)
    single = uq.PosteriorSamples(post.arch, post.thetas[:1], post.d_values[:1], 1.0)
    with pytest.raises(ValidationError):
        uq.posterior_band(single, uq.band_time_grid(11))


def test_posterior_samples_round_trip(tmp_path):
    post = _short_posterior()
    path = tmp_path / "posterior.bin"
    post.save(path)
    back = uq.PosteriorSamples.load(path)
    assert back.arch == post.arch
    np.testing.assert_array_equal(back.thetas, post.thetas)
    np.testing.assert_array_equal(back.d_values, post.d_values)
    assert back.acceptance_rate == post.acceptance_rate
    assert back.divergences == post.divergences


def test_posterior_samples_rejects_corrupt_files(tmp_path):
    post = _short_posterior()
    path = tmp_path / "posterior.bin"
    post.save(path)
    raw = path.read_bytes()
    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(ValidationError):
        uq.PosteriorSamples.load(bad_magic)
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(raw[:-16])
    with pytest.raises(ValidationError):
        uq.PosteriorSamples.load(truncated)


def test_posterior_summary_and_interval():
    post = _short_posterior()
    lo, hi = post.d_interval(0.95)
    assert post.d_values.min() <= lo <= hi <= post.d_values.max()
    summary = post.to_summary()
    for key in ("n_draws", "acceptance_rate", "divergences", "d_mean",
                "d_std", "d_interval_95"):
        assert key in summary
    assert summary["n_draws"] == len(post)
