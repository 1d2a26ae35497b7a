"""Physics-informed training for the 1-D release problem.

The field u(x, t) is the normalized concentration on the unit slab with
perfect-sink boundaries u(0,t) = u(1,t) = 0 and uniform start u(x,0) = 1.
The measured quantity is cumulative release R(t) = 1 - integral of u over
x, read out with composite Simpson quadrature.  Training minimizes

    w_data * L_data + w_pde * L_pde + w_ic * L_ic + w_bc * L_bc

with full-batch Adam; the PDE residual u_t - d * u_xx is enforced on a
Latin-hypercube collocation set.  The diffusivity is either held fixed or
learned through d = exp(rho) to stay positive.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend, nnengine
from .errors import ReleaseflowError, ValidationError


class NonFiniteLoss(ReleaseflowError):
    """Training produced a NaN/inf loss; carries the offending epoch."""

    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


@dataclass(frozen=True)
class DiffusivityMode:
    """Fixed(d) keeps d frozen; Learnable(d) optimizes it from init d."""

    kind: str
    d: float

    def __post_init__(self):
        if self.kind not in ("fixed", "learnable"):
            raise ValidationError(f"unknown d_mode kind {self.kind!r}")
        if not self.d > 0:
            raise ValidationError("diffusivity must be positive")

    @property
    def is_learnable(self):
        return self.kind == "learnable"

    def to_dict(self):
        return {"kind": self.kind, "d": self.d}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["d"])


def Fixed(d):
    return DiffusivityMode("fixed", d)


def Learnable(d_init):
    return DiffusivityMode("learnable", d_init)


@dataclass(frozen=True)
class PinnConfig:
    arch: nnengine.MlpArchitecture = field(default_factory=nnengine.MlpArchitecture)
    learning_rate: float = 1e-3
    epochs: int = 2500
    n_collocation: int = 10000
    d_mode: DiffusivityMode = field(default_factory=lambda: Fixed(0.01))
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    quadrature_points: int = 101
    seed: int = 0
    p_keep: float = 1.0  # dropout keep probability; 1.0 disables dropout

    def __post_init__(self):
        w = tuple(float(v) for v in self.loss_weights)
        object.__setattr__(self, "loss_weights", w)
        if len(w) != 4 or any(v < 0 for v in w):
            raise ValidationError("loss_weights must be four values >= 0")
        if w[0] <= 0 or w[1] <= 0:
            raise ValidationError("w_data and w_pde must be > 0")
        if self.n_collocation < 1:
            raise ValidationError("n_collocation must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.quadrature_points < 3 or self.quadrature_points % 2 == 0:
            raise ValidationError("quadrature_points must be odd and >= 3")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0.0 < self.p_keep <= 1.0:
            raise ValidationError("p_keep must lie in (0, 1]")

    def to_dict(self):
        return {
            "arch": self.arch.to_dict(),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "n_collocation": self.n_collocation,
            "d_mode": self.d_mode.to_dict(),
            "loss_weights": list(self.loss_weights),
            "quadrature_points": self.quadrature_points,
            "seed": self.seed,
            "p_keep": self.p_keep,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            arch=nnengine.MlpArchitecture.from_dict(d["arch"]),
            learning_rate=d["learning_rate"],
            epochs=d["epochs"],
            n_collocation=d["n_collocation"],
            d_mode=DiffusivityMode.from_dict(d["d_mode"]),
            loss_weights=tuple(d["loss_weights"]),
            quadrature_points=d["quadrature_points"],
            seed=d["seed"],
            p_keep=d.get("p_keep", 1.0),
        )


@dataclass(frozen=True)
class CollocationSet:
    points: np.ndarray  # (n, 2) columns x, t

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError("collocation points must be (n, 2)")
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValidationError("collocation points must lie in [0,1]^2")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def sample_lhs(n, seed):
    """Latin-hypercube sample of n points in [0,1]^2.

    Per axis, bin i of n equal-width bins receives exactly one point:
    coordinate = (perm[i] + uniform) / n.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    cols = []
    for _ in range(2):
        perm = rng.permutation(n)
        cols.append((perm + rng.uniform(size=n)) / n)
    return CollocationSet(np.column_stack(cols))


def simpson_weights(n):
    """Composite Simpson weights for n odd uniform points on [0, 1]."""
    if n < 3 or n % 2 == 0:
        raise ValidationError("Simpson rule needs an odd point count >= 3")
    h = 1.0 / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


def pde_residual(params, d, pts):
    """Residual r_i = u_t - d * u_xx on the collocation points."""
    if not d > 0:
        raise ValidationError("diffusivity must be positive")
    _, _, ut, uxx = nnengine.input_derivatives_batch(params, pts.points)
    return ut - d * uxx


def release_fraction(params, t, quadrature_points=101, mask=None):
    """Cumulative release R(t) = 1 - Simpson integral of u(., t) over [0,1]."""
    w = simpson_weights(quadrature_points)
    x = np.linspace(0.0, 1.0, quadrature_points)
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    X = np.empty((quadrature_points * t_arr.size, 2))
    X[:, 0] = np.tile(x, t_arr.size)
    X[:, 1] = np.repeat(t_arr, quadrature_points)
    u = nnengine.forward_batch(params, X, mask=mask)
    integrals = u.reshape(t_arr.size, quadrature_points) @ w
    out = 1.0 - integrals
    return float(out[0]) if np.isscalar(t) else out


def total_loss(params, d, curve, colloc, weights, quadrature_points=101, mask=None):
    """(total, components) with components (data, pde, ic, bc) unweighted."""
    comp = _components(params, d, curve, colloc, quadrature_points, mask)
    total = float(np.dot(weights, comp))
    return total, tuple(comp)


def _components(params, d, curve, colloc, quadrature_points, mask):
    pred = release_fraction(params, curve.times, quadrature_points, mask=mask)
    l_data = float(np.mean((pred - curve.fractions) ** 2))

    _, _, ut, uxx = nnengine.input_derivatives_batch(params, colloc.points, mask=mask)
    r = ut - d * uxx
    l_pde = float(np.mean(r * r))

    n = 101
    g = np.linspace(0.0, 1.0, n)
    ic_pts = np.column_stack([g, np.zeros(n)])
    u_ic = nnengine.forward_batch(params, ic_pts, mask=mask)
    l_ic = float(np.mean((u_ic - 1.0) ** 2))

    bc_pts = np.vstack(
        [np.column_stack([np.zeros(n), g]), np.column_stack([np.ones(n), g])]
    )
    u_bc = nnengine.forward_batch(params, bc_pts, mask=mask)
    l_bc = float((np.sum(u_bc[:n] ** 2) + np.sum(u_bc[n:] ** 2)) / n)

    return np.array([l_data, l_pde, l_ic, l_bc])


@dataclass
class TrainedPinn:
    params: nnengine.MlpParams
    d_value: float
    loss_history: np.ndarray  # (epochs, 5): total, data, pde, ic, bc
    config: PinnConfig

    def release(self, t, mask=None):
        return release_fraction(self.params, t, self.config.quadrature_points,
                                mask=mask)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.params.save(directory / "params.bin")
        payload = {"config": self.config.to_dict(), "d_value": self.d_value}
        (directory / "config.json").write_text(json.dumps(payload, indent=2))
        with open(directory / "loss_history.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "total", "data", "pde", "ic", "bc"])
            for i, row in enumerate(self.loss_history):
                writer.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        payload = json.loads((directory / "config.json").read_text())
        config = PinnConfig.from_dict(payload["config"])
        params = nnengine.MlpParams.load(directory / "params.bin")
        if params.arch != config.arch:
            raise ValidationError("checkpoint architecture disagrees with config")
        rows = []
        with open(directory / "loss_history.csv", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                rows.append([float(v) for v in row[1:]])
        history = np.array(rows) if rows else np.empty((0, 5))
        return cls(params, payload["d_value"], history, config)


class _LossAssembly:
    """Precomputed batches for one (curve, quadrature) pair.

    The value-level terms (data quadrature, IC, BC) share one stacked
    batch so a single forward + backprop covers all three; the PDE term
    runs through the fused second-order kernel separately.
    """

    def __init__(self, curve, quadrature_points):
        q = quadrature_points
        self.quad_w = simpson_weights(q)
        self.q = q
        self.n_data = len(curve)
        self.fractions = curve.fractions
        x_quad = np.linspace(0.0, 1.0, q)
        X_data = np.empty((q * self.n_data, 2))
        X_data[:, 0] = np.tile(x_quad, self.n_data)
        X_data[:, 1] = np.repeat(curve.times, q)

        n_grid = 101
        g = np.linspace(0.0, 1.0, n_grid)
        X_ic = np.column_stack([g, np.zeros(n_grid)])
        X_bc = np.vstack(
            [np.column_stack([np.zeros(n_grid), g]),
             np.column_stack([np.ones(n_grid), g])]
        )
        self.n_grid = n_grid
        self.X_val = np.vstack([X_data, X_ic, X_bc])
        self.i_ic = X_data.shape[0]
        self.i_bc = self.i_ic + n_grid

    def loss_and_grad(self, kern, theta, dims, d, colloc, weights, mask=None):
        """((total, data, pde, ic, bc), grad_theta, grad_d) — all weighted
        into total/grad, components reported unweighted."""
        w_data, w_pde, w_ic, w_bc = weights
        u_val = kern.forward(theta, dims, self.X_val, mask)
        u_data = u_val[: self.i_ic, 0].reshape(self.n_data, self.q)
        pred = 1.0 - u_data @ self.quad_w
        resid_data = pred - self.fractions
        l_data = float(np.mean(resid_data**2))

        u_ic = u_val[self.i_ic : self.i_bc, 0]
        l_ic = float(np.mean((u_ic - 1.0) ** 2))
        u_bc = u_val[self.i_bc :, 0]
        l_bc = float(np.sum(u_bc**2) / self.n_grid)

        r, g_pde, g_d = kern.pde_value_grad(theta, dims, colloc.points, d, mask)
        l_pde = float(np.mean(r * r))
        total = w_data * l_data + w_pde * l_pde + w_ic * l_ic + w_bc * l_bc

        adj = np.empty(self.X_val.shape[0])
        adj[: self.i_ic] = (
            np.repeat(resid_data * (2.0 / self.n_data), self.q)
            * np.tile(-self.quad_w, self.n_data)
        ) * w_data
        adj[self.i_ic : self.i_bc] = (2.0 / self.n_grid) * (u_ic - 1.0) * w_ic
        adj[self.i_bc :] = (2.0 / self.n_grid) * u_bc * w_bc
        grad = kern.backprop(theta, dims, self.X_val, mask, adj[:, None])
        grad += w_pde * g_pde
        return (total, l_data, l_pde, l_ic, l_bc), grad, w_pde * g_d


def loss_gradient(params, d, curve, colloc, weights, quadrature_points=101,
                  mask=None):
    """Exact gradient of total_loss w.r.t. (flat params, d).

    Returns (total, grad_theta, grad_d); shares the training assembly so
    the two always agree.
    """
    asm = _LossAssembly(curve, quadrature_points)
    scaled = mask.scaled() if isinstance(mask, nnengine.DropoutMask) else mask
    comps, grad, g_d = asm.loss_and_grad(
        backend.kernels(), params.values, params.arch.dims, d, colloc, weights,
        scaled,
    )
    return comps[0], grad, g_d


def train(config, curve):
    """Full-batch Adam training; deterministic in config.seed.

    Raises NonFiniteLoss (with the epoch) on divergence instead of
    clipping.  epochs = 0 returns the freshly initialized network.
    """
    arch = config.arch
    if arch.input_dim != 2 or arch.output_dim != 1:
        raise ValidationError("PINN needs a 2-in 1-out network")
    kern = backend.kernels()
    params = nnengine.init_params(arch, seed=config.seed)
    colloc = sample_lhs(config.n_collocation, config.seed + 1)
    asm = _LossAssembly(curve, config.quadrature_points)

    d = config.d_mode.d
    learn_d = config.d_mode.is_learnable
    adam = nnengine.AdamState.fresh(arch.n_params, learning_rate=config.learning_rate)
    adam_rho = nnengine.AdamState.fresh(1, learning_rate=config.learning_rate)
    rho_vec = np.array([np.log(d)])

    history = np.empty((config.epochs, 5))
    theta = params.values
    dims = arch.dims
    use_dropout = config.p_keep < 1.0

    for epoch in range(config.epochs):
        mask = None
        if use_dropout:
            mask = nnengine.DropoutMask.draw(
                arch, config.p_keep, seed=config.seed + 7919 * (epoch + 1)
            ).scaled()
        comps, grad, g_d = asm.loss_and_grad(
            kern, theta, dims, d, colloc, config.loss_weights, mask
        )
        if not np.isfinite(comps[0]):
            raise NonFiniteLoss(epoch, comps[0])
        history[epoch] = comps

        theta = nnengine.adam_step(adam, theta, grad)
        if learn_d:
            # d = exp(rho): chain rule multiplies the d-gradient by d
            rho_vec = nnengine.adam_step(adam_rho, rho_vec, np.array([g_d * d]))
            d = float(np.exp(rho_vec[0]))

    params = nnengine.MlpParams.from_flat(arch, theta)
    return TrainedPinn(params, d, history, config)
