"""Dense tanh-MLP engine: parameters, autodiff, dropout masks, Adam.

Everything a trainer needs for the fixed fully-connected architecture:
Glorot-normal initialization, batched forward evaluation, exact
reverse-mode parameter gradients, exact first/second input derivatives
via tangent propagation (no finite differencing anywhere in the
production path), inverted dropout, and Adam with bias correction.

Heavy batched work is delegated to the active kernel backend
(:mod:`releaseflow.backend`).
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _slowcore, backend
from .errors import ValidationError

_CHECKPOINT_MAGIC = b"RFNN"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpArchitecture:
    """Shape of the network: scalar field u over inputs (x, t) by default."""

    input_dim: int = 2
    hidden_layers: int = 5
    neurons_per_layer: int = 20
    output_dim: int = 1

    def __post_init__(self):
        for name in ("input_dim", "neurons_per_layer", "output_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        # zero hidden layers = a plain affine map, useful as a test oracle
        if self.hidden_layers < 0:
            raise ValidationError("hidden_layers must be >= 0")

    @property
    def dims(self):
        return (self.input_dim,) + (self.neurons_per_layer,) * self.hidden_layers + (self.output_dim,)

    @property
    def n_params(self):
        return _slowcore.n_params(self.dims)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_layers": self.hidden_layers,
            "neurons_per_layer": self.neurons_per_layer,
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MlpParams:
    """Network parameters stored as one flat float64 vector.

    Layer l occupies the row-major (fan_out, fan_in) weight block followed
    by the fan_out bias entries; `weights`/`biases` return views into the
    vector, so in-place edits write through.
    """

    arch: MlpArchitecture
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.arch.n_params,):
            raise ValidationError(
                f"parameter vector has length {self.values.size}, architecture needs {self.arch.n_params}"
            )

    def flatten(self):
        return self.values.copy()

    @classmethod
    def from_flat(cls, arch, values):
        return cls(arch, np.array(values, dtype=np.float64))

    def _offsets(self):
        return _slowcore._offsets(self.arch.dims)

    def weights(self, layer):
        w_off, _, fi, fo = self._offsets()[layer]
        return self.values[w_off:w_off + fi * fo].reshape(fo, fi)

    def biases(self, layer):
        _, b_off, _, fo = self._offsets()[layer]
        return self.values[b_off:b_off + fo]

    @property
    def n_layers(self):
        return self.arch.hidden_layers + 1

    def copy(self):
        return MlpParams(self.arch, self.values.copy())

    def save(self, path):
        """Binary checkpoint: 16-byte header, then little-endian float64."""
        header = struct.pack(
            "<4sHHHHHH",
            _CHECKPOINT_MAGIC,
            _CHECKPOINT_VERSION,
            self.arch.input_dim,
            self.arch.hidden_layers,
            self.arch.neurons_per_layer,
            self.arch.output_dim,
            0,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = fh.read(16)
            if len(header) != 16:
                raise ValidationError(f"{path}: truncated checkpoint header")
            magic, version, in_d, hid, neu, out_d, _ = struct.unpack("<4sHHHHHH", header)
            if magic != _CHECKPOINT_MAGIC:
                raise ValidationError(f"{path}: not a parameter checkpoint")
            if version != _CHECKPOINT_VERSION:
                raise ValidationError(f"{path}: unsupported checkpoint version {version}")
            arch = MlpArchitecture(in_d, hid, neu, out_d)
            values = np.frombuffer(fh.read(), dtype="<f8")
        if values.size != arch.n_params:
            raise ValidationError(f"{path}: expected {arch.n_params} parameters, found {values.size}")
        return cls(arch, values.astype(np.float64))

    def to_debug_json(self):
        layers = [
            {"weights": self.weights(l).tolist(), "biases": self.biases(l).tolist()}
            for l in range(self.n_layers)
        ]
        return json.dumps({"architecture": self.arch.to_dict(), "layers": layers}, indent=2)


def init_params(arch, seed):
    """Glorot-style init: W ~ Normal(0, 2/(fan_in+fan_out)), biases zero."""
    rng = np.random.default_rng(seed)
    values = np.zeros(arch.n_params)
    params = MlpParams(arch, values)
    dims = arch.dims
    for l, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        std = np.sqrt(2.0 / (fi + fo))
        params.weights(l)[:] = rng.normal(0.0, std, size=(fo, fi))
    return params


@dataclass
class DropoutMask:
    """Per-hidden-layer keep masks for inverted dropout, drawn from a seed."""

    masks: np.ndarray  # (hidden_layers, neurons), entries 0/1
    p_keep: float
    seed: int

    @classmethod
    def draw(cls, arch, p_keep, seed):
        if not 0.0 < p_keep <= 1.0:
            raise ValidationError("p_keep must be in (0, 1]")
        rng = np.random.default_rng(seed)
        masks = (rng.random((arch.hidden_layers, arch.neurons_per_layer)) < p_keep).astype(np.float64)
        return cls(masks, p_keep, seed)

    def scaled(self):
        """Masks divided by p_keep, ready to multiply activations."""
        return np.ascontiguousarray(self.masks / self.p_keep)


def _scaled_mask(mask):
    if mask is None:
        return None
    return mask.scaled()


def _as_batch(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("input batch must be 2-D (n, input_dim)")
    return X


def forward_batch(params, X, mask=None):
    """Batched network output; (n,) for scalar output, else (n, out_dim)."""
    u = backend.kernels().forward(params.values, params.arch.dims, _as_batch(X), _scaled_mask(mask))
    return u[:, 0] if params.arch.output_dim == 1 else u


def forward(params, x, t, mask=None):
    return float(forward_batch(params, np.array([[x, t]]), mask)[0])


def grad_params(params, X, adjoints, mask=None):
    """Exact gradient of sum_i adjoints[i] * u(X[i]) w.r.t. the flat vector."""
    X = _as_batch(X)
    adj = np.ascontiguousarray(adjoints, dtype=np.float64)
    if adj.ndim == 1:
        adj = adj[:, None]
    if adj.shape != (X.shape[0], params.arch.output_dim):
        raise ValidationError("adjoint shape does not match batch")
    return backend.kernels().backprop(params.values, params.arch.dims, X, _scaled_mask(mask), adj)


def input_derivatives_batch(params, X, mask=None):
    """Exact (u, u_x, u_t, u_xx) per batch row via tangent propagation."""
    if params.arch.input_dim != 2:
        raise ValidationError("input derivatives need input_dim == 2 (x, t)")
    u, ux, ut, uxx = backend.kernels().forward_ext(
        params.values, params.arch.dims, _as_batch(X), _scaled_mask(mask)
    )
    if params.arch.output_dim == 1:
        return u[:, 0], ux[:, 0], ut[:, 0], uxx[:, 0]
    return u, ux, ut, uxx


def input_derivatives(params, x, t, mask=None):
    """(u, du/dt, d2u/dx2) at a single point."""
    u, _, ut, uxx = input_derivatives_batch(params, np.array([[x, t]]), mask)
    return float(u[0]), float(ut[0]), float(uxx[0])


def input_gradient(params, x, t, mask=None):
    """(du/dx, du/dt) via the first-order-only tangent path.

    Always runs the NumPy reference kernel; serves as the independent
    cross-check for the second-derivative path.
    """
    X = np.array([[x, t]], dtype=np.float64)
    _, dux = _slowcore.input_jvp(params.values, params.arch.dims, X, 1.0, 0.0, _scaled_mask(mask))
    _, dut = _slowcore.input_jvp(params.values, params.arch.dims, X, 0.0, 1.0, _scaled_mask(mask))
    return float(dux[0, 0]), float(dut[0, 0])


@dataclass
class AdamState:
    """Adam moment estimates for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def fresh(cls, n, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps, learning_rate)


def adam_step(state, values, grad):
    """One Adam update with bias correction; mutates state, returns new values."""
    if values.shape != grad.shape or values.shape != state.m.shape:
        raise ValidationError("parameter/gradient/state lengths disagree")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
