"""Classical release-kinetics models and nonlinear least-squares fitting.

Three one- and two-parameter models:

* Fick series  — plane-sheet diffusion with lumped diffusivity d_hat,
* Higuchi      — release = k_h sqrt(t) (Higuchi's prefactor constants are
  unidentifiable from fraction data, so only the lumped k_h is fitted),
* Peppas       — release = k t^n, the power law covering Fickian through
  super-Case-II transport via the exponent n in (0, 1.5).

Fitting is Levenberg-Marquardt on log-transformed (d_hat, k_h, k) and a
logit-transformed exponent n, with central-difference Jacobians.
Predictions clamp to [0, 1]; LM residuals use the unclamped values so the
objective stays smooth.
"""

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import fick_series_release
from .errors import ReleaseflowError, ValidationError


class DegenerateCurve(ReleaseflowError):
    """Curve carries no fittable signal (constant fractions or no t > 0)."""


class ModelKind(enum.Enum):
    FickSeries = "fick"
    Higuchi = "higuchi"
    Peppas = "peppas"

    @classmethod
    def parse(cls, label):
        key = label.strip().lower()
        aliases = {
            "fick": cls.FickSeries,
            "fick_series": cls.FickSeries,
            "fickseries": cls.FickSeries,
            "higuchi": cls.Higuchi,
            "peppas": cls.Peppas,
        }
        if key not in aliases:
            raise ValidationError(f"unknown model {label!r}")
        return aliases[key]


@dataclass(frozen=True)
class ClassicalModel:
    kind: ModelKind
    params: np.ndarray  # FickSeries: [d_hat]; Higuchi: [k_h]; Peppas: [k, n]

    def __post_init__(self):
        params = np.ascontiguousarray(self.params, dtype=np.float64)
        object.__setattr__(self, "params", params)
        expect = 2 if self.kind is ModelKind.Peppas else 1
        if params.size != expect:
            raise ValidationError(f"{self.kind.value} takes {expect} parameter(s)")
        if params[0] <= 0:
            raise ValidationError("rate parameter must be positive")
        if self.kind is ModelKind.Peppas and not 0 < params[1] < 1.5:
            raise ValidationError("Peppas exponent must lie in (0, 1.5)")
        params.flags.writeable = False


@dataclass(frozen=True)
class FitResult:
    model: ClassicalModel
    mae: float
    rmse: float
    converged: bool
    iterations: int

    def to_dict(self):
        return {
            "kind": self.model.kind.value,
            "params": self.model.params.tolist(),
            "mae": self.mae,
            "rmse": self.rmse,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        model = ClassicalModel(ModelKind.parse(d["kind"]), np.asarray(d["params"]))
        return cls(model, d["mae"], d["rmse"], d["converged"], d["iterations"])


def _predict_raw(kind, params, times):
    times = np.asarray(times, dtype=np.float64)
    if kind is ModelKind.FickSeries:
        return np.array([fick_series_release(params[0], float(t)) for t in times])
    if kind is ModelKind.Higuchi:
        return params[0] * np.sqrt(times)
    return params[0] * np.power(times, params[1], where=times > 0) * (times > 0)


def predict(model, t):
    """Model release fraction at time(s) t, clamped to [0, 1]."""
    scalar = np.isscalar(t)
    out = np.clip(_predict_raw(model.kind, model.params, np.atleast_1d(t)), 0.0, 1.0)
    return float(out[0]) if scalar else out


def evaluate(model, curve):
    """(MAE, RMSE) of the clamped predictions against the curve."""
    pred = predict(model, curve.times)
    resid = curve.fractions - pred
    mae = float(np.mean(np.abs(resid)))
    rmse = float(np.sqrt(np.mean(resid * resid)))
    return mae, rmse


# --- parameter transforms: optimize unconstrained, expose constrained ---

_N_MAX = 1.5


def _to_internal(kind, params):
    if kind is ModelKind.Peppas:
        k, n = params
        return np.array([math.log(k), math.log(n / (_N_MAX - n))])
    return np.array([math.log(params[0])])


def _from_internal(kind, q):
    if kind is ModelKind.Peppas:
        n = _N_MAX / (1.0 + math.exp(-q[1]))
        return np.array([math.exp(q[0]), n])
    return np.array([math.exp(q[0])])


def _initial_guess(kind, curve):
    t = curve.times
    f = curve.fractions
    pos = t > 0
    if kind is ModelKind.Higuchi:
        # regression of fraction on sqrt(t) through the origin
        s = np.sqrt(t[pos])
        denom = float(np.dot(s, s))
        k = float(np.dot(s, f[pos]) / denom) if denom > 0 else 1.0
        return np.array([max(k, 1e-6)])
    if kind is ModelKind.Peppas:
        usable = pos & (f > 0) & (f < 0.6)
        if np.count_nonzero(usable) < 2:
            usable = pos & (f > 0)
        if np.count_nonzero(usable) >= 2:
            lt, lf = np.log(t[usable]), np.log(f[usable])
            n, logk = np.polyfit(lt, lf, 1)
            n = min(max(float(n), 0.05), 1.45)
            return np.array([max(math.exp(logk), 1e-6), n])
        return np.array([max(float(f.max()), 1e-3), 0.5])
    # FickSeries: invert the one-term series at half release, or fall back
    # to the early-time square-root law at the last point.
    if f.max() >= 0.5:
        t_half = float(np.interp(0.5, f, t))
        if t_half > 0:
            return np.array([math.log(16.0 / math.pi**2) / (math.pi**2 * t_half)])
    t_last = float(t[pos][-1])
    f_last = max(float(f[pos][-1]), 1e-3)
    return np.array([math.pi * f_last**2 / (16.0 * t_last)])


def fit(kind, curve, max_iter=500):
    """Levenberg-Marquardt fit of one model kind to a curve.

    Stops when the relative SSR improvement drops below 1e-10 or at
    max_iter; `converged` reports which.  MAE/RMSE are evaluated on the
    full input curve with clamped predictions.
    """
    if isinstance(kind, str):
        kind = ModelKind.parse(kind)
    f = curve.fractions
    if not np.any(curve.times > 0) or np.all(f == f[0]):
        raise DegenerateCurve("curve has no fittable signal")

    def residuals(q):
        return _predict_raw(kind, _from_internal(kind, q), curve.times) - f

    q = _to_internal(kind, _initial_guess(kind, curve))
    r = residuals(q)
    ssr = float(np.dot(r, r))
    lam = 1e-3
    converged = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        # central-difference Jacobian in the transformed space
        J = np.empty((r.size, q.size))
        for j in range(q.size):
            h = 1e-6 * max(abs(q[j]), 1.0)
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            J[:, j] = (residuals(qp) - residuals(qm)) / (2 * h)
        jtj = J.T @ J
        jtr = J.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            r_new = residuals(q + step)
            ssr_new = float(np.dot(r_new, r_new))
            if ssr_new <= ssr:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged = True  # no descent direction left: at a minimum
            break
        q = q + step
        improvement = (ssr - ssr_new) / max(ssr, 1e-300)
        r, ssr = r_new, ssr_new
        lam = max(lam / 10, 1e-12)
        if improvement < 1e-10:
            converged = True
            break

    model = ClassicalModel(kind, _from_internal(kind, q))
    mae, rmse = evaluate(model, curve)
    return FitResult(model, mae, rmse, converged, iterations)
