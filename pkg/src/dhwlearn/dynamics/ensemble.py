"""Bootstrap ensemble of small feed-forward networks for discharge transitions.

Each member is a linear map plus an ``MLPRegressor`` fitted to what the
linear map leaves over, both on the member's own bootstrap resample of
z-normalised data. A second network per member learns the log of its squared
in-sample residual, so every member predicts a mean and a noise variance.
The ensemble's predictive variance is the spread of the member means
(epistemic) plus the average member noise variance (aleatoric).

After fitting, member weights are stacked into arrays so the whole ensemble
is evaluated in one batched forward pass during planning, and so checkpoints
are plain JSON.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.special import digamma
from scipy.stats import qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LinearRegression
from sklearn.neural_network import MLPRegressor

from dhwlearn.config import EnsembleConfig
from dhwlearn.dynamics.experience import (
    INPUT_NAMES,
    OUTPUT_NAMES,
    Action,
    Experience,
    StateFeatures,
    encode_inputs,
    experience_arrays,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2

# E[log e²] = log σ² + ψ(1/2) + log 2 for Gaussian residuals e.
_LOG_CHI2_SHIFT = float(digamma(0.5) + math.log(2.0))
# Normalised units.
_NOISE_EPS = 1e-6
_LOG_VAR_BOUNDS = (-30.0, 10.0)
_EXACT_FIT_STD = 1e-8

# Feature box spanned by the variance probes (period of day as a fraction of the day).
PROBE_BOX: dict[str, tuple[float, float]] = {
    "midpoint_c": (35.0, 70.0),
    "minutes_since_reheat": (0.0, 1440.0),
    "draw_since_reheat_l": (0.0, 200.0),
    "ambient_c": (-5.0, 25.0),
    "draw_l": (0.0, 20.0),
    "day_fraction": (0.0, 1.0),
}


class ModelNotTrainedError(RuntimeError):
    """Prediction requested from a missing or empty ensemble."""


@dataclass(frozen=True)
class EnsemblePrediction:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        variance = np.asarray(self.variance, dtype=float)
        if np.any(variance < 0):
            raise ValueError("EnsemblePrediction variance must be >= 0")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "variance", variance)

    @property
    def midpoint_c(self) -> float:
        return float(self.mean[0])

    @property
    def electric_wh(self) -> float:
        return float(self.mean[1])

    @property
    def midpoint_var(self) -> float:
        return float(self.variance[0])

    @property
    def electric_var(self) -> float:
        return float(self.variance[1])


class EnsembleModel:
    """Immutable stacked ensemble.

    ``coefs[l]`` has shape [members x fan_in x fan_out], ``intercepts[l]``
    [members x fan_out]. Hidden layers use tanh, the output layer is linear in
    normalised units and is added to the member's linear map
    ``linear_coefs`` [members x inputs x outputs]. The optional noise head has
    the same layout as ``coefs`` and predicts a normalised log variance for
    the outputs flagged in ``noise_outputs``; without it members carry no
    noise variance.
    """

    def __init__(
        self,
        coefs: Sequence[np.ndarray],
        intercepts: Sequence[np.ndarray],
        x_mean: np.ndarray,
        x_std: np.ndarray,
        y_mean: np.ndarray,
        y_std: np.ndarray,
        *,
        linear_coefs: np.ndarray | None = None,
        linear_intercepts: np.ndarray | None = None,
        noise_coefs: Sequence[np.ndarray] | None = None,
        noise_intercepts: Sequence[np.ndarray] | None = None,
        noise_outputs: Sequence[bool] | None = None,
        degenerate_outputs: Sequence[str] = (),
        seed: int = 0,
        n_train: int = 0,
    ) -> None:
        self.coefs = [np.asarray(w, dtype=float) for w in coefs]
        self.intercepts = [np.asarray(b, dtype=float) for b in intercepts]
        if not self.coefs or len(self.coefs) != len(self.intercepts):
            raise ValueError("EnsembleModel needs matching, non-empty layer lists")
        members = self.coefs[0].shape[0]
        if members < 2:
            raise ValueError("EnsembleModel needs at least 2 members")
        n_in, n_out = self.coefs[0].shape[1], self.coefs[-1].shape[2]
        self.linear_coefs = (
            np.zeros((members, n_in, n_out))
            if linear_coefs is None
            else np.asarray(linear_coefs, dtype=float)
        )
        self.linear_intercepts = (
            np.zeros((members, n_out))
            if linear_intercepts is None
            else np.asarray(linear_intercepts, dtype=float)
        )
        if self.linear_coefs.shape != (members, n_in, n_out) or self.linear_intercepts.shape != (members, n_out):
            raise ValueError("EnsembleModel linear map does not match the network shapes")
        if (noise_coefs is None) != (noise_intercepts is None):
            raise ValueError("EnsembleModel noise head needs both coefs and intercepts")
        self.noise_coefs = None if noise_coefs is None else [np.asarray(w, dtype=float) for w in noise_coefs]
        self.noise_intercepts = (
            None if noise_intercepts is None else [np.asarray(b, dtype=float) for b in noise_intercepts]
        )
        if self.noise_coefs is not None and (
            len(self.noise_coefs) != len(self.noise_intercepts) or self.noise_coefs[-1].shape[2] != n_out
        ):
            raise ValueError("EnsembleModel noise head does not match the outputs")
        self.noise_outputs = np.asarray(
            [self.noise_coefs is not None] * n_out if noise_outputs is None else noise_outputs, dtype=bool
        )
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_std = np.asarray(x_std, dtype=float)
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.y_std = np.asarray(y_std, dtype=float)
        self.degenerate_outputs = tuple(degenerate_outputs)
        self.seed = seed
        self.n_train = n_train
        arrays = [*self.coefs, *self.intercepts, self.linear_coefs, self.linear_intercepts, self.noise_outputs]
        if self.noise_coefs is not None:
            arrays += [*self.noise_coefs, *self.noise_intercepts]
        for arr in arrays:
            arr.setflags(write=False)

    @property
    def n_members(self) -> int:
        return int(self.coefs[0].shape[0])

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_outputs)

    @property
    def has_noise_head(self) -> bool:
        return self.noise_coefs is not None

    def normalize(self, inputs: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(inputs) - self.x_mean) / self.x_std

    @staticmethod
    def _forward(coefs: Sequence[np.ndarray], intercepts: Sequence[np.ndarray], xn: np.ndarray) -> np.ndarray:
        h = xn[None, :, :]
        last = len(coefs) - 1
        for layer, (w, b) in enumerate(zip(coefs, intercepts)):
            h = h @ w + b[:, None, :]
            if layer < last:
                h = np.tanh(h)
        return h

    def member_outputs(self, inputs: np.ndarray) -> np.ndarray:
        """Raw member predictions, shape [members x N x outputs]."""
        xn = self.normalize(inputs)
        h = self._forward(self.coefs, self.intercepts, xn)
        h = h + xn[None, :, :] @ self.linear_coefs + self.linear_intercepts[:, None, :]
        return h * self.y_std + self.y_mean

    def member_noise(self, inputs: np.ndarray) -> np.ndarray:
        """Member noise variances in output units, shape [members x N x outputs]."""
        xn = self.normalize(inputs)
        if self.noise_coefs is None:
            return np.zeros((self.n_members, len(xn), len(self.y_std)))
        log_var = np.clip(self._forward(self.noise_coefs, self.noise_intercepts, xn), *_LOG_VAR_BOUNDS)
        var = np.exp(log_var - _LOG_CHI2_SHIFT) * self.y_std**2
        return np.where(self.noise_outputs, var, 0.0)

    def predict_components(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean, spread of the member means and mean member noise, each [N x outputs]."""
        outputs = self.member_outputs(inputs)
        return outputs.mean(axis=0), outputs.var(axis=0), self.member_noise(inputs).mean(axis=0)

    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ensemble mean and total predictive variance per output, each [N x outputs]."""
        mean, epistemic, aleatoric = self.predict_components(inputs)
        return mean, epistemic + aleatoric

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "ensemble",
            "inputs": list(INPUT_NAMES),
            "outputs": list(OUTPUT_NAMES),
            "seed": self.seed,
            "n_train": self.n_train,
            "degenerate_outputs": list(self.degenerate_outputs),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "coefs": [w.tolist() for w in self.coefs],
            "intercepts": [b.tolist() for b in self.intercepts],
            "linear_coefs": self.linear_coefs.tolist(),
            "linear_intercepts": self.linear_intercepts.tolist(),
            "noise_coefs": None if self.noise_coefs is None else [w.tolist() for w in self.noise_coefs],
            "noise_intercepts": (
                None if self.noise_intercepts is None else [b.tolist() for b in self.noise_intercepts]
            ),
            "noise_outputs": self.noise_outputs.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> EnsembleModel:
        if d.get("kind") != "ensemble" or d.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"Unsupported ensemble checkpoint (kind={d.get('kind')}, "
                f"format_version={d.get('format_version')})"
            )
        noise_coefs = d.get("noise_coefs")
        noise_intercepts = d.get("noise_intercepts")
        return cls(
            [np.asarray(w) for w in d["coefs"]],
            [np.asarray(b) for b in d["intercepts"]],
            np.asarray(d["x_mean"]),
            np.asarray(d["x_std"]),
            np.asarray(d["y_mean"]),
            np.asarray(d["y_std"]),
            linear_coefs=np.asarray(d["linear_coefs"]),
            linear_intercepts=np.asarray(d["linear_intercepts"]),
            noise_coefs=None if noise_coefs is None else [np.asarray(w) for w in noise_coefs],
            noise_intercepts=None if noise_intercepts is None else [np.asarray(b) for b in noise_intercepts],
            noise_outputs=d.get("noise_outputs"),
            degenerate_outputs=d.get("degenerate_outputs", ()),
            seed=int(d.get("seed", 0)),
            n_train=int(d.get("n_train", 0)),
        )


# ── Training ──


def _fit_member(x: np.ndarray, y: np.ndarray, config: EnsembleConfig, random_state: int) -> MLPRegressor:
    net = MLPRegressor(
        hidden_layer_sizes=config.hidden_layers,
        activation="tanh",
        solver="adam",
        learning_rate_init=config.learning_rate,
        max_iter=config.max_epochs,
        early_stopping=True,
        validation_fraction=config.validation_fraction,
        n_iter_no_change=config.patience,
        tol=config.tol,
        random_state=random_state,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        net.fit(x, y if y.shape[1] > 1 else y[:, 0])
    return net


def _stack_member(
    coefs: list[np.ndarray],
    intercepts: list[np.ndarray],
    m: int,
    net: MLPRegressor,
    columns: np.ndarray,
    scale: np.ndarray | float = 1.0,
    shift: np.ndarray | float = 0.0,
) -> None:
    """Copy a fitted network into slot ``m``; its outputs land in ``columns``, rescaled."""
    for layer in range(len(coefs) - 1):
        coefs[layer][m] = net.coefs_[layer]
        intercepts[layer][m] = net.intercepts_[layer]
    coefs[-1][m][:, columns] = net.coefs_[-1] * scale
    intercepts[-1][m][columns] = net.intercepts_[-1] * scale + shift


def _linear_residual_std(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    linear = LinearRegression().fit(x, y)
    return (y - linear.predict(x)).std(axis=0)


def fit_ensemble(
    x: np.ndarray,
    y: np.ndarray,
    config: EnsembleConfig,
    seed: int,
    output_names: Sequence[str] | None = None,
) -> EnsembleModel:
    """Fit ``config.n_members`` members on bootstrap resamples of (x, y).

    Outputs a linear map already reproduces on the full data get no network
    and no noise head.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if len(x) != len(y):
        raise ValueError("x and y must have the same number of rows")
    if len(x) < config.min_experiences:
        raise ValueError(f"need >= {config.min_experiences} samples to train, got {len(x)}")
    names = list(output_names or [f"y{j}" for j in range(y.shape[1])])

    x_mean = x.mean(axis=0)
    x_std = x.std(axis=0)
    x_std[x_std < 1e-12] = 1.0
    y_mean = y.mean(axis=0)
    y_std = y.std(axis=0)
    constant = y_std < 1e-12
    y_std[constant] = 1.0
    active = np.flatnonzero(~constant)
    degenerate = [names[j] for j in np.flatnonzero(constant)]
    if degenerate:
        logger.warning(
            "Zero-variance training target(s) %s: members predict the constant",
            ", ".join(degenerate),
        )

    xn = (x - x_mean) / x_std
    yn = (y - y_mean) / y_std
    n_members, n_in, n_out = config.n_members, x.shape[1], y.shape[1]
    nonlinear = active[_linear_residual_std(xn, yn[:, active]) > _EXACT_FIT_STD] if active.size else active

    sizes = [n_in, *config.hidden_layers, n_out]
    shapes = list(zip(sizes[:-1], sizes[1:]))
    coefs = [np.zeros((n_members, a, b)) for a, b in shapes]
    intercepts = [np.zeros((n_members, b)) for b in sizes[1:]]
    noise_coefs = [np.zeros((n_members, a, b)) for a, b in shapes]
    noise_intercepts = [np.zeros((n_members, b)) for b in sizes[1:]]
    linear_coefs = np.zeros((n_members, n_in, n_out))
    linear_intercepts = np.zeros((n_members, n_out))

    for m in range(n_members if active.size else 0):
        rng = np.random.default_rng([seed, m])
        idx = rng.integers(0, len(xn), len(xn))
        xm, ym = xn[idx], yn[idx]
        linear = LinearRegression().fit(xm, ym[:, active])
        linear_coefs[m][:, active] = linear.coef_.T
        linear_intercepts[m][active] = linear.intercept_
        if not nonlinear.size:
            continue
        residual = ym[:, nonlinear] - xm @ linear_coefs[m][:, nonlinear] - linear_intercepts[m][nonlinear]
        net = _fit_member(xm, residual, config, int(rng.integers(2**31 - 1)))
        _stack_member(coefs, intercepts, m, net, nonlinear)

        error = residual - net.predict(xm).reshape(len(xm), -1)
        log_sq = np.log(error**2 + _NOISE_EPS)
        shift, scale = log_sq.mean(axis=0), log_sq.std(axis=0)
        scale[scale < 1e-12] = 1.0
        head = _fit_member(xm, (log_sq - shift) / scale, config, int(rng.integers(2**31 - 1)))
        _stack_member(noise_coefs, noise_intercepts, m, head, nonlinear, scale, shift)

    logger.info(
        "Trained %d-member ensemble on %d samples (%d output(s) with a network)",
        n_members,
        len(x),
        nonlinear.size,
    )
    has_head = bool(nonlinear.size)
    return EnsembleModel(
        coefs,
        intercepts,
        x_mean,
        x_std,
        y_mean,
        y_std,
        linear_coefs=linear_coefs,
        linear_intercepts=linear_intercepts,
        noise_coefs=noise_coefs if has_head else None,
        noise_intercepts=noise_intercepts if has_head else None,
        noise_outputs=np.isin(np.arange(n_out), nonlinear) if has_head else None,
        degenerate_outputs=degenerate,
        seed=seed,
        n_train=len(x),
    )


def train_ensemble(experiences: Sequence[Experience], config: EnsembleConfig, seed: int) -> EnsembleModel:
    """Fit the discharge model on the non-charging experiences (most recent first when capped)."""
    x, y = experience_arrays(experiences)
    if len(x) < config.min_experiences:
        raise ValueError(
            f"need >= {config.min_experiences} discharge experiences to train, got {len(x)}"
        )
    x, y = x[-config.max_train_samples :], y[-config.max_train_samples :]
    return fit_ensemble(x, y, config, seed, OUTPUT_NAMES)


# ── Prediction ──


def _require(model: EnsembleModel | None) -> EnsembleModel:
    if model is None:
        raise ModelNotTrainedError("No trained ensemble available")
    return model


def predict(
    model: EnsembleModel | None,
    state_features: StateFeatures,
    action: Action,
    draw_l: float = 0.0,
) -> EnsemblePrediction:
    """Next mid-point temperature and electric energy for one discharge period."""
    model = _require(model)
    if action.reheat:
        raise ValueError("The discharge ensemble does not model charging; use the reheat predictor")
    f = state_features
    x = encode_inputs(
        f.midpoint_c,
        f.minutes_since_reheat,
        f.draw_since_reheat_l,
        f.ambient_c,
        draw_l,
        f.period_of_day,
        f.periods_per_day,
    )
    mean, var = model.predict_batch(x)
    return EnsemblePrediction(np.array([f.midpoint_c + mean[0, 0], mean[0, 1]]), var[0])


def information_gain(
    model: EnsembleModel | None, experience: Experience, noise_std: float = 0.25
) -> float:
    """Surprisal of the observed mid-point, in bits, above the sensor-noise floor.

    The predictive distribution is Gaussian with the ensemble mean and the
    total predictive variance floored at the sensor noise variance. Subtracting the
    surprisal of a noise-only prediction observed at its mean keeps the gain
    non-negative: 0 bits for an exact hit by a model as certain as the sensor.
    """
    prediction = predict(model, experience.features, experience.action, experience.draw_l)
    noise_var = max(noise_std, 1e-6) ** 2
    var = max(prediction.midpoint_var, noise_var)
    error = experience.next_midpoint_c - prediction.midpoint_c
    return 0.5 * math.log2(var / noise_var) + error * error / (2.0 * var * math.log(2.0))


def expected_information_gain(variance, noise_std: float = 0.25):
    """Anticipated gain of a prediction with ensemble ``variance`` (scalar or array)."""
    noise_var = max(noise_std, 1e-6) ** 2
    return 0.5 * np.log2(1.0 + np.asarray(variance, dtype=float) / noise_var)


# ── Variance probes ──


def probe_grid(n: int = 64, seed: int = 0, periods_per_day: int = 96) -> np.ndarray:
    """Scrambled Sobol design of ``n`` model inputs spanning ``PROBE_BOX``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sampler = qmc.Sobol(d=len(PROBE_BOX), scramble=True, seed=seed)
    unit = sampler.random_base2(max(0, math.ceil(math.log2(n))))[:n]
    lows, highs = zip(*PROBE_BOX.values())
    raw = qmc.scale(unit, lows, highs)
    return encode_inputs(
        raw[:, 0],
        raw[:, 1],
        raw[:, 2],
        raw[:, 3],
        raw[:, 4],
        np.floor(raw[:, 5] * periods_per_day),
        periods_per_day,
    )


def residual_excess(
    model: EnsembleModel,
    experiences: Sequence[Experience],
    probes: np.ndarray,
    noise_std: float = 0.25,
) -> np.ndarray:
    """Per-probe squared error the model does not account for.

    Each new experience is assigned to its nearest probe (normalised input
    space); a probe's excess is the mean of error² − member spread − noise,
    floored at 0. The noise term is the learned member noise, or the sensor
    noise at both ends of the observed change when that is larger.
    """
    excess = np.zeros(len(probes))
    x, y = experience_arrays(experiences)
    if len(x) == 0:
        return excess
    mean, epistemic, aleatoric = model.predict_components(x)
    noise = np.maximum(aleatoric[:, 0], 2.0 * noise_std**2)
    unexplained = (y[:, 0] - mean[:, 0]) ** 2 - epistemic[:, 0] - noise
    xn, pn = model.normalize(x), model.normalize(probes)
    nearest = np.argmin(((xn[:, None, :] - pn[None, :, :]) ** 2).sum(axis=-1), axis=1)
    counts = np.bincount(nearest, minlength=len(probes))
    sums = np.bincount(nearest, weights=unexplained, minlength=len(probes))
    hit = counts > 0
    excess[hit] = np.maximum(sums[hit] / counts[hit], 0.0)
    return excess


def variance_snapshot(
    model: EnsembleModel | None, probes: np.ndarray, excess: np.ndarray | None = None
) -> np.ndarray:
    """Spread of the member mid-point predictions at each probe, plus unexplained residual variance.

    Learned member noise is not included.
    """
    _, epistemic, _ = _require(model).predict_components(probes)
    snapshot = epistemic[:, 0].copy()
    if excess is not None:
        snapshot += excess
    return snapshot
