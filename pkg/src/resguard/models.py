"""Per-sensor regression predictors: linear, feed-forward neural, ensemble.

All three families share the same evaluation surface (``predict``,
``jacobian``, ``taylor_linearize``) so downstream code can linearize any
detector at an operating point.  Training normalizes features and targets
with z-scores computed on the training split; stored models carry the
scaler so predictions and gradients are in engineering units, while MSE
reporting uses normalized values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = "1"


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite; carries the epoch index."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Scaler:
    """Z-score statistics for features (per column) and the target."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def __post_init__(self):
        object.__setattr__(self, "x_mean", np.asarray(self.x_mean, dtype=float))
        object.__setattr__(self, "x_std", np.asarray(self.x_std, dtype=float))

    @classmethod
    def fit(cls, features: np.ndarray, targets: np.ndarray) -> "Scaler":
        x_std = features.std(axis=0)
        x_std = np.where(x_std > 0, x_std, 1.0)
        y_std = float(targets.std())
        return cls(features.mean(axis=0), x_std, float(targets.mean()), y_std if y_std > 0 else 1.0)

    @classmethod
    def identity(cls, k: int) -> "Scaler":
        return cls(np.zeros(k), np.ones(k), 0.0, 1.0)

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (y - self.y_mean) / self.y_std


@dataclass(frozen=True)
class LinearModel:
    """Affine predictor ``f(x) = w . x + b`` in engineering units."""

    w: np.ndarray
    b: float
    feature_names: tuple[str, ...] = ()
    scaler: Scaler | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1:
            raise ValueError("w must be a vector")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b)):
            raise ValueError("linear model parameters must be finite")
        if self.feature_names and len(self.feature_names) != w.size:
            raise ValueError("feature_names length does not match w")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_features(self) -> int:
        return self.w.size


@dataclass(frozen=True)
class NeuralModel:
    """Feed-forward net with tanh hidden layers and an identity output.

    ``layers`` maps normalized features through each (weights, bias) pair;
    the scaler converts engineering units in and out.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    feature_names: tuple[str, ...] = ()
    scaler: Scaler | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")
        layers = tuple((np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in self.layers)
        if not layers:
            raise ValueError("at least one layer required")
        prev = layers[0][0].shape[1]
        for W, b in layers:
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.size or W.shape[1] != prev:
                raise ValueError("inconsistent layer dimensions")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("neural model parameters must be finite")
            prev = W.shape[0]
        if layers[-1][0].shape[0] != 1:
            raise ValueError("output layer must have a single unit")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_features(self) -> int:
        return self.layers[0][0].shape[1]


@dataclass(frozen=True)
class EnsembleModel:
    """Average of a neural and a linear predictor over the same features."""

    nn: NeuralModel
    lr: LinearModel

    def __post_init__(self):
        if self.nn.n_features != self.lr.n_features:
            raise ValueError("ensemble members disagree on feature count")
        if self.nn.feature_names and self.lr.feature_names and self.nn.feature_names != self.lr.feature_names:
            raise ValueError("ensemble members disagree on feature names")

    @property
    def n_features(self) -> int:
        return self.lr.n_features

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.lr.feature_names or self.nn.feature_names


Model = LinearModel | NeuralModel | EnsembleModel


@dataclass(frozen=True)
class TrainConfig:
    """Neural training hyperparameters (full-batch Adam)."""

    epochs: int = 5000
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden_layers: tuple[int, ...] = (16, 16)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if not self.hidden_layers or any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden_layers must be positive widths")
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))


def _as_matrix(features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    return X


def fit_linear(features, targets, feature_names: tuple[str, ...] = ()) -> LinearModel:
    """Least-squares fit via normal equations on z-scored data.

    Falls back to a tiny ridge (lambda = 1e-8) when the Gram matrix is
    singular or numerically rank-deficient.  The returned weights and
    intercept act on engineering units; the fitted scaler is kept on the
    model for normalized-MSE reporting.
    """
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    T, k = X.shape
    if T <= 1:
        raise ValueError("need at least 2 training rows")
    if k == 0:
        raise ValueError("need at least 1 feature column")
    if y.size != T:
        raise ValueError("targets length does not match features")

    scaler = Scaler.fit(X, y)
    Xn = scaler.transform_x(X)
    yn = scaler.transform_y(y)
    A = np.column_stack([Xn, np.ones(T)])
    G = A.T @ A
    rhs = A.T @ yn
    try:
        theta = np.linalg.solve(G, rhs)
        if not np.all(np.isfinite(theta)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        theta = np.linalg.solve(G + 1e-8 * np.eye(k + 1), rhs)
    wn, bn = theta[:k], theta[k]

    # Fold the scaler into engineering-unit parameters.
    w = scaler.y_std * wn / scaler.x_std
    b = scaler.y_mean + scaler.y_std * bn - float(w @ scaler.x_mean)
    return LinearModel(w, float(b), feature_names or (), scaler)


def _init_layers(k: int, hidden: tuple[int, ...], rng: np.random.Generator):
    sizes = [k, *hidden, 1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append([W, np.zeros(fan_out)])
    return layers


def _forward_batch(layers, X: np.ndarray):
    """Forward pass over a batch; returns hidden activations and outputs."""
    acts = []
    H = X
    for W, b in layers[:-1]:
        H = np.tanh(H @ W.T + b)
        acts.append(H)
    W_out, b_out = layers[-1]
    out = H @ W_out.T + b_out
    return acts, out.ravel()


def fit_nn(features, targets, cfg: TrainConfig, feature_names: tuple[str, ...] = ()) -> NeuralModel:
    """Train a tanh feed-forward net with full-batch Adam.

    Deterministic given ``cfg.seed``.  Parameters from the best epoch are
    returned, so the final training MSE never exceeds the initial one.
    Raises :class:`TrainingDivergedError` if the loss becomes non-finite.
    """
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    T, k = X.shape
    if T < 2 or k == 0:
        raise ValueError("need at least 2 rows and 1 feature")
    if y.size != T:
        raise ValueError("targets length does not match features")

    scaler = Scaler.fit(X, y)
    Xn = scaler.transform_x(X)
    yn = scaler.transform_y(y)

    rng = np.random.default_rng(cfg.seed)
    layers = _init_layers(k, cfg.hidden_layers, rng)
    m_state = [[np.zeros_like(W), np.zeros_like(b)] for W, b in layers]
    v_state = [[np.zeros_like(W), np.zeros_like(b)] for W, b in layers]

    def loss_of(params):
        _, out = _forward_batch(params, Xn)
        return float(np.mean((out - yn) ** 2))

    best_loss = loss_of(layers)
    best = [[W.copy(), b.copy()] for W, b in layers]

    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        acts, out = _forward_batch(layers, Xn)
        err = out - yn
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean(err**2))
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)
        if loss < best_loss:
            best_loss = loss
            best = [[W.copy(), b.copy()] for W, b in layers]

        # Backprop: d(loss)/d(out) then chain through tanh layers.
        grads = [None] * len(layers)
        delta = (2.0 / T) * err[:, None]
        inputs = [Xn, *acts]
        W_out, _ = layers[-1]
        grads[-1] = [delta.T @ inputs[-1], delta.sum(axis=0)]
        back = delta @ W_out
        for i in range(len(layers) - 2, -1, -1):
            back = back * (1.0 - acts[i] ** 2)
            grads[i] = [back.T @ inputs[i], back.sum(axis=0)]
            if i > 0:
                back = back @ layers[i][0]

        corr1 = 1.0 - b1**epoch
        corr2 = 1.0 - b2**epoch
        for li in range(len(layers)):
            for pi in range(2):
                g = grads[li][pi]
                m_state[li][pi] = b1 * m_state[li][pi] + (1 - b1) * g
                v_state[li][pi] = b2 * v_state[li][pi] + (1 - b2) * g**2
                m_hat = m_state[li][pi] / corr1
                v_hat = v_state[li][pi] / corr2
                layers[li][pi] = layers[li][pi] - lr * m_hat / (np.sqrt(v_hat) + eps)

    final_loss = loss_of(layers)
    if not np.isfinite(final_loss):
        raise TrainingDivergedError(cfg.epochs)
    if final_loss < best_loss:
        best = layers
    return NeuralModel(tuple((W, b) for W, b in best), feature_names or (), scaler)


def _check_dim(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != model.n_features:
        raise ValueError(f"input of length {x.size} does not match {model.n_features} features")
    return x


def predict(model: Model, x) -> float:
    """Evaluate the predictor at a single input (engineering units)."""
    x = _check_dim(model, x)
    if isinstance(model, LinearModel):
        return float(model.w @ x + model.b)
    if isinstance(model, NeuralModel):
        scaler = model.scaler or Scaler.identity(model.n_features)
        _, out = _forward_batch(model.layers, scaler.transform_x(x)[None, :])
        return float(scaler.y_mean + scaler.y_std * out[0])
    if isinstance(model, EnsembleModel):
        return 0.5 * (predict(model.nn, x) + predict(model.lr, x))
    raise TypeError(f"unsupported model type {type(model)!r}")


def predict_batch(model: Model, X) -> np.ndarray:
    """Vectorized ``predict`` over the rows of a feature matrix."""
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError("feature count mismatch")
    if isinstance(model, LinearModel):
        return X @ model.w + model.b
    if isinstance(model, NeuralModel):
        scaler = model.scaler or Scaler.identity(model.n_features)
        _, out = _forward_batch(model.layers, scaler.transform_x(X))
        return scaler.y_mean + scaler.y_std * out
    if isinstance(model, EnsembleModel):
        return 0.5 * (predict_batch(model.nn, X) + predict_batch(model.lr, X))
    raise TypeError(f"unsupported model type {type(model)!r}")


def jacobian(model: Model, x) -> np.ndarray:
    """Exact gradient of the prediction with respect to the input."""
    x = _check_dim(model, x)
    if isinstance(model, LinearModel):
        return model.w.copy()
    if isinstance(model, NeuralModel):
        scaler = model.scaler or Scaler.identity(model.n_features)
        h = scaler.transform_x(x)
        acts = []
        for W, b in model.layers[:-1]:
            h = np.tanh(W @ h + b)
            acts.append(h)
        g = model.layers[-1][0][0].copy()
        for (W, _), a in zip(reversed(model.layers[:-1]), reversed(acts)):
            g = (g * (1.0 - a**2)) @ W
        return scaler.y_std * g / scaler.x_std
    if isinstance(model, EnsembleModel):
        return 0.5 * (jacobian(model.nn, x) + jacobian(model.lr, x))
    raise TypeError(f"unsupported model type {type(model)!r}")


def taylor_linearize(model: Model, x0) -> tuple[np.ndarray, float]:
    """First-order expansion at ``x0``: returns (w, b) with w.x0 + b == predict(x0)."""
    x0 = _check_dim(model, x0)
    w = jacobian(model, x0)
    b = predict(model, x0) - float(w @ x0)
    return w, b


def normalized_mse(model: Model, features, targets) -> float:
    """Mean squared error on z-scored values (per the model's training scaler)."""
    X = _as_matrix(features)
    y = np.asarray(targets, dtype=float).ravel()
    pred = predict_batch(model, X)
    scaler = _scaler_of(model)
    return float(np.mean((scaler.transform_y(pred) - scaler.transform_y(y)) ** 2))


def _scaler_of(model: Model) -> Scaler:
    if isinstance(model, EnsembleModel):
        return _scaler_of(model.lr)
    return model.scaler or Scaler.identity(model.n_features)


def _scaler_to_json(scaler: Scaler | None):
    if scaler is None:
        return None
    return {
        "x_mean": scaler.x_mean.tolist(),
        "x_std": scaler.x_std.tolist(),
        "y_mean": scaler.y_mean,
        "y_std": scaler.y_std,
    }


def _scaler_from_json(obj) -> Scaler | None:
    if obj is None:
        return None
    return Scaler(np.array(obj["x_mean"]), np.array(obj["x_std"]), obj["y_mean"], obj["y_std"])


def model_to_json(model: Model) -> dict:
    """Serialize a model to a JSON-compatible dict (versioned schema)."""
    if isinstance(model, LinearModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "family": "linear",
            "n_features": model.n_features,
            "w": model.w.tolist(),
            "b": model.b,
            "feature_names": list(model.feature_names),
            "scaler": _scaler_to_json(model.scaler),
        }
    if isinstance(model, NeuralModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "family": "neural",
            "n_features": model.n_features,
            "activation": model.activation,
            "layers": [
                {"shape": list(W.shape), "weights": W.tolist(), "bias": b.tolist()}
                for W, b in model.layers
            ],
            "feature_names": list(model.feature_names),
            "scaler": _scaler_to_json(model.scaler),
        }
    if isinstance(model, EnsembleModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "family": "ensemble",
            "nn": model_to_json(model.nn),
            "lr": model_to_json(model.lr),
        }
    raise TypeError(f"unsupported model type {type(model)!r}")


def model_from_json(obj: dict) -> Model:
    version = obj.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    family = obj["family"]
    if family == "linear":
        return LinearModel(
            np.array(obj["w"], dtype=float),
            float(obj["b"]),
            tuple(obj.get("feature_names", ())),
            _scaler_from_json(obj.get("scaler")),
        )
    if family == "neural":
        layers = tuple(
            (np.array(l["weights"], dtype=float), np.array(l["bias"], dtype=float))
            for l in obj["layers"]
        )
        return NeuralModel(
            layers,
            tuple(obj.get("feature_names", ())),
            _scaler_from_json(obj.get("scaler")),
            obj.get("activation", "tanh"),
        )
    if family == "ensemble":
        return EnsembleModel(model_from_json(obj["nn"]), model_from_json(obj["lr"]))
    raise ValueError(f"unknown model family {family!r}")


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path) as fh:
        return model_from_json(json.load(fh))
