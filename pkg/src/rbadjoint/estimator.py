"""Error estimation for the reduced adjoint.

Two estimators map per-instant residual norms of a lifted reduced solution to
per-instant error norms:

* :class:`ErrorModel`, a small feedforward network trained by full-batch
  steepest descent on pairs harvested during the greedy basis construction;
* :class:`GainTable`, a nearest-neighbour lookup of a stored gain ``lambda``
  so that ``|e_i| <= lambda |R_i|``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def true_error_norms(full, lifted) -> np.ndarray:
    """Per-instant Euclidean norm of ``full - lifted``."""
    th = full.vartheta if hasattr(full, "vartheta") else np.asarray(full)
    lifted = np.asarray(lifted)
    if th.shape != lifted.shape:
        raise ValueError("full and reduced solutions have different shapes")
    return np.linalg.norm(th - lifted, axis=1)


def regression_metrics(true_seq, pred_seq) -> tuple[float, float]:
    """Return ``(RMSE, R^2)``; R^2 is NaN when the true values are constant."""
    y = np.ravel(np.asarray(true_seq, dtype=float))
    p = np.ravel(np.asarray(pred_seq, dtype=float))
    if y.shape != p.shape or y.size < 2:
        raise ValueError("need two equal-length sequences of at least two values")
    rmse = float(np.sqrt(np.mean((y - p) ** 2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return rmse, float("nan")
    return rmse, 1.0 - float(np.sum((y - p) ** 2)) / ss_tot


class FeedforwardNet:
    """Fully connected network, tanh on hidden layers, identity output."""

    def __init__(self, sizes, weights=None, biases=None, seed: int = 0):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = [rng.normal(0.0, np.sqrt(1.0 / n_in), (n_in, n_out))
                       for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:])]
            biases = [np.zeros(n_out) for n_out in self.sizes[1:]]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @property
    def n_params(self) -> int:
        return sum((n_in + 1) * n_out for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[-1]

    def _forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        acts = [x]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            acts.append(z if k == last else np.tanh(z))
        return acts

    def loss_and_grad(self, X: np.ndarray, Y: np.ndarray):
        """Mean squared error over all outputs and its gradient by back-propagation."""
        acts = self._forward(np.atleast_2d(X))
        Y = np.atleast_2d(Y)
        diff = acts[-1] - Y
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / diff.size
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        return loss, gW, gb

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = theta[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            self.biases[k] = theta[pos:pos + b.size].copy()
            pos += b.size


def fnn_forward(net: FeedforwardNet, x) -> np.ndarray:
    return net.forward(x)


@dataclass
class ErrorTrainingSet:
    """Pairs of residual-norm and true-error-norm sequences, one row per pair."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape != self.targets.shape:
            raise ValueError("inputs and targets must have matching shapes")
        if np.any(self.inputs < 0) or np.any(self.targets < 0):
            raise ValueError("norms must be non-negative")

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def from_pairs(cls, pairs) -> "ErrorTrainingSet":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no training pairs")
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    log: bool = False

    @classmethod
    def fit(cls, data: np.ndarray, log: bool = False, floor: float = 1e-12) -> "Normalizer":
        z = cls._pre(data, log)
        return cls(z.mean(axis=0), np.maximum(z.std(axis=0), floor), log)

    @staticmethod
    def _pre(x, log):
        x = np.asarray(x, dtype=float)
        return np.log(x + 1e-300) if log else x

    def apply(self, x):
        return (self._pre(x, self.log) - self.mean) / self.std

    def invert(self, z):
        x = np.asarray(z) * self.std + self.mean
        return np.exp(x) if self.log else x


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    holdout_rmse: float = float("nan")
    holdout_r2: float = float("nan")
    n_train: int = 0
    n_holdout: int = 0


class ErrorModel:
    """Trained network plus feature scaling; maps residual norms to error norms.

    In ``sequence`` mode one sample is a whole ``N_t+1`` sequence; in
    ``per_step`` mode each instant is an independent scalar sample.
    """

    def __init__(self, net: FeedforwardNet, x_norm: Normalizer, y_norm: Normalizer,
                 mode: str = "sequence", metadata: dict | None = None):
        if mode not in ("sequence", "per_step"):
            raise ValueError(f"unknown mode {mode!r}")
        self.net = net
        self.x_norm = x_norm
        self.y_norm = y_norm
        self.mode = mode
        self.metadata = metadata or {}

    def predict(self, residual_norms) -> np.ndarray:
        R = np.asarray(residual_norms, dtype=float)
        if self.mode == "per_step":
            z = self.net.forward(self.x_norm.apply(R.reshape(-1, 1)))
            out = self.y_norm.invert(z).reshape(R.shape)
        else:
            out = self.y_norm.invert(self.net.forward(self.x_norm.apply(R)))
        return np.maximum(out, 0.0)

    def to_dict(self) -> dict:
        return {
            "format": "rbadjoint-fnn/1",
            "mode": self.mode,
            "layer_sizes": self.net.sizes,
            "activation": "tanh",
            "weights": [w.ravel().tolist() for w in self.net.weights],
            "biases": [b.tolist() for b in self.net.biases],
            "x_norm": {"mean": np.atleast_1d(self.x_norm.mean).tolist(),
                       "std": np.atleast_1d(self.x_norm.std).tolist(), "log": self.x_norm.log},
            "y_norm": {"mean": np.atleast_1d(self.y_norm.mean).tolist(),
                       "std": np.atleast_1d(self.y_norm.std).tolist(), "log": self.y_norm.log},
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        # repr of a float round-trips exactly
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorModel":
        sizes = d["layer_sizes"]
        weights = [np.array(w).reshape(n_in, n_out) for w, n_in, n_out in zip(d["weights"], sizes[:-1], sizes[1:])]
        biases = [np.array(b) for b in d["biases"]]
        net = FeedforwardNet(sizes, weights, biases)
        xn = Normalizer(np.array(d["x_norm"]["mean"]), np.array(d["x_norm"]["std"]), d["x_norm"]["log"])
        yn = Normalizer(np.array(d["y_norm"]["mean"]), np.array(d["y_norm"]["std"]), d["y_norm"]["log"])
        return cls(net, xn, yn, d["mode"], d.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "ErrorModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fnn_train(net: FeedforwardNet, X: np.ndarray, Y: np.ndarray, lr: float = 0.05,
              epochs: int = 2000) -> list[float]:
    """Full-batch steepest descent on mean squared error; returns the loss per epoch."""
    if len(X) == 0:
        raise ValueError("empty training data")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    losses = []
    for epoch in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gW, gb = net.loss_and_grad(X, Y)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch} (lr={lr}); "
                                     f"last finite loss {losses[-1] if losses else None}")
        losses.append(loss)
        for k in range(len(net.weights)):
            net.weights[k] -= lr * gW[k]
            net.biases[k] -= lr * gb[k]
    return losses


def train_error_model(data: ErrorTrainingSet, hidden=(32,), lr: float = 0.05, epochs: int = 2000,
                      holdout_fraction: float = 0.2, seed: int = 0, mode: str = "sequence",
                      log_features: bool = True) -> tuple[ErrorModel, TrainReport]:
    """Split, scale, train and score an :class:`ErrorModel` on ``data``."""
    n = len(data)
    if n < 2:
        raise ValueError("need at least two training pairs")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = int(round(holdout_fraction * n))
    n_hold = min(max(n_hold, 1 if holdout_fraction > 0 else 0), n - 1)
    hold, train = perm[:n_hold], perm[n_hold:]
    Xtr, Ytr = data.inputs[train], data.targets[train]
    if mode == "per_step":
        Xtr, Ytr = Xtr.reshape(-1, 1), Ytr.reshape(-1, 1)
    x_norm = Normalizer.fit(Xtr, log=log_features)
    y_norm = Normalizer.fit(Ytr, log=log_features)
    width = Xtr.shape[1]
    net = FeedforwardNet([width, *hidden, Ytr.shape[1]], seed=seed)
    losses = fnn_train(net, x_norm.apply(Xtr), y_norm.apply(Ytr), lr=lr, epochs=epochs)
    model = ErrorModel(net, x_norm, y_norm, mode,
                       {"lr": lr, "epochs": epochs, "hidden": list(hidden), "seed": seed,
                        "n_train": len(train), "n_holdout": len(hold), "final_loss": losses[-1]})
    report = TrainReport(losses, n_train=len(train), n_holdout=len(hold))
    if len(hold):
        pred = model.predict(data.inputs[hold])
        report.holdout_rmse, report.holdout_r2 = regression_metrics(data.targets[hold], pred)
        model.metadata.update(holdout_rmse=report.holdout_rmse, holdout_r2=report.holdout_r2)
    return model, report


def gain_from_pair(residual_norms, error_norms) -> float:
    """``max_i |e_i| / |R_i|`` with ``0/0`` read as zero."""
    R = np.asarray(residual_norms, dtype=float)
    e = np.asarray(error_norms, dtype=float)
    ratio = np.divide(e, R, out=np.zeros_like(e), where=R > 0)
    ratio[(R == 0) & (e > 0)] = np.inf
    return float(ratio.max(initial=0.0))


@dataclass
class GainTable:
    densities: list = field(default_factory=list)
    gains: list = field(default_factory=list)

    def add(self, density, gain: float) -> None:
        if gain < 0:
            raise ValueError("gain must be non-negative")
        self.densities.append(np.asarray(density, dtype=float).copy())
        self.gains.append(float(gain))

    def nearest(self, density) -> int:
        if not self.densities:
            raise ValueError("gain table is empty")
        D = np.asarray(self.densities)
        dist = np.linalg.norm(D - np.asarray(density, dtype=float), axis=1)
        return int(np.argmin(dist))  # first minimum wins ties


def gain_baseline_estimate(table: GainTable, density, residual_norms) -> np.ndarray:
    lam = table.gains[table.nearest(density)]
    return lam * np.asarray(residual_norms, dtype=float)
