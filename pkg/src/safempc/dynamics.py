"""Bootstrap ensemble of feedforward regressors for one-step dynamics.

Each member is a ReLU MLP trained to predict the normalized state delta
``next_observation - observation`` from the normalized ``(observation,
action)`` pair. The ensemble's per-dimension disagreement (population
variance of member predictions) serves as an epistemic-uncertainty
estimate. Backpropagation and the Adam optimizer are implemented directly
so that analytic gradients can be verified against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Transition, stack_transitions
from .errors import DivergenceError, InsufficientDataError, ShapeError

NORM_STD_FLOOR = 1e-6

DEFAULT_HIDDEN = (1024, 1024, 1024)


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    epochs: int = 70
    subsample_fraction: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise ValueError("subsample_fraction must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class Normalizer:
    """Per-dimension affine normalizer with a floored standard deviation."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)

    def fit(self, x: np.ndarray):
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), NORM_STD_FLOOR)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


class MlpRegressor:
    """Fully-connected ReLU network with a linear output head.

    Parameters are float64 numpy arrays; ``loss_and_grads`` returns the MSE
    loss together with its analytic parameter gradients.
    """

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.initialize(rng)

    def initialize(self, rng: np.random.Generator):
        """Kaiming-style scaled-uniform init: U(+-sqrt(6/fan_in)), zero biases."""
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = math.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def _forward_cached(self, x: np.ndarray):
        activations = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            activations.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, activations

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        err = self.forward(x) - target
        return float(np.mean(err * err))

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray):
        """MSE loss (mean over all elements) and gradients w.r.t. every parameter."""
        out, activations = self._forward_cached(x)
        err = out - target
        loss = float(np.mean(err * err))
        grad = (2.0 / err.size) * err
        grads_w = [np.empty(0)] * self.n_layers
        grads_b = [np.empty(0)] * self.n_layers
        for layer in range(self.n_layers - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ grad
            grads_b[layer] = grad.sum(axis=0)
            if layer > 0:
                grad = (grad @ self.weights[layer].T) * (activations[layer] > 0)
        return loss, (grads_w, grads_b)

    # flat-parameter views used by the finite-difference check and checkpoints

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat_params(self, flat: np.ndarray):
        pos = 0
        for arr in self.weights + self.biases:
            arr.flat[:] = flat[pos: pos + arr.size]
            pos += arr.size
        if pos != flat.size:
            raise ShapeError("flat parameter vector has wrong length")


class Adam:
    """Adam with bias correction, operating on a regressor's parameter arrays."""

    def __init__(self, model: MlpRegressor, cfg: TrainConfig):
        self.model = model
        self.lr = cfg.learning_rate
        self.beta1 = cfg.adam_beta1
        self.beta2 = cfg.adam_beta2
        self.eps = cfg.adam_eps
        params = model.weights + model.biases
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        grads_w, grads_b = grads
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        params = self.model.weights + self.model.biases
        for i, (p, g) in enumerate(zip(params, grads_w + grads_b)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)


class EnsembleDynamicsModel:
    """B independently trained regressors plus shared normalization statistics."""

    def __init__(self, obs_dim: int, act_dim: int, n_members: int = 4,
                 hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0):
        if n_members < 1:
            raise ValueError("n_members must be >= 1")
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(int(h) for h in hidden)
        layer_sizes = (self.obs_dim + self.act_dim, *self.hidden, self.obs_dim)
        self.members = [
            MlpRegressor(layer_sizes, np.random.default_rng([seed, b]))
            for b in range(n_members)
        ]
        self.input_norm = Normalizer(self.obs_dim + self.act_dim)
        self.delta_norm = Normalizer(self.obs_dim)
        self.subsample_indices: list[np.ndarray] = []
        self.train_losses: np.ndarray | None = None  # (B, epochs) epoch-mean losses
        self._stacked = None
        self._workspaces: dict = {}

    @property
    def n_members(self) -> int:
        return len(self.members)

    # -- prediction ----------------------------------------------------------

    def _check_shapes(self, obs: np.ndarray, act: np.ndarray):
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"observation dim {obs.shape[-1]} != {self.obs_dim}")
        if act.shape[-1] != self.act_dim:
            raise ShapeError(f"action dim {act.shape[-1]} != {self.act_dim}")

    def predict_member(self, b: int, obs, act) -> np.ndarray:
        """Next observation predicted by member ``b``: obs plus denormalized delta."""
        if not 0 <= b < self.n_members:
            raise IndexError(f"member index {b} out of range [0, {self.n_members})")
        obs = np.asarray(obs, dtype=np.float64)
        act = np.asarray(act, dtype=np.float64)
        self._check_shapes(obs, act)
        squeeze = obs.ndim == 1
        obs2 = np.atleast_2d(obs)
        act2 = np.broadcast_to(np.atleast_2d(act), (obs2.shape[0], self.act_dim))
        x = self.input_norm.normalize(np.concatenate([obs2, act2], axis=1))
        delta = self.delta_norm.denormalize(self.members[b].forward(x))
        nxt = obs2 + delta
        return nxt[0] if squeeze else nxt

    def _refresh_stacked(self):
        """Stack member weights, folding input/output normalization into the
        first and last layers so the hot path is plain matmuls."""
        ws = [np.stack([m.weights[i] for m in self.members]) for i in range(self.members[0].n_layers)]
        bs = [np.stack([m.biases[i] for m in self.members])[:, None, :] for i in range(self.members[0].n_layers)]
        inv_std = 1.0 / self.input_norm.std
        ws[0] = ws[0] * inv_std[None, :, None]
        bs[0] = bs[0] - (self.input_norm.mean @ ws[0])[:, None, :]
        ws[-1] = ws[-1] * self.delta_norm.std[None, None, :]
        bs[-1] = bs[-1] * self.delta_norm.std[None, None, :] + self.delta_norm.mean[None, None, :]
        self._stacked = (ws, bs)

    def _workspace(self, b_members: int, n: int) -> list[np.ndarray]:
        key = (b_members, n)
        if self._workspaces.get("key") != key:
            sizes = (self.obs_dim + self.act_dim, *self.hidden, self.obs_dim)
            self._workspaces = {
                "key": key,
                "bufs": [np.empty((b_members, n, s)) for s in sizes],
            }
        return self._workspaces["bufs"]

    def predict_all_members(self, obs_stack: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Advance per-member particle states one step.

        obs_stack: (B, N, obs_dim) current state of each member's particles;
        actions: (N, act_dim) shared actions. Returns (B, N, obs_dim).
        """
        if self._stacked is None:
            self._refresh_stacked()
        ws, bs = self._stacked
        b_members, n = obs_stack.shape[0], obs_stack.shape[1]
        bufs = self._workspace(b_members, n)
        x = bufs[0]
        x[:, :, : self.obs_dim] = obs_stack
        x[:, :, self.obs_dim:] = actions
        h = x
        for w, b, buf in zip(ws[:-1], bs[:-1], bufs[1:-1]):
            np.matmul(h, w, out=buf)
            buf += b
            np.maximum(buf, 0.0, out=buf)
            h = buf
        out = np.matmul(h, ws[-1], out=bufs[-1])
        out += bs[-1]
        return obs_stack + out

    def predict_distribution(self, obs, act):
        """Ensemble mean and per-dimension population variance of member predictions."""
        preds = np.stack([self.predict_member(b, obs, act) for b in range(self.n_members)])
        mean = preds.mean(axis=0)
        dev = preds - mean
        variance = np.mean(dev * dev, axis=0)
        return mean, variance

    # -- checkpointing ---------------------------------------------------------

    def save(self, path: str):
        meta = {
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "hidden": list(self.hidden),
            "n_members": self.n_members,
        }
        arrays = {
            "meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
            "in_mean": self.input_norm.mean,
            "in_std": self.input_norm.std,
            "d_mean": self.delta_norm.mean,
            "d_std": self.delta_norm.std,
        }
        for b, member in enumerate(self.members):
            for i, (w, bias) in enumerate(zip(member.weights, member.biases)):
                arrays[f"m{b}_w{i}"] = w
                arrays[f"m{b}_b{i}"] = bias
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str) -> "EnsembleDynamicsModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            model = cls(meta["obs_dim"], meta["act_dim"], meta["n_members"], tuple(meta["hidden"]))
            model.input_norm.mean = data["in_mean"]
            model.input_norm.std = data["in_std"]
            model.delta_norm.mean = data["d_mean"]
            model.delta_norm.std = data["d_std"]
            for b, member in enumerate(model.members):
                for i in range(member.n_layers):
                    member.weights[i] = data[f"m{b}_w{i}"]
                    member.biases[i] = data[f"m{b}_b{i}"]
        model._refresh_stacked()
        return model


def _train_member(member: MlpRegressor, x: np.ndarray, y: np.ndarray,
                  cfg: TrainConfig, rng: np.random.Generator, member_index: int) -> list[float]:
    opt = Adam(member, cfg)
    n = len(x)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start: start + cfg.batch_size]
            loss, grads = member.loss_and_grads(x[idx], y[idx])
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, member {member_index}"
                )
            opt.step(grads)
            total += loss * len(idx)
        epoch_losses.append(total / n)
    return epoch_losses


def fit_ensemble(model: EnsembleDynamicsModel, transitions: Sequence[Transition],
                 cfg: TrainConfig, seed: int) -> EnsembleDynamicsModel:
    """Refit normalizers on the full dataset, then train each member on its own
    seeded uniform subsample of ``ceil(subsample_fraction * n)`` transitions.

    Transitions with the reset flag set are excluded. Each member is
    re-initialized from a seed derived from (seed, member index), so a fit is
    fully reproducible and independent of any previous training state.
    """
    obs, act, nxt = stack_transitions(transitions, exclude_resets=True)
    n = len(obs)
    if n < cfg.batch_size:
        raise InsufficientDataError(
            f"{n} usable transitions < one mini-batch of {cfg.batch_size}"
        )
    delta = nxt - obs
    model.input_norm.fit(np.concatenate([obs, act], axis=1))
    model.delta_norm.fit(delta)
    x_all = model.input_norm.normalize(np.concatenate([obs, act], axis=1))
    y_all = model.delta_norm.normalize(delta)

    n_sub = math.ceil(cfg.subsample_fraction * n)
    model.subsample_indices = []
    losses = []
    for b, member in enumerate(model.members):
        rng = np.random.default_rng([seed, b])
        member.initialize(rng)
        idx = rng.choice(n, size=n_sub, replace=False)
        model.subsample_indices.append(np.sort(idx))
        losses.append(_train_member(member, x_all[idx], y_all[idx], cfg, rng, b))
    model.train_losses = np.array(losses)
    model._refresh_stacked()
    return model


def gradient_check(regressor: MlpRegressor, sample, n_params: int = 100,
                   h: float = 1e-5, seed: int = 0) -> float:
    """Compare analytic MSE gradients against central finite differences.

    Checks a seeded random subset of ``min(n_params, P)`` parameters and
    returns the maximum relative error.
    """
    x, target = sample
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t2 = np.atleast_2d(np.asarray(target, dtype=np.float64))
    _, (grads_w, grads_b) = regressor.loss_and_grads(x2, t2)
    analytic = np.concatenate([g.ravel() for g in grads_w + grads_b])
    params = regressor.weights + regressor.biases
    offsets = np.cumsum([0] + [p.size for p in params])
    total = offsets[-1]
    k = min(n_params, total)
    picks = np.random.default_rng(seed).choice(total, size=k, replace=False)
    max_rel = 0.0
    for i in picks:
        j = int(np.searchsorted(offsets, i, side="right")) - 1
        local = i - offsets[j]
        saved = params[j].flat[local]
        params[j].flat[local] = saved + h
        loss_plus = regressor.loss(x2, t2)
        params[j].flat[local] = saved - h
        loss_minus = regressor.loss(x2, t2)
        params[j].flat[local] = saved
        fd = (loss_plus - loss_minus) / (2.0 * h)
        rel = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel
