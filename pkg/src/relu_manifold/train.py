"""Backpropagation, Adam / SGD-momentum and the training loops."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .curves import RegressionTask, sample_dataset
from .network import Network, forward

DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.01
    momentum: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 0  # 0 means full batch
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 0 or self.epochs < 0:
            raise ValueError("batch_size and epochs must be non-negative")


def sgd_classifier_defaults(**overrides) -> OptimizerConfig:
    return OptimizerConfig(**{"kind": "sgd_momentum", "learning_rate": 0.01, "momentum": 0.5,
                              "batch_size": 32, "epochs": 500, **overrides})


@dataclass
class TrainLog:
    """Per-epoch metrics; entry 0 is the untrained network."""

    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    hooks: dict[int, object] = field(default_factory=dict)

    def to_csv(self) -> str:
        cols = ["epoch", "train_loss", "test_loss"] + (["train_acc"] if self.train_acc else [])
        lines = [",".join(cols)]
        for i, e in enumerate(self.epochs):
            row = [str(e), repr(self.train_loss[i]), repr(self.test_loss[i])]
            if self.train_acc:
                row.append(repr(self.train_acc[i]))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# losses and gradients


def _loss_and_dout(out: np.ndarray, y: np.ndarray, loss_kind: str) -> tuple[float, np.ndarray]:
    n = out.shape[0]
    y = y.reshape(out.shape)
    if loss_kind == "mse":
        r = out - y
        return float(np.mean(r * r)), 2.0 * r / r.size
    if loss_kind == "bce_logits":
        # softplus(s) - y s, written to avoid overflow
        loss = np.maximum(out, 0.0) - out * y + np.log1p(np.exp(-np.abs(out)))
        sig = 0.5 * (1.0 + np.tanh(0.5 * out))
        return float(np.mean(loss)), (sig - y) / out.size
    raise ValueError(f"unknown loss {loss_kind!r}")


def loss(net: Network, X, y, loss_kind: str = "mse") -> float:
    return _loss_and_dout(forward(net, X), np.asarray(y, dtype=np.float64), loss_kind)[0]


def grad_params(net: Network, X, y, loss_kind: str = "mse"):
    """Mean batch loss and its gradients.

    Returns ``(loss, grads)`` where ``grads`` holds ``dW`` for every layer,
    then ``db`` for every hidden layer, then ``db_out`` if the network has an
    output bias: the same order as :func:`parameters`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    acts = [X]
    masks = []
    h = X
    for W, b in zip(net.weights[:-1], net.biases):
        s = h @ W.T - b
        m = s > 0.0  # sigma'(0) = 0
        masks.append(m)
        h = np.where(m, s, 0.0)
        acts.append(h)
    out = h @ net.weights[-1].T
    if net.output_bias is not None:
        out = out + net.output_bias
    value, delta = _loss_and_dout(out, y, loss_kind)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")

    dW = [None] * len(net.weights)
    db = [None] * len(net.biases)
    db_out = delta.sum(axis=0) if net.output_bias is not None else None
    dW[-1] = delta.T @ acts[-1]
    d = delta
    for l in range(len(net.biases) - 1, -1, -1):
        d = (d @ net.weights[l + 1]) * masks[l]
        dW[l] = d.T @ acts[l]
        db[l] = -d.sum(axis=0)  # threshold enters as -b
    grads = dW + db + ([db_out] if db_out is not None else [])
    return value, grads


def parameters(net: Network) -> list[np.ndarray]:
    return list(net.weights) + list(net.biases) + ([net.output_bias] if net.output_bias is not None else [])


def _rebuild(net: Network, params: list[np.ndarray]) -> Network:
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingDiverged("parameters became non-finite")
    L = len(net.weights)
    H = len(net.biases)
    out_b = params[L + H] if net.output_bias is not None else None
    return net.replace(weights=tuple(p.copy() for p in params[:L]),
                       biases=tuple(p.copy() for p in params[L:L + H]),
                       output_bias=None if out_b is None else out_b.copy())


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, params, lr=0.01, momentum=0.5):
        self.lr, self.momentum = lr, momentum
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, b in zip(params, grads, self.buf):
            b *= self.momentum
            b += g
            p -= self.lr * b


def make_optimizer(opt: OptimizerConfig, params):
    if opt.kind == "adam":
        return Adam(params, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon)
    return SGDMomentum(params, opt.learning_rate, opt.momentum)


EpochHook = Callable[[int, Network], object]


def fit(net: Network, X, y, opt: OptimizerConfig, loss_kind: str = "mse", X_test=None, y_test=None,
        hook: EpochHook | None = None, hook_every: int = 1) -> tuple[Network, TrainLog]:
    """Generic minibatch training loop.

    Epoch 0 records the initial network.  ``hook(epoch, net)`` runs at epoch 0,
    every ``hook_every`` epochs and at the final epoch; its return values are
    kept in ``TrainLog.hooks``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    batch = n if opt.batch_size in (0, None) or opt.batch_size >= n else opt.batch_size
    rng = np.random.default_rng(opt.seed)
    params = [p.copy() for p in parameters(net)]
    optimizer = make_optimizer(opt, params)
    log = TrainLog()
    start = time.perf_counter()

    def record(epoch: int, current: Network):
        out = forward(current, X)
        tr = _loss_and_dout(out, y, loss_kind)[0]
        if not np.isfinite(tr) or tr > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"epoch {epoch}: train loss {tr:.3g} exceeds {DIVERGENCE_LIMIT:g}")
        log.epochs.append(epoch)
        log.train_loss.append(tr)
        log.test_loss.append(loss(current, X_test, y_test, loss_kind) if X_test is not None else float("nan"))
        if loss_kind == "bce_logits":
            log.train_acc.append(float(np.mean((out.reshape(-1) > 0) == (y.reshape(-1) > 0.5))))
        log.wall_time.append(time.perf_counter() - start)
        if hook is not None and (epoch % hook_every == 0 or epoch == opt.epochs):
            log.hooks[epoch] = hook(epoch, current)

    current = net
    record(0, current)
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            _, grads = grad_params(current, X[idx], y[idx], loss_kind)
            optimizer.step(params, grads)
            current = _rebuild(net, params)
        record(epoch, current)
    return current, log


def train_regression(net: Network, task: RegressionTask, n_points: int, opt: OptimizerConfig,
                     data_seed: int | None = None, test_seed: int | None = None,
                     hook: EpochHook | None = None, hook_every: int = 10) -> tuple[Network, TrainLog]:
    """Fit ``task`` by MSE on ``n_points`` samples; a fresh test set of n_points/5 is held out."""
    data_seed = opt.seed if data_seed is None else data_seed
    test_seed = data_seed + 1 if test_seed is None else test_seed
    X, y = sample_dataset(task, n_points, data_seed)
    Xt, yt = sample_dataset(task, max(1, n_points // 5), test_seed)
    return fit(net, X, y, opt, "mse", Xt, yt, hook, hook_every)


def random_labels(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=n).astype(np.float64)


def train_classifier_random_labels(net: Network, inputs, seed: int, opt: OptimizerConfig | None = None,
                                   hook: EpochHook | None = None, hook_every: int = 10) -> tuple[Network, TrainLog]:
    """Memorize i.i.d. uniform {0, 1} labels with binary cross-entropy on logits."""
    if net.n_out != 1:
        raise ValueError("classifier must have a single logit output")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("no inputs")
    opt = opt or sgd_classifier_defaults()
    labels = random_labels(X.shape[0], seed)
    return fit(net, X, labels, opt, "bce_logits", hook=hook, hook_every=hook_every)
