"""Binary cross-entropy, Adam and the mini-batch training loop."""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, NumericError
from .layers import Tape, backward, forward, predict
from .tensor_core import Rng

log = logging.getLogger(__name__)

EPSILON = 1e-7


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    prune_fraction: Optional[float] = None
    prune_after_epoch: int = 1
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.prune_fraction is not None and not 0 <= self.prune_fraction < 1:
            raise ValueError("prune fraction must lie in [0, 1)")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    test_auroc: float
    seconds: float = 0.0


def bce_loss(pred, label):
    """Mean binary cross-entropy and its gradient wrt ``pred``.

    Predictions are clamped to ``[EPSILON, 1 - EPSILON]`` and the gradient is
    evaluated at the clamped value (no zeroing outside the clamp range).
    """
    pred = np.asarray(pred)
    label = np.asarray(label, dtype=np.float64).reshape(pred.shape)
    if not np.all((label == 0) | (label == 1)):
        raise DataError("labels must be 0 or 1")
    # float32 cannot hold 1 - EPSILON; clamp and reduce in double precision
    p = np.clip(pred.astype(np.float64), EPSILON, 1 - EPSILON)
    loss = -np.mean(label * np.log(p) + (1 - label) * np.log(1 - p))
    grad = (-(label / p) + (1 - label) / (1 - p)) / pred.shape[0]
    return float(loss), grad.astype(pred.dtype)


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, config):
    """Apply one Adam update in place; returns ``(params, state)``.

    ``params`` and ``grads`` are lists of per-layer dicts as produced by
    :class:`~nncondense.layers.Model` and :func:`~nncondense.layers.backward`.
    Moments are created as zeros on the first call.
    """
    if not state.m:
        state.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        state.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        for name, value in g.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite gradient in {i}.{name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for name, grad in g.items():
            m[name] = b1 * m[name] + (1 - b1) * grad
            v[name] = b2 * v[name] + (1 - b2) * grad * grad
            step = config.learning_rate * (m[name] / c1) / (np.sqrt(v[name] / c2) + config.epsilon)
            p[name] -= step.astype(p[name].dtype)
    return params, state


def _check_dataset(model, data, name):
    x, y = data
    if len(x) == 0:
        raise DataError(f"{name} set is empty")
    if len(x) != len(y):
        raise DataError(f"{name} set: {len(x)} inputs but {len(y)} labels")
    if x.shape[-1] != model.spec.input_dim:
        raise DataError(f"{name} set has {x.shape[-1]} features, model expects {model.spec.input_dim}")


def evaluate_auroc(model, data, batch_size=512):
    from .evaluation import auroc

    x, y = data
    y = np.asarray(y).ravel()
    if y.min() == y.max():
        return float("nan")
    return auroc(predict(model, x, batch_size), y)


def train(model, train_set, test_set, config=None, on_epoch=None):
    """Train ``model`` (a copy is made) and return ``(model, logs)``.

    ``train_set`` and ``test_set`` are ``(inputs, labels)`` pairs; the test
    set only feeds the per-epoch AUROC.  When ``config.prune_fraction`` is
    set the model is channel-pruned after epoch ``config.prune_after_epoch``
    and training continues on the smaller model with fresh optimizer
    moments.  ``on_epoch(log, model)`` is called after every epoch.
    """
    from .condensation import prune_model

    config = config or TrainConfig()
    _check_dataset(model, train_set, "train")
    if test_set is not None:
        _check_dataset(model, test_set, "test")
    model = model.copy()
    x, y = train_set
    y = np.asarray(y, dtype=model.dtype).reshape(-1, 1)
    root = Rng(config.seed)
    shuffle_rng = root.stream("shuffle")
    dropout_rng = root.stream("dropout")
    state = AdamState()
    logs = []
    good = model.copy()
    n = len(x)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            tape = Tape()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    pred = forward(model, x[idx], training=True, rng=dropout_rng, tape=tape)
                    loss, dpred = bce_loss(pred, y[idx])
                if not np.isfinite(loss):
                    raise NumericError("loss became non-finite")
                grads = backward(model, tape, dpred)
                adam_step(model.params, grads, state, config)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}", checkpoint=good) from exc
            total += loss * len(idx)
        score = float("nan") if test_set is None else evaluate_auroc(model, test_set, config.eval_batch_size)
        entry = EpochLog(epoch, total / n, score, time.perf_counter() - start)
        logs.append(entry)
        log.info("epoch %d loss %.4f test auroc %.4f (%.1fs)", epoch, entry.loss, score, entry.seconds)
        if config.prune_fraction is not None and epoch == config.prune_after_epoch:
            model, report = prune_model(model, config.prune_fraction)
            state = AdamState()
            log.info("pruned to %d parameters", report.params_after)
        good = model.copy()
        if on_epoch is not None:
            on_epoch(entry, model)
    return model, logs
