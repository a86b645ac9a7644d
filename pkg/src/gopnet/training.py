"""Gradient-descent fine-tuning with step learning-rate decay and norm regularizers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .network import (
    GopBlock, Network, NumericError, augment, backward, block_backward, block_forward,
    hidden_forward, layer_forward, loss_gradient,
)
from .solver import weighted_mse

__all__ = [
    "TrainConfig", "TrainResult", "lr_at", "sgd_step", "sgd_epoch", "max_norm_project",
    "train", "weighted_mse",
]

log = logging.getLogger(__name__)

REGULARIZERS = ("weight_decay", "max_norm")
SELECTORS = ("new", "output", "all")


@dataclass
class TrainConfig:
    epochs: int = 300
    lr0: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 100
    regularizer: str = "weight_decay"
    weight_decay: float = 1e-4
    max_norm: float = 3.0
    batch_size: int | None = None  # None = full batch

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.epochs < 0 or self.lr0 <= 0 or self.lr_decay_every <= 0:
            raise ValueError("epochs must be >= 0, lr0 and lr_decay_every > 0")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError("batch_size must be positive")


def lr_at(epoch: int, config: TrainConfig) -> float:
    return config.lr0 * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def max_norm_project(w: np.ndarray, bound: float, rows: slice = slice(None)) -> np.ndarray:
    """Rescale each column of ``w[rows]`` to norm at most ``bound``."""
    w = w.copy()
    part = w[rows]
    norms = np.sqrt((part * part).sum(axis=0))
    scale = np.where(norms > bound, bound / np.where(norms > 0, norms, 1.0), 1.0)
    w[rows] = part * scale
    return w


def _max_norm_rows(name: str):
    # the bias row of the output layer is not part of any neuron's incoming weights
    if name == "output_weights":
        return slice(None, -1)
    if name.endswith(".weights"):
        return slice(None)
    return None


def sgd_step(params: dict, grads: dict, lr: float, config: TrainConfig) -> dict:
    """One plain gradient step followed by the configured regularizer."""
    out = {}
    for name, p in params.items():
        g = grads[name]
        new = p - lr * g
        if config.regularizer == "weight_decay":
            new -= lr * config.weight_decay * p
        else:
            rows = _max_norm_rows(name)
            if rows is not None:
                new = max_norm_project(new, config.max_norm, rows)
        if not np.all(np.isfinite(new)):
            raise NumericError(f"non-finite update of {name}", where=name)
        out[name] = new
    return out


GradsFn = Callable[[dict, "np.ndarray | None"], "tuple[float, dict]"]


def sgd_epoch(params: dict, grads_fn: GradsFn, config: TrainConfig, epoch: int,
              n_samples: int, rng: np.random.Generator | None = None):
    """One pass over the data. Returns ``(params, batch losses before each step)``."""
    lr = lr_at(epoch, config)
    if config.batch_size is None or config.batch_size >= n_samples:
        batches = [None]
    else:
        order = (rng or np.random.default_rng(epoch)).permutation(n_samples)
        batches = [order[i:i + config.batch_size] for i in range(0, n_samples, config.batch_size)]
    losses = []
    for idx in batches:
        loss, grads = grads_fn(params, idx)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch}", where="loss")
        losses.append(loss)
        params = sgd_step(params, grads, lr, config)
    return params, losses


# ---------------------------------------------------------------------------
# parameter selection
# ---------------------------------------------------------------------------

def _block_names(li: int, bi: int) -> tuple[str, str]:
    return f"layer{li}.block{bi}.weights", f"layer{li}.block{bi}.bias"


def network_params(net: Network, selector: str = "all") -> dict:
    if selector not in SELECTORS:
        raise ValueError(f"selector must be one of {SELECTORS}, got {selector!r}")
    params = {}
    if selector == "all":
        for li, layer in enumerate(net.layers):
            for bi, block in enumerate(layer.blocks):
                wn, bn = _block_names(li, bi)
                params[wn], params[bn] = block.weights, block.bias
    elif selector == "new":
        li, bi = len(net.layers) - 1, len(net.layers[-1].blocks) - 1
        wn, bn = _block_names(li, bi)
        block = net.layers[li].blocks[bi]
        params[wn], params[bn] = block.weights, block.bias
    params["output_weights"] = net.output_weights
    return params


def assign_params(net: Network, params: dict) -> None:
    for name, value in params.items():
        if name == "output_weights":
            net.output_weights = value
            continue
        layer, block, attr = name.split(".")
        target = net.layers[int(layer[5:])].blocks[int(block[5:])]
        setattr(target, attr, value)


def _grads_fn(net: Network, X, Y, s, selector: str) -> GradsFn:
    """Build a closure computing (loss, grads) for the selected parameters.

    Frozen parts of the network are evaluated once up front.
    """
    if selector == "all":
        work = net.copy()

        def fn(params, idx):
            assign_params(work, params)
            rows = slice(None) if idx is None else idx
            g = backward(work, X[rows], Y[rows], s[rows])
            grads = {"output_weights": g.output}
            for li, layer_grads in enumerate(g.blocks):
                for bi, (dw, db) in enumerate(layer_grads):
                    wn, bn = _block_names(li, bi)
                    grads[wn], grads[bn] = dw, db
            return g.loss, grads
        return fn

    if selector == "output":
        H_all = augment(hidden_forward(net, X))

        def fn(params, idx):
            rows = slice(None) if idx is None else idx
            H = H_all[rows]
            logits = H @ params["output_weights"]
            G = loss_gradient(logits, Y[rows], s[rows])
            return weighted_mse(logits, Y[rows], s[rows]), {"output_weights": H.T @ G}
        return fn

    li, bi = len(net.layers) - 1, len(net.layers[-1].blocks) - 1
    wn, bn = _block_names(li, bi)
    last = net.layers[li]
    h_in = hidden_forward(net, X, upto=li)
    frozen = [b for j, b in enumerate(last.blocks) if j != bi]
    fixed = layer_forward(type(last)(frozen), h_in) if frozen else np.empty((X.shape[0], 0))
    opset = last.blocks[bi].opset
    width_fixed = fixed.shape[1]

    def fn(params, idx):
        rows = slice(None) if idx is None else idx
        block = GopBlock(opset, params[wn], params[bn])
        h = h_in[rows]
        H = augment(np.hstack([fixed[rows], block_forward(block, h)]))
        W = params["output_weights"]
        logits = H @ W
        G = loss_gradient(logits, Y[rows], s[rows])
        d_t = (G @ W.T)[:, width_fixed:width_fixed + block.width]
        dw, db, _ = block_backward(block, h, d_t, need_input_grad=False)
        return weighted_mse(logits, Y[rows], s[rows]), {
            wn: dw, bn: db, "output_weights": H.T @ G}
    return fn


@dataclass
class TrainResult:
    net: Network
    losses: list[float] = field(default_factory=list)  # training loss at the start of each epoch, then final
    best_loss: float = float("inf")
    diverged: bool = False


def train(net: Network, X, Y, sample_weights, config: TrainConfig, selector: str = "new",
          restore_on_divergence: bool = False, seed: int = 0) -> TrainResult:
    """Fine-tune the selected parameters and return the best-loss checkpoint.

    ``selector`` is ``"new"`` (last block of the last layer plus the output
    layer), ``"output"`` or ``"all"``. Unselected parameters are left
    untouched; the input network is never mutated.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s = np.asarray(sample_weights, dtype=float)
    net = net.copy()
    params = {k: v.copy() for k, v in network_params(net, selector).items()}
    result = TrainResult(net)
    if config.epochs == 0:
        return result
    grads_fn = _grads_fn(net, X, Y, s, selector)
    full_batch = config.batch_size is None or config.batch_size >= X.shape[0]
    rng = np.random.default_rng(seed)
    best = (float("inf"), params)

    def full_loss(p):
        return grads_fn(p, None)[0]

    try:
        for epoch in range(config.epochs):
            current = params
            params, batch_losses = sgd_epoch(params, grads_fn, config, epoch, X.shape[0], rng)
            loss = batch_losses[0] if full_batch else full_loss(current)
            result.losses.append(loss)
            if loss < best[0]:
                best = (loss, current)
        loss = full_loss(params)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss after final epoch", where="loss")
        result.losses.append(loss)
        if loss < best[0]:
            best = (loss, params)
    except NumericError as exc:
        if not restore_on_divergence:
            raise
        log.warning("training diverged (%s); restoring best checkpoint", exc)
        result.diverged = True
    result.best_loss = best[0]
    assign_params(net, best[1])
    return result
