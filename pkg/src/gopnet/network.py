"""Heterogeneous GOP network: hidden blocks, linear readout, backprop, model files."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import operators as ops
from .operators import OperatorSet
from .solver import weighted_mse

FORMAT_VERSION = 1

# max entries of the (rows, fan_in, width) nodal tensor held at once
_CHUNK_ENTRIES = 1 << 22


class NumericError(ArithmeticError):
    """Non-finite value met during forward/backward or a parameter update."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ModelFormatError(ValueError):
    """Malformed model file."""


class ModelVersionError(ModelFormatError):
    pass


class DimensionError(ValueError):
    pass


@dataclass
class GopBlock:
    """A group of GOP neurons sharing one operator set.

    ``weights`` has one column per neuron (fan_in x width).
    """

    opset: OperatorSet
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[1] < 1:
            raise DimensionError(f"block weights must be fan_in x width, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match width {self.weights.shape[1]}")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


@dataclass
class HiddenLayer:
    blocks: list[GopBlock] = field(default_factory=list)

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)


@dataclass
class Network:
    input_dim: int
    n_classes: int
    layers: list[HiddenLayer] = field(default_factory=list)
    output_weights: np.ndarray | None = None
    # optional input standardization stored alongside the model
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    @property
    def hidden_width(self) -> int:
        return self.layers[-1].width if self.layers else self.input_dim

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def opsets(self) -> list[list[OperatorSet]]:
        return [[b.opset for b in layer.blocks] for layer in self.layers]

    def topology(self) -> list[int]:
        """Number of blocks per hidden layer."""
        return [len(layer.blocks) for layer in self.layers]

    def check(self) -> None:
        """Validate the layer chain and output shape."""
        fan_in = self.input_dim
        for li, layer in enumerate(self.layers):
            if not layer.blocks:
                raise DimensionError(f"layer {li} has no blocks")
            for block in layer.blocks:
                if block.fan_in != fan_in:
                    raise DimensionError(
                        f"layer {li}: block fan_in {block.fan_in} != {fan_in}")
            fan_in = layer.width
        if self.output_weights is not None:
            expected = (fan_in + 1, self.n_classes)
            if self.output_weights.shape != expected:
                raise DimensionError(
                    f"output weights {self.output_weights.shape}, expected {expected}")

    def standardize(self, X: np.ndarray) -> np.ndarray:
        if self.input_mean is None:
            return X
        return (X - self.input_mean) / self.input_std


def augment(H: np.ndarray) -> np.ndarray:
    """Append the constant column that carries the output bias."""
    return np.hstack([H, np.ones((H.shape[0], 1))])


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def neuron_forward(opset: OperatorSet, x, w, b: float) -> float:
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape or x.ndim != 1 or x.size == 0:
        raise DimensionError(f"input {x.shape} and weight {w.shape} must be equal-length vectors")
    y = ops.nodal_forward(opset.nodal, x, w)
    z = ops.pool_forward(opset.pool, y) + b
    return float(ops.activate(opset.act, z))


def _chunks(n_rows: int, fan_in: int, width: int):
    step = max(1, _CHUNK_ENTRIES // max(1, fan_in * width))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _preactivation(block: GopBlock, h: np.ndarray) -> np.ndarray:
    z = np.empty((h.shape[0], block.width))
    for sl in _chunks(h.shape[0], block.fan_in, block.width):
        y = ops.nodal_forward(block.opset.nodal, h[sl, :, None], block.weights[None])
        z[sl] = ops.pool_forward(block.opset.pool, y, axis=1)
    return z + block.bias


def block_forward(block: GopBlock, h_prev: np.ndarray) -> np.ndarray:
    """Outputs of every neuron in ``block`` for each row of ``h_prev``."""
    h_prev = np.asarray(h_prev, dtype=float)
    if h_prev.ndim != 2 or h_prev.shape[1] != block.fan_in:
        raise DimensionError(f"block expects {block.fan_in} inputs, got array {h_prev.shape}")
    return ops.activate(block.opset.act, _preactivation(block, h_prev))


def layer_forward(layer: HiddenLayer, h_prev: np.ndarray) -> np.ndarray:
    return np.hstack([block_forward(b, h_prev) for b in layer.blocks])


def hidden_forward(net: Network, X: np.ndarray, upto: int | None = None) -> np.ndarray:
    """Activations after the first ``upto`` hidden layers (all by default)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionError(f"network expects {net.input_dim} features, got array {X.shape}")
    h = X
    for layer in net.layers[:upto]:
        h = layer_forward(layer, h)
    return h


def forward(net: Network, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(last hidden activations, logits)``."""
    if not net.layers or net.output_weights is None:
        raise DimensionError("network has no hidden layers or no output layer")
    hidden = hidden_forward(net, X)
    return hidden, augment(hidden) @ net.output_weights


def predict(net: Network, X: np.ndarray) -> np.ndarray:
    """Class ids by argmax of logits; ties go to the lowest index."""
    return np.argmax(forward(net, X)[1], axis=1)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def block_backward(block: GopBlock, h_prev: np.ndarray, d_out: np.ndarray,
                   need_input_grad: bool = True):
    """Backpropagate ``d_out`` (dL/d block output) through one block.

    Returns ``(d_weights, d_bias, d_h_prev)``; ``d_h_prev`` is None when not
    requested.
    """
    opset = block.opset
    z = _preactivation(block, h_prev)
    dz = d_out * ops.activate_partial(opset.act, z)
    d_w = np.zeros_like(block.weights)
    d_h = np.zeros_like(h_prev) if need_input_grad else None
    for sl in _chunks(h_prev.shape[0], block.fan_in, block.width):
        x = h_prev[sl, :, None]
        y = ops.nodal_forward(opset.nodal, x, block.weights[None])
        dy = dz[sl, None, :] * ops.pool_partials(opset.pool, y, axis=1)
        dy_dw, dy_dx = ops.nodal_partials(opset.nodal, x, block.weights[None])
        d_w += np.einsum("nkm,nkm->km", dy, dy_dw)
        if need_input_grad:
            d_h[sl] = np.einsum("nkm,nkm->nk", dy, dy_dx)
    return d_w, dz.sum(axis=0), d_h


@dataclass
class Gradients:
    loss: float
    blocks: list[list[tuple[np.ndarray, np.ndarray]]]  # per layer, per block: (d_weights, d_bias)
    output: np.ndarray


def loss_gradient(logits: np.ndarray, Y: np.ndarray, sample_weights: np.ndarray) -> np.ndarray:
    """dL/dlogits of the weighted mean squared error."""
    n = logits.shape[0]
    return (2.0 / n) * sample_weights[:, None] * (logits - Y)


def backward(net: Network, X: np.ndarray, Y: np.ndarray, sample_weights) -> Gradients:
    """Gradients of the weighted MSE w.r.t. every block and the output layer."""
    Y = np.asarray(Y, dtype=float)
    s = np.asarray(sample_weights, dtype=float)
    if Y.shape != (X.shape[0], net.n_classes) or s.shape != (X.shape[0],):
        raise DimensionError(
            f"targets {Y.shape} / weights {s.shape} inconsistent with {X.shape[0]} samples")
    inputs = [np.asarray(X, dtype=float)]
    if inputs[0].shape[1] != net.input_dim:
        raise DimensionError(f"network expects {net.input_dim} features, got {X.shape[1]}")
    for li, layer in enumerate(net.layers):
        h = layer_forward(layer, inputs[-1])
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activation in layer {li}", where=li)
        inputs.append(h)
    H = augment(inputs[-1])
    logits = H @ net.output_weights
    G = loss_gradient(logits, Y, s)
    d_out = H.T @ G
    d_h = (G @ net.output_weights.T)[:, :-1]

    block_grads: list[list[tuple[np.ndarray, np.ndarray]]] = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        h_prev = inputs[li]
        need_input = li > 0
        d_prev = np.zeros_like(h_prev) if need_input else None
        grads = []
        col = 0
        for block in layer.blocks:
            dw, db, dh = block_backward(block, h_prev, d_h[:, col:col + block.width], need_input)
            col += block.width
            grads.append((dw, db))
            if need_input:
                d_prev += dh
        for dw, db in grads:
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise NumericError(f"non-finite gradient in layer {li}", where=li)
        block_grads[li] = grads
        d_h = d_prev
    return Gradients(weighted_mse(logits, Y, s), block_grads, d_out)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _to_dict(net: Network) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "input_dim": net.input_dim,
        "n_classes": net.n_classes,
        "layers": [
            {"blocks": [
                {"opset": b.opset.names, "weights": b.weights.tolist(), "bias": b.bias.tolist()}
                for b in layer.blocks]}
            for layer in net.layers],
        "output_weights": net.output_weights.tolist(),
    }
    if net.input_mean is not None:
        doc["standardizer"] = {"mean": net.input_mean.tolist(), "std": net.input_std.tolist()}
    return doc


def dumps(net: Network) -> str:
    net.check()
    # json emits the shortest repr of each float, which round-trips exactly
    return json.dumps(_to_dict(net), indent=1) + "\n"


def save(net: Network, path) -> None:
    Path(path).write_text(dumps(net))


def _array(value, ndim, where):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: not a numeric array ({exc})") from None
    if arr.ndim != ndim:
        raise ModelFormatError(f"{where}: expected {ndim}-D array, got {arr.ndim}-D")
    return arr


def loads(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("top level: expected an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported format_version {version!r} (this build reads {FORMAT_VERSION})")
    try:
        layers = []
        for li, layer in enumerate(doc["layers"]):
            blocks = []
            for bi, b in enumerate(layer["blocks"]):
                where = f"layers[{li}].blocks[{bi}]"
                names = b["opset"]
                opset = OperatorSet.from_names(names["nodal"], names["pool"], names["act"])
                blocks.append(GopBlock(opset, _array(b["weights"], 2, where + ".weights"),
                                       _array(b["bias"], 1, where + ".bias")))
            layers.append(HiddenLayer(blocks))
        net = Network(int(doc["input_dim"]), int(doc["n_classes"]), layers,
                      _array(doc["output_weights"], 2, "output_weights"))
        if "standardizer" in doc:
            net.input_mean = _array(doc["standardizer"]["mean"], 1, "standardizer.mean")
            net.input_std = _array(doc["standardizer"]["std"], 1, "standardizer.std")
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, DimensionError) as exc:
        raise ModelFormatError(str(exc)) from None
    try:
        net.check()
    except DimensionError as exc:
        raise ModelFormatError(str(exc)) from None
    return net


def load(path) -> Network:
    return loads(Path(path).read_text())
