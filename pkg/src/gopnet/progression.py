"""Progressive block-wise growth of a heterogeneous GOP network.

Growth proceeds one block at a time. Each new block's operator set is picked
by trying every set with random uniform weights and a freshly solved output
layer; the winner is then fine-tuned by backprop while all earlier blocks stay
frozen. A layer stops widening when the relative loss improvement of a new
block falls below ``eps_block`` (that block is dropped). A finished layer is
dropped, and growth stops, when it improved the loss by less than
``eps_layer`` relative to the network without it. Finally all weights are
fine-tuned together.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LabeledDataset
from .network import (
    GopBlock, HiddenLayer, Network, NumericError, augment, block_forward, hidden_forward,
)
from .operators import OperatorSet, enumerate_operator_sets
from .solver import (
    ClassWeighting, SingularSystemError, class_weights, solve_ridge, uniform_weights,
    weighted_loss,
)
from .training import TrainConfig, train

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    """Every candidate operator set produced a non-finite loss."""


@dataclass
class ProgressionConfig:
    block_size: int = 40
    max_blocks_per_layer: int = 4
    max_layers: int = 8
    eps_block: float = 0.01
    eps_layer: float = 0.01
    lam: float = 1.0
    init_range: float = 1.0
    seed: int = 0
    class_weighted: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        for name in ("block_size", "max_blocks_per_layer", "max_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.eps_block < 0 or self.eps_layer < 0:
            raise ValueError("eps_block and eps_layer must be non-negative")
        if self.init_range <= 0:
            raise ValueError("init_range must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CandidateResult:
    opset: OperatorSet
    index: int
    weights: np.ndarray | None
    bias: np.ndarray | None
    solved_W: np.ndarray | None
    loss: float
    discarded: str | None = None  # reason, when the loss was not finite


@dataclass
class ProgressionState:
    net: Network
    layer_input: np.ndarray  # input to the layer being grown
    layer_output: np.ndarray  # outputs of the blocks already in that layer
    current_loss: float | None = None
    step: int = 0
    loss_history_blocks: list[float] = field(default_factory=list)
    loss_history_layers: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    finetune_diverged: bool = False


def candidate_rng(seed: int, step: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, growth step, operator set), so serial and
    parallel searches sample identical weights."""
    return np.random.default_rng([seed, step, index])


def evaluate_operator_set(opset: OperatorSet, h_prev, existing, Y, sample_weights, lam: float,
                          rng: np.random.Generator, block_size: int, init_range: float = 1.0,
                          index: int = -1) -> CandidateResult:
    """Score one operator set with random U(-init_range, init_range) weights.

    The output layer is solved over the whole candidate layer, i.e. the
    existing blocks' outputs followed by the new block's outputs.
    """
    weights = rng.uniform(-init_range, init_range, size=(h_prev.shape[1], block_size))
    bias = np.zeros(block_size)
    block = GopBlock(opset, weights, bias)
    try:
        with np.errstate(all="ignore"):
            t = block_forward(block, h_prev)
            if not np.all(np.isfinite(t)):
                raise FloatingPointError("non-finite block output")
            H = augment(np.hstack([existing, t]))
            W = solve_ridge(H, Y, sample_weights, lam)
            loss = weighted_loss(H, W, Y, sample_weights)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
    except (FloatingPointError, SingularSystemError, NumericError) as exc:
        return CandidateResult(opset, index, weights, bias, None, float("inf"), str(exc))
    return CandidateResult(opset, index, weights, bias, W, loss)


Evaluator = Callable[..., CandidateResult]


def search_best_opset(h_prev, existing, Y, sample_weights, config: ProgressionConfig, step: int,
                      threads: int = 1, evaluator: Evaluator | None = None):
    """Evaluate all operator sets; return ``(best, candidates)``.

    Ties on loss go to the earliest set in enumeration order.
    """
    evaluator = evaluator or evaluate_operator_set
    opsets = enumerate_operator_sets()

    def run(index):
        return evaluator(opsets[index], h_prev, existing, Y, sample_weights, config.lam,
                         candidate_rng(config.seed, step, index), config.block_size,
                         config.init_range, index=index)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            candidates = list(pool.map(run, range(len(opsets))))
    else:
        candidates = [run(i) for i in range(len(opsets))]
    best = None
    for c in candidates:
        if c.discarded is None and (best is None or c.loss < best.loss):
            best = c
    if best is None:
        raise SearchError(f"all {len(opsets)} operator sets gave non-finite losses at step {step}")
    return best, candidates


def block_converged(L_prev: float, L_cur: float, eps_block: float) -> bool:
    """True when the relative improvement ``(L_prev - L_cur) / L_prev`` is below eps."""
    if L_prev <= 0:
        return True
    return (L_prev - L_cur) / L_prev < eps_block


def layer_converged(L_without: float, L_with: float, eps_layer: float) -> bool:
    if L_without <= 0:
        return True
    return (L_without - L_with) / L_without < eps_layer


def _open_layer(state: ProgressionState) -> ProgressionState:
    net = state.net.copy()
    net.layers.append(HiddenLayer([]))
    return dataclasses.replace(
        state, net=net, layer_input=state.layer_output,
        layer_output=np.empty((state.layer_output.shape[0], 0)))


def add_block(state: ProgressionState, X, Y, sample_weights, config: ProgressionConfig,
              threads: int = 1, evaluator: Evaluator | None = None):
    """Search, append and fine-tune one block in the current layer.

    Returns ``(new_state, loss, record)``; ``state`` itself is not modified,
    so the caller can drop the block by keeping the old state.
    """
    s = np.asarray(sample_weights, dtype=float)
    h_prev, existing = state.layer_input, state.layer_output
    best, candidates = search_best_opset(h_prev, existing, Y, s, config, state.step,
                                         threads, evaluator)
    net = state.net.copy()
    net.layers[-1].blocks.append(GopBlock(best.opset, best.weights.copy(), best.bias.copy()))
    net.output_weights = best.solved_W
    result = train(net, X, Y, s, config.train, selector="new", restore_on_divergence=True,
                   seed=config.seed + state.step)
    tuned = result.net.layers[-1].blocks[-1]
    reverted = False
    try:
        t = block_forward(tuned, h_prev)
        H = augment(np.hstack([existing, t]))
        W = solve_ridge(H, Y, s, config.lam)
        loss = weighted_loss(H, W, Y, s)
    except (FloatingPointError, SingularSystemError):
        loss = float("inf")
    if not loss <= best.loss:
        # fine-tuning plus re-solve must not lose ground against the candidate
        reverted = True
        tuned = net.layers[-1].blocks[-1]
        t = block_forward(tuned, h_prev)
        W, loss = best.solved_W, best.loss
    net.layers[-1].blocks[-1] = tuned
    net.output_weights = W
    new_state = dataclasses.replace(
        state, net=net, layer_output=np.hstack([existing, t]), current_loss=loss,
        step=state.step + 1)
    record = {
        "kind": "step",
        "step": state.step,
        "layer": len(net.layers) - 1,
        "block": len(net.layers[-1].blocks) - 1,
        "candidate_losses": [c.loss if c.discarded is None else None for c in candidates],
        "chosen": best.opset.names,
        "candidate_loss": best.loss,
        "finetune_losses": result.losses,
        "finetune_reverted": reverted,
        "finetune_diverged": result.diverged,
    }
    return new_state, loss, record


def finetune_all(net: Network, X, Y, sample_weights, config: ProgressionConfig):
    """Backprop over every parameter with operator sets fixed.

    Returns ``(network, record)``; the input network is returned unchanged
    when fine-tuning cannot beat its loss.
    """
    s = np.asarray(sample_weights, dtype=float)
    record = {"kind": "finetune", "epochs": config.train.epochs}
    if config.train.epochs == 0 or not net.layers:
        return net, record
    H = augment(hidden_forward(net, X))
    before = weighted_loss(H, net.output_weights, Y, s)
    result = train(net, X, Y, s, config.train, selector="all", restore_on_divergence=True,
                   seed=config.seed)
    kept = result.best_loss <= before + 1e-9
    record.update(loss_before=before, loss_after=result.best_loss if kept else before,
                  losses=result.losses, diverged=result.diverged, kept=kept)
    return (result.net if kept else net), record


def grow(dataset: LabeledDataset, config: ProgressionConfig, *, threads: int = 1,
         weighting: ClassWeighting | None = None, evaluator: Evaluator | None = None):
    """Grow a network on ``dataset``; returns ``(network, state)``.

    ``state.log`` holds one record per growth step (all candidate losses, the
    chosen operator set, the losses compared and the decision), one per layer
    decision, and one for the final fine-tune.
    """
    X = np.asarray(dataset.X, dtype=float)
    Y = dataset.Y
    if weighting is None:
        make = class_weights if config.class_weighted else uniform_weights
        weighting = make(dataset.labels, dataset.n_classes)
    s = weighting.per_sample
    state = ProgressionState(Network(dataset.n_features, dataset.n_classes),
                             layer_input=X, layer_output=X)
    records: list[dict] = []
    block_losses: list[float] = []
    layer_losses: list[float] = []

    for li in range(config.max_layers):
        before_layer = state
        L_without = state.current_loss
        state = _open_layer(state)
        L_prev = L_without
        for _ in range(config.max_blocks_per_layer):
            proposal, L_cur, record = add_block(state, X, Y, s, config, threads, evaluator)
            if L_prev is None:
                decision = "accept"  # a network needs at least one block
            elif block_converged(L_prev, L_cur, config.eps_block):
                decision = "reject"
            else:
                decision = "accept"
            record.update(L_prev=L_prev, L_cur=L_cur, decision=decision)
            records.append(record)
            log.info("layer %d block %d %s: %s loss %.6g", li, record["block"], decision,
                     OperatorSet.from_names(**record["chosen"]), L_cur)
            if decision == "reject":
                # keep the step counter moving so later steps get fresh random streams
                state = dataclasses.replace(state, step=proposal.step)
                break
            state = proposal
            block_losses.append(L_cur)
            L_prev = L_cur

        n_blocks = len(state.net.layers[-1].blocks)
        L_with = state.current_loss if n_blocks else L_without
        if n_blocks == 0:
            discard = True
        elif L_without is None:
            discard = False  # first layer has no smaller network to compare with
        else:
            discard = layer_converged(L_without, L_with, config.eps_layer)
        records.append({"kind": "layer", "layer": li, "blocks": n_blocks,
                        "L_without": L_without, "L_with": L_with,
                        "decision": "discard" if discard else "keep"})
        if discard:
            state = dataclasses.replace(before_layer, step=state.step)
            break
        layer_losses.append(L_with)

    net, ft_record = finetune_all(state.net, X, Y, s, config)
    records.append(ft_record)
    state = dataclasses.replace(
        state, net=net, loss_history_blocks=block_losses, loss_history_layers=layer_losses,
        log=records, finetune_diverged=bool(ft_record.get("diverged", False)))
    return net, state


def _jsonable(value):
    if isinstance(value, float):
        return value if np.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    return value


def audit_lines(records: list[dict]) -> str:
    return "".join(json.dumps(_jsonable(r)) + "\n" for r in records)


def write_audit_log(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(audit_lines(records))


def read_audit_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
