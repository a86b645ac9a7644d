"""Built-in verification suites run by ``gopnet verify``.

Each suite returns ``(passed, detail)``. The finite-difference checks here are
independent of the analytic derivative code they audit.
"""
from __future__ import annotations

import contextlib
import time

import numpy as np

from . import operators as ops
from .data import LabeledDataset, anchored_folds
from .network import GopBlock, HiddenLayer, Network, backward, dumps, forward
from .operators import Act, Nodal, OperatorSet, Pool, enumerate_operator_sets
from .progression import ProgressionConfig, audit_lines, grow
from .solver import class_weights, solve_ridge, weighted_mse
from .training import TrainConfig

FD_STEP = 1e-6
REL_TOL = 1e-5
ABS_TOL = 1e-7
KINK_MARGIN = 1e-4


def grad_close(analytic, numeric, rel=REL_TOL, abs_=ABS_TOL) -> np.ndarray:
    """Elementwise agreement at ``rel`` relative or ``abs_`` absolute, whichever is looser."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.abs(analytic - numeric) <= np.maximum(rel * np.abs(numeric), abs_)


# ---------------------------------------------------------------------------
# networks for gradient checks
# ---------------------------------------------------------------------------

def network_loss(net: Network, X, Y, s) -> float:
    return weighted_mse(forward(net, X)[1], Y, s)


def near_kink(net: Network, X, margin: float = KINK_MARGIN) -> bool:
    """True if any neuron sits within ``margin`` of a non-differentiable point."""
    h = X
    for layer in net.layers:
        outs = []
        for b in layer.blocks:
            wx = h[:, :, None] * b.weights[None]
            y = ops.nodal_forward(b.opset.nodal, h[:, :, None], b.weights[None])
            z = ops.pool_forward(b.opset.pool, y, axis=1) + b.bias
            if b.opset.nodal is Nodal.EXP and np.any(np.abs(np.abs(wx) - ops.EXP_CLIP) < margin):
                return True
            if b.opset.pool is Pool.MAX:
                top2 = np.sort(y, axis=1)[:, -2:, :] if y.shape[1] > 1 else None
                if top2 is not None and np.any(top2[:, 1] - top2[:, 0] < margin):
                    return True
            if b.opset.act is Act.RELU and np.any(np.abs(z) < margin):
                return True
            if b.opset.act is Act.LINCUT and np.any(np.abs(np.abs(z) - 1.0) < margin):
                return True
            outs.append(ops.activate(b.opset.act, z))
        h = np.hstack(outs)
    return False


def random_network(opsets_per_layer, input_dim, width, n_classes, rng) -> Network:
    layers = []
    fan_in = input_dim
    for opsets in opsets_per_layer:
        blocks = [GopBlock(o, rng.uniform(-1, 1, (fan_in, width)), rng.uniform(-0.5, 0.5, width))
                  for o in opsets]
        layers.append(HiddenLayer(blocks))
        fan_in = width * len(opsets)
    return Network(input_dim, n_classes, layers, rng.normal(0, 0.5, (fan_in + 1, n_classes)))


def kink_free_problem(opsets_per_layer, rng, input_dim=4, width=3, n_classes=2, n=8,
                      tries=200):
    for _ in range(tries):
        net = random_network(opsets_per_layer, input_dim, width, n_classes, rng)
        X = rng.normal(0, 1, (n, input_dim))
        if not near_kink(net, X):
            Y = np.eye(n_classes)[rng.integers(0, n_classes, n)]
            s = rng.uniform(0.5, 2.0, n)
            return net, X, Y, s
    raise RuntimeError("could not draw a kink-free network")


def fd_network_gradients(net: Network, X, Y, s, h: float = FD_STEP):
    """Central differences of the loss for every parameter, keyed like training params."""
    out = {}
    targets = []
    for li, layer in enumerate(net.layers):
        for bi, b in enumerate(layer.blocks):
            targets += [(f"layer{li}.block{bi}.weights", b.weights),
                        (f"layer{li}.block{bi}.bias", b.bias)]
    targets.append(("output_weights", net.output_weights))
    for name, arr in targets:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = network_loss(net, X, Y, s)
            arr[idx] = orig - h
            down = network_loss(net, X, Y, s)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def analytic_network_gradients(net: Network, X, Y, s):
    g = backward(net, X, Y, s)
    out = {"output_weights": g.output}
    for li, layer in enumerate(g.blocks):
        for bi, (dw, db) in enumerate(layer):
            out[f"layer{li}.block{bi}.weights"] = dw
            out[f"layer{li}.block{bi}.bias"] = db
    return out


def check_network_gradients(net, X, Y, s) -> list[str]:
    """Names of parameters whose analytic gradient disagrees with finite differences."""
    analytic = analytic_network_gradients(net, X, Y, s)
    numeric = fd_network_gradients(net, X, Y, s)
    return [k for k in numeric if not np.all(grad_close(analytic[k], numeric[k]))]


# ---------------------------------------------------------------------------
# constructed datasets
# ---------------------------------------------------------------------------

def one_block_dataset(n: int = 600, n_classes: int = 3, flip: float = 0.2, scale: float = 0.5,
                      seed: int = 0, n_days: int = 10) -> LabeledDataset:
    """Inputs are scaled one-hot codes of a latent class; labels are the latent
    class with probability ``1 - flip``.

    Inputs take only ``n_classes`` distinct values, so the best achievable
    predictor of the targets is linear in the input: one (mul, sum, lincut)
    block in its linear region plus the linear readout represents it exactly,
    and extra blocks or layers can only shave off ridge shrinkage.
    """
    rng = np.random.default_rng(seed)
    latent = np.arange(n) % n_classes
    rng.shuffle(latent)
    labels = latent.copy()
    flips = rng.random(n) < flip
    labels[flips] = (latent[flips] + rng.integers(1, n_classes, flips.sum())) % n_classes
    X = scale * np.eye(n_classes)[latent]
    day = 1 + (np.arange(n) * n_days) // n
    return LabeledDataset(X, labels, n_classes, day)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def suite_gradients(seed: int = 0):
    rng = np.random.default_rng(seed)
    bad = []
    for op in Nodal:
        x = rng.uniform(-2, 2, 200)
        w = rng.uniform(-2, 2, 200)
        dw, dx = ops.nodal_partials(op, x, w)
        fw = (ops.nodal_forward(op, x, w + FD_STEP) - ops.nodal_forward(op, x, w - FD_STEP)) / (2 * FD_STEP)
        fx = (ops.nodal_forward(op, x + FD_STEP, w) - ops.nodal_forward(op, x - FD_STEP, w)) / (2 * FD_STEP)
        if not (np.all(grad_close(dw, fw)) and np.all(grad_close(dx, fx))):
            bad.append(f"nodal {op.name.lower()}")
    for opset in enumerate_operator_sets():
        net, X, Y, s = kink_free_problem([[opset]], rng)
        failed = check_network_gradients(net, X, Y, s)
        if failed:
            bad.append(f"{opset}: {','.join(failed)}")
    if bad:
        return False, f"{len(bad)} mismatches, first: {bad[0]}"
    return True, f"{len(Nodal)} nodal operators and {ops.N_OPERATOR_SETS} operator sets agree with finite differences"


def suite_solver(seed: int = 0, n_problems: int = 50):
    rng = np.random.default_rng(seed)
    worst_rel, worst_grad = 0.0, 0.0
    for _ in range(n_problems):
        n, d, c = rng.integers(1, 51), rng.integers(1, 21), rng.integers(1, 6)
        lam = float(rng.choice([0.01, 1.0, 100.0]))
        H = rng.normal(size=(n, d))
        Y = rng.normal(size=(n, c))
        s = rng.uniform(0.1, 5.0, n)
        W = solve_ridge(H, Y, s, lam)
        S2 = np.diag(s)
        W_inv = np.linalg.inv(H.T @ S2 @ H + lam * np.eye(d)) @ H.T @ S2 @ Y
        worst_rel = max(worst_rel, np.linalg.norm(W - W_inv) / max(np.linalg.norm(W_inv), 1e-300))
        grad = 2 * H.T @ (s[:, None] * (H @ W - Y)) + 2 * lam * W
        worst_grad = max(worst_grad, np.abs(grad).max() / (1 + np.abs(Y).max()))
    ok = worst_rel < 1e-8 and worst_grad < 1e-8
    return ok, f"max relative deviation {worst_rel:.2e}, max scaled gradient {worst_grad:.2e}"


def suite_uniform_reduction(seed: int = 0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), 20)
    cw = class_weights(labels, 3)
    H = rng.normal(size=(60, 8))
    Y = np.eye(3)[labels]
    W = solve_ridge(H, Y, cw.per_sample, 1.0)
    W_plain = np.linalg.solve(H.T @ H + np.eye(8), H.T @ Y)
    ok = np.all(cw.per_sample == 1.0) and np.abs(W - W_plain).max() < 1e-12
    return ok, f"balanced weights all ones: {bool(np.all(cw.per_sample == 1.0))}"


def _tiny_config(seed: int = 0) -> ProgressionConfig:
    return ProgressionConfig(block_size=4, max_blocks_per_layer=2, max_layers=2, seed=seed,
                             train=TrainConfig(epochs=5))


def suite_determinism(seed: int = 0):
    ds = one_block_dataset(n=90, seed=seed)
    runs = []
    for threads in (1, 1, 2):
        net, state = grow(ds, _tiny_config(seed), threads=threads)
        runs.append((dumps(net), audit_lines(state.log), net.opsets()))
    same_serial = runs[0][:2] == runs[1][:2]
    same_parallel = runs[0][2] == runs[2][2]
    return same_serial and same_parallel, (
        f"serial runs identical: {same_serial}; parallel selects same operator sets: {same_parallel}")


def suite_termination(seed: int = 0):
    ds = one_block_dataset(seed=seed)
    cfg = ProgressionConfig(eps_block=0.01, eps_layer=0.01, seed=seed, train=TrainConfig(epochs=20))
    net, state = grow(ds, cfg)
    steps = [r for r in state.log if r["kind"] == "step"]
    rejected_second = any(r["layer"] == 0 and r["block"] == 1 and r["decision"] == "reject"
                          for r in steps)
    ok = net.topology() == [1] and rejected_second
    return ok, f"topology {net.topology()}, second block rejected: {rejected_second}"


def suite_folds():
    days = np.repeat(np.arange(1, 11), 5)
    folds = anchored_folds(days, 9)
    ok = len(folds) == 9 and all(
        f.train_days == tuple(range(1, k + 1)) and f.test_day == k + 1
        for k, f in enumerate(folds, 1))
    return ok, "fold K trains on days 1..K and tests on day K+1"


SUITES = {
    "gradients": suite_gradients,
    "solver_oracle": suite_solver,
    "uniform_weight_reduction": suite_uniform_reduction,
    "determinism": suite_determinism,
    "termination": suite_termination,
    "anchored_folds": suite_folds,
}


@contextlib.contextmanager
def corrupted_derivative(op: Nodal = Nodal.MUL, factor: float = 1.01):
    """Test hook: scale one nodal operator's weight partial by ``factor``."""
    original = ops._NODAL_PARTIALS[op]

    def broken(x, w):
        dw, dx = original(x, w)
        return dw * factor, dx

    ops._NODAL_PARTIALS[op] = broken
    try:
        yield
    finally:
        ops._NODAL_PARTIALS[op] = original


def run_suites(names=None, fault: str | None = None):
    """Run suites and return ``[(name, passed, detail, seconds)]``."""
    names = list(names or SUITES)
    ctx = corrupted_derivative() if fault == "derivative" else contextlib.nullcontext()
    results = []
    with ctx:
        for name in names:
            t0 = time.perf_counter()
            try:
                ok, detail = SUITES[name]()
            except Exception as exc:  # a crashing suite is a failed suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append((name, bool(ok), detail, time.perf_counter() - t0))
    return results
