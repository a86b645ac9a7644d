"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import time

import numpy as np
import pytest

from gopnet import network
from gopnet.data import (
    LabeledDataset, anchored_folds, load_dataset, save_dataset, synth_imbalanced,
)
from gopnet.metrics import score
from gopnet.network import dumps, forward, predict
from gopnet.operators import N_OPERATOR_SETS, enumerate_operator_sets
from gopnet.progression import CandidateResult, ProgressionConfig, audit_lines, grow, search_best_opset
from gopnet.solver import (
    RidgeProblem, class_weights, solve_output_weights, solve_ridge, uniform_weights,
)
from gopnet.training import TrainConfig
from gopnet.verify import check_network_gradients, kink_free_problem, one_block_dataset


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, seconds=None, limit=None):
        timing = "" if seconds is None else f" [{seconds:.1f}s, limit {limit}s]"
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if ok else 'FAIL'} {detail}{timing}")
        assert ok, detail
        if limit is not None:
            assert seconds < limit, f"took {seconds:.1f}s, limit {limit}s"
    return emit


def test_criterion_01_gradient_fidelity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for opset in enumerate_operator_sets():
        net, X, Y, s = kink_free_problem([[opset]], rng, input_dim=4, width=3, n_classes=2, n=8)
        bad = check_network_gradients(net, X, Y, s)
        if bad:
            failures.append(f"{opset}: {bad}")
    secs = time.perf_counter() - t0
    report(1, not failures, f"{N_OPERATOR_SETS - len(failures)}/{N_OPERATOR_SETS} operator sets "
           f"match central differences" + (f"; first failure {failures[0]}" if failures else ""),
           secs, 30)


def test_criterion_02_solver_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_rel = worst_grad = 0.0
    for _ in range(200):
        n, d, c = rng.integers(1, 51), rng.integers(1, 21), rng.integers(1, 6)
        lam = float(rng.choice([0.01, 1.0, 100.0]))
        H, Y = rng.normal(size=(n, d)), rng.normal(size=(n, c))
        s = rng.uniform(0.1, 5.0, n)
        W = solve_output_weights(RidgeProblem(H, Y, lam, s))
        S = np.diag(s)
        ref = np.linalg.inv(H.T @ S @ H + lam * np.eye(d)) @ H.T @ S @ Y
        worst_rel = max(worst_rel, np.linalg.norm(W - ref) / np.linalg.norm(ref))
        grad = 2 * H.T @ (s[:, None] * (H @ W - Y)) + 2 * lam * W
        worst_grad = max(worst_grad, np.abs(grad).max() / (1 + np.abs(Y).max()))
    secs = time.perf_counter() - t0
    report(2, worst_rel < 1e-8 and worst_grad < 1e-8,
           f"max relative deviation {worst_rel:.1e}, max scaled stationarity residual {worst_grad:.1e}",
           secs, 10)


def test_criterion_03_uniform_weight_reduction(report):
    ds = synth_imbalanced([50, 50, 50], 4, 1.0, seed=3)
    cw = class_weights(ds.labels, 3)
    rng = np.random.default_rng(3)
    H = np.hstack([np.tanh(ds.X @ rng.normal(size=(4, 10))), np.ones((150, 1))])
    W = solve_output_weights(RidgeProblem(H, ds.Y, 1.0, cw.per_sample))
    plain = np.linalg.solve(H.T @ H + np.eye(11), H.T @ ds.Y)
    dev = np.abs(W - plain).max()
    all_ones = bool(np.all(cw.per_sample == 1.0) and np.all(cw.per_class == 1.0))
    uniform = uniform_weights(ds.labels, 3).per_sample
    same_as_uniform = np.abs(solve_ridge(H, ds.Y, uniform, 1.0) - W).max()
    report(3, all_ones and dev < 1e-12 and same_as_uniform < 1e-12,
           f"balanced weights all ones: {all_ones}; max deviation from unweighted ridge {dev:.1e}")


def test_criterion_04_termination(report):
    t0 = time.perf_counter()
    ds = one_block_dataset(seed=0)
    cfg = ProgressionConfig(eps_block=0.01, eps_layer=0.01, seed=0)
    assert (cfg.max_blocks_per_layer, cfg.max_layers) == (4, 8)
    net, state = grow(ds, cfg)
    steps = [r for r in state.log if r["kind"] == "step"]
    second = next((r for r in steps if r["layer"] == 0 and r["block"] == 1), None)
    rejected = (second is not None and second["decision"] == "reject"
                and (second["L_prev"] - second["L_cur"]) / second["L_prev"] < 0.01)
    secs = time.perf_counter() - t0
    report(4, net.topology() == [1] and rejected,
           f"topology {net.topology()}; block 2 rejected on relative improvement: {rejected}",
           secs, 60)


def test_criterion_05_exhaustive_search(report):
    ds = synth_imbalanced([40, 20, 20], 3, 2.0, seed=5)
    cfg = ProgressionConfig(block_size=4, max_blocks_per_layer=2, max_layers=2, seed=5,
                            train=TrainConfig(epochs=5))
    _, state = grow(ds, cfg)
    steps = [r for r in state.log if r["kind"] == "step"]
    all_72 = all(len(r["candidate_losses"]) == N_OPERATOR_SETS for r in steps)
    minimal = all(r["candidate_loss"] == min(v for v in r["candidate_losses"] if v is not None)
                  for r in steps)

    losses = np.full(N_OPERATOR_SETS, 2.0)
    losses[[11, 29, 50]] = 1.0

    def tied(opset, h_prev, existing, Y, s, lam, rng, block_size, init_range, index):
        W = np.zeros((existing.shape[1] + block_size + 1, Y.shape[1]))
        return CandidateResult(opset, index, rng.uniform(-1, 1, (h_prev.shape[1], block_size)),
                               np.zeros(block_size), W, float(losses[index]))

    best, cands = search_best_opset(ds.X, np.empty((ds.n_samples, 0)), ds.Y,
                                    np.ones(ds.n_samples), cfg, 0, evaluator=tied)
    tie_ok = best.index == 11 and len(cands) == N_OPERATOR_SETS
    report(5, all_72 and minimal and tie_ok,
           f"{len(steps)} steps each log 72 candidates: {all_72}; argmin chosen: {minimal}; "
           f"tie broken to earliest set: {tie_ok}")


IMBALANCE_THRESHOLD = 5.0


def test_criterion_06_imbalance_benefit(report):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(5):
        train_ds = synth_imbalanced([900, 50, 50], 5, 1.0, seed=seed)
        test_ds = synth_imbalanced([9000, 500, 500], 5, 1.0, seed=1000 + seed)
        f1 = []
        for weighted in (True, False):
            cfg = ProgressionConfig(block_size=8, max_blocks_per_layer=2, max_layers=2, seed=seed,
                                    class_weighted=weighted, train=TrainConfig(epochs=30))
            net, _ = grow(train_ds, cfg)
            f1.append(score(test_ds.labels, predict(net, test_ds.X), 3).f1)
        gaps.append(f1[0] - f1[1])
    mean_gap = float(np.mean(gaps))
    secs = time.perf_counter() - t0
    report(6, mean_gap >= IMBALANCE_THRESHOLD,
           f"macro-F1 gap weighted minus unweighted per seed {np.round(gaps, 2).tolist()}, "
           f"mean {mean_gap:.2f} (threshold {IMBALANCE_THRESHOLD})", secs, 300)


def test_criterion_07_determinism(report):
    ds = synth_imbalanced([60, 20, 20], 3, 1.5, seed=9)
    cfg = ProgressionConfig(block_size=4, max_blocks_per_layer=2, max_layers=2, seed=9,
                            train=TrainConfig(epochs=10))
    runs = [grow(ds, cfg, threads=t) for t in (1, 1, 4)]
    (n1, s1), (n2, s2), (n3, s3) = runs
    same_bytes = dumps(n1) == dumps(n2) and audit_lines(s1.log) == audit_lines(s2.log)
    same_parallel = n1.opsets() == n3.opsets() and n1.topology() == n3.topology()
    report(7, same_bytes and same_parallel,
           f"serial runs byte-identical: {same_bytes}; parallel run same operator sets and "
           f"topology {n1.topology()}: {same_parallel}")


def test_criterion_08_protocol_fidelity(report):
    ds = synth_imbalanced([70, 15, 15], 2, 1.0, n_days=10)
    folds = anchored_folds(ds, 9)
    ok = len(folds) == 9
    for k, f in enumerate(folds, 1):
        ok &= f.train_days == tuple(range(1, k + 1)) and f.test_day == k + 1
        tr, te = ds.days(f.train_days), ds.days([f.test_day])
        ok &= set(tr.day.tolist()) == set(range(1, k + 1)) and set(te.day.tolist()) == {k + 1}
    report(8, bool(ok), "9 folds; fold K trains on days 1..K and tests on day K+1")


def test_criterion_09_hyperparameter_defaults(report):
    p = ProgressionConfig()
    t = p.train
    got = dict(block_size=p.block_size, max_blocks=p.max_blocks_per_layer, max_layers=p.max_layers,
               epochs=t.epochs, lr0=t.lr0, decay=t.lr_decay_factor, every=t.lr_decay_every,
               lam=p.lam, weight_decay=t.weight_decay, max_norm=t.max_norm)
    want = dict(block_size=40, max_blocks=4, max_layers=8, epochs=300, lr0=0.01, decay=0.1,
                every=100, lam=1.0, weight_decay=1e-4, max_norm=3.0)
    report(9, got == want, f"defaults {got}")


def test_criterion_10_round_trips(report, tmp_path):
    ds = synth_imbalanced([40, 10, 10], 4, 1.5, seed=11)
    net, _ = grow(ds, ProgressionConfig(block_size=3, max_blocks_per_layer=2, max_layers=2,
                                        seed=11, train=TrainConfig(epochs=5)))
    network.save(net, tmp_path / "m.json")
    back = network.load(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(200, 4))
    model_ok = forward(net, X)[1].tobytes() == forward(back, X)[1].tobytes()
    save_dataset(ds, tmp_path / "d.csv")
    loaded = load_dataset(tmp_path / "d.csv", has_day=True)
    data_ok = (loaded.X.tobytes() == ds.X.tobytes() and np.array_equal(loaded.labels, ds.labels)
               and np.array_equal(loaded.day, ds.day))
    report(10, model_ok and data_ok,
           f"model predictions bitwise equal: {model_ok}; dataset exact after save/load: {data_ok}")
