"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the pytest terminal
summary under "acceptance criteria".
"""

import contextlib
import json
import struct
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE

from vitslim import bench, data, train, vit
from vitslim.checkpoint import load_checkpoint, save_checkpoint
from vitslim.conversion import sigmoid_weight
from vitslim.errors import CheckpointBoundsError, CheckpointError, CheckpointVersionError
from vitslim.flops import compare_slim_overhead, count_flops
from vitslim.gradcheck import end_to_end
from vitslim.inference import SlimEngine, count_slim_ops, infer, masked_forward
from vitslim.schedule import build_counts, target_moments
from vitslim.tensor import Tensor


@contextlib.contextmanager
def criterion(number, budget_s):
    """Record PASS/FAIL for ``number``; the body sets ``state['detail']`` and asserts."""
    state = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield state
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < budget_s
        ACCEPTANCE[number] = (ok and within, f"{state['detail']} [{elapsed:.1f}s, budget {budget_s:g}s]")
    assert within, f"criterion {number} took {elapsed:.1f}s (budget {budget_s}s)"


def test_criterion_1_flops():
    with criterion(1, 1.0) as st:
        deit = vit.preset("deit-s")
        targets = {1.0: (4.6, 0.05), 0.9: (4.1, 0.10), 0.8: (3.6, 0.10), 0.7: (3.2, 0.10)}
        got = {rho: count_flops(deit.replace(rho=rho)).gflops for rho in targets}
        vit_b = count_flops(vit.preset("vit-b", rho=1.0)).gflops
        st["detail"] = "DeiT-S " + ", ".join(f"rho={r}: {g:.3f}G" for r, g in got.items()) + f"; ViT-B {vit_b:.2f}G"
        for rho, (target, tol) in targets.items():
            assert got[rho] == pytest.approx(target, rel=tol)
        assert vit_b == pytest.approx(17.6, rel=0.05)


def _multiset(n, T):
    lives = []
    for t in range(1, T):
        lives += [t] * (n[t - 1] - n[t])
    lives += [T] * n[T - 1]
    lives = np.asarray(lives, dtype=np.float64)
    return lives.mean(), lives.std()


def test_criterion_2_schedule_moments():
    with criterion(2, 1.0) as st:
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(200):
            T = int(rng.integers(2, 16))
            N = int(rng.integers(1, 400))
            rho = float(rng.uniform(0.05, 0.99))
            t_slim = sorted(rng.choice(np.arange(1, T + 1), size=int(rng.integers(1, T + 1)), replace=False))
            n = build_counts(N, T, rho, t_slim)
            mu, sigma = target_moments(n, N, T)
            o_mu, o_sigma = _multiset(n, T)
            worst = max(worst, abs(mu - o_mu), abs(sigma - o_sigma))
        full = target_moments(build_counts(196, 12, 1.0, [4, 7, 10]), 196, 12)
        st["detail"] = f"max |diff| vs multiset oracle {worst:.2e} over 200 schedules; rho=1 -> {full}"
        assert worst <= 1e-9
        assert full == (12.0, 0.0)


def test_criterion_3_hard_soft_equivalence():
    with criterion(3, 30.0) as st:
        rng = np.random.default_rng(3)
        worst_logits, worst_attn, worst_attn64 = 0.0, [], []
        for k in range(10):
            t_base = int(rng.integers(1, 4))
            t_slim = tuple(sorted(rng.choice(np.arange(t_base, 7), size=int(rng.integers(1, 7 - t_base + 1)),
                                             replace=False).tolist()))
            cfg = vit.ViTConfig(T=6, d=32, H=4, p=4, image_side=16, t_base=t_base, t_slim=t_slim,
                                rho=float(rng.uniform(0.3, 0.95)), U=float(rng.uniform(0.5, 5)))
            w = vit.init_weights(cfg, seed=100 + k)
            w.params["life.W"] = Tensor(rng.normal(0, 1, (32, 32)))
            images = rng.random((4, 16, 16, 1))
            slim = infer(images, w)
            ref = masked_forward(images, w)
            worst_logits = max(worst_logits, float(np.linalg.norm(slim - ref) / np.linalg.norm(ref)))
            # attention level: binary weights versus physically gathered tokens, each
            # element's error relative to the magnitude of its token's output vector
            x = rng.normal(size=(2, 17, 32))
            keep = np.sort(np.concatenate([[0], 1 + rng.choice(16, size=int(rng.integers(1, 16)), replace=False)]))
            beta = np.zeros((2, 17))
            beta[:, keep] = 1
            for dtype, worst in ((np.float32, worst_attn), (np.float64, worst_attn64)):
                wd = w.astype(dtype)
                xd = x.astype(dtype)
                full = vit.mhsa_forward(Tensor(xd), 1 + k % 6, wd, Tensor(beta.astype(dtype))).data[:, keep]
                gathered = vit.mhsa_forward(Tensor(xd[:, keep]), 1 + k % 6, wd).data
                scale = np.abs(gathered).max(axis=-1, keepdims=True)
                worst.append(float(np.max(np.abs(full - gathered) / scale)))
        worst_attn, worst_attn64 = max(worst_attn), max(worst_attn64)
        st["detail"] = (f"logits rel err {worst_logits:.2e} (<=1e-5); "
                        f"masked vs gathered attention rel err {worst_attn:.2e} f32 (<=1e-6), {worst_attn64:.2e} f64 (<=1e-12)")
        assert worst_logits <= 1e-5
        assert worst_attn <= 1e-6
        assert worst_attn64 <= 1e-12


def _violations(ti, tj, U, grid, literal):
    bi = sigmoid_weight(ti, grid, U, literal)
    bj = sigmoid_weight(tj, grid, U, literal)
    if ti > tj:
        return np.flatnonzero(bi < bj)
    if ti < tj:
        return np.flatnonzero(bi > bj)
    return np.flatnonzero(bi != bj)


def test_criterion_4_weight_ordering():
    with criterion(4, 5.0) as st:
        rng = np.random.default_rng(4)
        grid = np.linspace(1, 12, 100)
        corrected, literal, example, gap = 0, 0, None, -1.0
        for _ in range(1000):
            ti, tj = rng.uniform(0, 13, size=2)
            U = rng.uniform(0.1, 20)
            corrected += len(_violations(ti, tj, U, grid, False))
            bad = _violations(ti, tj, U, grid, True)
            literal += len(bad)
            for t in grid[bad]:
                bi, bj = sigmoid_weight(ti, t, U, True), sigmoid_weight(tj, t, U, True)
                if abs(bi - bj) > gap:
                    # report the most visible violation
                    gap = abs(bi - bj)
                    example = f"tau_i={ti:.3f}, tau_j={tj:.3f}, U={U:.3f}, t={t:.3f}: beta_i={bi:.4f}, beta_j={bj:.4f}"
        st["detail"] = (f"corrected form: {corrected} violations; printed form: {literal} violations, "
                        f"e.g. {example}")
        assert corrected == 0
        assert literal >= 1


def test_criterion_5_gradients():
    with criterion(5, 120.0) as st:
        cfg = vit.preset("micro", U=1.5)
        assert (cfg.T, cfg.d, cfg.N) == (3, 8, 4)
        results = end_to_end(cfg, seed=5, max_entries=None)
        life = max(r.rel_err for r in results if r.name.startswith("life."))
        backbone = max(r.rel_err for r in results if not r.name.startswith("life."))
        st["detail"] = (f"life params rel err {life:.2e}, backbone rel err {backbone:.2e} "
                        f"over {sum(r.entries for r in results)} entries (<=1e-4)")
        assert life <= 1e-4 and backbone <= 1e-4


def _desk_run(seed, train_set, test_set):
    cfg = vit.preset("desk")
    tc = train.TrainConfig(**train.DESK, epochs_pretrain=6, seed=seed)
    base = vit.init_weights(cfg, seed)
    train.pretrain_dense(base, train_set, tc)
    dense = train.evaluate(base, test_set, cfg.replace(rho=1.0))
    two, _ = train.train_two_stage(base.copy(), train_set, tc)
    single, _ = train.train_single_stage(base.copy(), train_set, tc)
    stats = train.salient_life_stats(two, test_set)
    return {"dense": dense, "two": train.evaluate(two, test_set), "single": train.evaluate(single, test_set),
            **stats}


def test_criterion_6_training_behaviour():
    with criterion(6, 1800.0) as st:
        train_set = data.make_synth_dataset(0, 8000)
        test_set = data.make_synth_dataset(10_000, 2000)
        runs = [_desk_run(seed, train_set, test_set) for seed in range(3)]
        summary = "; ".join(
            f"seed {i}: dense {r['dense']:.4f} two {r['two']:.4f} single {r['single']:.4f} "
            f"tau salient {r['tau_salient']:.2f} other {r['tau_other']:.2f}" for i, r in enumerate(runs))
        st["detail"] = summary
        print(json.dumps(runs))
        for r in runs:
            assert r["dense"] >= 0.95
            assert r["dense"] - r["two"] <= 0.02
            assert r["two"] >= r["single"]
            assert r["tau_salient"] > r["tau_other"]


def test_criterion_7_throughput():
    with criterion(7, 300.0) as st:
        weights = vit.init_weights(vit.preset("deit-s"), 0)
        rows = bench.throughput_sweep(weights, (1.0, 0.9, 0.8, 0.7), batch=8, iters=10, blas_threads=1)
        speed = rows[-1]["speedup"]
        ordered = bench.ordering_matches(rows)
        st["detail"] = ", ".join(f"rho={r['rho']}: {r['images_per_second']:.2f} img/s" for r in rows) + \
            f"; speedup at 0.7 = {speed:.3f}x (>=1.25), ordering matches FLOPs: {ordered}"
        assert speed >= 1.25
        assert ordered


def test_criterion_8_overhead():
    with criterion(8, 1.0) as st:
        deit = vit.preset("deit-s")
        ratios = {}
        for t_slim in ((4,), (4, 7, 10), (4, 5, 6, 7, 8, 9)):
            ratios[len(t_slim)] = compare_slim_overhead(deit.replace(t_slim=t_slim))["ratio"]
        cfg = vit.ViTConfig()
        engine = SlimEngine(vit.init_weights(cfg, 0))
        engine.infer(np.random.default_rng(8).random((5, 16, 16, 1)))
        ops = count_slim_ops(engine)
        st["detail"] = f"ratios {ratios}; life-module calls per image {ops['life_module_calls']}"
        for t_prime, ratio in ratios.items():
            assert abs(ratio - t_prime) <= 0.05 * t_prime
        assert ops["life_module_calls"] == 1.0 and engine.probe.images == 5


def test_criterion_9_serialization(tmp_path):
    with criterion(9, 5.0) as st:
        w = vit.init_weights(vit.ViTConfig(), 9)
        path = tmp_path / "m.ck"
        save_checkpoint(path, w)
        back = load_checkpoint(path)
        identical = all(back[k].data.tobytes() == w[k].data.tobytes() for k in w.params)
        blob = path.read_bytes()
        rejected = {}

        def attempt(name, payload, exc):
            path.write_bytes(payload)
            try:
                load_checkpoint(path)
            except exc:
                rejected[name] = True
            else:
                rejected[name] = False

        attempt("bad magic", b"X" + blob[1:], CheckpointVersionError)
        (length,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + length])
        header["tensors"][-1]["offset"] = len(blob)
        raw = json.dumps(header, separators=(",", ":")).encode().ljust(length)
        attempt("offset past EOF", blob[:16] + raw + blob[16 + length:], CheckpointBoundsError)
        attempt("truncated payload", blob[: len(blob) - 64], CheckpointError)
        st["detail"] = f"bit-identical round trip: {identical}; rejected: {rejected}"
        assert identical and all(rejected.values())
