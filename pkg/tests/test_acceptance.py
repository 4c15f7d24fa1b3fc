"""Acceptance criteria, one test each.

Every test records a ``[PASS]``/``[FAIL]`` line (printed immediately and
repeated in the terminal summary) and then asserts the criterion.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from hvt import attention as at
from hvt import checkpoint as ck
from hvt import gradcheck
from hvt import manifold as mf
from hvt.cli import EXIT_DATA, main
from hvt.config import RunConfig
from hvt.data import synth_hierarchy, write_split
from hvt.gradcheck import ball_points
from hvt.manifold import ManifoldParams
from hvt.model import HvtConfig, count_parameters, forward, init_params
from hvt.optim import OptimizerConfig, adam_step_manifold, clip_gradient, lr_schedule, new_param_state
from hvt.train import evaluate, from_checkpoint, train

N = 10_000


def record(name, passed, detail):
    passed = bool(passed)
    ACCEPTANCE_LINES.append((name, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def _max_norm(x):
    return float(np.max(np.linalg.norm(x, axis=-1)))


def test_mobius_algebra_suite():
    rng = np.random.default_rng(0)
    errs = {}
    with Timer() as t:
        for c in (1.0, 0.5):
            m = ManifoldParams(c=c)
            x, y = ball_points(rng, (2, N, 6), 0.9, m)
            zero = np.zeros(6)
            errs["identity"] = max(errs.get("identity", 0), np.max(np.abs(mf.mobius_add(x, zero, m).data - x)),
                                   np.max(np.abs(mf.mobius_add(zero, x, m).data - x)))
            errs["inverse"] = max(errs.get("inverse", 0), np.max(np.abs(mf.mobius_add(-x, x, m).data)))
            r, s = rng.uniform(-2, 2, size=(2, N, 1))
            lhs = mf.mobius_scalar(r, mf.mobius_scalar(s, x, m), m).data
            errs["scalar_assoc"] = max(errs.get("scalar_assoc", 0),
                                       np.max(np.abs(lhs - mf.mobius_scalar(r * s, x, m).data)))
            # closure: push hard towards the boundary
            xb, yb = ball_points(rng, (2, N, 6), 1.0, m)
            W = rng.normal(size=(6, 6)) * 5
            outs = [mf.mobius_add(xb, yb, m), mf.mobius_scalar(rng.uniform(-20, 20, size=(N, 1)), xb, m),
                    mf.mobius_matvec(W, xb, m), mf.exp0(rng.normal(size=(N, 6)) * 30, m),
                    mf.exp_at(xb, rng.normal(size=(N, 6)) * 30, m)]
            limit = m.max_norm_factor / math.sqrt(c)
            errs["closure_excess"] = max(errs.get("closure_excess", -1), max(_max_norm(o.data) - limit for o in outs))
    ok = (errs["identity"] <= 1e-12 and errs["inverse"] <= 1e-12 and errs["scalar_assoc"] <= 1e-10
          and errs["closure_excess"] < 0 and t.elapsed < 10)
    record("Mobius algebra suite", ok,
           f"identity {errs['identity']:.1e}, inverse {errs['inverse']:.1e}, scalar assoc "
           f"{errs['scalar_assoc']:.1e}, closure excess {errs['closure_excess']:.1e}, {t.elapsed:.2f}s")


def test_map_inversion_suite():
    rng = np.random.default_rng(1)
    with Timer() as t:
        x = ball_points(rng, (N, 6), 0.9)
        v = rng.normal(size=(N, 6))
        v *= rng.uniform(0, 5, size=(N, 1)) / np.linalg.norm(v, axis=-1, keepdims=True)
        e1 = float(np.max(np.abs(mf.exp0(mf.log0(x)).data - x)))
        e2 = float(np.max(np.abs(mf.log0(mf.exp0(v)).data - v)))
    record("Map-inversion suite", e1 <= 1e-10 and e2 <= 1e-10 and t.elapsed < 5,
           f"exp0(log0 x) {e1:.1e}, log0(exp0 v) {e2:.1e}, {t.elapsed:.2f}s")


def test_distance_suite():
    rng = np.random.default_rng(2)
    with Timer() as t:
        x = ball_points(rng, (N, 6), 0.99)
        n = np.linalg.norm(x, axis=-1)
        above = n > 1e-3  # acosh argument well above the 1 + delta floor
        d0 = mf.distance(np.zeros(6), x).data
        closed = float(np.max(np.abs(d0[above] - 2 * np.arctanh(n[above]))))
        y = ball_points(rng, (N, 6), 0.99)
        sym = float(np.max(np.abs(mf.distance(x, y).data - mf.distance(y, x).data)))
        z = ball_points(rng, (N, 6), 0.99)
        slack = 2 * mf.distance_floor()
        excess = mf.distance(x, z).data - (mf.distance(x, y).data + mf.distance(y, z).data + slack)
        violations = int(np.sum(excess > 0))
    record("Distance suite", closed <= 1e-6 and sym == 0.0 and violations == 0 and t.elapsed < 10,
           f"closed form {closed:.1e}, symmetry {sym:.1e}, triangle violations {violations}/{N}, {t.elapsed:.2f}s")


def test_gradient_suite():
    with Timer() as t:
        results = []
        for seed in range(5):
            for mod in ("manifold", "layers", "attention"):
                results += gradcheck.run(mod, seed=seed)
        results += gradcheck.run("model", seed=0)
    worst_op = max(r.error for r in results if r.module != "model")
    worst_model = max(r.error for r in results if r.module == "model")
    failed = [r.name for r in results if not r.passed]
    record("Gradient suite", not failed and t.elapsed < 120,
           f"{len(results)} checks, worst op/layer {worst_op:.1e} (<1e-4), worst end-to-end {worst_model:.1e} "
           f"(<1e-3), failed {failed}, {t.elapsed:.1f}s")


def test_optimizer_suite():
    rng = np.random.default_rng(3)
    with Timer() as t:
        m = ManifoldParams()
        x = ball_points(rng, (16, 4), 0.99)
        st = new_param_state(x.shape)
        cfg = OptimizerConfig(lr=0.5)
        worst = 0.0
        for step in range(1, 1001):
            g = rng.normal(size=x.shape)
            g *= rng.uniform(0, 100) / np.linalg.norm(g)
            x = adam_step_manifold(x, g, st, cfg, m, step)
            worst = max(worst, _max_norm(x))
        idem = all(np.array_equal(clip_gradient(clip_gradient(g, 1.0), 1.0), clip_gradient(g, 1.0))
                   for g in rng.normal(size=(1000, 5)) * rng.uniform(0, 100, size=(1000, 1)))
        sc = OptimizerConfig(lr=1e-3, warmup_steps=50, total_steps=1000)
        ends = [abs(lr_schedule(0, sc)), abs(lr_schedule(50, sc) - 1e-3), abs(lr_schedule(1000, sc))]
    ok = worst < 1.0 and idem and max(ends) <= 1e-12 and t.elapsed < 30
    record("Optimizer suite", ok, f"max norm after 1000 fuzz steps {worst:.6f} (<1), clip idempotent {idem}, "
           f"schedule endpoint errors {max(ends):.1e}, {t.elapsed:.2f}s")


def test_softmax_attention_normalization():
    rng = np.random.default_rng(4)
    with Timer() as t:
        Q, K = ball_points(rng, (2, 8, 4, 16, 8), 0.99)
        w = at.attention_weights(at.attention_scores(Q, K, rng.uniform(0.1, 10, size=4))).data
        row_err = float(np.max(np.abs(w.sum(-1) - 1)))
        base = np.argmax(at.attention_scores(Q, K, np.ones(4)).data, axis=-1)
        invariant = all(np.array_equal(
            np.argmax(at.attention_weights(at.attention_scores(Q, K, rng.uniform(0.1, 10, size=4))).data, -1), base)
            for _ in range(50))
    record("Softmax/attention normalization", row_err <= 1e-12 and invariant and t.elapsed < 10,
           f"row-sum error {row_err:.1e}, alpha argmax invariant over 50 draws {invariant}, {t.elapsed:.2f}s")


def test_training_smoke():
    data = synth_hierarchy(4, 128, image_size=16, seed=0)
    cfg = RunConfig()  # HVT-Tiny, batch 32, lr 1e-3
    with Timer() as t:
        res = train(cfg, data, epochs=50, seed=0)
    top1 = evaluate((res.state, cfg.model), data)["top1"]
    # determinism: a rerun with the same schedule reproduces the first three epochs bit for bit
    steps = len(res.metrics.step_losses)
    prefix = RunConfig(optimizer=OptimizerConfig(total_steps=steps))
    rerun = train(prefix, data, epochs=3, seed=0).metrics.step_losses
    same = rerun == res.metrics.step_losses[:len(rerun)]
    last = res.metrics.records[-1]
    record("Training smoke", top1 >= 0.90 and t.elapsed < 300 and same,
           f"train top-1 {top1:.3f} (eval mode; running augmented {last.train_accuracy:.3f}), "
           f"{t.elapsed:.0f}s, deterministic prefix {same}")


VARIANT_LABELS = ("hyperbolic", "euclidean_attention", "euclidean")


def test_ablation_direction():
    train_ds = synth_hierarchy(8, 256, seed=0, split="train")
    test_ds = synth_hierarchy(8, 64, seed=0, split="test")
    means = {}
    with Timer() as t:
        for v in VARIANT_LABELS:
            scores = []
            for seed in (0, 1, 2):
                cfg = RunConfig(model=HvtConfig(num_classes=8, seed=seed).with_variant(v))
                res = train(cfg, train_ds)
                scores.append(evaluate((res.state, cfg.model), test_ds)["top1"])
            means[v] = float(np.mean(scores))
    full, emb, base = (means[v] for v in VARIANT_LABELS)
    ok = full >= emb >= base and full - base >= 0.02
    record("Ablation direction", ok,
           f"mean eval top-1 full {full:.3f}, hyperbolic-embeddings-only {emb:.3f}, euclidean {base:.3f} "
           f"(need full >= emb >= euclidean and full - euclidean >= 0.02), {t.elapsed:.0f}s")


def test_vit_base_parameter_count():
    cfg = HvtConfig(image_size=224, patch_size=16, channels=3, layers=12, heads=12, embed_dim=768, mlp_dim=3072,
                    num_classes=1000)
    hvt, vit = count_parameters(cfg), count_parameters(cfg.with_variant("euclidean"))
    record("Parameter count (ViT-Base geometry)", hvt == vit and hvt // 10 ** 6 == 86,
           f"HVT {hvt:,} == Euclidean {vit:,}, {hvt / 1e6:.2f}M")


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cfg = RunConfig(model=HvtConfig(epochs=1))
    data = synth_hierarchy(4, 8, seed=1)
    res = train(cfg, data, out_dir=str(tmp_path))
    path = tmp_path / "checkpoint.hvt"
    _, state, _ = from_checkpoint(ck.load(str(path)))
    imgs = rng.uniform(size=(5, 1, 16, 16))
    a, ea = forward(imgs, res.state, cfg.model)
    b, eb = forward(imgs, state, cfg.model)
    bitwise = a.data.tobytes() == b.data.tobytes() and ea.data.tobytes() == eb.data.tobytes()
    raw = bytearray(path.read_bytes())
    raw[:4] = b"HVT0"
    (tmp_path / "bad.hvt").write_bytes(bytes(raw))
    write_split(str(tmp_path / "data"), "test", data)
    code = main(["eval", "--checkpoint", str(tmp_path / "bad.hvt"), "--data", str(tmp_path / "data")])
    record("Checkpoint round-trip", bitwise and code == EXIT_DATA,
           f"forward bitwise identical {bitwise}, corrupted magic exit code {code}")
