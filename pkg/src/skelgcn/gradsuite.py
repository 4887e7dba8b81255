"""Finite-difference battery over every differentiable op and a toy model.

Each entry perturbs one tensor at a time and compares central differences
against the recorded backward rules, reporting the worst relative error.
The bound is 1e-5 in float64 with step 1e-5. Inputs are seeded and sized
so the whole battery stays well under a minute.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tz
from .agc import agcl_forward, init_agcl, unfreeze_global_graph
from .attention import init_stc, stc_forward
from .graph import build_topology, partitioned_adjacency
from .network import (BlockSpec, ModelConfig, init_model, model_forward,
                      named_parameters, unfreeze_model)
from .tensor import RunningStats, Tensor, finite_diff_check

BOUND = 1e-5
STEP = 1e-5


def _t(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, dtype=np.float64)


def _proj(rng, shape):
    return tz.constant(rng.normal(size=shape), dtype=np.float64)


def _toy_model():
    topo = build_topology("custom", custom_edges=[(0, 1), (1, 2)], center_joint=1)
    cfg = ModelConfig(
        topology=topo,
        blocks=(BlockSpec(2, 4, 1, True, True), BlockSpec(4, 8, 2, True, True)),
        num_classes=3, in_channels=2, max_frames=6, bodies=1,
        kernel_t=3, kernel_s=3, kernel_t_att=3, reduction=2, dtype="float64")
    model = init_model(cfg, seed=11)
    unfreeze_model(model)
    return model


def op_checks(seed: int = 7) -> list[tuple[str, float]]:
    """(name, worst relative error) for each per-op finite-difference check."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, float]] = []

    def check(name, f, x):
        results.append((name, finite_diff_check(f, x, h=STEP)))

    a = _t(rng, 3, 4)
    b = _t(rng, 4, 2)
    r_ab = _proj(rng, (3, 2))
    check("matmul.a", lambda t: tz.reduce_sum(tz.matmul(t, b) * r_ab), a)
    check("matmul.b", lambda t: tz.reduce_sum(tz.matmul(a, t) * r_ab), b)

    ab = _t(rng, 2, 3, 4, 2)
    bb = _t(rng, 1, 2, 5)  # broadcast over the leading batch axis
    r_bb = _proj(rng, (2, 3, 4, 5))
    check("matmul.batched", lambda t: tz.reduce_sum(tz.matmul(ab, t) * r_bb), bb)

    x4 = _t(rng, 2, 3, 6, 5)
    w4 = _t(rng, 4, 3, 3, 3)
    r_c = _proj(rng, (2, 4, 3, 5))
    check("conv.x", lambda t: tz.reduce_sum(tz.conv(t, w4, stride_t=2, pad_t=1, pad_v=1) * r_c), x4)
    check("conv.w", lambda t: tz.reduce_sum(tz.conv(x4, t, stride_t=2, pad_t=1, pad_v=1) * r_c), w4)
    w1 = _t(rng, 4, 3, 1, 1)
    r_c1 = _proj(rng, (2, 4, 6, 5))
    check("conv.1x1", lambda t: tz.reduce_sum(tz.conv(x4, t) * r_c1), w1)

    xb = _t(rng, 8, 3, 4, 2)
    gm = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True, dtype=np.float64)
    bt = _t(rng, 3)
    r_bn = _proj(rng, (8, 3, 4, 2))

    def bn_train(which):
        def f(_):
            run = RunningStats(3, dtype=np.float64)
            return tz.reduce_sum(tz.batch_norm(xb, gm, bt, run, mode="train") * r_bn)
        return f

    check("batch_norm.train.x", bn_train("x"), xb)
    check("batch_norm.train.gamma", bn_train("gamma"), gm)
    check("batch_norm.train.beta", bn_train("beta"), bt)
    run_eval = RunningStats(3, dtype=np.float64)
    run_eval.mean[:] = rng.uniform(-0.3, 0.3, size=3)
    run_eval.var[:] = rng.uniform(0.5, 1.5, size=3)
    check("batch_norm.eval.x",
          lambda t: tz.reduce_sum(tz.batch_norm(t, gm, bt, run_eval, mode="eval") * r_bn), xb)

    # keep relu inputs away from the kink
    xr = Tensor(rng.uniform(0.05, 1.0, size=(3, 5)) * rng.choice([-1.0, 1.0], size=(3, 5)),
                requires_grad=True, dtype=np.float64)
    r_r = _proj(rng, (3, 5))
    check("relu", lambda t: tz.reduce_sum(tz.relu(t) * r_r), xr)
    xs = _t(rng, 3, 5, lo=-2.5, hi=2.5)
    check("sigmoid", lambda t: tz.reduce_sum(tz.sigmoid(t) * r_r), xs)
    check("softmax", lambda t: tz.reduce_sum(tz.softmax(t, axis=1) * r_r), xs)

    xm = _t(rng, 2, 3, 4)
    r_m = _proj(rng, (3,))
    check("reduce_mean", lambda t: tz.reduce_sum(tz.reduce_mean(t, (0, 2)) * r_m), xm)
    check("reduce_sum", lambda t: tz.reduce_sum(tz.reduce_sum(t, (1,)) * _proj(np.random.default_rng(0), (2, 4))), xm)

    sc = _t(rng, 3, 5, lo=-2.0, hi=2.0)
    lab = np.array([0, 2, 4])
    check("cross_entropy", lambda t: tz.cross_entropy(t, lab), sc)

    xa = _t(rng, 2, 3)
    ya = _t(rng, 1, 3)
    r_a = _proj(rng, (2, 3))
    check("add.broadcast", lambda t: tz.reduce_sum((xa + t) * r_a), ya)
    check("mul.broadcast", lambda t: tz.reduce_sum((xa * t) * r_a), ya)
    check("reshape_transpose",
          lambda t: tz.reduce_sum(t.transpose((1, 0)).reshape((6,)) * _proj(np.random.default_rng(1), (6,))), xa)
    return results


def layer_checks(seed: int = 13) -> list[tuple[str, float]]:
    """Finite differences through the adaptive layer and attention module."""
    rng = np.random.default_rng(seed)
    results = []
    topo = build_topology("custom", custom_edges=[(0, 1), (1, 2)], center_joint=1)
    adj = partitioned_adjacency(topo).normalized
    f_in = _t(rng, 2, 2, 3, 3)
    p = init_agcl(adj, 2, 4, rng, dtype=np.float64)
    unfreeze_global_graph(p)
    # move the zero-initialized pieces off their stationary points
    for group in (p.Wtheta, p.Wphi):
        for t in group:
            t.data += rng.uniform(-0.5, 0.5, size=t.shape)
    p.gate_alpha.data += 0.7
    r_g = _proj(rng, (2, 4, 3, 3))

    def agcl_loss(_):
        return tz.reduce_sum(agcl_forward(f_in, p) * r_g)

    results.append(("agcl.input", finite_diff_check(agcl_loss, f_in, h=STEP)))
    for name, t in (("B", p.B[0]), ("W", p.W[1]), ("theta", p.Wtheta[2]),
                    ("phi", p.Wphi[0]), ("gate", p.gate_alpha),
                    ("residual", p.residual_w)):
        results.append((f"agcl.{name}", finite_diff_check(agcl_loss, t, h=STEP)))

    sp = init_stc(4, rng, dtype=np.float64, kernel_s=3, kernel_t=3, reduction=2)
    f_att = _t(rng, 2, 4, 5, 3)
    r_s = _proj(rng, (2, 4, 5, 3))

    def stc_loss(_):
        return tz.reduce_sum(stc_forward(f_att, sp) * r_s)

    results.append(("stc.input", finite_diff_check(stc_loss, f_att, h=STEP)))
    for name in ("gs_w", "gs_b", "gt_w", "gt_b", "w1", "b1", "w2", "b2"):
        results.append((f"stc.{name}", finite_diff_check(stc_loss, getattr(sp, name), h=STEP)))
    return results


def model_checks(seed: int = 17) -> list[tuple[str, float]]:
    """End-to-end finite differences over every parameter of a 2-block model."""
    rng = np.random.default_rng(seed)
    model = _toy_model()
    x = Tensor(rng.uniform(-1.0, 1.0, size=(1, 2, 6, 3, 1)),
               requires_grad=True, dtype=np.float64)
    labels = np.array([1])

    def loss(_):
        return tz.cross_entropy(model_forward(x, model, mode="train"), labels)

    results = [("model.input", finite_diff_check(loss, x, h=STEP))]
    for name, t, _ in named_parameters(model):
        results.append((f"model.{name}", finite_diff_check(loss, t, h=STEP)))
    return results


def run_suite() -> tuple[list[tuple[str, float]], bool]:
    results = op_checks() + layer_checks() + model_checks()
    ok = all(err <= BOUND for _, err in results)
    return results, ok
