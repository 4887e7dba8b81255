"""Adaptive graph convolutional layer against direct-summation oracles."""

import numpy as np
import pytest

import skelgcn.tensor as tz
from skelgcn.agc import (agcl_forward, baseline_gcn_forward, individual_graph,
                         init_agcl, init_baseline, unfreeze_global_graph)
from skelgcn.errors import ShapeError
from skelgcn.graph import build_topology, partitioned_adjacency
from skelgcn.tensor import Tensor, backward, finite_diff_check


@pytest.fixture
def adj3():
    topo = build_topology("custom", custom_edges=[(0, 1), (1, 2)], center_joint=1)
    return partitioned_adjacency(topo).normalized


def rand_t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def vertex_sum_oracle(f_in, a_stack, w_stack):
    """Per-vertex summation: out[n,o,t,i] = sum_k sum_j sum_c W_k[o,c] f[n,c,t,j] A_k[i,j]."""
    n, c_in, t, v = f_in.shape
    c_out = w_stack[0].shape[0]
    out = np.zeros((n, c_out, t, v))
    for k in range(len(a_stack)):
        for ni in range(n):
            for ti in range(t):
                for i in range(v):
                    for j in range(v):
                        if a_stack[k][i, j] != 0:
                            out[ni, :, ti, i] += a_stack[k][i, j] * (w_stack[k] @ f_in[ni, :, ti, j])
    return out


class TestBaselineGcn:
    def test_self_subset_only(self, adj3):
        rng = np.random.default_rng(0)
        a = np.zeros_like(adj3)
        a[0] = np.eye(3) / 1.001
        p = init_baseline(a, 2, 2, rng, dtype=np.float64, with_residual=False)
        p.W[0].data = np.eye(2)
        for k in (1, 2):
            p.W[k].data = np.zeros((2, 2))
        f_in = rand_t(rng, 1, 2, 2, 3)
        out = baseline_gcn_forward(f_in, a, p)
        assert np.allclose(out.data, f_in.data / 1.001)

    def test_single_vertex_reduces_to_1x1_conv(self):
        rng = np.random.default_rng(1)
        topo = build_topology("custom", custom_edges=[], center_joint=0)
        adj = partitioned_adjacency(topo).normalized
        p = init_baseline(adj, 3, 4, rng, dtype=np.float64, with_residual=False)
        f_in = rand_t(rng, 2, 3, 5, 1)
        out = baseline_gcn_forward(f_in, adj, p)
        expected = np.einsum("oc,nctv->notv", p.W[0].data, f_in.data) * adj[0, 0, 0]
        assert np.allclose(out.data, expected)

    def test_matches_vertex_sum_oracle(self, adj3):
        rng = np.random.default_rng(2)
        p = init_baseline(adj3, 2, 4, rng, dtype=np.float64, with_residual=False)
        f_in = rand_t(rng, 2, 2, 2, 3)
        out = baseline_gcn_forward(f_in, adj3, p)
        expected = vertex_sum_oracle(f_in.data, adj3, [w.data for w in p.W])
        assert np.abs(out.data - expected).max() <= 1e-10

    def test_vertex_count_mismatch(self, adj3):
        rng = np.random.default_rng(3)
        p = init_baseline(adj3, 2, 4, rng, dtype=np.float64)
        with pytest.raises(ShapeError, match="V="):
            baseline_gcn_forward(rand_t(rng, 1, 2, 2, 5), adj3, p)

    def test_mask_multiplies_adjacency(self, adj3):
        rng = np.random.default_rng(4)
        p = init_baseline(adj3, 2, 2, rng, dtype=np.float64, mask_enabled=True,
                          with_residual=False)
        f_in = rand_t(rng, 1, 2, 2, 3)
        base = baseline_gcn_forward(f_in, adj3, p).data
        p.mask[1].data = np.zeros((3, 3))
        masked = baseline_gcn_forward(f_in, adj3, p).data
        expected = vertex_sum_oracle(f_in.data, [adj3[0], np.zeros((3, 3)), adj3[2]],
                                     [w.data for w in p.W])
        assert np.abs(masked - expected).max() <= 1e-10
        assert not np.allclose(base, masked)


class TestIndividualGraph:
    def test_zero_embeddings_give_uniform_rows(self):
        rng = np.random.default_rng(5)
        f_in = rand_t(rng, 2, 3, 4, 5)
        wt = Tensor(np.zeros((2, 3)), requires_grad=True, dtype=np.float64)
        wp = Tensor(np.zeros((2, 3)), requires_grad=True, dtype=np.float64)
        c = individual_graph(f_in, wt, wp)
        assert np.allclose(c.data, 1.0 / 5)

    def test_single_vertex(self):
        rng = np.random.default_rng(6)
        f_in = rand_t(rng, 1, 2, 3, 1)
        wt = rand_t(rng, 1, 2)
        wp = rand_t(rng, 1, 2)
        c = individual_graph(f_in, wt, wp)
        assert np.allclose(c.data, [[[1.0]]])

    def test_two_loop_oracle(self):
        rng = np.random.default_rng(7)
        n, c_in, c_e, t, v = 2, 3, 2, 4, 3
        f_in = rand_t(rng, n, c_in, t, v)
        wt = rand_t(rng, c_e, c_in)
        wp = rand_t(rng, c_e, c_in)
        got = individual_graph(f_in, wt, wp).data

        theta = np.einsum("ec,nctv->netv", wt.data, f_in.data)
        phi = np.einsum("ec,nctv->netv", wp.data, f_in.data)
        expected = np.zeros((n, v, v))
        for ni in range(n):
            for i in range(v):
                dots = np.array([np.sum(theta[ni, :, :, i] * phi[ni, :, :, j])
                                 for j in range(v)])
                e = np.exp(dots)
                expected[ni, i] = e / e.sum()
        assert np.abs(got - expected).max() <= 1e-10

    def test_rows_stochastic(self):
        rng = np.random.default_rng(8)
        f_in = rand_t(rng, 3, 4, 5, 6)
        wt, wp = rand_t(rng, 2, 4), rand_t(rng, 2, 4)
        c = individual_graph(f_in, wt, wp).data
        assert (c >= 0).all() and (c <= 1).all()
        assert np.abs(c.sum(axis=-1) - 1.0).max() <= 1e-6


class TestAgcl:
    def test_initialization_equals_baseline(self, adj3):
        for trial in range(5):
            rng_a = np.random.default_rng(100 + trial)
            rng_b = np.random.default_rng(100 + trial)
            agcl = init_agcl(adj3, 2, 4, rng_a, dtype=np.float64, with_residual=False)
            base = init_baseline(adj3, 2, 4, rng_b, dtype=np.float64, with_residual=False)
            f_in = rand_t(np.random.default_rng(trial), 2, 2, 3, 3)
            a = agcl_forward(f_in, agcl).data
            b = baseline_gcn_forward(f_in, adj3, base).data
            assert np.abs(a - b).max() <= 1e-6

    def test_gate_zero_ignores_embedding_perturbations(self, adj3):
        rng = np.random.default_rng(9)
        p = init_agcl(adj3, 2, 4, rng, dtype=np.float64)
        f_in = rand_t(rng, 1, 2, 3, 3)
        before = agcl_forward(f_in, p).data.copy()
        for k in range(3):
            p.Wtheta[k].data = rng.normal(size=p.Wtheta[k].shape)
            p.Wphi[k].data = rng.normal(size=p.Wphi[k].shape)
        after = agcl_forward(f_in, p).data
        assert np.array_equal(before, after)

    def test_eq3_loop_oracle(self, adj3):
        rng = np.random.default_rng(10)
        p = init_agcl(adj3, 2, 4, rng, dtype=np.float64, with_residual=False)
        unfreeze_global_graph(p)
        p.gate_alpha.data = np.asarray(0.6)
        for k in range(3):
            p.Wtheta[k].data = rng.normal(size=p.Wtheta[k].shape)
            p.Wphi[k].data = rng.normal(size=p.Wphi[k].shape)
            p.B[k].data = p.B[k].data + rng.normal(scale=0.1, size=(3, 3))
        f_in = rand_t(rng, 2, 2, 2, 3)
        got = agcl_forward(f_in, p).data

        expected = np.zeros_like(got)
        for k in range(3):
            c_k = individual_graph(f_in, p.Wtheta[k], p.Wphi[k]).data
            for ni in range(f_in.shape[0]):
                a_eff = p.B[k].data + 0.6 * c_k[ni]
                expected[ni] += vertex_sum_oracle(f_in.data[ni:ni + 1], [a_eff],
                                                  [p.W[k].data])[0]
        assert np.abs(got - expected).max() <= 1e-10

    def test_residual_identity_and_conv(self, adj3):
        rng = np.random.default_rng(11)
        same = init_agcl(adj3, 4, 4, rng, dtype=np.float64)
        assert same.residual == "identity" and same.residual_w is None
        diff = init_agcl(adj3, 2, 4, rng, dtype=np.float64)
        assert diff.residual == "conv" and diff.residual_w.shape == (4, 2)


class TestInitAndFreeze:
    def test_b_equals_a_bitwise(self, adj3):
        p = init_agcl(adj3, 2, 4, np.random.default_rng(0), dtype=np.float64)
        for k in range(3):
            assert p.B[k].data.tobytes() == adj3[k].astype(np.float64).tobytes()

    def test_gate_and_embeddings_zero(self, adj3):
        p = init_agcl(adj3, 2, 4, np.random.default_rng(0), dtype=np.float64)
        assert float(p.gate_alpha.data) == 0.0
        for k in range(3):
            assert not p.Wtheta[k].data.any()
            assert not p.Wphi[k].data.any()

    def test_frozen_b_gets_no_grad(self, adj3):
        rng = np.random.default_rng(12)
        p = init_agcl(adj3, 2, 4, rng, dtype=np.float64)
        f_in = rand_t(rng, 1, 2, 3, 3)
        backward(tz.reduce_sum(agcl_forward(f_in, p)))
        assert all(b.grad is None for b in p.B)

    def test_unfrozen_b_gets_nonzero_grad(self, adj3):
        rng = np.random.default_rng(13)
        p = init_agcl(adj3, 2, 4, rng, dtype=np.float64)
        unfreeze_global_graph(p)
        f_in = rand_t(rng, 1, 2, 3, 3)
        backward(tz.reduce_sum(agcl_forward(f_in, p)))
        assert all(b.grad is not None and np.abs(b.grad).max() > 0 for b in p.B)

    def test_unfreeze_idempotent(self, adj3):
        p = init_agcl(adj3, 2, 4, np.random.default_rng(0), dtype=np.float64)
        unfreeze_global_graph(p)
        unfreeze_global_graph(p)
        assert p.b_frozen is False

    def test_anchored_strategy_starts_at_fixed_graph(self, adj3):
        rng = np.random.default_rng(14)
        anchored = init_agcl(adj3, 2, 4, rng, dtype=np.float64, strategy="anchored",
                             with_residual=False)
        assert anchored.b_frozen is False
        assert float(anchored.gate_b.data) == 0.0
        for k in range(3):
            assert not anchored.B[k].data.any()
        base = init_baseline(adj3, 2, 4, np.random.default_rng(14), dtype=np.float64,
                             with_residual=False)
        f_in = rand_t(rng, 1, 2, 3, 3)
        a = agcl_forward(f_in, anchored).data
        b = baseline_gcn_forward(f_in, adj3, base).data
        assert np.abs(a - b).max() <= 1e-6


class TestAgclGradients:
    def test_all_learnables_pass_finite_differences(self, adj3):
        rng = np.random.default_rng(15)
        p = init_agcl(adj3, 2, 4, rng, dtype=np.float64)
        unfreeze_global_graph(p)
        p.gate_alpha.data = np.asarray(0.4)
        for k in range(3):
            p.Wtheta[k].data = rng.uniform(-0.5, 0.5, size=p.Wtheta[k].shape)
            p.Wphi[k].data = rng.uniform(-0.5, 0.5, size=p.Wphi[k].shape)
        f_in = rand_t(rng, 2, 2, 3, 3)
        r = tz.constant(rng.normal(size=(2, 4, 3, 3)), dtype=np.float64)

        def loss(_):
            return tz.reduce_sum(agcl_forward(f_in, p) * r)

        for target in (p.B[0], p.B[2], p.W[1], p.Wtheta[0], p.Wphi[2],
                       p.gate_alpha, p.residual_w, f_in):
            assert finite_diff_check(loss, target) <= 1e-5
