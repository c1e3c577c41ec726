import numpy as np
import pytest
from hypothesis import given, strategies as st

from citycond import tensor as T
from citycond.gradcheck import check_gradients
from citycond.layer import (CityCondConfig, CityCondLayer, CityEmbeddingTable, FusionGate, MemoryBank,
                            QueryNetwork, cityid_augment, count_citycond_params, gated_fuse, memory_read,
                            pool_hidden)
from citycond.tensor import ShapeError, Tensor

from oracles import gated_fuse_loop, memory_read_loop, mlp_tanh_loop


def rng_(seed=0):
    return np.random.default_rng(seed)


# ------------------------------------------------------------------ embedding table / augment

def test_embedding_table_counts_and_range():
    table = CityEmbeddingTable(3, 4, rng_())
    assert table.num_parameters() == 12
    table.lookup(2)
    with pytest.raises(IndexError):
        table.lookup(3)
    with pytest.raises(IndexError):
        table.lookup(-1)


def test_memory_bank_counts():
    assert MemoryBank(8, 32, rng_()).num_parameters() == 256


def test_cityid_augment_empty_embedding_is_identity():
    x = Tensor(rng_().standard_normal((4, 3, 2)))
    out = cityid_augment(x, 1, CityEmbeddingTable(2, 0, rng_()))
    assert np.array_equal(out.data, x.data)


def test_cityid_augment_metr_shape():
    x = Tensor(np.zeros((12, 207, 1)))
    assert cityid_augment(x, 0, CityEmbeddingTable(2, 16, rng_())).shape == (12, 207, 17)


def test_cityid_augment_concatenates():
    table = CityEmbeddingTable(1, 1, rng_())
    table.table.data[0, 0] = 0.5
    assert cityid_augment(Tensor([1.0, 2.0]), 0, table).data.tolist() == [1.0, 2.0, 0.5]


def test_cityid_augment_out_of_range():
    with pytest.raises(IndexError):
        cityid_augment(Tensor(np.zeros((2, 3))), 5, CityEmbeddingTable(2, 4, rng_()))


def test_cityid_augment_broadcasts_over_time_and_nodes():
    table = CityEmbeddingTable(2, 3, rng_())
    out = cityid_augment(Tensor(np.zeros((5, 4, 2))), 1, table).data
    assert np.array_equal(out[..., 2:], np.broadcast_to(table.table.data[1], (5, 4, 3)))


# ------------------------------------------------------------------ pooling

def test_pool_single_node():
    h = Tensor(rng_().standard_normal((3, 1, 4)))
    assert np.array_equal(pool_hidden(h, "mean").data, h.data[:, 0])
    assert np.array_equal(pool_hidden(h, "max").data, h.data[:, 0])


def test_pool_mean_arithmetic():
    h = Tensor([[[1.0, 3.0], [5.0, 7.0]]])
    assert pool_hidden(h, "mean").data.tolist() == [[3.0, 5.0]]


def test_pool_without_nodes_is_identity():
    h = Tensor(np.ones((4, 3)))
    assert pool_hidden(h, "mean", has_nodes=False) is h


def test_pool_empty_node_axis():
    with pytest.raises(ShapeError):
        pool_hidden(Tensor(np.zeros((3, 0, 4))), "mean")


def test_max_pool_gradient_matches_finite_differences():
    h = Tensor(rng_(3).standard_normal((4, 5, 3)), requires_grad=True)
    w = Tensor(rng_(4).standard_normal((4, 3)))
    err = check_gradients(lambda: (pool_hidden(h, "max") * w).sum(), [h])
    assert err < 1e-6
    h.zero_grad()
    (pool_hidden(h, "max") * w).sum().backward()
    winners = (h.data == h.data.max(axis=1, keepdims=True))
    assert np.all(h.grad[~winners] == 0)


# ------------------------------------------------------------------ memory read

def _read_parts(rng, d_c, d_h, K, d_m):
    bank = MemoryBank(K, d_m, rng)
    query = QueryNetwork(d_c, d_h, d_m, rng)
    return bank, query


def test_single_slot_readout_is_the_slot():
    rng = rng_(1)
    bank, query = _read_parts(rng, 2, 3, 1, 4)
    m, alpha = memory_read(Tensor(rng.standard_normal(2)), Tensor(rng.standard_normal(3)), bank, query)
    assert alpha.data.tolist() == [1.0]
    assert np.array_equal(m.data, bank.M.data[0])


def test_equal_scores_give_mean_of_slots():
    rng = rng_(2)
    bank, query = _read_parts(rng, 2, 3, 4, 5)
    bank.M.data[:] = rng.standard_normal((4, 5))
    query.out.weight.data[:] = 0.0
    query.out.bias.data[:] = 0.0  # q = 0: every slot scores 0
    m, alpha = memory_read(Tensor(rng.standard_normal(2)), Tensor(rng.standard_normal(3)), bank, query)
    assert np.allclose(alpha.data, 0.25, rtol=0, atol=1e-15)
    assert np.max(np.abs(m.data - bank.M.data.mean(axis=0))) < 1e-15


def test_memory_read_matches_scalar_loop_oracle():
    rng = rng_(5)
    for trial in range(60):
        d_c, d_h, K, d_m = (int(v) for v in rng.integers(1, 6, size=4))
        if trial == 0:
            K, d_m = 3, 2
        bank, query = _read_parts(rng, d_c, d_h, K, d_m)
        e, h = rng.standard_normal(d_c), rng.standard_normal(d_h)
        m, alpha = memory_read(Tensor(e), Tensor(h), bank, query)
        q = mlp_tanh_loop(list(e) + list(h), query.hidden.weight.data.tolist(), query.hidden.bias.data.tolist(),
                          query.out.weight.data.tolist(), query.out.bias.data.tolist())
        m_ref, a_ref = memory_read_loop(q, bank.M.data.tolist())
        assert np.max(np.abs(m.data - m_ref)) < 1e-12
        assert np.max(np.abs(alpha.data - a_ref)) < 1e-12


def test_memory_read_is_differentiable_end_to_end():
    rng = rng_(6)
    bank, query = _read_parts(rng, 2, 3, 4, 3)
    e = Tensor(rng.standard_normal(2), requires_grad=True)
    h = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((5, 3)))
    loss = lambda: (memory_read(e, h, bank, query)[0] * w).sum()
    assert check_gradients(loss, [e, h, bank.M] + query.parameters()) < 1e-6


# ------------------------------------------------------------------ gated fusion

def test_zero_readout_leaves_h_unchanged():
    rng = rng_(7)
    gate = FusionGate(3, 2, rng)
    gate.W_m.data[:] = rng.standard_normal((2, 3))
    h = Tensor(rng.standard_normal((4, 5, 3)))
    out = gated_fuse(h, Tensor(np.zeros((4, 2))), gate)
    assert np.array_equal(out.data, h.data)


def test_half_gate_arithmetic():
    gate = FusionGate(1, 1, rng_())
    gate.W_g.data[:] = 0.0
    gate.W_m.data[:] = 2.0
    out = gated_fuse(Tensor(np.zeros((1, 1, 1))), Tensor([[1.0]]), gate)
    assert out.data.ravel().tolist() == [1.0]


def test_gated_fuse_time_mismatch():
    gate = FusionGate(3, 2, rng_())
    with pytest.raises(ShapeError):
        gated_fuse(Tensor(np.zeros((4, 5, 3))), Tensor(np.zeros((3, 2))), gate)


def test_gated_fuse_matches_scalar_loop_oracle():
    rng = rng_(8)
    for _ in range(60):
        steps, N, d_h, d_m = (int(v) for v in rng.integers(1, 5, size=4))
        gate = FusionGate(d_h, d_m, rng)
        gate.W_m.data[:] = rng.standard_normal((d_m, d_h))
        h, m = rng.standard_normal((steps, N, d_h)), rng.standard_normal((steps, d_m))
        out = gated_fuse(Tensor(h), Tensor(m), gate).data
        ref = np.array(gated_fuse_loop(h.tolist(), m.tolist(), gate.W_g.data.tolist(), gate.W_m.data.tolist()))
        assert np.max(np.abs(out - ref)) < 1e-12


def test_gate_values_lie_strictly_inside_unit_interval():
    rng = rng_(9)
    gate = FusionGate(4, 3, rng)
    z = T.concat([Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal((6, 3)))], axis=-1)
    g = T.sigmoid(z @ gate.W_g).data
    assert np.all((g > 0) & (g < 1))


# ------------------------------------------------------------------ full layer

def _layer(variant, seed=0, num_cities=2, d_h=6, **kw):
    cfg = CityCondConfig(variant=variant, d_c=kw.pop("d_c", 4), K=kw.pop("K", 3), d_m=kw.pop("d_m", 5), **kw)
    return CityCondLayer(cfg, num_cities, d_h, rng_(seed))


def test_base_variant_is_identity_without_parameters():
    layer = _layer("base")
    h = Tensor(rng_(1).standard_normal((3, 4, 6)))
    out, alpha = layer(0, h)
    assert out is h and alpha is None
    assert layer.num_parameters() == 0


def test_cityid_layer_has_no_memory():
    layer = _layer("cityid")
    h = Tensor(rng_(1).standard_normal((3, 4, 6)))
    out, alpha = layer(1, h)
    assert out is h and alpha is None
    assert layer.bank is None and layer.num_parameters() == 2 * 4


def test_citymem_cold_start_is_identity():
    layer = _layer("citymem")
    h = Tensor(rng_(1).standard_normal((3, 4, 6)))
    out, alpha = layer(1, h)
    assert np.array_equal(out.data, h.data)
    assert alpha.shape == (3, 3)


def test_identity_at_init_still_passes_gradients():
    layer = _layer("citymem")
    h = Tensor(rng_(2).standard_normal((3, 4, 6)), requires_grad=True)
    out, _ = layer(0, h)
    (out * Tensor(rng_(3).standard_normal(out.shape))).sum().backward()
    assert np.any(layer.gate.W_m.grad != 0)
    # W_g, M and phi_q only see gradient through W_m, which is still zero;
    # one optimizer step on W_m opens that path
    layer.gate.W_m.data += 0.1
    layer.zero_grad()
    out, _ = layer(0, h)
    (out * Tensor(rng_(3).standard_normal(out.shape))).sum().backward()
    for p in (layer.gate.W_g, layer.bank.M, layer.query.hidden.weight, layer.query.out.weight):
        assert np.any(p.grad != 0)


def test_parameter_count_formula():
    for variant in ("base", "cityid", "citymem"):
        layer = CityCondLayer(CityCondConfig(variant=variant), 2, 64, rng_())
        assert layer.num_parameters() == layer.expected_parameters()
    citymem = CityCondLayer(CityCondConfig(), 2, 64, rng_())
    d_c, K, d_m, d_h = 16, 8, 32, 64
    phi_q = (d_c + d_h) * d_m + d_m + d_m * d_m + d_m
    assert citymem.num_parameters() == 2 * d_c + K * d_m + phi_q + (d_h + d_m) * d_h + d_m * d_h
    assert 2 * 16 + 8 * 32 == 288


@given(st.integers(1, 5), st.integers(0, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 8))
def test_parameter_count_matches_allocation(C, d_c, K, d_m, d_h):
    layer = CityCondLayer(CityCondConfig(d_c=d_c, K=K, d_m=d_m), C, d_h, rng_())
    assert layer.num_parameters() == count_citycond_params("citymem", C, d_c, K, d_m, d_h)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["mean", "max"]), st.booleans())
def test_attention_rows_sum_to_one(seed, pooling, nodes):
    layer = _layer("citymem", seed=seed % 1000, pooling=pooling)
    rng = rng_(seed)
    shape = (2, 3, 4, 6) if nodes else (2, 3, 6)
    _, alpha = layer(int(seed % 2), Tensor(rng.standard_normal(shape) * 3), has_nodes=nodes)
    assert np.all(alpha.data >= 0)
    assert np.all(np.abs(alpha.data.sum(axis=-1) - 1.0) <= 1e-12)


@given(st.integers(0, 10_000))
def test_global_ablation_ignores_city(seed):
    layer = _layer("citymem", seed=seed, use_city_embedding_in_query=False)
    h = Tensor(rng_(seed + 1).standard_normal((3, 4, 6)))
    _, a0 = layer(0, h)
    _, a1 = layer(1, h)
    assert np.array_equal(a0.data, a1.data)


def test_city_swap_changes_attention_after_training_step():
    layer = _layer("citymem", seed=4)
    rng = rng_(5)
    h = Tensor(rng.standard_normal((3, 4, 6)))
    layer.gate.W_m.data[:] = rng.standard_normal(layer.gate.W_m.shape)
    for c in (0, 1):
        layer.zero_grad()
        out, _ = layer(c, h)
        (out * Tensor(rng.standard_normal(out.shape))).sum().backward()
        layer.embedding.table.data -= 0.5 * layer.embedding.table.grad
    _, a0 = layer(0, h)
    _, a1 = layer(1, h)
    assert np.max(np.abs(a0.data - a1.data)) > 1e-9


def test_layer_shape_preserved_without_node_axis():
    layer = _layer("citymem")
    h = Tensor(rng_(1).standard_normal((4, 7, 6)))
    layer.gate.W_m.data[:] = 1.0
    out, alpha = layer(0, h, has_nodes=False)
    assert out.shape == h.shape and alpha.shape == (4, 7, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        CityCondConfig(variant="other")
    with pytest.raises(ValueError):
        CityCondConfig(pooling="median")
    with pytest.raises(ValueError):
        CityCondConfig(K=0)
