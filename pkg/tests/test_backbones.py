import numpy as np
import pytest

from citycond import tensor as T
from citycond.backbones import Adjacency, BackboneSpec, GraphConv, build_backbone
from citycond.engine.optim import Adam
from citycond.errors import ContractError, UnsupportedVariantError
from citycond.gradcheck import spot_check
from citycond.layer import CityCondConfig
from citycond.tensor import ShapeError, Tensor

TRAFFIC = ("gru", "tcn", "transformer", "gnn", "stgcn")
VARIANTS = ("base", "cityid", "citymem")
TINY = dict(d_h=16)
N, L_H, L_F = 5, 8, 3


def tiny_cond(variant):
    return CityCondConfig(variant=variant, d_c=4, K=3, d_m=8)


def make(kind, variant="citymem", shapes=((N, L_F), (N, L_F)), L_h=L_H, d_x=1, seed=0, **spec):
    return build_backbone(BackboneSpec(kind=kind, **{**TINY, **spec}), tiny_cond(variant), list(shapes),
                          L_h, d_x, seed)


def random_adjacency(n, seed=0):
    rng = np.random.default_rng(seed)
    return Adjacency.from_coordinates(rng.uniform(size=(n, 2)), threshold=0.05)


def run(model, x, c=0, adjacency=None):
    if model.spec.adjacency_required and adjacency is None:
        adjacency = random_adjacency(x.shape[2])
    return model(Tensor(x), c, adjacency)


def batch(seed=0, B=2, n=N, L=L_H, d_x=1):
    return np.random.default_rng(seed).standard_normal((B, L, n, d_x))


# ------------------------------------------------------------------ shapes and hooks

@pytest.mark.parametrize("kind", TRAFFIC)
@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shape_and_hook_shape_preserved(kind, variant):
    model = make(kind, variant)
    seen = []
    orig = model.hook

    def spy(c, h):
        out = orig(c, h)
        seen.append((h.shape, out.shape))
        return out

    model.hook = spy
    y = run(model, batch())
    assert y.shape == (2, L_F, N, 1)
    assert len(seen) == 1 and seen[0][0] == seen[0][1]


@pytest.mark.parametrize("kind", TRAFFIC)
def test_zero_input_gives_finite_output(kind):
    model = make(kind)
    for head in getattr(model, "heads", []):
        head.bias.data[:] = 0.0
    y = run(model, np.zeros((1, L_H, N, 1)))
    assert y.is_finite()


@pytest.mark.parametrize("kind", TRAFFIC)
def test_wrong_window_length_is_contract_error(kind):
    with pytest.raises(ContractError):
        run(make(kind), batch(L=L_H + 1))


def test_metr_la_shapes_transformer():
    model = make("transformer", "base", shapes=[(207, 12)], L_h=12)
    y = run(model, batch(B=1, n=207, L=12))
    assert y.shape == (1, 12, 207, 1)


def test_pems_bay_horizon_stgcn():
    model = make("stgcn", "citymem", shapes=[(7, 6)], L_h=12)
    y = run(model, batch(B=1, n=7, L=12))
    assert y.shape == (1, 6, 7, 1)


def test_mixed_city_shapes_use_per_city_io():
    model = make("gru", "cityid", shapes=[(5, 3), (7, 2)])
    assert run(model, batch(n=5), c=0).shape == (2, 3, 5, 1)
    assert run(model, batch(n=7), c=1).shape == (2, 2, 7, 1)
    with pytest.raises(ContractError):
        run(model, batch(n=7), c=0)


# ------------------------------------------------------------------ gradients

@pytest.mark.parametrize("kind", TRAFFIC)
@pytest.mark.parametrize("variant", VARIANTS)
def test_full_model_spot_check(kind, variant):
    for seed in (13, 21, 42):
        model = make(kind, variant, seed=seed)
        rng = np.random.default_rng(seed)
        # open the memory path so its parameters carry gradient
        if variant == "citymem":
            model.citycond.gate.W_m.data[:] = rng.normal(0, 0.3, model.citycond.gate.W_m.shape)
        for p in model.parameters():
            if np.all(p.data == 0):
                p.data[:] = rng.normal(0, 0.1, p.shape)
        x, y = batch(seed), rng.standard_normal((2, L_F, N, 1))
        adjacency = random_adjacency(N, seed)

        def loss():
            return T.mean(T.square(run(model, x, 1, adjacency) - Tensor(y)))

        errors = spot_check(loss, model.parameters(), rng, count=6)
        assert max(errors) < 1e-3, (kind, variant, seed, errors)


@pytest.mark.parametrize("kind", ("gru", "tcn", "transformer"))
@pytest.mark.parametrize("variant", VARIANTS)
def test_single_adam_step_reduces_loss(kind, variant):
    model = make(kind, variant)
    rng = np.random.default_rng(1)
    x, y = batch(1, B=4), rng.standard_normal((4, L_F, N, 1))
    opt = Adam(dict(model.named_parameters()), lr=1e-3)
    loss = T.mean(T.square(run(model, x) - Tensor(y)))
    loss.backward()
    opt.step()
    after = T.mean(T.square(run(model, x) - Tensor(y)))
    assert after.item() < loss.item()


# ------------------------------------------------------------------ parameter accounting

@pytest.mark.parametrize("kind", TRAFFIC)
def test_parameter_counts_monotone_and_exact(kind):
    counts = {v: make(kind, v).num_parameters() for v in VARIANTS}
    assert counts["citymem"] > counts["cityid"] > counts["base"]
    model = make(kind, "citymem")
    assert counts["citymem"] - counts["base"] == model.expected_conditioning_parameters()
    cityid = make(kind, "cityid")
    assert counts["cityid"] - counts["base"] == cityid.expected_conditioning_parameters()


def test_lstm_traj_parameter_counts():
    base = make("lstm_traj", "base", shapes=[(3, 10)], L_h=20, d_x=2)
    cityid = make("lstm_traj", "cityid", shapes=[(3, 10)], L_h=20, d_x=2)
    assert cityid.num_parameters() - base.num_parameters() == cityid.expected_conditioning_parameters()


@pytest.mark.parametrize("kind", TRAFFIC)
def test_base_and_citymem_share_backbone_initialization(kind):
    x = batch(3)
    y_base = run(make(kind, "base"), x).data
    y_mem = run(make(kind, "citymem"), x).data
    assert np.array_equal(y_base, y_mem)


# ------------------------------------------------------------------ graph backbones

def test_adjacency_propagation_rows_sum_to_one():
    adj = random_adjacency(9, 4)
    assert np.all(np.abs(adj.propagation.sum(axis=1) - 1.0) <= 1e-12)
    with pytest.raises(ShapeError):
        Adjacency(np.ones((2, 3)))
    with pytest.raises(ValueError):
        Adjacency(-np.ones((2, 2)))


@pytest.mark.parametrize("kind", ("gnn", "stgcn"))
def test_identity_graph_equals_disabled_message_passing(kind):
    model = make(kind, "citymem")
    x = batch(5)
    ident = run(model, x, adjacency=Adjacency(np.zeros((N, N)))).data
    off = model(Tensor(x), 0, False).data
    assert np.max(np.abs(ident - off)) < 1e-12


def test_path_graph_propagation_by_hand():
    rng = np.random.default_rng(2)
    conv = GraphConv(2, 3, 1, rng)
    adj = Adjacency([[0.0, 1.0], [1.0, 0.0]])
    h = rng.standard_normal((2, 2))
    out = conv(Tensor(h), Tensor(adj.propagation)).data
    W0, W1, b = conv.weights[0].data, conv.weights[1].data, conv.bias.data
    mean = (h[0] + h[1]) / 2
    for i in range(2):
        ref = h[i] @ W0 + mean @ W1 + b
        assert np.max(np.abs(out[i] - ref)) < 1e-12


@pytest.mark.parametrize("kind", ("gnn", "stgcn"))
@pytest.mark.parametrize("variant", VARIANTS)
def test_node_permutation_equivariance(kind, variant):
    model = make(kind, variant)
    if variant == "citymem":
        model.citycond.gate.W_m.data[:] = 0.3
    adj = random_adjacency(N, 7)
    x = batch(6)
    perm = np.random.default_rng(8).permutation(N)
    y = run(model, x, adjacency=adj).data
    y_perm = run(model, x[:, :, perm], adjacency=adj.permuted(perm)).data
    inv = np.argsort(perm)
    assert np.max(np.abs(y_perm[:, :, inv] - y)) < 1e-9


def test_graph_backbone_needs_adjacency():
    with pytest.raises(ContractError):
        make("gnn")(Tensor(batch()), 0, None)


def test_adjacency_node_mismatch():
    with pytest.raises(ShapeError):
        run(make("gnn"), batch(), adjacency=random_adjacency(N + 1))


# ------------------------------------------------------------------ trajectory model

def test_lstm_traj_rejects_citymem():
    with pytest.raises(UnsupportedVariantError):
        make("lstm_traj", "citymem", shapes=[(3, 10)], L_h=20, d_x=2)


@pytest.mark.parametrize("variant", ("base", "cityid"))
def test_lstm_traj_shapes(variant):
    model = make("lstm_traj", variant, shapes=[(4, 10), (4, 10)], L_h=20, d_x=2)
    y = model(Tensor(np.random.default_rng(0).standard_normal((3, 20, 4, 2))), 1)
    assert y.shape == (3, 10, 4, 2)


def test_lstm_traj_learns_to_stand_still():
    model = make("lstm_traj", "base", shapes=[(1, 10)], L_h=20, d_x=2)
    x = np.full((1, 20, 1, 2), 3.0)
    target = np.full((1, 10, 1, 2), 3.0)
    opt = Adam(dict(model.named_parameters()), lr=1e-2)
    for _ in range(300):
        loss = T.mean(T.square(model(Tensor(x), 0) - Tensor(target)))
        opt.zero_grad()
        loss.backward()
        opt.step()
    pred = model(Tensor(x), 0).data
    ade = np.mean(np.linalg.norm(pred - target, axis=-1))
    assert ade < 1e-2


def test_lstm_traj_spot_check():
    for variant in ("base", "cityid"):
        model = make("lstm_traj", variant, shapes=[(3, 4), (3, 4)], L_h=6, d_x=2, seed=1)
        rng = np.random.default_rng(3)
        x = np.cumsum(rng.standard_normal((2, 6, 3, 2)), axis=1)
        y = rng.standard_normal((2, 4, 3, 2))
        for p in model.parameters():
            if np.all(p.data == 0):
                p.data[:] = rng.normal(0, 0.1, p.shape)
        loss = lambda: T.mean(T.square(model(Tensor(x), 1) - Tensor(y)))
        assert max(spot_check(loss, model.parameters(), rng, count=6)) < 1e-3


def test_unknown_backbone_kind():
    with pytest.raises(ValueError):
        BackboneSpec(kind="lstm")


def test_spec_defaults_follow_layer_counts():
    assert BackboneSpec("transformer").layers == 4
    assert BackboneSpec("gru").layers == 2
    assert BackboneSpec("tcn").dilations == (1, 2, 4, 8)
