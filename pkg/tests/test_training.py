import numpy as np
import pytest

from funcdict import geometry as geo
from funcdict.errors import InvalidConfig
from funcdict.loss import grad_wrt_A, loss_value
from funcdict.model import backward, forward
from funcdict.numerics import RngStream
from funcdict.solver import solve_box_ls, solve_shared_box_ls
from funcdict.training import (
    TrainConfig,
    batch_gradients,
    fit,
    make_sampler,
    partial_blacklist,
    predict,
    siamese_gradients,
    train_step,
)
from oracles import central_difference, rel_err

SMALL = dict(k=6, local=(16, 16), head=(16,), batch_size=4)


@pytest.fixture(scope="module")
def tables():
    return geo.generate_family("table4", 12, 128, RngStream(0))


def batch_loss(params, batch, cfg):
    A, _ = forward(params, np.stack([s.points for s, _ in batch]), cfg.mode)
    total = 0.0
    for Ab, (_, p) in zip(A, batch):
        x, _ = solve_box_ls(Ab, p.values)
        total += loss_value(Ab, x, p.values, cfg.gamma)
    return total / len(batch)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(k=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(mode="nope")
    with pytest.raises(InvalidConfig):
        TrainConfig(mode="map", siamese=True)
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"k": 3, "colour": 1})
    cfg = TrainConfig(k=4, mode="segmentation")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg and cfg.mode == "seg"


def test_stochastic_descent_sanity():
    shapes = geo.generate_family("table4", 64, 256, RngStream(1))
    cfg = TrainConfig(k=10, batch_size=8, steps=200, seed=1)
    sampler = make_sampler(shapes, cfg)
    res = fit(shapes, cfg, max_new_steps=0, sampler=sampler)
    params, state = res.params, res.state
    decreased = 0
    order = RngStream(1).child("order").gen
    for step in range(200):
        idx = order.choice(len(shapes), cfg.batch_size, replace=False)
        batch = [sampler.draw(int(i), step, slot) for slot, i in enumerate(idx)]
        before = batch_loss(params, batch, cfg)
        params, state, _ = train_step(params, state, batch, cfg)
        decreased += batch_loss(params, batch, cfg) <= before
    assert decreased >= 160


def test_zero_gradient_at_exact_span(tables):
    # rows of a segmentation dictionary sum to one, so f = 1 is reproduced by x = 1
    cfg = TrainConfig(gamma=0.0, **SMALL)
    res = fit(tables, cfg, max_new_steps=0)
    batch = [(s, geo.part_indicator(s, range(5))) for s in tables[:4]]
    new, _, m = train_step(res.params, res.state, batch, cfg)
    assert m.F_mean < 1e-20
    assert np.linalg.norm(new.flat() - res.params.flat()) < 1e-8


def test_batch_gradient_is_mean_of_chain_rule(tables):
    cfg = TrainConfig(gamma=0.5, **SMALL)
    params = fit(tables, cfg, max_new_steps=0).params
    gen = np.random.default_rng(0)
    batch = [(s, geo.sample_part_indicator(s, gen)) for s in tables[:3]]
    grads = batch_gradients(params, batch, cfg)[0]
    want = [np.zeros_like(w) for w in params.weights]
    for s, p in batch:
        A, trace = forward(params, s.points, "seg")
        x, _ = solve_box_ls(A, p.values)
        for w, g in zip(want, backward(trace, grad_wrt_A(A, x, p.values, 0.5))):
            w += g / 3
    assert all(np.allclose(a, b, atol=1e-13) for a, b in zip(grads, want))


def test_determinism_and_chunked_resume(tables):
    cfg = TrainConfig(steps=9, seed=5, **SMALL)
    a = fit(tables, cfg)
    b = fit(tables, cfg)
    assert np.array_equal(a.params.flat(), b.params.flat())
    assert a.rows == b.rows
    part = fit(tables, cfg, max_new_steps=4)
    rest = fit(tables, cfg, part.params, part.state)
    assert rest.state.step == 9
    assert np.array_equal(rest.params.flat(), a.params.flat())
    assert part.rows + rest.rows == a.rows


@pytest.mark.parametrize("mode", ["key", "map"])
def test_other_modes_train(tables, mode):
    cfg = TrainConfig(mode=mode, gamma=0.0, steps=3, **SMALL)
    res = fit(tables, cfg)
    assert res.state.step == 3 and all(np.isfinite(r["loss"]) for r in res.rows)
    A = predict(res.params, tables, mode)
    assert A.shape == (12, 128, 6)


def test_siamese_self_pair_doubles_gradient(tables):
    cfg = TrainConfig(gamma=0.3, siamese=True, **SMALL)
    params = fit(tables, cfg, max_new_steps=0).params
    gen = np.random.default_rng(1)
    probes = [(s, geo.sample_part_indicator(s, gen)) for s in tables[:3]]
    g_pair = siamese_gradients(params, [(sp, sp) for sp in probes], cfg)[0]
    g_single = batch_gradients(params, probes, cfg)[0]
    assert all(np.allclose(a, 2 * b, atol=1e-9) for a, b in zip(g_pair, g_single))


def test_siamese_objective_finite_differences(tables):
    gen = np.random.default_rng(2)
    A1, A2 = gen.random((20, 4)), gen.random((20, 4))
    f1 = geo.part_indicator(tables[0], (0,)).values[:20]
    f2 = geo.part_indicator(tables[1], (0,)).values[:20]
    x, _ = solve_shared_box_ls(A1, f1, A2, f2)

    def pair_obj(M):
        return loss_value(M, x, f1, 0.0) + loss_value(A2, x, f2, 0.0)

    assert rel_err(grad_wrt_A(A1, x, f1, 0.0), central_difference(pair_obj, A1, 1e-6)) < 1e-5


def test_siamese_partner_shares_subset(tables):
    cfg = TrainConfig(siamese=True, **SMALL)
    sampler = make_sampler(tables, cfg)
    (s1, p1), (s2, p2) = sampler.draw(0, 0, 0)
    assert s1 is tables[0] and s2 is not s1
    np.testing.assert_array_equal(p2.values, geo.part_indicator(s2, p1.subset).values)


def test_partial_blacklist():
    shapes = geo.generate_family("table4", 10, 128, RngStream(2))
    allowed = partial_blacklist(shapes, 0.5, RngStream(0))
    assert sum(len(a) for a in allowed) == 25
    assert partial_blacklist(shapes, 0.0, RngStream(0)) == [tuple(range(5))] * 10
    cfg = TrainConfig(partial_fraction=0.5, **SMALL)
    sampler = make_sampler(shapes, cfg)
    for i in sampler.usable():
        for step in range(5):
            shape, probe = sampler.draw(i, step, 0)
            assert set(probe.subset) <= set(sampler.allowed[i])
