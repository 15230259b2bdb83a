import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from funcdict.errors import InvalidConfig, InvalidInput, InvalidState, NumericError
from funcdict.model import (
    Architecture,
    ConstraintMode,
    ModelParams,
    OptimizerState,
    adam_step,
    backward,
    forward,
    init_params,
)
from funcdict.numerics import RngStream
from oracles import central_difference, rel_err

TINY = Architecture(k=2, local=(5, 4), head=(4,))
MODES = [ConstraintMode.SEG, ConstraintMode.KEY, ConstraintMode.MAP]


def test_init_deterministic_and_shapes():
    a = init_params(Architecture(), RngStream(1))
    b = init_params(Architecture(), RngStream(1))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert a.weights[-2].shape[1] == 10 and a.weights[-1].shape == (10,)
    assert a.names()[:4] == ["W0", "b0", "W1", "b1"]


def test_init_std_monte_carlo():
    arch = Architecture(k=10, local=(128, 128), head=(80,))
    p = init_params(arch, RngStream(2))
    for (fan_in, _), W in zip(arch.layer_shapes(), p.weights[::2]):
        if W.size >= 10_000:
            assert abs(W.std() / np.sqrt(2 / fan_in) - 1) < 0.2


@pytest.mark.parametrize("mode", MODES)
def test_forward_constraints(mode):
    p = init_params(Architecture(), RngStream(3))
    X = np.random.default_rng(3).normal(size=(4, 64, 3))
    A, _ = forward(p, X, mode)
    assert A.shape == (4, 64, 10)
    if mode is ConstraintMode.SEG:
        np.testing.assert_allclose(A.sum(axis=2), 1.0, atol=1e-12)
    elif mode is ConstraintMode.KEY:
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    else:
        np.testing.assert_allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-12)


def generic_params(arch, seed):
    """He init plus small random biases.

    Zero biases can put a pre-activation exactly on the ReLU kink (a point whose
    previous layer is entirely dead), where central differences are not a
    derivative oracle.
    """
    p = init_params(arch, RngStream(seed))
    gen = RngStream(seed).child("bias").gen
    for i in range(1, len(p.weights), 2):
        p.weights[i] = 0.1 * gen.normal(size=p.weights[i].shape)
    return p


@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(MODES))
def test_permutation_equivariance(seed, mode):
    gen = np.random.default_rng(seed)
    p = init_params(Architecture(k=4), RngStream(seed))
    X = gen.normal(size=(40, 3))
    perm = gen.permutation(40)
    A, _ = forward(p, X, mode)
    B, _ = forward(p, X[perm], mode)
    np.testing.assert_allclose(B, A[perm], atol=1e-9)


def test_forward_input_errors():
    p = init_params(Architecture(k=10), RngStream(0))
    with pytest.raises(InvalidInput):
        forward(p, np.zeros((5, 3)), "seg")
    with pytest.raises(InvalidInput):
        forward(p, np.zeros((20, 2)), "seg")
    with pytest.raises(InvalidConfig):
        forward(p, np.zeros((20, 3)), "bogus")
    bad = p.copy()
    bad.weights[0][0, 0] = np.inf
    with pytest.raises(NumericError) as err:
        forward(bad, np.ones((20, 3)), "seg")
    assert err.value.layer == 0


@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(MODES))
def test_backward_finite_differences(seed, mode):
    gen = np.random.default_rng(seed)
    p = generic_params(TINY, seed)
    X = gen.normal(size=(2, 8, 3))
    G0 = gen.normal(size=(2, 8, 2))
    _, trace = forward(p, X, mode)
    # finite differences only approximate the derivative where no ReLU or
    # max-pool switch lies within the stencil
    assume(min(np.abs(z).min() for z in trace.pre) > 1e-3)
    top2 = np.sort(trace.post[len(TINY.local) - 1], axis=1)[:, -2:]
    assume((top2[:, 1] - top2[:, 0]).min() > 1e-3)
    # column normalization has curvature ~1/norm^2; tiny norms make the h=1e-5
    # stencil's truncation error dominate
    assume(trace.col_norm is None or trace.col_norm.min() > 0.05)
    grads = backward(trace, G0)
    for i, W in enumerate(p.weights):

        def obj(M, i=i):
            q = p.copy()
            q.weights[i] = M
            return float(np.sum(forward(q, X, mode)[0] * G0))

        assert rel_err(grads[i], central_difference(obj, W, 1e-5)) < 1e-4


def test_backward_zero_and_row_null_direction():
    gen = np.random.default_rng(0)
    p = init_params(TINY, RngStream(0))
    X = gen.normal(size=(8, 3))
    _, trace = forward(p, X, "seg")
    assert all(np.all(g == 0) for g in backward(trace, np.zeros((8, 2))))
    G = gen.normal(size=(8, 2))
    a = backward(trace, G)
    b = backward(trace, G + gen.normal(size=(8, 1)))
    assert all(np.allclose(x, y, atol=1e-12) for x, y in zip(a, b))
    with pytest.raises(InvalidState):
        backward(trace, np.zeros((8, 3)))


def test_adam_zero_gradient():
    p = init_params(TINY, RngStream(0))
    s = OptimizerState.fresh(p, lr=0.1)
    q, s2 = adam_step(p, [np.zeros_like(w) for w in p.weights], s)
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, q.weights))
    assert s2.step == 1 and s.step == 0


def test_adam_descends_on_square():
    arch = Architecture(k=1)
    p = ModelParams(arch, [np.array([1.0])])
    s = OptimizerState.fresh(p, lr=0.1)
    traj = [1.0]
    for _ in range(20):
        p, s = adam_step(p, [2 * p.weights[0]], s)
        traj.append(p.weights[0][0])
    # steps are ~lr in size, so |w| shrinks monotonically until the first sign change
    # (step 12); after that momentum overshoots and |w| is no longer monotone
    cross = next(t for t, w in enumerate(traj) if w < 0)
    assert np.all(np.diff(np.abs(traj[:cross])) < 0)
    assert abs(traj[-1]) < abs(traj[0])


def test_adam_two_hand_steps():
    p = ModelParams(Architecture(k=1), [np.array([1.0, -2.0])])
    s = OptimizerState.fresh(p, lr=0.01)
    g1, g2 = np.array([0.5, -1.0]), np.array([0.2, 0.4])
    p, s = adam_step(p, [g1], s)
    p, s = adam_step(p, [g2], s)
    w = [1.0, -2.0]
    m = [0.0, 0.0]
    v = [0.0, 0.0]
    for t, g in ((1, g1), (2, g2)):
        for i in range(2):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i]
            mh = m[i] / (1 - 0.9**t)
            vh = v[i] / (1 - 0.999**t)
            w[i] = w[i] - 0.01 * mh / (vh**0.5 + 1e-8)
    np.testing.assert_allclose(p.weights[0], w, atol=1e-12, rtol=0)


def test_adam_rejects_nonfinite():
    p = ModelParams(Architecture(k=1), [np.array([1.0])])
    with pytest.raises(NumericError):
        adam_step(p, [np.array([np.nan])], OptimizerState.fresh(p))


def test_mode_parse():
    assert ConstraintMode.parse("segmentation") is ConstraintMode.SEG
    assert ConstraintMode.parse("KEY") is ConstraintMode.KEY
    arch = Architecture(k=3)
    assert Architecture.from_dict(arch.to_dict()) == arch
