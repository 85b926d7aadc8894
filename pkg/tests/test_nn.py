import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traji.nn import (Adam, NetworkSpec, ShapeError, Slot, forward, grad, gradient_penalty, init_params, layout,
                      n_params, nonneg_mask, time_embed, unflatten)

SPEC = NetworkSpec((Slot("state", 2), Slot("noise", 3, "raw"), Slot("t", 1, "time"), Slot("r", 1, "reward")),
                   out_dim=2, feature_width=4, time_dim=5, hidden=(6, 6))


def numpy_forward(spec, flat, inputs):
    """Plain numpy evaluation used as an independent oracle for the jax path."""
    p = {k: np.asarray(v, dtype=np.float64) for k, v in unflatten(spec, flat).items()}
    relu = lambda x: np.maximum(x, 0)
    feats = []
    for s in spec.slots:
        x = np.asarray(inputs[s.name], dtype=np.float64)
        if s.kind == "dense":
            feats.append(relu(x @ p[f"{s.name}.W"] + p[f"{s.name}.b"]))
        elif s.kind == "raw":
            feats.append(x)
        elif s.kind == "time":
            z = x.reshape(-1, 1) * p[f"{s.name}.w"] + p[f"{s.name}.phi"]
            feats.append(np.concatenate([z[:, :1], np.sin(z[:, 1:])], axis=1))
    h = np.concatenate(feats, axis=1)
    for s in spec.slots:
        if s.kind == "reward":
            r = np.repeat(np.asarray(inputs[s.name], dtype=np.float64).reshape(-1, 1), h.shape[1], axis=1)
            h = np.concatenate([h, r @ p[f"{s.name}.K"] + p[f"{s.name}.b"]], axis=1)
    for i in range(len(spec.hidden)):
        h = relu(h @ p[f"h{i}.W"] + p[f"h{i}.b"])
    return h @ p["out.W"] + p["out.b"]


def batch(rng, n=7):
    return {"state": rng.normal(size=(n, 2)), "noise": rng.normal(size=(n, 3)), "t": rng.uniform(size=n),
            "r": rng.choice([-1.0, 1.0], size=n)}


def params64(spec, seed=0):
    # larger output weights than the default init so gradients are not tiny
    p = np.asarray(init_params(spec, np.random.default_rng(seed), np.float64))
    return jnp.asarray(p + np.random.default_rng(seed + 1).normal(0, 0.3, p.shape) * ~nonneg_mask(spec))


class TestLayout:
    def test_counts(self):
        f = 4 + 3 + 5
        want = (2 * 4 + 4) + 2 * 5 + (f * f + f) + (2 * f * 6 + 6) + (6 * 6 + 6) + (6 * 2 + 2)
        assert n_params(SPEC) == want

    def test_contiguous(self):
        off = 0
        for _, shape, o in layout(SPEC):
            assert o == off
            off += math.prod(shape)

    def test_mask_covers_reward_kernel(self):
        assert nonneg_mask(SPEC).sum() == 12 * 12

    def test_init_reward_kernel_nonneg(self):
        p = np.asarray(init_params(SPEC, np.random.default_rng(0)))
        assert np.all(p[nonneg_mask(SPEC)] >= 0)
        assert p.dtype == np.float32

    def test_spec_roundtrip(self):
        assert NetworkSpec.from_dict(SPEC.to_dict()) == SPEC

    def test_bad_slot(self):
        with pytest.raises(ValueError):
            Slot("x", 2, "conv")
        with pytest.raises(ValueError):
            NetworkSpec((Slot("a", 1, "reward"), Slot("b", 1, "reward")), 1)


class TestForward:
    def test_matches_numpy(self):
        rng = np.random.default_rng(1)
        p = params64(SPEC)
        x = batch(rng)
        np.testing.assert_allclose(forward(SPEC, p, x), numpy_forward(SPEC, p, x), rtol=1e-10, atol=1e-12)

    def test_time_embed(self):
        out = time_embed(jnp.array([0.5, 2.0]), jnp.array([2.0, 3.0, 1.0]), jnp.array([1.0, 0.5, 0.0]))
        want = [[2.0, math.sin(2.0), math.sin(0.5)], [5.0, math.sin(6.5), math.sin(2.0)]]
        np.testing.assert_allclose(out, want, rtol=1e-12)

    def test_missing_slot(self):
        x = batch(np.random.default_rng(0))
        del x["noise"]
        with pytest.raises(ShapeError):
            forward(SPEC, params64(SPEC), x)

    def test_wrong_width(self):
        x = batch(np.random.default_rng(0))
        x["state"] = np.zeros((7, 3))
        with pytest.raises(ShapeError):
            forward(SPEC, params64(SPEC), x)

    def test_time_embedding_width(self):
        spec = NetworkSpec((Slot("t", 1, "time"),), out_dim=1, hidden=())
        assert spec.trunk_in == 76
        rng = np.random.default_rng(0)
        p = unflatten(spec, init_params(spec, rng, np.float64))
        z = np.asarray(time_embed(jnp.array([1e3]), p["t.w"], p["t.phi"]))
        assert z.shape == (1, 76)
        # only the affine component can leave [-1, 1]
        assert abs(z[0, 0]) > 1 and np.all(np.abs(z[0, 1:]) <= 1)

    def test_wrong_param_count(self):
        with pytest.raises(ShapeError):
            unflatten(SPEC, jnp.zeros(5))


class TestGrad:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        p = params64(SPEC)
        x = batch(rng)
        loss = lambda q: jnp.sum(forward(SPEC, q, x) ** 2)
        g = np.asarray(grad(SPEC, p, loss))
        idx = rng.choice(n_params(SPEC), 40, replace=False)
        h = 1e-6
        for i in idx:
            e = np.zeros(n_params(SPEC))
            e[i] = h
            fd = (float(loss(p + e)) - float(loss(p - e))) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_nonfinite_loss_raises(self):
        from traji.env import NumericError

        with pytest.raises(NumericError):
            grad(SPEC, params64(SPEC), lambda q: jnp.sum(q) * jnp.inf)


LINEAR = NetworkSpec((Slot("action", 3, "raw"),), out_dim=1, hidden=())


class TestGradientPenalty:
    def test_linear_critic_closed_form(self):
        # critic(a) = a.W + b has input gradient W everywhere, whatever the interpolates
        rng = np.random.default_rng(3)
        W = np.array([0.3, -1.2, 2.0])
        p = jnp.asarray(np.concatenate([W, [0.7]]))
        real, fake = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        value, g = gradient_penalty(LINEAR, p, real, fake, lam=10.0, rng=rng)
        norm = np.linalg.norm(W)
        assert float(value) == pytest.approx(10 * (norm - 1) ** 2, rel=1e-9)
        np.testing.assert_allclose(g[:3], 20 * (norm - 1) * W / norm, rtol=1e-9)
        assert float(g[3]) == 0.0

    def test_unit_norm_zero_penalty(self):
        p = jnp.asarray([0.6, 0.8, 0.0, 5.0])
        value, _ = gradient_penalty(LINEAR, p, np.ones((4, 3)), np.zeros((4, 3)), u=np.full(4, 0.5))
        assert float(value) == pytest.approx(0.0, abs=1e-10)

    def test_fd_fallback_agrees(self):
        spec = NetworkSpec((Slot("state", 2), Slot("action", 2, "raw")), out_dim=1, feature_width=3, hidden=(4,))
        p = params64(spec, 4)
        rng = np.random.default_rng(5)
        ctx = {"state": jnp.asarray(rng.normal(size=(6, 2)))}
        real, fake, u = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.uniform(size=6)
        v1, g1 = gradient_penalty(spec, p, real, fake, u=u, context=ctx)
        v2, g2 = gradient_penalty(spec, p, real, fake, u=u, context=ctx, method="fd")
        assert float(v1) == pytest.approx(float(v2))
        np.testing.assert_allclose(g1, g2, rtol=1e-4, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gradient_penalty(LINEAR, jnp.zeros(4), np.zeros((2, 3)), np.zeros((3, 3)))


def numpy_adam(params, grads, lr, b1, b2, eps=1e-8):
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        params = params - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return params


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        opt = Adam(lr=0.1)
        p = jnp.zeros(3, dtype=jnp.float64)
        new, _ = opt.step(opt.init(p), p, jnp.asarray([2.0, -0.5, 1e-3]))
        np.testing.assert_allclose(new, [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_matches_numpy(self):
        rng = np.random.default_rng(6)
        p0 = rng.normal(size=5)
        grads = rng.normal(size=(10, 5))
        opt = Adam(lr=1e-2, beta1=0.9, beta2=0.999)
        p, st_ = jnp.asarray(p0), opt.init(jnp.asarray(p0))
        for g in grads:
            p, st_ = opt.step(st_, p, jnp.asarray(g))
        np.testing.assert_allclose(p, numpy_adam(p0, grads, 1e-2, 0.9, 0.999), rtol=1e-10)
        assert int(st_.count) == 10

    def test_zero_gradient_keeps_params(self):
        opt = Adam(lr=0.1)
        p = jnp.asarray([1.0, -2.0])
        new, _ = opt.step(opt.init(p), p, jnp.zeros(2))
        np.testing.assert_array_equal(new, p)

    def test_constant_gradient_step_size(self):
        opt = Adam(lr=0.01, beta1=0.5, beta2=0.9)
        p = jnp.zeros(2, dtype=jnp.float64)
        s = opt.init(p)
        for _ in range(200):
            prev = p
            p, s = opt.step(s, p, jnp.asarray([3.0, -0.2]))
        np.testing.assert_allclose(np.asarray(p - prev), [-0.01, 0.01], rtol=1e-5)

    def test_mask_projects(self):
        mask = np.array([True, False])
        opt = Adam(lr=1.0, mask=mask)
        p = jnp.asarray([0.1, 0.1])
        new, _ = opt.step(opt.init(p), p, jnp.asarray([1.0, 1.0]))
        assert float(new[0]) == 0.0 and float(new[1]) < 0

    def test_shape_mismatch(self):
        opt = Adam()
        p = jnp.zeros(3)
        with pytest.raises(ShapeError):
            opt.step(opt.init(p), p, jnp.zeros(2))

    def test_minimizes_quadratic(self):
        opt = Adam(lr=0.05, beta1=0.9, beta2=0.999)
        p = jnp.asarray([3.0, -2.0])
        s = opt.init(p)
        for _ in range(500):
            p, s = opt.step(s, p, 2 * p)
        assert float(jnp.max(jnp.abs(p))) < 1e-2


@settings(max_examples=60, deadline=None)
@given(lr=st.floats(1e-4, 1.0), g=st.lists(st.floats(-100, 100), min_size=4, max_size=4))
def test_adam_mask_keeps_nonnegative(lr, g):
    mask = np.array([True, True, False, False])
    opt = Adam(lr=lr, mask=mask)
    p = jnp.asarray([0.0, 0.5, 0.0, 0.5])
    new, _ = opt.step(opt.init(p), p, jnp.asarray(g))
    assert np.all(np.asarray(new)[mask] >= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 9))
def test_forward_batch_rows_independent(seed, n):
    rng = np.random.default_rng(seed)
    p = params64(SPEC, seed % 7)
    x = batch(rng, n)
    full = np.asarray(forward(SPEC, p, x))
    row = np.asarray(forward(SPEC, p, {k: v[-1:] for k, v in x.items()}))
    np.testing.assert_allclose(full[-1:], row, rtol=1e-10, atol=1e-12)
