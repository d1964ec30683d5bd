import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctsrl import nn
from ctsrl.nn import (AdamState, ConfigurationError, DiagGaussian, MlpSpec, NetworkParams, NonFiniteError,
                      UsageError, adam_step, clip_grad_norm, elu, elu_grad, init_params, l2_normalize,
                      mlp_backward, mlp_forward)


def identity_layer(normalize=False):
    spec = MlpSpec(2, (), 2, activation="identity", normalize_output=normalize)
    params = NetworkParams([(np.eye(2), np.zeros(2))])
    return spec, params


# -- elu ----------------------------------------------------------------------------------
def test_elu_zero_and_positive():
    assert elu(0.0) == 0.0
    assert elu(2.5) == 2.5


def test_elu_negative_matches_high_precision():
    mpmath.mp.dps = 30
    expected = float(mpmath.expm1(-1))
    assert abs(float(elu(-1.0)) - expected) < 1e-15
    assert round(float(elu(-1.0)), 10) == -0.6321205588


@given(st.floats(-30, 30))
def test_elu_derivative_branches(x):
    d = float(elu_grad(x))
    assert d == (1.0 if x > 0 else pytest.approx(math.exp(x), rel=1e-15))
    # the cached-output form agrees with the direct form
    assert float(elu_grad(x, elu(x))) == pytest.approx(d, abs=1e-15)


# -- forward ------------------------------------------------------------------------------
def test_identity_layer_forward():
    spec, params = identity_layer()
    out, _ = mlp_forward(params, spec, np.array([3.0, 4.0]))
    assert np.array_equal(out, [3.0, 4.0])


def test_normalized_identity_forward():
    spec, params = identity_layer(normalize=True)
    out, _ = mlp_forward(params, spec, np.array([3.0, 4.0]))
    assert np.allclose(out, [0.6, 0.8], atol=1e-15)


def scalar_forward(params, spec, x):
    """Reference pass written with plain loops."""
    h = [float(v) for v in x]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        out = []
        for r in range(w.shape[0]):
            acc = 0.0
            for c in range(w.shape[1]):
                acc += float(w[r, c]) * h[c]
            acc += float(b[r])
            if i < last and spec.activation == "elu":
                acc = acc if acc > 0 else math.expm1(acc)
            out.append(acc)
        h = out
    if spec.normalize_output:
        n = math.sqrt(sum(v * v for v in h))
        h = [v / n for v in h]
    return np.array(h)


@pytest.mark.parametrize("normalize", [False, True])
def test_forward_matches_scalar_loop(normalize):
    rng = np.random.default_rng(3)
    spec = MlpSpec(7, (9, 6), 4, normalize_output=normalize)
    params = init_params(spec, rng)
    for _, b in params.layers:
        b[:] = rng.normal(size=b.shape)
    x = rng.normal(size=7)
    out, _ = mlp_forward(params, spec, x)
    assert np.max(np.abs(out - scalar_forward(params, spec, x))) < 1e-12


def test_forward_rejects_wrong_input_length():
    spec, params = identity_layer()
    with pytest.raises(ConfigurationError):
        mlp_forward(params, spec, np.ones(3))


def test_forward_rejects_params_for_another_spec():
    spec = MlpSpec(3, (4,), 2)
    params = init_params(MlpSpec(3, (5,), 2), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        mlp_forward(params, spec, np.ones(3))


def test_spec_rejects_zero_width():
    with pytest.raises(ConfigurationError):
        MlpSpec(3, (0,), 2)


def test_forward_is_bitwise_deterministic():
    spec = MlpSpec(5, (8, 8), 3, normalize_output=True)
    params = init_params(spec, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(4, 5))
    a, _ = mlp_forward(params, spec, x)
    b, _ = mlp_forward(params, spec, x.copy())
    assert a.tobytes() == b.tobytes()


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16).filter(lambda v: np.linalg.norm(v) > 1e-6))
def test_normalized_output_has_unit_norm(u):
    z, _ = l2_normalize(np.array([u]))
    assert abs(np.linalg.norm(z) - 1.0) <= 1e-6


def test_degenerate_norm_outputs_first_basis_vector_with_zero_gradient():
    spec = MlpSpec(3, (), 3, activation="identity", normalize_output=True)
    params = NetworkParams([(np.zeros((3, 3)), np.zeros(3))])
    out, cache = mlp_forward(params, spec, np.ones(3))
    assert np.array_equal(out, [1.0, 0.0, 0.0])
    grads, gx = mlp_backward(cache, np.ones(3))
    assert np.all(gx == 0) and all(np.all(a == 0) for a in grads.arrays())


# -- backward -----------------------------------------------------------------------------
def test_linear_layer_gradient_closed_form():
    rng = np.random.default_rng(0)
    spec = MlpSpec(3, (), 2, activation="identity")
    params = init_params(spec, rng)
    x, g = rng.normal(size=3), rng.normal(size=2)
    _, cache = mlp_forward(params, spec, x)
    grads, gx = mlp_backward(cache, g)
    assert np.allclose(grads.layers[0][0], np.outer(g, x), atol=1e-15)
    assert np.allclose(grads.layers[0][1], g, atol=1e-15)
    assert np.allclose(gx, params.layers[0][0].T @ g, atol=1e-15)


def test_normalization_jacobian_hand_value():
    spec, params = identity_layer(normalize=True)
    _, cache = mlp_forward(params, spec, np.array([3.0, 4.0]))
    _, gx = mlp_backward(cache, np.array([1.0, 0.0]))
    assert np.allclose(gx, [0.128, -0.096], atol=1e-15)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=12), st.integers(0, 2**31 - 1))
def test_normalization_gradient_is_tangent(u, seed):
    u = np.array(u)
    if np.linalg.norm(u) < 1e-3:
        return
    d = len(u)
    spec = MlpSpec(d, (), d, activation="identity", normalize_output=True)
    params = NetworkParams([(np.eye(d), np.zeros(d))])
    z, cache = mlp_forward(params, spec, u)
    g = np.random.default_rng(seed).normal(size=d)
    _, gx = mlp_backward(cache, g)
    assert abs(float(z @ gx)) < 1e-8


def _fd_check(spec, params, x, g, step=1e-5):
    def f():
        return float(np.sum(g * mlp_forward(params, spec, x)[0]))

    _, cache = mlp_forward(params, spec, x)
    grads, gx = mlp_backward(cache, g)
    worst = 0.0
    for arr, garr in list(zip(params.arrays(), grads.arrays())) + [(x, gx)]:
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = f()
            arr[idx] = old - step
            down = f()
            arr[idx] = old
            num = (up - down) / (2 * step)
            worst = max(worst, abs(garr[idx] - num) / max(abs(garr[idx]), abs(num), 1e-6))
    return worst


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.lists(st.integers(1, 16), min_size=4, max_size=4), st.booleans(),
       st.integers(0, 2**31 - 1))
def test_backward_matches_finite_differences(n_layers, widths, normalize, seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(widths[0], tuple(widths[1:n_layers]), widths[n_layers], normalize_output=normalize)
    params = init_params(spec, rng)
    x = rng.normal(size=(2, spec.input_dim))
    g = rng.normal(size=(2, spec.output_dim))
    assert _fd_check(spec, params, x, g) < 1e-4


def test_backward_rejects_stale_cache():
    spec = MlpSpec(2, (3,), 2)
    params = init_params(spec, np.random.default_rng(0))
    _, cache = mlp_forward(params, spec, np.ones(2))
    grads, _ = mlp_backward(cache, np.ones(2))
    adam_step(params, grads, AdamState.for_params(params), 1e-3)
    with pytest.raises(UsageError):
        mlp_backward(cache, np.ones(2))


def test_backward_rejects_missing_cache():
    with pytest.raises(UsageError):
        mlp_backward(None, np.ones(2))


# -- Gaussian -----------------------------------------------------------------------------
def test_gaussian_log_prob_at_mean():
    d = DiagGaussian([0.3], [0.0])
    assert float(d.log_prob([0.3])) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert round(float(d.log_prob([0.3])), 6) == -0.918939


def test_gaussian_entropy_two_dims():
    d = DiagGaussian([0.0, 1.0], [0.0, 0.0])
    assert float(d.entropy()) == pytest.approx(2 * (0.5 + 0.5 * math.log(2 * math.pi)), abs=1e-15)
    assert round(float(d.entropy()), 6) == 2.837877


def test_gaussian_kl_to_self_is_zero():
    d = DiagGaussian([0.5, -1.0], [0.2, -0.3])
    assert float(d.kl_to(d)) == 0.0


def test_gaussian_kl_matches_numeric_integral():
    p, q = DiagGaussian([0.4], [np.log(0.7)]), DiagGaussian([-0.2], [np.log(1.3)])
    xs = np.linspace(-10, 10, 200001)[:, None]
    lp, lq = p.log_prob(xs), q.log_prob(xs)
    numeric = np.trapezoid(np.exp(lp) * (lp - lq), xs[:, 0])
    assert float(p.kl_to(q)) == pytest.approx(numeric, abs=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_entropy_increases_with_log_std(a, b):
    lo, hi = sorted((a, b))
    assert float(DiagGaussian([0.0, 0.0], [lo, 0.1]).entropy()) <= float(DiagGaussian([0.0, 0.0], [hi, 0.1]).entropy())


def test_log_prob_gradients_match_finite_differences():
    mean, log_std, a = np.array([0.2, -0.5]), np.array([0.1, -0.4]), np.array([0.7, 0.3])
    dm, ds = DiagGaussian(mean, log_std).log_prob_grads(a)
    h = 1e-6
    for i in range(2):
        e = np.eye(2)[i] * h
        num_m = (DiagGaussian(mean + e, log_std).log_prob(a) - DiagGaussian(mean - e, log_std).log_prob(a)) / (2 * h)
        num_s = (DiagGaussian(mean, log_std + e).log_prob(a) - DiagGaussian(mean, log_std - e).log_prob(a)) / (2 * h)
        assert dm[i] == pytest.approx(num_m, rel=1e-7)
        assert ds[i] == pytest.approx(num_s, rel=1e-7)


# -- Adam ---------------------------------------------------------------------------------
def _single_param(value):
    return NetworkParams([(np.array([[value]]), np.array([0.0]))])


def test_adam_zero_gradient_is_a_no_op():
    p = _single_param(1.5)
    st_ = AdamState.for_params(p)
    adam_step(p, p.zeros_like(), st_, 1e-3)
    assert p.layers[0][0][0, 0] == 1.5
    assert all(np.all(m == 0) for m in st_.first_moment + st_.second_moment)
    assert st_.step_count == 1


def test_adam_first_step_is_sign_times_lr():
    p = _single_param(0.0)
    g = _single_param(0.0)
    g.layers[0][0][0, 0] = 3.0
    g.layers[0][1][0] = -0.5
    adam_step(p, g, AdamState.for_params(p), 1e-2)
    assert p.layers[0][0][0, 0] == pytest.approx(-1e-2, rel=1e-6)
    assert p.layers[0][1][0] == pytest.approx(1e-2, rel=1e-6)


def test_adam_two_step_trace_matches_scalar_oracle():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    grads = [0.7, -0.2]
    theta, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p = _single_param(1.0)
    state = AdamState.for_params(p)
    for g in grads:
        gp = p.zeros_like()
        gp.layers[0][0][0, 0] = g
        adam_step(p, gp, state, lr)
    assert abs(p.layers[0][0][0, 0] - theta) < 1e-12
    assert state.step_count == 2


def test_adam_nan_gradient_names_the_network():
    p = _single_param(0.0)
    g = p.zeros_like()
    g.layers[0][0][0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="critic"):
        adam_step(p, g, AdamState.for_params(p), 1e-3, name="critic")


def test_clip_grad_norm_scales_to_max():
    g = NetworkParams([(np.array([[3.0]]), np.array([4.0]))])
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.hypot(g.layers[0][0][0, 0], g.layers[0][1][0]) == pytest.approx(1.0)


def test_policy_output_layer_init_gain():
    spec = MlpSpec(6, (32,), 4)
    p = init_params(spec, np.random.default_rng(0), output_gain=0.01, log_std_dim=4)
    w_out = p.layers[-1][0]
    # orthogonal rows scaled by the gain
    assert np.allclose(w_out @ w_out.T, 1e-4 * np.eye(4), atol=1e-12)
    assert np.all(p.log_std == 0.0)


def test_elu_grad_mutation_is_visible_to_module_backward(monkeypatch):
    monkeypatch.setattr(nn, "elu_grad", lambda x, out=None: -np.where(np.asarray(x) > 0, 1.0, np.exp(np.minimum(x, 0))))
    spec = MlpSpec(3, (4,), 2)
    params = init_params(spec, np.random.default_rng(0))
    x, g = np.ones((1, 3)), np.ones((1, 2))
    assert _fd_check(spec, params, x, g) > 1e-2
