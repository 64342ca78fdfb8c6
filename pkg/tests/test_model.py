import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightpfl.errors import ConfigError, InputError
from lightpfl.model import (
    BoundConstants,
    MiniBatch,
    ModelSpec,
    ParamVector,
    estimate_constants,
    grad,
    init_params,
    loss,
    loss_and_grad,
)


def central_fd(spec, params, batch, h=1e-5):
    out = np.zeros(params.d)
    for i in range(params.d):
        e = np.zeros(params.d)
        e[i] = h
        fp = loss(spec, ParamVector(params.values + e, params.split), batch)
        fm = loss(spec, ParamVector(params.values - e, params.split), batch)
        out[i] = (fp - fm) / (2 * h)
    return out


def random_problem(seed, arch="mlp"):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 6))
    C = int(rng.integers(2, 5))
    hidden = (int(rng.integers(2, 8)),) if arch == "mlp" else ()
    spec = ModelSpec(arch, dim, C, hidden, base_layers=1)
    params = init_params(spec, rng)
    b = int(rng.integers(1, 9))
    batch = MiniBatch(rng.standard_normal((b, dim)), rng.integers(0, C, b))
    return spec, params, batch


def test_param_vector_views_cover_values():
    pv = ParamVector(np.arange(7.0), 3)
    assert pv.d_base == 3 and pv.d_pers == 4
    np.testing.assert_array_equal(np.concatenate([pv.base, pv.pers]), pv.values)
    with pytest.raises(InputError):
        ParamVector(np.arange(3.0), 4)


def test_model_spec_dimension_and_split():
    spec = ModelSpec("mlp", 4, 3, (5,), base_layers=1)
    assert spec.d == 4 * 5 + 5 + 5 * 3 + 3
    assert spec.d_base == 25
    assert ModelSpec("logreg", 4, 3).d_base == 15
    with pytest.raises(ConfigError):
        ModelSpec("cnn", 4, 3)
    with pytest.raises(ConfigError):
        ModelSpec("mlp", 4, 3, (5,), base_layers=3)


def test_zero_params_balanced_binary_gives_ln2():
    spec = ModelSpec("logreg", 3, 2)
    batch = MiniBatch(np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]), np.array([0, 1]))
    assert loss(spec, ParamVector(np.zeros(spec.d), spec.d_base), batch) == pytest.approx(math.log(2))


def test_large_margin_point_has_tiny_loss():
    spec = ModelSpec("logreg", 1, 2)
    # logits (0, 10 * x) with x = 1 give margin 10 for class 1
    params = ParamVector(np.array([0.0, 10.0, 0.0, 0.0]), spec.d_base)
    batch = MiniBatch(np.array([[1.0]]), np.array([1]))
    assert loss(spec, params, batch) < 1e-3
    assert loss(spec, params, batch) == pytest.approx(math.log1p(math.exp(-10.0)))


def test_saturated_single_sample_has_vanishing_gradient():
    spec = ModelSpec("logreg", 1, 2)
    params = ParamVector(np.array([0.0, 40.0, 0.0, 0.0]), spec.d_base)
    batch = MiniBatch(np.array([[1.0]]), np.array([1]))
    assert grad(spec, params, batch).norm() < 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_central_differences(seed):
    spec, params, batch = random_problem(seed, "mlp" if seed % 2 else "logreg")
    g = grad(spec, params, batch).values
    fd = central_fd(spec, params, batch)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_identical_samples_commute():
    spec, params, _ = random_problem(3)
    x = np.random.default_rng(0).standard_normal((1, spec.input_dim))
    x2 = np.random.default_rng(1).standard_normal((1, spec.input_dim))
    b1 = MiniBatch(np.vstack([x, x, x2]), np.array([0, 0, 1]))
    b2 = MiniBatch(np.vstack([x, x2, x]), np.array([0, 1, 0]))
    np.testing.assert_allclose(grad(spec, params, b1).values, grad(spec, params, b2).values, atol=1e-15)


def test_dimension_mismatch_is_config_error():
    spec, params, batch = random_problem(0)
    with pytest.raises(ConfigError):
        loss(spec, params, MiniBatch(np.ones((2, spec.input_dim + 1)), np.array([0, 1])))
    with pytest.raises(ConfigError):
        grad(spec, ParamVector(np.zeros(spec.d + 1), 1), batch)


@given(st.integers(0, 10_000))
def test_loss_nonnegative_and_deterministic(seed):
    spec, params, batch = random_problem(seed)
    f1, g1 = loss_and_grad(spec, params, batch)
    f2, g2 = loss_and_grad(spec, params, batch)
    assert f1 >= 0
    assert f1 == f2 and np.array_equal(g1.values, g2.values)
    assert g1.split == params.split


@given(st.integers(0, 10_000))
def test_directional_derivative_matches_gradient(seed):
    spec, params, batch = random_problem(seed)
    rng = np.random.default_rng(seed + 1)
    u = rng.standard_normal(params.d)
    u /= np.linalg.norm(u)
    h = 1e-5
    fp = loss(spec, ParamVector(params.values + h * u, params.split), batch)
    fm = loss(spec, ParamVector(params.values - h * u, params.split), batch)
    dd = (fp - fm) / (2 * h)
    gu = float(grad(spec, params, batch).values @ u)
    assert abs(dd - gu) <= 1e-4 * max(abs(gu), 1e-3)


def _toy_data(seed, n=40, C=3, dim=4):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, dim)), rng.integers(0, C, n)


def test_constants_zero_curvature_when_saturated():
    spec = ModelSpec("logreg", 2, 2)
    X = np.random.default_rng(0).standard_normal((20, 2))
    y = np.zeros(20, dtype=int)
    params = ParamVector(np.array([0, 0, 0, 0, 60.0, 0.0]), spec.d_base)
    c = estimate_constants(spec, (X, y), 3, seed=1, eta=0.01, T=10, params=params)
    assert c.L2 <= 1e-8


def test_constants_full_batch_probes_have_zero_variance():
    spec = ModelSpec("mlp", 4, 3, (5,))
    X, y = _toy_data(2, n=16)
    c = estimate_constants(spec, (X, y), 3, seed=0, eta=0.01, T=10, batch_size=16)
    assert c.sigma == 0.0


def test_constants_monotone_in_probe_count():
    spec = ModelSpec("mlp", 4, 3, (5,))
    data = [_toy_data(3), _toy_data(4)]
    prev = None
    for p in range(2, 7):
        c = estimate_constants(spec, data, p, seed=7, eta=0.05, T=10)
        if prev is not None:
            for name in ("L1", "L2", "G", "M", "sigma"):
                assert getattr(c, name) >= getattr(prev, name)
        prev = c


def test_constants_input_errors():
    spec = ModelSpec("logreg", 4, 3)
    with pytest.raises(InputError):
        estimate_constants(spec, _toy_data(0), 1, seed=0, eta=0.1, T=5)
    with pytest.raises(InputError):
        estimate_constants(spec, [], 3, seed=0, eta=0.1, T=5)


def test_bound_constants_step_condition():
    c = BoundConstants(1, 300.0, 1, 1, 1, 0.01, 5)
    assert c.step_condition_holds
    assert not BoundConstants(1, 301.0, 1, 1, 1, 0.01, 5).step_condition_holds
    with pytest.raises(InputError):
        BoundConstants(1, 1, 1, 1, 1, 0.0, 5)
