"""Policy architecture: encoding, canonical-order pooling, emission,
transforms, and the baseline policies."""

import time

import numpy as np
import pytest

from adex.models import DeathModel, HyperbolicModel, LocationModel, get_model
from adex.models.base import History
from adex.nn import tensor as tz
from adex.nn.layers import Layer
from adex.nn.rng import RngStream
from adex.policy import (
    FixedPolicy,
    HorizonError,
    NetworkPolicy,
    RandomPolicy,
    TrainableFixedPolicy,
    apply_transform,
    make_policy_params,
)


def policy_for(model, horizon=4, seed=0, **kw):
    params = make_policy_params(model, horizon, RngStream(seed).child("init"), **kw)
    return NetworkPolicy(params, model)


def random_history(model, T, seed=1):
    rng = RngStream(seed)
    theta = model.sample_prior(1, rng.child("t"))
    h = History.empty(model.design_dim)
    gen = rng.child("d").gen
    for t in range(T):
        lo, hi = model.design_box[:, 0], model.design_box[:, 1]
        xi = gen.uniform(lo, hi)
        y = model.sample_outcome(theta, xi[None, :], rng.child("y", t))
        h = h.append(xi, np.asarray(y)[0])
    return h


# -- encode_pair ------------------------------------------------------------------

def test_hyperbolic_outcome_selects_head():
    model = HyperbolicModel()
    pol = policy_for(model, horizon=20)
    xi = np.array([[50.0, 10.0]], dtype=np.float32)
    run = pol.start(1)
    h3 = pol.encode_pair(xi, np.array([[1.0]], dtype=np.float32))
    h3p = pol.encode_pair(xi, np.array([[0.0]], dtype=np.float32))
    enc_in = model.encoder_design_input(xi)
    from adex.nn.layers import mlp_forward
    trunk = mlp_forward(pol.params.encoder, enc_in)
    expected_h3 = mlp_forward([pol.params.heads[0]], trunk)
    expected_h3p = mlp_forward([pol.params.heads[1]], trunk)
    assert np.array_equal(tz._data(h3), tz._data(expected_h3))
    assert np.array_equal(tz._data(h3p), tz._data(expected_h3p))
    assert not np.array_equal(tz._data(h3), tz._data(h3p))


def test_zero_encoder_maps_to_bias_image():
    model = DeathModel()
    pol = policy_for(model)
    for layer in pol.params.encoder:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.5
    out = tz._data(pol.encode_pair(np.array([[1.0]], dtype=np.float32),
                                   np.array([[10.0]], dtype=np.float32)))
    # softplus(0.5) propagated through zero weights: depends only on biases
    expected = tz._data(pol.encode_pair(np.array([[9.0]], dtype=np.float32),
                                        np.array([[3.0]], dtype=np.float32)))
    assert np.array_equal(out, expected)


def test_encoder_width_mismatch_raises():
    model = DeathModel()
    pol = policy_for(model)
    with pytest.raises(Exception, match="width|layer"):
        pol.encode_pair(np.zeros((1, 3), dtype=np.float32),
                        np.zeros((1, 1), dtype=np.float32))


# -- pooling -----------------------------------------------------------------------

def test_empty_history_pools_to_zero():
    model = DeathModel()
    pol = policy_for(model)
    run = pol.start(3)
    pooled = pol.pool(run)
    assert np.array_equal(tz._data(pooled), np.zeros((3, 16), dtype=np.float32))


def test_single_pair_pool_equals_encoding():
    model = DeathModel()
    pol = policy_for(model)
    run = pol.start(1)
    xi = np.array([[1.5]], dtype=np.float32)
    y = np.array([[7.0]], dtype=np.float32)
    pol.observe(run, xi, y)
    assert np.array_equal(tz._data(pol.pool(run)),
                          tz._data(pol.encode_pair(xi, y)))


def test_pool_additive_over_splits():
    model = DeathModel()
    pol = policy_for(model, horizon=8)
    h = random_history(model, 8)
    run = pol.start(1)
    for t in range(8):
        pol.observe(run, h.designs[t:t + 1].astype(np.float32),
                    h.outcomes[t:t + 1].astype(np.float32))
    total = tz._data(pol.pool(run))
    parts = np.zeros_like(total)
    for t in range(8):
        parts = parts + tz._data(pol.encode_pair(
            h.designs[t:t + 1].astype(np.float32),
            h.outcomes[t:t + 1].astype(np.float32)))
    assert np.max(np.abs(total - parts)) < 1e-5


@pytest.mark.parametrize("model_name", ["location", "hyperbolic", "death"])
def test_permutation_invariance_is_exact(model_name):
    model = get_model(model_name)
    pol = policy_for(model, horizon=9, seed=3)
    gen = np.random.default_rng(0)
    for trial in range(20):
        h = random_history(model, 8, seed=trial)
        perm = gen.permutation(8)
        base = pol.apply(h)
        permuted = pol.apply(h.permuted(perm))
        assert np.array_equal(base, permuted), (model_name, trial)


def test_policy_apply_is_pure():
    model = HyperbolicModel()
    pol = policy_for(model, horizon=20)
    h = random_history(model, 5)
    a = pol.apply(h)
    b = pol.apply(h)
    assert np.array_equal(a, b)


def test_policy_apply_composition_definition():
    model = DeathModel()
    pol = policy_for(model, horizon=8)
    h = random_history(model, 4)
    run = pol.start(1)
    for t in range(4):
        pol.observe(run, h.designs[t:t + 1].astype(np.float32),
                    h.outcomes[t:t + 1].astype(np.float32))
    with tz.no_grad():
        staged = apply_transform(pol.params.transform,
                                 pol.emit(pol.pool(run)),
                                 scale=pol.params.transform_scale,
                                 clamp=pol.params.raw_clamp)
    assert np.array_equal(pol.apply(h), np.asarray(tz._data(staged))[0])


# -- emitter / transforms -------------------------------------------------------------

def test_zero_weight_emitter_returns_bias():
    model = DeathModel()
    pol = policy_for(model)
    for layer in pol.params.emitter:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.25
    out = tz._data(pol.emit(np.zeros((2, 16), dtype=np.float32)))
    assert np.allclose(out, out[0])   # input-independent


def test_location_emitter_is_single_linear_layer():
    model = LocationModel()
    pol = policy_for(model, horizon=30)
    assert len(pol.params.emitter) == 1
    assert pol.params.emitter[0].activation == "identity"
    assert pol.params.emitter[0].W.shape == (16, 2)


def test_emitter_matches_straight_line_oracle(rng):
    model = LocationModel()
    pol = policy_for(model, horizon=30)
    r = rng.child("r").gen.standard_normal((5, 16)).astype(np.float64)
    got = tz._data(pol.emit(r))
    layer = pol.params.emitter[0]
    expected = r @ layer.W.data + layer.b.data
    assert np.max(np.abs(got - expected)) < 1e-12


def test_transform_examples():
    # hyperbolic raw (xi_d=0, xi_r=0) -> (R=50, D=1)
    out = np.asarray(apply_transform("exp_sigmoid", np.zeros((1, 2)), clamp=10.0))
    assert out[0, 0] == pytest.approx(50.0, rel=1e-12)
    assert out[0, 1] == pytest.approx(1.0, rel=1e-12)
    # death raw 0 -> softplus(0) = ln 2
    assert apply_transform("softplus", np.zeros((1, 1)))[0, 0] == pytest.approx(
        np.log(2.0), rel=1e-7)
    # location identity
    raw = np.array([[0.3, -0.7]])
    assert np.array_equal(apply_transform("identity", raw), raw)


def test_transform_ranges_for_arbitrary_raw(rng):
    raw = rng.child("raw").gen.uniform(-100, 100, size=(5000, 2))
    hyper = np.asarray(apply_transform("exp_sigmoid", raw, clamp=10.0))
    assert np.all((hyper[:, 0] > 0) & (hyper[:, 0] < 100))
    assert np.all(hyper[:, 1] > 0)
    death = np.asarray(apply_transform("softplus", raw[:, :1]))
    assert np.all(death > 0)


def test_policy_outputs_satisfy_design_constraints():
    for name in ("location", "hyperbolic", "death"):
        model = get_model(name)
        pol = policy_for(model, horizon=6, seed=11)
        h = random_history(model, 3, seed=5)
        model.validate_design(pol.apply(h))


# -- horizon handling ------------------------------------------------------------------

def test_horizon_exceeded_raises():
    model = DeathModel()
    pol = policy_for(model, horizon=2)
    h = random_history(model, 2)
    with pytest.raises(HorizonError):
        pol.apply(h)


def test_horizon_override_for_generalization():
    model = DeathModel()
    params = make_policy_params(model, 2, RngStream(0).child("init"))
    pol = NetworkPolicy(params, model, allow_any_horizon=True)
    h = random_history(model, 5)
    xi = pol.apply(h)
    assert np.isfinite(xi).all()


def test_twenty_sequential_applications_fast():
    model = HyperbolicModel()
    pol = policy_for(model, horizon=20)
    theta = model.sample_prior(1, RngStream(0).child("t"))
    h = History.empty(2)
    start = time.perf_counter()
    for t in range(20):
        xi = pol.apply(h)
        h = h.append(xi, model.sample_outcome(theta, xi[None, :],
                                              RngStream(0).child("y", t))[0])
    elapsed = time.perf_counter() - start
    assert elapsed < 0.1, f"20 designs took {elapsed:.3f}s"


# -- baselines -------------------------------------------------------------------------

def test_random_policy_stays_in_box():
    model = HyperbolicModel()
    pol = RandomPolicy(model, RngStream(5).child("p"))
    run = pol.start(100_000, rng=RngStream(5).child("roll"))
    draws = pol.step(run)
    lo, hi = model.design_box[:, 0], model.design_box[:, 1]
    assert np.all((draws >= lo) & (draws <= hi))


def test_random_policy_seeded_determinism():
    model = DeathModel()
    a = RandomPolicy(model, RngStream(7).child("p"))
    b = RandomPolicy(model, RngStream(7).child("p"))
    h = random_history(model, 3)
    assert np.array_equal(a.apply(h), b.apply(h))


def test_random_policy_mean_near_box_midpoint():
    model = DeathModel()
    pol = RandomPolicy(model, RngStream(9).child("p"))
    run = pol.start(200_000, rng=RngStream(9).child("roll"))
    draws = pol.step(run)
    mid = model.design_box.mean(axis=1)
    # uniform s.e. = width / sqrt(12 n)
    se = (model.design_box[:, 1] - model.design_box[:, 0]) / np.sqrt(12 * 200_000)
    assert np.all(np.abs(draws.mean(axis=0) - mid) < 5 * se)


def test_random_policy_ignores_history():
    model = DeathModel()
    pol = RandomPolicy(model, RngStream(3).child("p"))
    h1 = random_history(model, 3, seed=1)
    h2 = random_history(model, 3, seed=2)
    assert np.array_equal(pol.apply(h1), pol.apply(h2))


def test_fixed_policy_schedule():
    model = DeathModel()
    designs = np.array([[1.0], [2.0], [3.0]])
    pol = FixedPolicy(designs, model)
    h1 = random_history(model, 2, seed=1)
    h2 = random_history(model, 2, seed=2)
    assert pol.apply(h1) == pytest.approx([3.0])
    assert np.array_equal(pol.apply(h1), pol.apply(h2))
    with pytest.raises(HorizonError):
        pol.apply(random_history(model, 3))


def test_trainable_fixed_parameter_count():
    model = HyperbolicModel()
    pol = TrainableFixedPolicy(model, 20, RngStream(0).child("init"))
    assert pol.raw.shape == (20, 2)
    params = pol.named_parameters()
    assert sum(p.data.size for p in params.values()) == 20 * 2
    materialized = pol.materialize()
    run = pol.start(1)
    assert np.allclose(np.asarray(tz._data(pol.step(run)))[0],
                       materialized.designs[0], atol=1e-6)


def test_model_mismatch_rejected():
    model = DeathModel()
    params = make_policy_params(model, 4, RngStream(0).child("init"))
    with pytest.raises(ValueError, match="model"):
        NetworkPolicy(params, HyperbolicModel())
