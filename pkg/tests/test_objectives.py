"""Rollouts, history likelihoods, the g/f log-ratios, and bound estimators."""

import math

import numpy as np
import pytest

from adex import objectives as obj
from adex.models import DeathModel, HyperbolicModel, LocationModel, get_model
from adex.models.base import History
from adex.nn import tensor as tz
from adex.nn.rng import RngStream
from adex.policy import FixedPolicy, NetworkPolicy, RandomPolicy, make_policy_params


def network_policy(model, horizon, seed=0):
    params = make_policy_params(model, horizon, RngStream(seed).child("init"))
    return NetworkPolicy(params, model)


def zero_information_model():
    """Likelihood independent of theta (and design): alpha = 0."""
    return LocationModel(n_sources=1, dim=2, alpha=0.0)


# -- rollout ------------------------------------------------------------------------

def test_rollout_zero_steps(rng):
    model = DeathModel()
    pol = network_policy(model, 4)
    r = obj.rollout(pol, model, model.sample_prior(1, rng.child("t"))[0], 0,
                    rng.child("r"))
    assert len(r.history) == 0


def test_rollout_seeded_bitwise(rng):
    model = DeathModel()
    pol = network_policy(model, 4)
    theta = model.sample_prior(1, rng.child("t"))[0]
    r1 = obj.rollout(pol, model, theta, 4, RngStream(5).child("roll"))
    r2 = obj.rollout(pol, model, theta, 4, RngStream(5).child("roll"))
    assert np.array_equal(r1.history.designs, r2.history.designs)
    assert np.array_equal(r1.history.outcomes, r2.history.outcomes)


@pytest.mark.parametrize("model_name", ["location", "hyperbolic", "death"])
def test_rollout_designs_replay_policy_apply(model_name, rng):
    model = get_model(model_name)
    pol = network_policy(model, 5, seed=2)
    theta = model.sample_prior(1, rng.child("t"))[0]
    r = obj.rollout(pol, model, theta, 5, rng.child("roll", model_name))
    h = History.empty(model.design_dim)
    for t in range(5):
        assert np.array_equal(pol.apply(h), r.history.designs[t])
        h = h.append(r.history.designs[t], r.history.outcomes[t])


def test_rollout_records_reparam_noise(rng):
    model = LocationModel(n_sources=1, dim=2)
    pol = network_policy(model, 3)
    r = obj.rollout(pol, model, model.sample_prior(1, rng.child("t"))[0], 3,
                    rng.child("roll"))
    assert r.noise is not None and r.noise.shape == (3,)
    # outcomes reconstruct from the recorded noise
    for t in range(3):
        mu = model.intensity(r.theta0[None, :], r.history.designs[t:t + 1])
        assert r.history.outcomes[t, 0] == pytest.approx(
            float(np.log(mu) + model.noise_sd * r.noise[t]), rel=1e-6)


# -- history log-likelihood -------------------------------------------------------------

def test_history_loglik_empty_is_zero():
    model = DeathModel()
    assert obj.history_loglik(model, History.empty(1), np.array([1.0])) == 0.0


def test_history_loglik_single_step_matches_model():
    model = DeathModel()
    h = History.empty(1).append([1.5], [20.0])
    theta = np.array([1.2])
    expected = model.log_likelihood(20.0, theta[None, :], np.array([[1.5]]))
    assert obj.history_loglik(model, h, theta) == pytest.approx(float(expected), rel=1e-12)


def test_history_loglik_additive(rng):
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    theta = model.sample_prior(1, rng.child("t"))[0]
    r = obj.rollout(pol, model, theta, 6, rng.child("roll"))
    h = r.history
    total = obj.history_loglik(model, h, theta)
    h_first = History(h.designs[:3], h.outcomes[:3])
    tail = sum(float(model.log_likelihood(h.outcomes[t, 0], theta[None, :],
                                          h.designs[t][None, :]))
               for t in range(3, 6))
    assert total == pytest.approx(obj.history_loglik(model, h_first, theta) + tail,
                                  rel=1e-12)


# -- g and f ------------------------------------------------------------------------------

def test_g_all_equal_is_zero():
    g = obj.g_bound(1.7, np.full(9, 1.7))
    assert g == pytest.approx(0.0, abs=1e-12)


def test_g_cap_attained_with_neg_inf_contrastive():
    g = obj.g_bound(-3.0, np.full(99, -np.inf))
    assert g == math.log(100)


def test_g_hand_computed_example():
    # L=1, loglik0 = 0, loglik1 = ln 3: g = -ln((1+3)/2) = -ln 2
    g = obj.g_bound(0.0, np.array([math.log(3.0)]))
    assert g == pytest.approx(-math.log(2.0), rel=1e-12)


def test_g_never_exceeds_cap(rng):
    gen = rng.child("g").gen
    for L in (1, 7, 64):
        l0 = gen.normal(size=2000) * 50
        lc = gen.normal(size=(2000, L)) * 50
        g = obj.g_bound(l0, lc)
        assert np.all(g <= math.log(L + 1))


def test_f_all_equal_is_zero():
    assert obj.f_bound(2.5, np.full(10, 2.5)) == pytest.approx(0.0, abs=1e-12)


def test_f_single_contrastive_gap():
    assert obj.f_bound(0.0, np.array([-10.0])) == pytest.approx(10.0, rel=1e-12)


def test_f_unbounded():
    assert obj.f_bound(0.0, np.array([-700.0])) == pytest.approx(700.0, rel=1e-12)


def test_f_requires_contrastive():
    with pytest.raises(tz.GraphError):
        obj.f_bound(0.0, np.zeros(0))


def test_g_rejects_mismatched_L():
    with pytest.raises(ValueError):
        obj.g_bound(0.0, np.zeros(3), L=5)


# -- estimate_bound ----------------------------------------------------------------------

def test_zero_information_model_gives_exact_zero(rng):
    model = zero_information_model()
    pol = RandomPolicy(model, rng.child("p"))
    est = obj.estimate_bound("sPCE", pol, model, L=20, n_outer=32,
                             rng=rng.child("e"), T_steps=3)
    assert est.mean == 0.0 and est.se == 0.0
    est_f = obj.estimate_bound("sNMC", pol, model, L=20, n_outer=32,
                               rng=rng.child("e2"), T_steps=3)
    assert est_f.mean == 0.0 and est_f.se == 0.0


def test_sace_with_prior_proposal_bitwise_equals_spce(rng):
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    a = obj.estimate_bound("sPCE", pol, model, L=50, n_outer=64,
                           rng=RngStream(11).child("e"), T_steps=4)
    b = obj.estimate_bound("sACE", pol, model, L=50, n_outer=64,
                           rng=RngStream(11).child("e"), T_steps=4)
    assert a.mean == b.mean and a.se == b.se
    c = obj.estimate_bound("sNMC", pol, model, L=50, n_outer=64,
                           rng=RngStream(11).child("e"), T_steps=4)
    d = obj.estimate_bound("sVNMC", pol, model, L=50, n_outer=64,
                           rng=RngStream(11).child("e"), T_steps=4)
    assert c.mean == d.mean and c.se == d.se


def test_degenerate_proposal_rejected(rng):
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))

    class HalfPrior(obj.PriorProposal):
        # zero density above the prior median region: degenerate
        def sample(self, n_outer, L, roll, r):
            draws = super().sample(n_outer, L, roll, r)
            return np.minimum(draws, 0.8)

        def log_density(self, theta, roll):
            base = super().log_density(theta, roll)
            return np.where(theta[..., 0] <= 0.8, base, -np.inf)

    with pytest.raises(obj.NumericError, match="proposal"):
        obj.estimate_bound("sACE", pol, model, L=30, n_outer=32,
                           rng=rng.child("e"), proposal=HalfPrior(model), T_steps=2)


def test_spce_below_snmc_with_common_rollouts(rng):
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    lo, hi = obj.estimate_bounds_pair(pol, model, L=500, n_outer=1000,
                                      rng=rng.child("e"), T_steps=4)
    assert lo.mean <= hi.mean
    assert lo.cap_violations == 0


def test_monotone_in_L_nested_sets(rng):
    # nested contrastive sets via a common stream; means nondecreasing in L
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    means, ses = [], []
    for L in (1, 10, 100, 1000):
        est = obj.estimate_bound("sPCE", pol, model, L=L, n_outer=800,
                                 rng=RngStream(21).child("e"), T_steps=4,
                                 l_chunk=1)
        means.append(est.mean)
        ses.append(est.se)
    for a, b, sa, sb in zip(means, means[1:], ses, ses[1:]):
        assert b >= a - 3 * math.hypot(sa, sb)


def test_estimate_requires_multiple_outer(rng):
    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    with pytest.raises(ValueError):
        obj.estimate_bound("sPCE", pol, model, L=10, n_outer=1, rng=rng.child("e"),
                           T_steps=2)
    with pytest.raises(ValueError):
        obj.estimate_bound("sNMC", pol, model, L=0, n_outer=8, rng=rng.child("e"),
                           T_steps=2)
    with pytest.raises(ValueError):
        obj.estimate_bound("spce", pol, model, L=10, n_outer=8, rng=rng.child("e"),
                           T_steps=2)


def test_bound_records_serialize(rng):
    model = DeathModel()
    pol = network_policy(model, 4)
    est = obj.estimate_bound("sPCE", pol, model, L=10, n_outer=16,
                             rng=rng.child("e"))
    rec = est.to_record()
    assert rec["kind"] == "sPCE" and rec["L"] == 10 and rec["n_outer"] == 16
    assert rec["policy_checksum"] == pol.checksum()
    assert isinstance(rec["seed"], int)


def test_death_sandwich_medium_scale(rng):
    """sPCE <= grid-EIG <= sNMC within 3 combined s.e. (medium-scale check)."""
    from adex import evaluation as ev

    model = DeathModel()
    pol = RandomPolicy(model, rng.child("p"))
    lo, hi = obj.estimate_bounds_pair(pol, model, L=3000, n_outer=600,
                                      rng=rng.child("e"), T_steps=4)
    ig_mean, ig_se, _ = ev.expected_information_gain(pol, model, 3000,
                                                     rng.child("ig"), T_steps=4)
    assert lo.mean - 3 * math.hypot(lo.se, ig_se) <= ig_mean
    assert ig_mean <= hi.mean + 3 * math.hypot(hi.se, ig_se)
