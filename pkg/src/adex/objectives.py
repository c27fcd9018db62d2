"""History simulation, contrastive bound estimators, and gradient estimators.

Bound estimation follows one plan for all four bounds: roll histories out
under the policy, re-evaluate each history's log-likelihood under contrastive
latents, and combine the terms in log space. sACE/sVNMC reweight contrastive
terms by prior/proposal density ratios and collapse to sPCE/sNMC exactly (same
rng stream, bitwise) when the proposal is the prior.

Three gradient estimators for the lower bound are provided: a pathwise
estimator for reparametrizable (continuous-outcome) models, exact history
enumeration for small finite outcome spaces, and the score-function estimator
that works for everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models.base import ExperimentModel, History
from .nn import tensor as T
from .nn.dists import UnsupportedReparametrization
from .nn.rng import RngStream
from .policy import _Run

__all__ = [
    "NumericError",
    "Rollout",
    "BoundEstimate",
    "PriorProposal",
    "rollout",
    "history_loglik",
    "g_bound",
    "f_bound",
    "estimate_bound",
    "g_cap",
    "estimate_bounds_pair",
    "TrainingBatch",
    "sample_training_batch",
    "reparam_objective",
    "score_surrogate",
    "enumeration_objective",
    "grad_reparam",
    "grad_score",
    "grad_enumerate",
    "collect_grads",
    "zero_grads",
]

BOUND_KINDS = ("sPCE", "sNMC", "sACE", "sVNMC")
_LOWER = {"sPCE", "sACE"}


class NumericError(ArithmeticError):
    """Numerical contract violation (degenerate proposal, non-finite loss)."""


# -- rollouts ------------------------------------------------------------------

@dataclass(frozen=True)
class Rollout:
    """One simulated trajectory (theta0, h_T) under a policy."""

    theta0: np.ndarray
    history: History
    noise: np.ndarray | None
    policy_kind: str


def rollout(policy, model: ExperimentModel, theta0, T_steps: int,
            rng: RngStream) -> Rollout:
    """Simulate one trajectory; each design is literally policy.apply(prefix).

    Reparametrized noise is recorded when the model supports it.
    """
    if T_steps < 0:
        raise ValueError("T must be >= 0")
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    h = History.empty(model.design_dim)
    noises = [] if model.reparametrizable else None
    for t in range(T_steps):
        xi = np.atleast_1d(policy.apply(h))
        if model.reparametrizable:
            eps = model.sample_outcome_noise((1,), rng.child("eps", t))
            y = model.sample_outcome_reparam(theta0[None, :], xi[None, :], eps)
            noises.append(float(eps[0]))
        else:
            y = model.sample_outcome(theta0[None, :], xi[None, :], rng.child("y", t))
        h = h.append(xi, np.asarray(y)[0])
    return Rollout(theta0, h,
                   None if noises is None else np.asarray(noises),
                   getattr(policy, "kind", type(policy).__name__))


def history_loglik(model: ExperimentModel, history: History, theta):
    """log p(h | theta, pi): sum of per-step likelihood terms; empty -> 0."""
    theta = np.asarray(theta, dtype=np.float64)
    squeeze = theta.ndim == 1
    th = theta[None, :] if squeeze else theta
    total = np.zeros(th.shape[:-1])
    for t in range(len(history)):
        total = total + model.log_likelihood(
            history.outcomes[t, 0], th, history.designs[t])
    return float(total[0]) if squeeze else total


@dataclass
class _BatchRollout:
    theta0: np.ndarray            # (B, theta_dim), working dtype
    designs: list                 # T entries, (B, design_dim), Tensor when traced
    outcomes: list                # T entries, (B,), Tensor when reparam-traced
    run: _Run


def _rollout_batch(policy, model: ExperimentModel, theta0, T_steps: int,
                   rng: RngStream, *, dtype=np.float64, reparam: bool = False
                   ) -> _BatchRollout:
    """Vectorized rollouts sharing one policy run state across the batch."""
    B = theta0.shape[0]
    run = policy.start(B, dtype=dtype, rng=rng.child("policy"))
    designs, outcomes = [], []
    for t in range(T_steps):
        xi = policy.step(run)
        xi_data = np.asarray(T._data(xi))
        if reparam:
            eps = model.sample_outcome_noise((B,), rng.child("eps", t)).astype(dtype)
            y = model.sample_outcome_reparam(theta0, xi, eps)
            y_col = T.reshape(y, (B, 1))
        else:
            y = model.sample_outcome(theta0, xi_data, rng.child("y", t)).astype(dtype)
            y_col = y[:, None]
        policy.observe(run, xi, y_col)
        designs.append(xi)
        outcomes.append(y)
    return _BatchRollout(theta0, designs, outcomes, run)


def _loglik_own(model, roll: _BatchRollout):
    """(B,) log-lik of each history under the theta that generated it."""
    total = 0.0
    for xi, y in zip(roll.designs, roll.outcomes):
        total = T.add(total, model.log_likelihood(y, roll.theta0, xi))
    return total


def _loglik_cross(model, roll: _BatchRollout, thetas):
    """(B, M) log-lik of each history under M shared latents (M, theta_dim)."""
    B = roll.theta0.shape[0]
    th = thetas[None, :, :]
    total = 0.0
    for xi, y in zip(roll.designs, roll.outcomes):
        xi3 = T.reshape(xi, (B, 1, model.design_dim))
        y3 = T.reshape(y, (B, 1)) if T.is_tensor(y) else np.asarray(y)[:, None]
        total = T.add(total, model.log_likelihood(y3, th, xi3))
    return total


def _loglik_per_sample(model, roll: _BatchRollout, thetas):
    """(B, M) log-lik under per-sample latents (B, M, theta_dim)."""
    B = roll.theta0.shape[0]
    total = 0.0
    for xi, y in zip(roll.designs, roll.outcomes):
        xi3 = T.reshape(xi, (B, 1, model.design_dim))
        y3 = T.reshape(y, (B, 1)) if T.is_tensor(y) else np.asarray(y)[:, None]
        total = T.add(total, model.log_likelihood(y3, thetas, xi3))
    return total


# -- g and f -------------------------------------------------------------------

def g_bound(loglik0, contrastive, L: int | None = None):
    """Log-ratio with theta0 included in the denominator; capped at ln(L+1).

    ``loglik0`` has shape (...,), ``contrastive`` (..., L). L >= 0.
    """
    contrastive = np.asarray(T._data(contrastive)) if not T.is_tensor(contrastive) else contrastive
    n_contrast = np.shape(T._data(contrastive))[-1]
    if L is None:
        L = n_contrast
    if L != n_contrast:
        raise ValueError(f"L={L} but {n_contrast} contrastive log-likelihoods given")
    l0 = T.reshape(loglik0, np.shape(T._data(loglik0)) + (1,))
    lse = T.logsumexp(T.concat([l0, contrastive], axis=-1), axis=-1)
    return T.add(T.sub(loglik0, lse), math.log(L + 1))


def f_bound(loglik0, contrastive, L: int | None = None):
    """Log-ratio with theta0 excluded from the denominator (unbounded above)."""
    n_contrast = np.shape(T._data(contrastive))[-1]
    if L is None:
        L = n_contrast
    if L != n_contrast:
        raise ValueError(f"L={L} but {n_contrast} contrastive log-likelihoods given")
    if L < 1:
        raise T.GraphError("f requires at least one contrastive sample")
    lse = T.logsumexp(contrastive, axis=-1)
    return T.add(T.sub(loglik0, lse), math.log(L))


# -- bound estimation -----------------------------------------------------------

class PriorProposal:
    """Default contrastive proposal: the model prior, ignoring the history."""

    def __init__(self, model: ExperimentModel):
        self.model = model

    def sample(self, n_outer: int, L: int, roll, rng: RngStream) -> np.ndarray:
        flat = self.model.sample_prior(n_outer * L, rng)
        return flat.reshape(n_outer, L, self.model.theta_dim)

    def log_density(self, theta, roll) -> np.ndarray:
        return self.model.log_prior(theta)


@dataclass(frozen=True)
class BoundEstimate:
    """Monte Carlo bound estimate with its standard error."""

    kind: str
    mean: float
    se: float
    L: int
    n_outer: int
    seed: int | None = None
    policy_checksum: str | None = None
    cap_violations: int | None = None

    def to_record(self) -> dict:
        return {
            "kind": self.kind, "mean": self.mean, "se": self.se, "L": self.L,
            "n_outer": self.n_outer, "seed": self.seed,
            "policy_checksum": self.policy_checksum,
            "cap_violations": self.cap_violations,
        }


def _bound_values(policy, model, L, n_outer, rng, T_steps, proposal,
                  kinds, chunk, l_chunk):
    """Per-rollout g/f values for the requested kinds, computed chunk-wise.

    sACE/sVNMC always compute proposal weights, even for the default prior
    proposal where the weights are exactly zero; the reduction to sPCE/sNMC
    is a property of the arithmetic, not a special-cased branch.
    """
    values = {k: np.empty(n_outer) for k in kinds}
    lower_needed = any(k in _LOWER for k in kinds)
    upper_needed = any(k not in _LOWER for k in kinds)
    weighted = any(k in ("sACE", "sVNMC") for k in kinds)
    q = proposal if proposal is not None else PriorProposal(model)
    for ci, start in enumerate(range(0, n_outer, chunk)):
        b = min(chunk, n_outer - start)
        crng = rng.child("outer", ci)
        theta0 = model.sample_prior(b, crng.child("theta0"))
        with T.no_grad():
            roll = _rollout_batch(policy, model, theta0.astype(np.float32), T_steps,
                                  crng.child("roll"), dtype=np.float32)
        roll.theta0 = theta0
        for t in range(len(roll.designs)):
            roll.designs[t] = np.asarray(T._data(roll.designs[t]), dtype=np.float64)
            roll.outcomes[t] = np.asarray(T._data(roll.outcomes[t]), dtype=np.float64)
        logp0 = np.asarray(_loglik_own(model, roll), dtype=np.float64)
        # running logsumexp over contrastive chunks
        run_max = np.full(b, -np.inf)
        run_sum = np.zeros(b)
        for lj, lstart in enumerate(range(0, L, l_chunk)):
            lc = min(l_chunk, L - lstart)
            thetas = q.sample(b, lc, roll, crng.child("contrast", lj))
            ll = _loglik_per_sample(model, roll, thetas)
            if weighted:
                w = model.log_prior(thetas) - q.log_density(thetas, roll)
                if np.any(np.isposinf(w)) or np.any(np.isnan(w)):
                    raise NumericError(
                        "degenerate proposal: zero density where the prior is positive")
                ll = ll + w
            m = np.max(ll, axis=1)
            m = np.maximum(m, run_max)
            both = np.isneginf(m)
            with np.errstate(invalid="ignore"):
                run_sum = run_sum * np.where(both, 0.0, np.exp(run_max - m)) + \
                    np.where(both[:, None], 0.0, np.exp(ll - m[:, None])).sum(axis=1)
            run_max = m
        with np.errstate(divide="ignore"):
            lse_c = run_max + np.log(run_sum)
        if weighted:
            w0 = model.log_prior(theta0) - q.log_density(theta0[:, None, :], roll)[:, 0]
            if np.any(np.isposinf(w0)) or np.any(np.isnan(w0)):
                raise NumericError(
                    "degenerate proposal: zero density where the prior is positive")
            logp0_d = logp0 + w0
        else:
            logp0_d = logp0
        if lower_needed:
            # fold the theta0 term into the running logsumexp merge; the
            # (logp0 - max) - log(sum / (L+1)) arrangement keeps two float
            # identities exact: all-equal terms give g = 0, and g <= g_cap(L)
            # holds with no tolerance (sum >= 1 when logp0 is finite)
            m_all = np.maximum(run_max, logp0_d)
            both = np.isneginf(m_all)
            with np.errstate(invalid="ignore", divide="ignore"):
                sum_all = run_sum * np.where(both, 0.0, np.exp(run_max - m_all)) + \
                    np.where(both, 0.0, np.exp(logp0_d - m_all))
                g = (logp0 - m_all) - np.log(sum_all / (L + 1.0))
        if upper_needed:
            with np.errstate(invalid="ignore", divide="ignore"):
                f = (logp0 - run_max) - np.log(run_sum / float(L))
        sl = slice(start, start + b)
        for k in kinds:
            values[k][sl] = g if k in _LOWER else f
    return values


def g_cap(L: int) -> float:
    """ln(L+1) in the exact float arrangement the lower-bound values respect."""
    return float(-np.log(1.0 / (L + 1.0)))


def _summarize(kind, vals, L, n_outer, seed, checksum) -> BoundEstimate:
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    cap = None
    if kind in _LOWER:
        cap = int(np.sum(vals > g_cap(L)))
    return BoundEstimate(kind=kind, mean=mean, se=se, L=L, n_outer=n_outer,
                         seed=seed, policy_checksum=checksum, cap_violations=cap)


def estimate_bound(kind: str, policy, model: ExperimentModel, L: int,
                   n_outer: int, rng: RngStream, T_steps: int | None = None,
                   proposal=None, chunk: int = 512, l_chunk: int = 2048
                   ) -> BoundEstimate:
    """Monte Carlo estimate of one bound over independent rollouts.

    Contrastive latents are drawn fresh per rollout, so the reported standard
    error reflects independent outer samples.
    """
    if kind not in BOUND_KINDS:
        raise ValueError(f"unknown bound kind {kind!r}")
    if n_outer < 2:
        raise ValueError("n_outer must be >= 2 to report a standard error")
    if L < 1 and kind in ("sNMC", "sVNMC"):
        raise ValueError(f"{kind} requires L >= 1")
    if T_steps is None:
        T_steps = policy.horizon
    if T_steps is None:
        raise ValueError("policy has no horizon; pass T_steps explicitly")
    vals = _bound_values(policy, model, L, n_outer, rng, T_steps, proposal,
                         (kind,), chunk, l_chunk)[kind]
    return _summarize(kind, vals, L, n_outer, rng.seed,
                      policy.checksum() if hasattr(policy, "checksum") else None)


def estimate_bounds_pair(policy, model: ExperimentModel, L: int, n_outer: int,
                         rng: RngStream, T_steps: int | None = None,
                         proposal=None, chunk: int = 512, l_chunk: int = 2048
                         ) -> tuple[BoundEstimate, BoundEstimate]:
    """Lower and upper bound estimates sharing rollouts and contrastive draws."""
    if T_steps is None:
        T_steps = policy.horizon
    if T_steps is None:
        raise ValueError("policy has no horizon; pass T_steps explicitly")
    kinds = ("sPCE", "sNMC") if proposal is None else ("sACE", "sVNMC")
    vals = _bound_values(policy, model, L, n_outer, rng, T_steps, proposal,
                         kinds, chunk, l_chunk)
    checksum = policy.checksum() if hasattr(policy, "checksum") else None
    return tuple(_summarize(k, vals[k], L, n_outer, rng.seed, checksum)
                 for k in kinds)


# -- gradient estimation ----------------------------------------------------------

@dataclass
class TrainingBatch:
    """Sampled inputs for one gradient step (fixable for CRN cross-checks)."""

    theta0: np.ndarray            # (B, theta_dim)
    theta_c: np.ndarray           # (L, theta_dim) shared, or (B, L, theta_dim)
    noise: list | None            # reparam: T arrays (B,)
    rng: RngStream


def sample_training_batch(model: ExperimentModel, T_steps: int, L: int,
                          batch: int, rng: RngStream, *, reparam: bool = False,
                          share_contrastive: bool = True,
                          dtype=np.float32) -> TrainingBatch:
    """Latents and noise for one step. One contrastive set is shared across
    the outer batch by default; ``share_contrastive=False`` draws a fresh set
    per outer sample instead (A/B alternative)."""
    theta0 = model.sample_prior(batch, rng.child("theta0")).astype(dtype)
    if share_contrastive:
        theta_c = model.sample_prior(L, rng.child("contrast")).astype(dtype)
    else:
        theta_c = model.sample_prior(batch * L, rng.child("contrast")) \
            .astype(dtype).reshape(batch, L, model.theta_dim)
    noise = None
    if reparam:
        noise = [model.sample_outcome_noise((batch,), rng.child("eps", t)).astype(dtype)
                 for t in range(T_steps)]
    return TrainingBatch(theta0, theta_c, noise, rng)


def _traced_logliks(policy, model, batch: TrainingBatch, T_steps, dtype, reparam):
    rng = batch.rng.child("roll")
    B = batch.theta0.shape[0]
    run = policy.start(B, dtype=dtype, rng=rng.child("policy"))
    designs, outcomes = [], []
    for t in range(T_steps):
        xi = policy.step(run)
        if reparam:
            y = model.sample_outcome_reparam(batch.theta0, xi, batch.noise[t])
            y_col = T.reshape(y, (B, 1))
        else:
            y = model.sample_outcome(batch.theta0, np.asarray(T._data(xi)),
                                     rng.child("y", t)).astype(dtype)
            y_col = y[:, None]
        policy.observe(run, xi, y_col)
        designs.append(xi)
        outcomes.append(y)
    roll = _BatchRollout(batch.theta0, designs, outcomes, run)
    logp0 = _loglik_own(model, roll)
    if batch.theta_c.ndim == 3:
        logc = _loglik_per_sample(model, roll, batch.theta_c)
    else:
        logc = _loglik_cross(model, roll, batch.theta_c)
    return logp0, logc


def reparam_objective(policy, model: ExperimentModel, batch: TrainingBatch,
                      T_steps: int, dtype=np.float32):
    """Traced batch-mean sPCE; backward() yields the pathwise gradient."""
    if not model.reparametrizable:
        raise UnsupportedReparametrization(
            f"{model.name} outcomes are not reparametrizable; use the "
            "score-function or enumeration estimators")
    logp0, logc = _traced_logliks(policy, model, batch, T_steps, dtype, reparam=True)
    g = g_bound(logp0, logc)
    return T.tmean(g)


def score_surrogate(policy, model: ExperimentModel, batch: TrainingBatch,
                    T_steps: int, dtype=np.float32):
    """Score-function surrogate whose backward() is the REINFORCE gradient.

    Returns (surrogate, spce_value). The log-ratio weight is treated as a
    constant during differentiation; the weight uses the unnormalized ratio
    log(p0 / sum_l p_l), and both summands act through the designs recorded
    in the rollout.
    """
    logp0, logc = _traced_logliks(policy, model, batch, T_steps, dtype, reparam=False)
    L = batch.theta_c.shape[0]
    l0 = T.reshape(logp0, (batch.theta0.shape[0], 1))
    lse_all = T.logsumexp(T.concat([l0, logc], axis=1), axis=1)
    weight = np.asarray(T._data(logp0)) - np.asarray(T._data(lse_all))
    surrogate = T.tmean(T.sub(T.mul(weight, logp0), lse_all))
    spce_value = float(np.mean(weight)) + math.log(L + 1)
    return surrogate, spce_value


def enumeration_objective(policy, model: ExperimentModel, theta0: np.ndarray,
                          theta_c: np.ndarray, T_steps: int,
                          dtype=np.float64, budget: int = 4096):
    """Exact-in-history sPCE objective: sum over all outcome sequences.

    Differentiating this traced scalar reproduces the total-enumeration
    gradient: both the branch probability p(h | theta0) and the log-ratio
    depend on the policy through its deterministic per-branch designs.
    Also returns the (B, H) branch log-probabilities for diagnostics.
    """
    support = model.outcome_support()
    if support.values is None:
        raise UnsupportedReparametrization(
            "enumeration needs a finite outcome space")
    n_y = len(support.values)
    n_hist = n_y ** T_steps
    if n_hist > budget:
        raise NumericError(
            f"enumeration over |Y|^T = {n_y}^{T_steps} = {n_hist} histories "
            f"exceeds the budget of {budget}")
    yvals = support.values.astype(dtype)
    B = theta0.shape[0]
    L = theta_c.shape[0]
    if T_steps == 0:
        anchor = next(iter(_policy_params(policy).values()))
        return T.mul(0.0, T.tsum(anchor)), np.zeros((B, 1))
    run = policy.start(1, dtype=dtype)
    logp0 = 0.0   # (B, nodes)
    logc = 0.0    # (L, nodes)
    for t in range(T_steps):
        xi = policy.step(run)                       # (nodes, d)
        nodes = run.batch
        xi_rep = T.repeat_rows(xi, n_y)             # (nodes*n_y, d)
        y_children = np.tile(yvals, nodes)          # (nodes*n_y,)
        xi3 = T.reshape(xi_rep, (1, nodes * n_y, model.design_dim))
        y3 = y_children[None, :]
        step0 = model.log_likelihood(y3, theta0[:, None, :], xi3)   # (B, nodes*n_y)
        stepc = model.log_likelihood(y3, theta_c[:, None, :], xi3)  # (L, nodes*n_y)
        if np.ndim(T._data(logp0)) == 2:
            logp0 = T.repeat_cols(logp0, n_y)
            logc = T.repeat_cols(logc, n_y)
        logp0 = T.add(logp0, step0)
        logc = T.add(logc, stepc)
        child_run = _Run(batch=nodes * n_y, dtype=run.dtype,
                         encodings=[T.repeat_rows(e, n_y) for e in run.encodings],
                         keys=[np.repeat(k, n_y, axis=0) for k in run.keys],
                         length=run.length, rng=run.rng)
        policy.observe(child_run, xi_rep, y_children[:, None])
        run = child_run
    lse_c = T.logsumexp(logc, axis=0)                       # (H,)
    lse_all = T.logaddexp(logp0, T.reshape(lse_c, (1, -1)))  # (B, H)
    g = T.add(T.sub(logp0, lse_all), math.log(L + 1))
    prob = T.exp(logp0)
    objective = T.tmean(T.tsum(T.mul(prob, g), axis=1))
    return objective, np.asarray(T._data(logp0))


def collect_grads(params: dict[str, T.Tensor]) -> dict[str, np.ndarray]:
    return {name: (np.zeros_like(p.data) if p.grad is None else p.grad)
            for name, p in params.items()}


def zero_grads(params: dict[str, T.Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _policy_params(policy) -> dict[str, T.Tensor]:
    if hasattr(policy, "named_parameters"):
        return policy.named_parameters()
    return policy.params.named_parameters()


def grad_reparam(policy, model: ExperimentModel, L: int, batch: int,
                 T_steps: int, rng: RngStream, dtype=np.float32,
                 share_contrastive: bool = True):
    """Pathwise gradient of the batch-mean lower bound. Returns (grads, value)."""
    if not model.reparametrizable:
        raise UnsupportedReparametrization(
            f"{model.name} outcomes are not reparametrizable; use the "
            "score-function or enumeration estimators")
    tb = sample_training_batch(model, T_steps, L, batch, rng, reparam=True,
                               share_contrastive=share_contrastive, dtype=dtype)
    params = _policy_params(policy)
    zero_grads(params)
    obj = reparam_objective(policy, model, tb, T_steps, dtype=dtype)
    T.backward(obj)
    return collect_grads(params), float(T._data(obj))


def grad_score(policy, model: ExperimentModel, L: int, batch: int,
               T_steps: int, rng: RngStream, dtype=np.float32,
               share_contrastive: bool = True):
    """Score-function gradient of the lower bound. Returns (grads, value)."""
    tb = sample_training_batch(model, T_steps, L, batch, rng, reparam=False,
                               share_contrastive=share_contrastive, dtype=dtype)
    params = _policy_params(policy)
    zero_grads(params)
    surrogate, value = score_surrogate(policy, model, tb, T_steps, dtype=dtype)
    T.backward(surrogate)
    return collect_grads(params), value


def grad_enumerate(policy, model: ExperimentModel, L: int, batch: int,
                   T_steps: int, rng: RngStream, dtype=np.float64,
                   budget: int = 4096):
    """Exact-in-history gradient given sampled latents. Returns (grads, value)."""
    tb = sample_training_batch(model, T_steps, L, batch, rng, reparam=False, dtype=dtype)
    params = _policy_params(policy)
    zero_grads(params)
    obj, _ = enumeration_objective(policy, model, tb.theta0.astype(dtype),
                                   tb.theta_c.astype(dtype), T_steps,
                                   dtype=dtype, budget=budget)
    T.backward(obj)
    return collect_grads(params), float(T._data(obj))
