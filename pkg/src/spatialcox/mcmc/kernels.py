"""Full-conditional updates of the stage-2 sampler.

Each update is split into a function returning the parameters of the
conditional distribution and a function drawing from it, so the
conditionals can be checked against :func:`log_joint` directly.

Half-Cauchy scales use the inverse-gamma mixture
``lambda^2 | nu ~ IG(1/2, 1/nu)``, ``nu ~ IG(1/2, 1)`` (same for tau^2
with auxiliary xi).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.special import expit

from ..errors import NumericalError
from .config import PriorConfig
from .model import CorrFactor, ModelState, StageTwoData

__all__ = [
    "pseudo_observation",
    "beta_conditional_moments",
    "update_beta_k",
    "lambda2_conditional",
    "nu_conditional",
    "tau2_conditional",
    "xi_conditional",
    "update_lambda_k",
    "update_tau",
    "gamma0_log_target",
    "gamma0_log_ratio",
    "update_gamma0_k",
    "c_log_odds",
    "pi_conditional",
    "update_c_k",
    "log_joint",
]

_PI_EPS = 1e-300
_PI_MAX = float(np.nextafter(1.0, 0.0))


def _inv_gamma(rng, shape, rate):
    return rate / rng.standard_gamma(shape)


# ---------------------------------------------------------------- beta


def pseudo_observation(state: ModelState, k: int, data: StageTwoData):
    """Column-k view of the stage-1 likelihood with the other columns fixed.

    Returns ``(m, e)`` such that the likelihood of column k is
    ``prod_i N(m_i; beta_k(s_i), e_i)``, where ``1/e_i = [V_i^{-1}]_{kk}``
    and ``m_i`` is the stage-1 estimate corrected for the current values
    of the other coefficients at site i.
    """
    P_k = data.precision[:, k, :]
    w = P_k[:, k]
    r = np.einsum("ij,ij->i", P_k, data.betahat - state.beta)
    return state.beta[:, k] + r / w, 1.0 / w


def beta_conditional_moments(state, k, data, fac: CorrFactor):
    m, e = pseudo_observation(state, k, data)
    return fac.posterior_moments(m, e, state.scale(k))


def update_beta_k(state, k, data, fac: CorrFactor, rng) -> np.ndarray:
    """Gibbs draw of column k given everything else."""
    m, e = pseudo_observation(state, k, data)
    draw, _ = fac.posterior_draw(m, e, state.scale(k), rng)
    state.beta[:, k] = draw
    return draw


# ---------------------------------------------------------------- scales


def lambda2_conditional(state, k, quad_k, n):
    """Inverse-gamma (shape, rate) of lambda_k^2 given the rest."""
    return 0.5 * (n + 1), 1.0 / state.nu[k] + quad_k / (2.0 * state.tau2)


def nu_conditional(state, k):
    return 1.0, 1.0 + 1.0 / state.lambda2[k]


def tau2_conditional(state, quads, n):
    quads = np.asarray(quads)
    shape = 0.5 * (n * quads.size + 1)
    return shape, 1.0 / state.xi + float(np.sum(quads / (2.0 * state.lambda2)))


def xi_conditional(state):
    return 1.0, 1.0 + 1.0 / state.tau2


def update_lambda_k(state, k, quad_k, n, rng):
    if not math.isfinite(quad_k):
        raise NumericalError(f"non-finite quadratic form for coefficient {k}")
    state.lambda2[k] = _inv_gamma(rng, *lambda2_conditional(state, k, quad_k, n))
    state.nu[k] = _inv_gamma(rng, *nu_conditional(state, k))


def update_tau(state, quads, n, rng):
    if not np.all(np.isfinite(quads)):
        raise NumericalError("non-finite quadratic form in global scale update")
    state.tau2 = _inv_gamma(rng, *tau2_conditional(state, quads, n))
    state.xi = _inv_gamma(rng, *xi_conditional(state))


# ---------------------------------------------------------------- decay


def gamma0_log_target(gamma0, fac: CorrFactor, beta_k, s, prior: PriorConfig) -> float:
    """Log target of ``log gamma0`` for a slab column (Jacobian included)."""
    return (prior.a0 * math.log(gamma0) - prior.b0 * gamma0
            + fac.log_mvn(beta_k, s))


def gamma0_log_ratio(current, proposal, beta_k, s, prior, D) -> float:
    """Metropolis log acceptance ratio for moving ``current -> proposal``."""
    fc = CorrFactor(D, current, prior.nugget)
    fp = CorrFactor(D, proposal, prior.nugget)
    return (gamma0_log_target(proposal, fp, beta_k, s, prior)
            - gamma0_log_target(current, fc, beta_k, s, prior))


def update_gamma0_k(state, k, slab: CorrFactor, D, prior: PriorConfig, mh_step, rng):
    """Update the slab decay of column k.

    In the spike (``c_k = 0``) the decay does not touch the likelihood,
    so it is refreshed from its Gamma prior.  In the slab it takes one
    random-walk Metropolis step on the log scale.

    Returns
    -------
    factor : CorrFactor
        Factorization matching the (possibly new) ``gamma0_k``.
    accepted : bool or None
        None for a prior refresh.
    """
    if state.c[k] == 0:
        g = rng.gamma(prior.a0, 1.0 / prior.b0)
        state.gamma0[k] = g
        return CorrFactor(D, g, prior.nugget), None
    cur = state.gamma0[k]
    prop = cur * math.exp(mh_step * rng.standard_normal())
    fprop = CorrFactor(D, prop, prior.nugget)
    beta_k, s = state.beta[:, k], state.scale(k)
    log_r = (gamma0_log_target(prop, fprop, beta_k, s, prior)
             - gamma0_log_target(cur, slab, beta_k, s, prior))
    if math.log(rng.random()) < log_r:
        state.gamma0[k] = prop
        return fprop, True
    return slab, False


# ---------------------------------------------------------------- spike/slab


def c_log_odds(state, k, data, slab: CorrFactor, spike: CorrFactor,
               collapsed: bool = True, marginals=None) -> float:
    """Log odds of ``c_k = 1`` (slab) against ``c_k = 0`` (spike).

    ``collapsed=True`` integrates column k out of both hypotheses and
    compares the marginal densities of its pseudo-observations;
    otherwise the two prior densities are evaluated at the current
    column.
    """
    pi = state.pi[k]
    s = state.scale(k)
    log_prior = math.log(pi) - math.log1p(-pi) if 0 < pi < 1 else (
        math.inf if pi >= 1 else -math.inf)
    if collapsed:
        if marginals is None:
            m, e = pseudo_observation(state, k, data)
            marginals = (slab.marginal_parts(m, e, s), spike.marginal_parts(m, e, s))
        return log_prior + marginals[0][0] - marginals[1][0]
    beta_k = state.beta[:, k]
    return log_prior + slab.log_mvn(beta_k, s) - spike.log_mvn(beta_k, s)


def pi_conditional(state, k, prior: PriorConfig):
    return prior.beta_pi_a + state.c[k], prior.beta_pi_b + 1 - state.c[k]


def update_c_k(state, k, data, slab, spike, prior: PriorConfig, rng,
               collapsed: bool = True) -> float:
    """Draw ``c_k`` then ``pi_k``; in collapsed mode also redraw column k.

    Returns the slab probability used for the indicator draw.
    """
    marginals = None
    if collapsed:
        m, e = pseudo_observation(state, k, data)
        s = state.scale(k)
        marginals = (slab.marginal_parts(m, e, s), spike.marginal_parts(m, e, s))
    q = float(expit(c_log_odds(state, k, data, slab, spike, collapsed, marginals)))
    c = 1 if rng.random() < q else 0
    state.c[k] = c
    if collapsed:
        fac = slab if c else spike
        state.beta[:, k] = fac.posterior_draw(m, e, s, rng, marginal=marginals[1 - c])[0]
    pi = rng.beta(*pi_conditional(state, k, prior))
    state.pi[k] = min(max(pi, _PI_EPS), _PI_MAX)
    return q


# ---------------------------------------------------------------- joint


def log_joint(state: ModelState, data: StageTwoData, prior: PriorConfig) -> float:
    """Unnormalized log posterior of the full state (dense evaluation).

    Written with scipy distributions rather than the sampler's factor
    objects so it can serve as an independent reference.
    """
    n, p = data.n, data.p
    total = 0.0
    for i in range(n):
        total += stats.multivariate_normal.logpdf(
            data.betahat[i], mean=state.beta[i], cov=data.vhat[i])
    for k in range(p):
        H = np.exp(-state.gamma[k] * data.D) + prior.nugget * np.eye(n)
        total += stats.multivariate_normal.logpdf(
            state.beta[:, k], mean=np.zeros(n), cov=state.scale(k) * H)
    half = 0.5
    for k in range(p):
        total += stats.invgamma.logpdf(state.lambda2[k], half, scale=1.0 / state.nu[k])
        total += stats.invgamma.logpdf(state.nu[k], half, scale=1.0)
    total += stats.invgamma.logpdf(state.tau2, half, scale=1.0 / state.xi)
    total += stats.invgamma.logpdf(state.xi, half, scale=1.0)
    total += float(np.sum(stats.gamma.logpdf(state.gamma0, prior.a0, scale=1.0 / prior.b0)))
    total += float(np.sum(stats.bernoulli.logpmf(state.c, state.pi)))
    total += float(np.sum(stats.beta.logpdf(state.pi, prior.beta_pi_a, prior.beta_pi_b)))
    return float(total)
