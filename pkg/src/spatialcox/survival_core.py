"""Per-site Cox partial likelihood and its Newton-Raphson maximizer.

Ties among event times use the Breslow approximation: every event in a
tie group shares the risk set of all subjects whose time is at least the
tied time.  With distinct times this is the ordinary partial likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import (
    AllSitesExcludedError,
    DegenerateDataError,
    InvalidArgumentError,
    ValidationError,
)

__all__ = [
    "SiteSurvivalData",
    "PmleEstimate",
    "FitOptions",
    "SiteExclusion",
    "log_partial_likelihood",
    "pl_gradient",
    "pl_hessian",
    "fit_pmle",
    "fit_all_sites",
]


@dataclass(frozen=True, eq=False)
class SiteSurvivalData:
    """Observed survival data for the subjects of one site.

    Parameters
    ----------
    site_id : hashable
        Site label, unique within a dataset.
    times : ndarray (n_i,)
        Event or censoring times, strictly positive.
    status : ndarray (n_i,)
        1 for an observed event, 0 for a censored time.
    covariates : ndarray (n_i, p)
        Covariate rows, one per subject.
    """

    site_id: Hashable
    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        status = np.asarray(self.status)
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if times.ndim != 1 or status.shape != times.shape or x.ndim != 2 \
                or x.shape[0] != times.shape[0]:
            raise ValidationError(
                f"site {self.site_id!r}: inconsistent shapes times={times.shape}, "
                f"status={status.shape}, covariates={x.shape}")
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise ValidationError(f"site {self.site_id!r}: times must be finite and > 0")
        if not np.all((status == 0) | (status == 1)):
            raise ValidationError(f"site {self.site_id!r}: status must be 0 or 1")
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"site {self.site_id!r}: non-finite covariate entries")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status.astype(np.int8))
        object.__setattr__(self, "covariates", x)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())


@dataclass
class PmleEstimate:
    """Stage-1 output for one site: the maximizer of the partial likelihood
    and its observed-information covariance."""

    site_id: Hashable
    beta_hat: np.ndarray
    v_hat: np.ndarray
    converged: bool
    n_events: int
    log_pl: float
    n_iter: int = 0
    history: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 50
    grad_tol: float = 1e-8
    step_halving_max: int = 20
    divergence_bound: float = 15.0

    def __post_init__(self):
        if min(self.max_iter, self.grad_tol, self.step_halving_max,
               self.divergence_bound) <= 0:
            raise InvalidArgumentError("FitOptions fields must all be positive")


@dataclass(frozen=True)
class SiteExclusion:
    site_id: Hashable
    reason: str
    estimate: PmleEstimate | None = None


class _RiskSets:
    """Time-sorted view of a site with the Breslow tie structure."""

    def __init__(self, data: SiteSurvivalData):
        order = np.argsort(data.times, kind="stable")
        t = data.times[order]
        self.x = data.covariates[order]
        self.event = data.status[order].astype(bool)
        # first sorted index sharing each subject's time: its risk set starts there
        self.first = np.searchsorted(t, t, side="left")
        self.ev_first = self.first[self.event]


def _check(data: SiteSurvivalData, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.p:
        raise InvalidArgumentError(f"beta has length {beta.shape[0]}, expected {data.p}")
    if not np.all(np.isfinite(beta)):
        raise InvalidArgumentError("beta must be finite")
    if data.n_events == 0:
        raise DegenerateDataError(f"site {data.site_id!r} has no events")
    return beta


def _loglik(rs: _RiskSets, beta: np.ndarray) -> float:
    eta = rs.x @ beta
    # reverse running log-sum-exp over time-sorted subjects
    log_risk = np.logaddexp.accumulate(eta[::-1])[::-1]
    return float(np.sum(eta[rs.event] - log_risk[rs.ev_first]))


def _derivs(rs: _RiskSets, beta: np.ndarray, hessian: bool = True):
    x = rs.x
    eta = x @ beta
    w = np.exp(eta - eta.max())
    s0 = np.cumsum(w[::-1])[::-1][rs.ev_first]
    s1 = np.cumsum((w[:, None] * x)[::-1], axis=0)[::-1][rs.ev_first]
    xbar = s1 / s0[:, None]
    grad = x[rs.event].sum(axis=0) - xbar.sum(axis=0)
    if not hessian:
        return grad, None
    xx = x[:, :, None] * x[:, None, :]
    s2 = np.cumsum((w[:, None, None] * xx)[::-1], axis=0)[::-1][rs.ev_first]
    cov = s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
    hess = -cov.sum(axis=0)
    return grad, 0.5 * (hess + hess.T)


def log_partial_likelihood(data: SiteSurvivalData, beta) -> float:
    """Breslow log partial likelihood of ``beta`` for one site."""
    beta = _check(data, beta)
    return _loglik(_RiskSets(data), beta)


def pl_gradient(data: SiteSurvivalData, beta) -> np.ndarray:
    """Score vector: sum over events of covariate minus risk-set weighted mean."""
    beta = _check(data, beta)
    return _derivs(_RiskSets(data), beta, hessian=False)[0]


def pl_hessian(data: SiteSurvivalData, beta) -> np.ndarray:
    """Negative of the summed risk-set weighted covariances of the covariates."""
    beta = _check(data, beta)
    return _derivs(_RiskSets(data), beta)[1]


def fit_pmle(data: SiteSurvivalData, opts: FitOptions | None = None) -> PmleEstimate:
    """Maximize the partial likelihood by damped Newton-Raphson from zero.

    Never raises on non-convergence; instead returns ``converged=False``
    when ``max_iter`` is exhausted or a coefficient leaves
    ``[-divergence_bound, divergence_bound]`` (monotone likelihood).

    Raises
    ------
    InvalidArgumentError
        Fewer than ``p + 1`` subjects.
    DegenerateDataError
        No events at the site.
    """
    opts = opts or FitOptions()
    if data.n < data.p + 1:
        raise InvalidArgumentError(
            f"site {data.site_id!r}: {data.n} subjects for {data.p} covariates")
    beta = _check(data, np.zeros(data.p))
    rs = _RiskSets(data)

    ll = _loglik(rs, beta)
    history = [ll]
    grad, hess = _derivs(rs, beta)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(grad)) < opts.grad_tol:
            converged = True
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            break
        # roundoff slack so that steps taken at machine-precision optimum count
        slack = 64 * np.finfo(float).eps * (1.0 + abs(ll))
        scale = 1.0
        for _ in range(opts.step_halving_max + 1):
            cand = beta + scale * step
            if np.all(np.isfinite(cand)):
                ll_cand = _loglik(rs, cand)
                if ll_cand >= ll - slack:
                    break
            scale *= 0.5
        else:
            break
        beta, ll = cand, ll_cand
        history.append(ll)
        if np.max(np.abs(beta)) > opts.divergence_bound:
            break
        grad, hess = _derivs(rs, beta)
    else:
        converged = bool(np.max(np.abs(grad)) < opts.grad_tol)

    if np.max(np.abs(beta)) > opts.divergence_bound:
        converged = False
    info = -hess
    try:
        chol = np.linalg.cholesky(info)
        inv_chol = np.linalg.inv(chol)
        v_hat = inv_chol.T @ inv_chol
    except np.linalg.LinAlgError:
        converged = False
        v_hat = np.linalg.pinv(info)
    v_hat = 0.5 * (v_hat + v_hat.T)
    if converged and not np.all(np.isfinite(beta)):
        converged = False
    return PmleEstimate(site_id=data.site_id, beta_hat=beta, v_hat=v_hat,
                        converged=bool(converged), n_events=data.n_events,
                        log_pl=ll, n_iter=it, history=history)


def fit_all_sites(dataset: Sequence[SiteSurvivalData], opts: FitOptions | None = None,
                  exclusion_threshold: float = 100.0, executor=None):
    """Fit every site independently and drop unusable sites.

    A site is excluded when its fit does not converge, when any diagonal
    entry of its covariance exceeds ``exclusion_threshold``, or when it
    fails the fitting preconditions (too few subjects, no events).

    Parameters
    ----------
    executor : concurrent.futures.Executor, optional
        When given, site fits are submitted to it; results keep input order.

    Returns
    -------
    estimates : list of PmleEstimate
        Retained sites in input order.
    excluded : list of SiteExclusion
    """
    if len(dataset) == 0:
        raise AllSitesExcludedError("empty dataset: no sites to fit")
    opts = opts or FitOptions()
    if executor is None:
        outcomes = [_fit_or_reason(d, opts) for d in dataset]
    else:
        outcomes = list(executor.map(_fit_or_reason, dataset, [opts] * len(dataset)))

    estimates, excluded = [], []
    for data, (est, reason) in zip(dataset, outcomes):
        if est is not None and reason is None:
            if not est.converged:
                reason = "non-convergence (monotone likelihood or iteration limit)"
            else:
                diag = np.diag(est.v_hat)
                bad = np.flatnonzero(diag > exclusion_threshold)
                if bad.size:
                    k = int(bad[0])
                    reason = (f"inflated variance: v_hat[{k},{k}]={diag[k]:.4g} "
                              f"exceeds {exclusion_threshold:g}")
        if reason is None:
            estimates.append(est)
        else:
            excluded.append(SiteExclusion(data.site_id, reason, est))
    if not estimates:
        raise AllSitesExcludedError(
            "all sites excluded: " + "; ".join(f"{e.site_id}: {e.reason}" for e in excluded))
    return estimates, excluded


def _fit_or_reason(data, opts):
    try:
        return fit_pmle(data, opts), None
    except ValidationError as exc:
        return None, f"insufficient data: {exc}"
