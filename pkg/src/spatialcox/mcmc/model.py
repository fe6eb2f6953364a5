"""Stage-2 data, sampler state and correlation-matrix factorizations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from ..errors import InvalidArgumentError, NumericalError
from .config import PriorConfig

__all__ = ["StageTwoData", "ModelState", "CorrFactor", "init_state", "chol_lower"]

LOG_2PI = math.log(2.0 * math.pi)


def chol_lower(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info != 0:
        raise NumericalError(f"Cholesky factorization of {what} failed (info={info})")
    return L


def _tri_solve(L, b, trans=0):
    x, info = lapack.dtrtrs(L, b, lower=1, trans=trans)
    if info != 0:
        raise NumericalError("singular triangular factor")
    return x


@dataclass(frozen=True, eq=False)
class StageTwoData:
    """Stage-1 estimates treated as Gaussian observations of the site
    coefficients, plus the hop distances between the sites.

    Attributes
    ----------
    betahat : ndarray (n, p)
    vhat : ndarray (n, p, p)
    precision : ndarray (n, p, p)
        Inverses of ``vhat``, computed once through Cholesky factors.
    D : ndarray (n, n)
        Integer graph distances in the same site order.
    """

    betahat: np.ndarray
    vhat: np.ndarray
    D: np.ndarray
    site_ids: tuple = ()
    precision: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        bh = np.asarray(self.betahat, dtype=float)
        vh = np.asarray(self.vhat, dtype=float)
        D = np.asarray(self.D)
        if bh.ndim != 2 or vh.shape != bh.shape + (bh.shape[1],):
            raise InvalidArgumentError(
                f"betahat {bh.shape} and vhat {vh.shape} dimensions disagree")
        if D.shape != (bh.shape[0], bh.shape[0]):
            raise InvalidArgumentError(
                f"distance matrix is {D.shape} but there are {bh.shape[0]} sites")
        if not (np.all(np.isfinite(bh)) and np.all(np.isfinite(vh))):
            raise InvalidArgumentError("non-finite stage-1 estimates")
        prec = np.empty_like(vh)
        eye = np.eye(bh.shape[1])
        for i, v in enumerate(vh):
            L = chol_lower(0.5 * (v + v.T), f"vhat of site {i}")
            Linv = _tri_solve(L, eye)
            prec[i] = Linv.T @ Linv
        object.__setattr__(self, "betahat", bh)
        object.__setattr__(self, "vhat", vh)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "precision", prec)
        if not self.site_ids:
            object.__setattr__(self, "site_ids", tuple(range(bh.shape[0])))

    @property
    def n(self) -> int:
        return self.betahat.shape[0]

    @property
    def p(self) -> int:
        return self.betahat.shape[1]

    @classmethod
    def from_pmles(cls, pmles: Sequence, D) -> "StageTwoData":
        return cls(betahat=np.array([e.beta_hat for e in pmles]),
                   vhat=np.array([e.v_hat for e in pmles]),
                   D=D, site_ids=tuple(e.site_id for e in pmles))


@dataclass
class ModelState:
    beta: np.ndarray
    tau2: float
    lambda2: np.ndarray
    nu: np.ndarray
    xi: float
    gamma0: np.ndarray
    c: np.ndarray
    pi: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return self.c * self.gamma0

    def scale(self, k: int) -> float:
        """Prior variance multiplier tau^2 * lambda_k^2 of column k."""
        return self.tau2 * self.lambda2[k]

    def copy(self) -> "ModelState":
        return replace(self, beta=self.beta.copy(), lambda2=self.lambda2.copy(),
                       nu=self.nu.copy(), gamma0=self.gamma0.copy(), c=self.c.copy(),
                       pi=self.pi.copy())

    def check(self) -> None:
        ok = (self.tau2 > 0 and self.xi > 0 and np.all(self.lambda2 > 0)
              and np.all(self.nu > 0) and np.all(self.gamma0 > 0)
              and np.all((self.pi > 0) & (self.pi < 1))
              and np.all((self.c == 0) | (self.c == 1))
              and np.all(np.isfinite(self.beta)))
        if not ok:
            raise NumericalError("model state violates positivity/range constraints")


def init_state(data: StageTwoData, prior: PriorConfig | None = None,
               seed: int | None = None) -> ModelState:
    """Deterministic starting point: coefficients at the stage-1 estimates,
    every column in the slab with decay 1, unit shrinkage scales.

    ``seed`` is accepted for interface symmetry; the start does not
    depend on it.
    """
    p = data.p
    return ModelState(beta=data.betahat.copy(), tau2=1.0, lambda2=np.ones(p),
                      nu=np.ones(p), xi=1.0, gamma0=np.ones(p),
                      c=np.ones(p, dtype=np.int64), pi=np.full(p, 0.5))


class CorrFactor:
    """``H(gamma) + nugget * I`` with the linear algebra the sampler needs.

    ``gamma == 0`` is the spatially static (spike) matrix ``J + nugget*I``,
    handled in closed form through its rank-one structure.  Otherwise the
    dense matrix is factorized on first use.
    """

    def __init__(self, D: np.ndarray, gamma: float, nugget: float):
        if not nugget > 0:
            raise InvalidArgumentError("the sampler needs a strictly positive nugget")
        self.gamma = float(gamma)
        self.nugget = float(nugget)
        self.n = D.shape[0]
        self.spike = self.gamma == 0.0
        self._L = None
        if self.spike:
            self.H = None
            n, eps = self.n, self.nugget
            self.logdet = (n - 1) * math.log(eps) + math.log(n + eps)
        else:
            H = np.exp(-self.gamma * D)
            H.flat[:: self.n + 1] += self.nugget
            self.H = H
            self.logdet = None

    def _factor(self):
        if self._L is None:
            self._L = chol_lower(self.H, f"correlation matrix (gamma={self.gamma:g})")
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._L))))
        return self._L

    def ensure_logdet(self) -> float:
        if self.logdet is None:
            self._factor()
        return self.logdet

    def dense(self) -> np.ndarray:
        if self.spike:
            return np.ones((self.n, self.n)) + self.nugget * np.eye(self.n)
        return self.H

    def quad(self, v: np.ndarray) -> float:
        """``v' (H + nugget I)^{-1} v``."""
        if self.spike:
            vbar = v.mean()
            dev = v - vbar
            n, eps = self.n, self.nugget
            return float(dev @ dev / eps + n * vbar * vbar / (n + eps))
        y = _tri_solve(self._factor(), v)
        return float(y @ y)

    def log_mvn(self, v: np.ndarray, s: float) -> float:
        """Log density of ``N(0, s * (H + nugget I))`` at ``v``."""
        return -0.5 * (self.n * (LOG_2PI + math.log(s)) + self.ensure_logdet()
                       + self.quad(v) / s)

    def sample(self, rng: np.random.Generator, s: float) -> np.ndarray:
        """One draw from ``N(0, s * (H + nugget I))``."""
        if self.spike:
            z = rng.standard_normal(self.n + 1)
            return math.sqrt(s) * (math.sqrt(self.nugget) * z[:-1] + z[-1])
        return math.sqrt(s) * (self._factor() @ rng.standard_normal(self.n))

    # -- Gaussian observation model m = beta + noise, noise ~ N(0, diag(e)) --

    def marginal_parts(self, m, e, s):
        """Log N(m; 0, diag(e) + s*Hn) and a solver for that covariance."""
        n = self.n
        if self.spike:
            d = e + s * self.nugget
            dinv = 1.0 / d
            denom = 1.0 + s * dinv.sum()

            def solve(v):
                vd = v * dinv
                return vd - (s * vd.sum() / denom) * dinv

            logdet = float(np.sum(np.log(d))) + math.log(denom)
        else:
            M = s * self.H
            M.flat[:: n + 1] += e
            LM = chol_lower(M, "marginal covariance")

            def solve(v):
                return _tri_solve(LM, _tri_solve(LM, v), trans=1)

            logdet = 2.0 * float(np.sum(np.log(np.diag(LM))))
        Minv_m = solve(m)
        logml = -0.5 * (n * LOG_2PI + logdet + float(m @ Minv_m))
        return logml, solve

    def _prior_cov_mul(self, u, s):
        if self.spike:
            return s * (self.nugget * u + u.sum())
        return s * (self.H @ u)

    def log_marginal(self, m, e, s) -> float:
        return self.marginal_parts(m, e, s)[0]

    def posterior_moments(self, m, e, s):
        """Mean and covariance of ``beta`` given ``m`` (dense; for checks)."""
        _, solve = self.marginal_parts(m, e, s)
        S = s * self.dense()
        mean = S @ solve(m)
        SMinvS = S @ np.column_stack([solve(col) for col in S.T])
        cov = S - SMinvS
        return mean, 0.5 * (cov + cov.T)

    def posterior_draw(self, m, e, s, rng, marginal=None):
        """Draw ``beta`` given ``m`` by prior-sample correction.

        ``beta0 ~ N(0, S)`` and ``y0 = beta0 + noise`` give
        ``beta0 + S (diag(e) + S)^{-1} (m - y0)`` distributed as the
        Gaussian posterior.  Returns ``(draw, log marginal of m)``.
        """
        logml, solve = marginal if marginal is not None else self.marginal_parts(m, e, s)
        beta0 = self.sample(rng, s)
        y0 = beta0 + np.sqrt(e) * rng.standard_normal(self.n)
        return beta0 + self._prior_cov_mul(solve(m - y0), s), logml
