from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from .chain import PosteriorDraws

__all__ = ["PosteriorSummary", "summarize", "effective_sample_size", "autocorrelation"]

QUANTILE_LEVELS = (0.025, 0.5, 0.975)


@dataclass
class PosteriorSummary:
    beta_mean: np.ndarray       # (n, p)
    lambda_mean: np.ndarray     # (p,)
    c_mean: np.ndarray          # (p,) posterior probability of a non-zero decay
    tau_mean: float
    ess: dict                   # {"lambda": (p,), "c": (p,), "tau": float}
    beta_quantiles: np.ndarray  # (3, n, p) at QUANTILE_LEVELS
    n_draws: int
    site_ids: tuple = ()


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation of a 1-D series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    if acov[0] <= 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def effective_sample_size(x: np.ndarray) -> float:
    """ESS of one chain by Geyer's initial positive sequence.

    Sums of adjacent autocorrelation pairs are accumulated while they stay
    positive.  A constant series has ESS equal to its length.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.all(x == x[0]):
        return float(n)
    rho = autocorrelation(x)
    tau = -1.0
    for m in range(0, n - 1, 2):
        pair = rho[m] + rho[m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / tau) if tau > 0 else float(n)


def _multi_chain_ess(samples: np.ndarray) -> float:
    """Sum of per-chain ESS; ``samples`` is (chains, draws)."""
    return float(sum(effective_sample_size(ch) for ch in samples))


def summarize(draws: PosteriorDraws) -> PosteriorSummary:
    """Pool all chains and reduce the draws to means, quantiles and ESS."""
    if draws.n_chains == 0 or draws.n_draws == 0:
        raise InvalidArgumentError("cannot summarize an empty set of draws")
    C, S, n, p = draws.beta.shape
    beta = draws.beta.reshape(C * S, n, p)
    lam = draws.lambda_.reshape(C * S, p)
    c = draws.c.reshape(C * S, p).astype(float)
    tau = draws.tau.reshape(C * S)
    ess = {
        "lambda": np.array([_multi_chain_ess(draws.lambda_[:, :, k]) for k in range(p)]),
        "c": np.array([_multi_chain_ess(draws.c[:, :, k].astype(float)) for k in range(p)]),
        "tau": _multi_chain_ess(draws.tau),
    }
    return PosteriorSummary(
        beta_mean=beta.mean(axis=0),
        lambda_mean=lam.mean(axis=0),
        c_mean=c.mean(axis=0),
        tau_mean=float(tau.mean()),
        ess=ess,
        beta_quantiles=np.quantile(beta, QUANTILE_LEVELS, axis=0),
        n_draws=C * S,
        site_ids=tuple(draws.site_ids),
    )
