"""Systematic-scan Metropolis-within-Gibbs sampler for the stage-2 model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, NumericalError
from .config import ChainConfig, PriorConfig
from .kernels import update_beta_k, update_c_k, update_gamma0_k, update_lambda_k, update_tau
from .model import CorrFactor, ModelState, StageTwoData, init_state

__all__ = ["PosteriorDraws", "run_chain", "chain_rng", "Sampler"]

log = logging.getLogger(__name__)


@dataclass
class PosteriorDraws:
    """Retained draws, indexed ``[chain, draw, ...]``.

    ``lambda_`` and ``tau`` hold the scales themselves (square roots of the
    sampled variances).
    """

    beta: np.ndarray            # (chains, draws, n, p)
    lambda_: np.ndarray         # (chains, draws, p)
    c: np.ndarray               # (chains, draws, p)
    tau: np.ndarray             # (chains, draws)
    iterations: np.ndarray      # (draws,) 1-based sweep index
    site_ids: tuple = ()
    mh_acceptance: np.ndarray = field(default=None)   # (chains, p)

    @property
    def n_chains(self) -> int:
        return self.beta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.beta.shape[1]

    @property
    def n_sites(self) -> int:
        return self.beta.shape[2]

    @property
    def p(self) -> int:
        return self.beta.shape[3]

    def columns(self) -> list[str]:
        """Flattened column order used by the draws file."""
        n, p = self.n_sites, self.p
        cols = ["chain", "iteration"]
        cols += [f"beta[{i + 1},{k + 1}]" for i in range(n) for k in range(p)]
        cols += [f"lambda[{k + 1}]" for k in range(p)]
        cols += [f"c[{k + 1}]" for k in range(p)]
        cols.append("tau")
        return cols

    def as_table(self) -> np.ndarray:
        """One row per retained draw: chain, iteration, then the flattened
        monitored values in :meth:`columns` order."""
        C, S = self.n_chains, self.n_draws
        rows = np.empty((C * S, len(self.columns())))
        rows[:, 0] = np.repeat(np.arange(C), S)
        rows[:, 1] = np.tile(self.iterations, C)
        n, p = self.n_sites, self.p
        j = 2
        rows[:, j:j + n * p] = self.beta.reshape(C * S, n * p)
        j += n * p
        rows[:, j:j + p] = self.lambda_.reshape(C * S, p)
        j += p
        rows[:, j:j + p] = self.c.reshape(C * S, p)
        rows[:, -1] = self.tau.reshape(C * S)
        return rows

    @classmethod
    def from_table(cls, table, n, p, site_ids=()):
        table = np.asarray(table, dtype=float)
        chains = table[:, 0].astype(int)
        C = int(chains.max()) + 1 if table.size else 0
        S = table.shape[0] // max(C, 1)
        j = 2
        beta = table[:, j:j + n * p].reshape(C, S, n, p)
        j += n * p
        lam = table[:, j:j + p].reshape(C, S, p)
        j += p
        c = table[:, j:j + p].reshape(C, S, p).astype(np.int8)
        tau = table[:, -1].reshape(C, S)
        return cls(beta=beta, lambda_=lam, c=c, tau=tau,
                   iterations=table[:S, 1].astype(np.int64), site_ids=tuple(site_ids))


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent stream for chain ``chain`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(chain,)))


class Sampler:
    """One chain's mutable state plus the cached correlation factors.

    Slab factors follow ``gamma0_k``; they are rebuilt only when that
    value changes.  The spike factor is shared by all columns.
    """

    def __init__(self, data: StageTwoData, prior: PriorConfig, chain_cfg: ChainConfig,
                 rng: np.random.Generator, state: ModelState | None = None):
        self.data = data
        self.prior = prior
        self.cfg = chain_cfg
        self.rng = rng
        self.state = state if state is not None else init_state(data, prior)
        D = data.D
        self.spike = CorrFactor(D, 0.0, prior.nugget)
        self.slab = [CorrFactor(D, g, prior.nugget) for g in self.state.gamma0]
        self.collapsed = chain_cfg.c_update == "collapsed"
        self.n_accept = np.zeros(data.p, dtype=np.int64)
        self.n_proposed = np.zeros(data.p, dtype=np.int64)

    def factor(self, k: int) -> CorrFactor:
        return self.slab[k] if self.state.c[k] else self.spike

    def sweep(self) -> None:
        st, data, rng = self.state, self.data, self.rng
        n, p = data.n, data.p
        where = "beta"
        try:
            for k in range(p):
                where = f"beta[{k + 1}]"
                update_beta_k(st, k, data, self.factor(k), rng)
            quads = np.array([self.factor(k).quad(st.beta[:, k]) for k in range(p)])
            for k in range(p):
                where = f"lambda[{k + 1}]"
                update_lambda_k(st, k, quads[k], n, rng)
            where = "tau"
            update_tau(st, quads, n, rng)
            for k in range(p):
                where = f"gamma0[{k + 1}]"
                fac, acc = update_gamma0_k(st, k, self.slab[k], data.D, self.prior,
                                           self.cfg.mh_step, rng)
                self.slab[k] = fac
                if acc is not None:
                    self.n_proposed[k] += 1
                    self.n_accept[k] += acc
                where = f"c[{k + 1}]"
                update_c_k(st, k, data, self.slab[k], self.spike, self.prior, rng,
                           collapsed=self.collapsed)
        except NumericalError as exc:
            raise NumericalError(f"{where}: {exc}") from exc

    def acceptance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n_proposed > 0, self.n_accept / np.maximum(self.n_proposed, 1),
                            np.nan)


def _run_one(data, prior, cfg, chain):
    sampler = Sampler(data, prior, cfg, chain_rng(cfg.seed, chain))
    S = cfg.draws_per_chain
    n, p = data.n, data.p
    beta = np.empty((S, n, p))
    lam = np.empty((S, p))
    c = np.empty((S, p), dtype=np.int8)
    tau = np.empty(S)
    j = 0
    for t in range(1, cfg.n_iter + 1):
        try:
            sampler.sweep()
        except NumericalError as exc:
            raise NumericalError(f"chain {chain}, iteration {t}: {exc}") from exc
        if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0 and j < S:
            st = sampler.state
            beta[j] = st.beta
            lam[j] = np.sqrt(st.lambda2)
            c[j] = st.c
            tau[j] = np.sqrt(st.tau2)
            j += 1
    log.debug("chain %d done; MH acceptance %s", chain, sampler.acceptance())
    return beta, lam, c, tau, sampler.acceptance()


def run_chain(data: StageTwoData, prior: PriorConfig | None = None,
              chain_cfg: ChainConfig | None = None, executor=None) -> PosteriorDraws:
    """Run ``chain_cfg.n_chains`` independent chains and collect the draws.

    Each sweep updates, in order: every coefficient column; every local
    scale (with its auxiliary); the global scale (with its auxiliary);
    then for each column its slab decay followed by its spike/slab
    indicator and inclusion probability.  Output depends only on the
    inputs and ``chain_cfg.seed``, whether or not an executor is used.
    """
    prior = prior or PriorConfig()
    cfg = chain_cfg or ChainConfig()
    if data.D.shape[0] != data.n:
        raise InvalidArgumentError("site count differs from distance-matrix dimension")
    chains = range(cfg.n_chains)
    if executor is None:
        results = [_run_one(data, prior, cfg, ch) for ch in chains]
    else:
        results = list(executor.map(_run_one, [data] * cfg.n_chains, [prior] * cfg.n_chains,
                                    [cfg] * cfg.n_chains, chains))
    S = cfg.draws_per_chain
    iterations = cfg.burn_in + cfg.thin * np.arange(1, S + 1)
    return PosteriorDraws(
        beta=np.stack([r[0] for r in results]),
        lambda_=np.stack([r[1] for r in results]),
        c=np.stack([r[2] for r in results]),
        tau=np.stack([r[3] for r in results]),
        iterations=iterations.astype(np.int64),
        site_ids=tuple(data.site_ids),
        mh_acceptance=np.stack([r[4] for r in results]),
    )
