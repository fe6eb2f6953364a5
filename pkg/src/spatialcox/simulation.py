"""Synthetic studies: true coefficient fields, Cox survival data, and the
end-to-end replication driver with aggregation."""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalError, SpatialCoxError
from .mcmc.chain import run_chain
from .mcmc.config import DESK_CHAIN, PUBLISHED_CHAIN, ChainConfig, PriorConfig
from .mcmc.model import StageTwoData
from .mcmc.summary import summarize
from .selection import average_mse, confusion_metrics, decide
from .spatial_graph import SpatialGraph, graph_distance_matrix, lattice_graph
from .survival_core import FitOptions, SiteSurvivalData, fit_all_sites

__all__ = [
    "CoefficientSpec",
    "StudySpec",
    "ReplicationResult",
    "PRESETS",
    "preset",
    "generate_coefficients",
    "generate_survival_data",
    "replication_seed",
    "run_replication",
    "run_study",
    "aggregate",
]

LINEAR_PREDICTOR_CLAMP = 700.0


@dataclass(frozen=True)
class CoefficientSpec:
    """How one coefficient varies over sites: ``null`` (zero everywhere),
    ``static`` (constant ``value``) or ``varying`` (Gaussian field with
    mean ``mean`` and correlation ``exp(-decay * distance)``)."""

    kind: str
    value: float = 0.0
    mean: float = 0.0
    decay: float = 1.0

    def __post_init__(self):
        if self.kind not in ("null", "static", "varying"):
            raise InvalidArgumentError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "varying" and not self.decay > 0:
            raise InvalidArgumentError("varying coefficients need decay > 0")

    @property
    def significant(self) -> bool:
        return self.kind != "null" and not (self.kind == "static" and self.value == 0)

    @property
    def varying(self) -> bool:
        return self.kind == "varying"

    def to_dict(self) -> dict:
        if self.kind == "null":
            return {"kind": "null"}
        if self.kind == "static":
            return {"kind": "static", "value": self.value}
        return {"kind": "varying", "mean": self.mean, "decay": self.decay}

    @classmethod
    def from_dict(cls, d) -> "CoefficientSpec":
        return cls(**d)


@dataclass(frozen=True)
class StudySpec:
    pattern: tuple
    n_sites: int = 64
    per_site_n: int = 100
    baseline_hazard: float = 0.5
    censor_time: float = 155.0
    graph: SpatialGraph | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    replications: int = 10
    chain: ChainConfig = DESK_CHAIN
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(self.pattern))
        if self.graph is None:
            side = math.isqrt(self.n_sites)
            if side * side != self.n_sites:
                raise InvalidArgumentError(
                    "n_sites must be a perfect square when no graph is supplied")
            object.__setattr__(self, "graph", lattice_graph(side, side))
        if self.graph.n != self.n_sites:
            raise InvalidArgumentError(
                f"graph has {self.graph.n} sites but n_sites={self.n_sites}")
        if self.per_site_n < self.p + 1:
            raise InvalidArgumentError("per_site_n must exceed the number of covariates")
        if not (self.baseline_hazard > 0 and self.censor_time > 0 and self.replications > 0):
            raise InvalidArgumentError("baseline_hazard, censor_time, replications must be > 0")

    @property
    def p(self) -> int:
        return len(self.pattern)

    @property
    def significant(self) -> np.ndarray:
        return np.array([c.significant for c in self.pattern])

    @property
    def varying(self) -> np.ndarray:
        return np.array([c.varying for c in self.pattern])

    def with_(self, **kw) -> "StudySpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        """JSON-ready form; the graph is stored inline as ids plus edges."""
        index = {s: i for i, s in enumerate(self.graph.site_ids)}
        edges = sorted((tuple(sorted(pair, key=index.__getitem__)) for pair in self.graph.edges),
                       key=lambda e: (index[e[0]], index[e[1]]))
        return {
            "name": self.name,
            "n_sites": self.n_sites,
            "per_site_n": self.per_site_n,
            "baseline_hazard": self.baseline_hazard,
            "censor_time": self.censor_time,
            "coefficient_pattern": [c.to_dict() for c in self.pattern],
            "graph": {"site_ids": [str(s) for s in self.graph.site_ids],
                      "edges": [[str(a), str(b)] for a, b in edges]},
            "hyperprior": [self.prior.a0, self.prior.b0],
            "prior": self.prior.to_dict(),
            "replications": self.replications,
            "chain": self.chain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "StudySpec":
        """Inverse of :meth:`to_dict`.

        ``graph`` may also be ``{"lattice": [rows, cols]}`` or
        ``{"edge_list": path}`` (relative to ``base_dir``); omitted means
        the square lattice.  ``hyperprior`` overrides ``prior.a0/b0``.
        """
        from pathlib import Path

        from .spatial_graph import read_edge_list

        known = {"name", "n_sites", "per_site_n", "baseline_hazard", "censor_time",
                 "coefficient_pattern", "graph", "hyperprior", "prior", "replications", "chain"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown study fields: {sorted(unknown)}")
        if "coefficient_pattern" not in d:
            raise InvalidArgumentError("study config needs a coefficient_pattern")
        prior = dict(d.get("prior") or {})
        if d.get("hyperprior") is not None:
            prior["a0"], prior["b0"] = (float(v) for v in d["hyperprior"])
        g = d.get("graph")
        graph = None
        if g:
            if "lattice" in g:
                graph = lattice_graph(*(int(v) for v in g["lattice"]))
            elif "edge_list" in g:
                path = Path(g["edge_list"])
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                graph = read_edge_list(path)
            else:
                graph = SpatialGraph(g["site_ids"], [tuple(e) for e in g["edges"]])
        n_sites = int(d.get("n_sites", graph.n if graph is not None else 64))
        return cls(
            pattern=[CoefficientSpec.from_dict(c) for c in d["coefficient_pattern"]],
            n_sites=n_sites,
            per_site_n=int(d.get("per_site_n", 100)),
            baseline_hazard=float(d.get("baseline_hazard", 0.5)),
            censor_time=float(d.get("censor_time", 155.0)),
            graph=graph,
            prior=PriorConfig.from_dict(prior),
            replications=int(d.get("replications", 10)),
            chain=ChainConfig.from_dict(d.get("chain")) if d.get("chain") else DESK_CHAIN,
            name=str(d.get("name", "custom")),
        )


def _study1_pattern(decay):
    return ([CoefficientSpec("null")] * 10
            + [CoefficientSpec("static", value=float(k - 10)) for k in range(11, 16)]
            + [CoefficientSpec("varying", mean=3.0, decay=decay)] * 5)


_PATTERNS = {
    "study1": _study1_pattern(10.0),
    "study2": [CoefficientSpec("null")] * 18 + [CoefficientSpec("static", value=3.0),
                                               CoefficientSpec("varying", mean=3.0, decay=10.0)],
    "study3": _study1_pattern(1.0),
    "null": [CoefficientSpec("null")] * 20,
}

PRESETS = tuple(name + suffix for name in _PATTERNS for suffix in ("", "-desk"))


def preset(name: str) -> StudySpec:
    """Built-in studies.  Bare names run at the published scale (100
    replications of 1,000,000 sweeps); ``-desk`` variants run 10
    replications of 50,000 sweeps."""
    base, _, scale = name.partition("-")
    if base not in _PATTERNS or scale not in ("", "desk"):
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if scale == "desk":
        return StudySpec(pattern=_PATTERNS[base], replications=10, chain=DESK_CHAIN, name=name)
    return StudySpec(pattern=_PATTERNS[base], replications=100, chain=PUBLISHED_CHAIN, name=name)


def generate_coefficients(spec: StudySpec, rng, D: np.ndarray | None = None) -> np.ndarray:
    """True coefficient field, shape (n_sites, p)."""
    rng = np.random.default_rng(rng)
    if D is None:
        D = graph_distance_matrix(spec.graph)
    n = spec.n_sites
    beta = np.zeros((n, spec.p))
    for k, cs in enumerate(spec.pattern):
        if cs.kind == "static":
            beta[:, k] = cs.value
        elif cs.kind == "varying":
            try:
                L = np.linalg.cholesky(np.exp(-cs.decay * D))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"correlation exp(-{cs.decay}*D) is not positive definite") from exc
            beta[:, k] = cs.mean + L @ rng.standard_normal(n)
    return beta


def generate_survival_data(true_beta: np.ndarray, spec: StudySpec, rng) -> list:
    """Exponential event times under the Cox model with constant baseline
    hazard, administratively censored at ``spec.censor_time``."""
    rng = np.random.default_rng(rng)
    sites = []
    for i, site_id in enumerate(spec.graph.site_ids):
        x = rng.standard_normal((spec.per_site_n, spec.p))
        eta = np.clip(x @ true_beta[i], -LINEAR_PREDICTOR_CLAMP, LINEAR_PREDICTOR_CLAMP)
        u = rng.random(spec.per_site_n)
        with np.errstate(divide="ignore"):
            latent = -np.log(u) / (spec.baseline_hazard * np.exp(eta))
        event = latent <= spec.censor_time
        times = np.where(event, latent, spec.censor_time)
        sites.append(SiteSurvivalData(site_id, times, event.astype(np.int8), x))
    return sites


@dataclass
class ReplicationResult:
    index: int
    seed: int
    significance: object = None
    spatial: object = None
    selected: np.ndarray | None = None
    varying: list | None = None
    mse: np.ndarray | None = None
    lambda_mean: np.ndarray | None = None
    c_mean: np.ndarray | None = None
    censoring_rate: float = math.nan
    excluded_sites: tuple = ()
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def replication_seed(master_seed: int, index: int) -> int:
    """64-bit seed of replication ``index`` in a batch seeded ``master_seed``."""
    words = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def run_replication(spec: StudySpec, seed: int, index: int = 0) -> ReplicationResult:
    """Simulate, fit, sample, decide and score one replication.

    Failures are captured in ``ReplicationResult.error`` (with the seed)
    rather than raised.
    """
    start = time.perf_counter()
    res = ReplicationResult(index=index, seed=int(seed))
    try:
        coef_ss, surv_ss, chain_ss = np.random.SeedSequence(int(seed)).spawn(3)
        D_full = graph_distance_matrix(spec.graph)
        truth = generate_coefficients(spec, np.random.default_rng(coef_ss), D_full)
        sites = generate_survival_data(truth, spec, np.random.default_rng(surv_ss))
        res.censoring_rate = 1.0 - float(np.mean(np.concatenate([s.status for s in sites])))

        estimates, excluded = fit_all_sites(sites, FitOptions())
        res.excluded_sites = tuple(e.site_id for e in excluded)
        keep = spec.graph.subgraph_order([e.site_id for e in estimates])
        data = StageTwoData.from_pmles(estimates, D_full[np.ix_(keep, keep)])
        chain_seed = int(chain_ss.generate_state(1, np.uint64)[0])
        draws = run_chain(data, spec.prior, replace(spec.chain, seed=chain_seed))
        summary = summarize(draws)
        report = decide(summary)

        sig = spec.significant
        res.selected = report.selected.copy()
        res.varying = list(report.spatially_varying)
        res.lambda_mean = summary.lambda_mean
        res.c_mean = summary.c_mean
        res.significance = confusion_metrics(report.selected, sig)
        called_varying = np.array([bool(v) for v in report.spatially_varying])
        res.spatial = confusion_metrics(called_varying[sig], spec.varying[sig])
        res.mse = average_mse(summary.beta_mean, truth[keep])
    except SpatialCoxError as exc:
        res.error = f"seed {seed}: {type(exc).__name__}: {exc}"
    except Exception as exc:  # noqa: BLE001 - a batch must survive one bad replication
        res.error = f"seed {seed}: {type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    res.wall_time = time.perf_counter() - start
    return res


def _run_indexed(args):
    spec, master_seed, index = args
    return run_replication(spec, replication_seed(master_seed, index), index)


def run_study(spec: StudySpec, master_seed: int, workers: int = 1,
              replications: int | None = None, progress=None) -> list:
    """Run the replications of ``spec``, optionally in a process pool.

    Results are ordered by replication index and do not depend on
    ``workers``.
    """
    count = spec.replications if replications is None else replications
    jobs = [(spec, master_seed, i) for i in range(count)]
    if workers <= 1:
        results = []
        for job in jobs:
            results.append(_run_indexed(job))
            if progress:
                progress(results[-1])
        return results
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = []
        for r in pool.map(_run_indexed, jobs):
            results.append(r)
            if progress:
                progress(r)
    return results


def _mean_sd(values: Sequence[float]):
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan, 0
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd, int(arr.size)


def aggregate(results: Sequence[ReplicationResult], spec: StudySpec) -> dict:
    """Tables-style summary over successful replications.

    Returns a dict with ``metrics`` (mean, sd and defined-count per metric
    and level; NaN ratios are left out of the mean), ``coefficients``
    (selection and varying frequencies and mean MSE per coefficient) and
    bookkeeping counts.
    """
    if not results:
        raise InvalidArgumentError("no replication results to aggregate")
    ok = [r for r in results if r.ok]
    metrics = []
    for level in ("significance", "spatial"):
        for name in ("tpr", "tnr", "ppv", "npv"):
            mean, sd, count = _mean_sd([getattr(getattr(r, level), name) for r in ok])
            metrics.append({"level": level, "metric": name, "mean": mean, "sd": sd,
                            "n_defined": count, "n_undefined": len(ok) - count})
    coefficients = []
    for k, cs in enumerate(spec.pattern):
        sel = sum(bool(r.selected[k]) for r in ok)
        var = sum(bool(r.varying[k]) for r in ok if r.varying[k] is not None)
        mse = float(np.mean([r.mse[k] for r in ok])) if ok else math.nan
        coefficients.append({"coefficient": k + 1, "truth": cs.kind, "selected": sel,
                             "varying": var, "average_mse": mse})
    return {
        "study": spec.name,
        "replications": len(results),
        "succeeded": len(ok),
        "failed": [{"index": r.index, "error": r.error.splitlines()[0]}
                   for r in results if not r.ok],
        "metrics": metrics,
        "coefficients": coefficients,
        "censoring_rate": _mean_sd([r.censoring_rate for r in ok])[0],
    }
