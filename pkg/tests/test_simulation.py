import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from spatialcox.errors import InvalidArgumentError
from spatialcox.mcmc.config import ChainConfig
from spatialcox.selection import OperatingCharacteristics
from spatialcox.simulation import (PRESETS, CoefficientSpec, ReplicationResult, StudySpec,
                                   aggregate, generate_coefficients, generate_survival_data,
                                   preset, replication_seed, run_replication, run_study)
from spatialcox.spatial_graph import graph_distance_matrix

TINY_CHAIN = ChainConfig(n_iter=40, burn_in=20, thin=5)


def censoring(sites):
    return 1.0 - np.mean(np.concatenate([s.status for s in sites]))


class TestPresets:
    def test_names(self):
        assert {"study1", "study2", "study3", "study1-desk", "null-desk"} <= set(PRESETS)
        with pytest.raises(InvalidArgumentError):
            preset("study9")

    def test_scales(self):
        full, desk = preset("study1"), preset("study1-desk")
        assert full.replications == 100 and full.chain.n_iter == 1_000_000
        assert full.chain.burn_in == 900_000 and full.chain.thin == 20
        assert desk.replications == 10 and desk.chain.n_iter == 50_000
        assert desk.chain.burn_in == 40_000 and desk.chain.thin == 10
        assert desk.n_sites == 64 and desk.per_site_n == 100 and desk.p == 20
        assert desk.baseline_hazard == 0.5 and desk.censor_time == 155
        assert (desk.prior.a0, desk.prior.b0) == (25, 50)

    def test_study_patterns(self):
        s1, s2, s3 = preset("study1"), preset("study2"), preset("study3")
        assert list(s1.significant) == [False] * 10 + [True] * 10
        assert list(s1.varying) == [False] * 15 + [True] * 5
        assert [c.decay for c in s1.pattern[15:]] == [10.0] * 5
        assert [c.decay for c in s3.pattern[15:]] == [1.0] * 5
        assert list(s2.significant) == [False] * 18 + [True, True]
        assert list(s2.varying) == [False] * 19 + [True]

    def test_json_round_trip(self):
        spec = preset("study2-desk")
        assert StudySpec.from_dict(spec.to_dict()) == spec

    def test_config_variants(self, tmp_path):
        (tmp_path / "g.txt").write_text("a b\nb c\nc d\n")
        spec = StudySpec.from_dict({"coefficient_pattern": [{"kind": "null"}],
                                    "graph": {"edge_list": "g.txt"}, "per_site_n": 10,
                                    "hyperprior": [2, 3]}, base_dir=tmp_path)
        assert spec.n_sites == 4 and spec.prior.a0 == 2 and spec.prior.b0 == 3
        lat = StudySpec.from_dict({"coefficient_pattern": [{"kind": "null"}],
                                   "graph": {"lattice": [2, 3]}})
        assert lat.n_sites == 6
        with pytest.raises(InvalidArgumentError, match="unknown"):
            StudySpec.from_dict({"coefficient_pattern": [], "colour": 1})


class TestCoefficients:
    def test_study1_columns(self, rng):
        spec = preset("study1-desk")
        beta = generate_coefficients(spec, rng)
        assert beta.shape == (64, 20)
        assert np.all(beta[:, :10] == 0)
        assert np.all(beta[:, 10] == 1.0) and np.all(beta[:, 14] == 5.0)

    def test_varying_field_mean(self):
        spec = StudySpec(pattern=[CoefficientSpec("varying", mean=3.0, decay=10.0)], n_sites=4)
        D = graph_distance_matrix(spec.graph)
        rng = np.random.default_rng(1)
        draws = np.array([generate_coefficients(spec, rng, D)[:, 0] for _ in range(1000)])
        se = draws.std(0, ddof=1) / math.sqrt(1000)
        assert np.all(np.abs(draws.mean(0) - 3.0) < 3 * se)

    @pytest.mark.parametrize("decay", [10.0, 1.0])
    def test_adjacent_correlation(self, decay):
        spec = StudySpec(pattern=[CoefficientSpec("varying", mean=3.0, decay=decay)], n_sites=4)
        D = graph_distance_matrix(spec.graph)
        rng = np.random.default_rng(2)
        draws = np.array([generate_coefficients(spec, rng, D)[:, 0] for _ in range(10000)])
        r = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert D[0, 1] == 1
        assert abs(r - math.exp(-decay)) < 4 / math.sqrt(10000)


class TestSurvivalGenerator:
    def test_null_is_all_events(self, rng):
        spec = preset("null-desk")
        sites = generate_survival_data(np.zeros((64, 20)), spec, rng)
        assert censoring(sites) == 0.0
        assert len(sites) == 64 and sites[0].covariates.shape == (100, 20)

    def test_exponential_times(self, rng):
        spec = StudySpec(pattern=[CoefficientSpec("null")], n_sites=4, per_site_n=2500)
        sites = generate_survival_data(np.zeros((4, 1)), spec, rng)
        t = np.concatenate([s.times for s in sites])
        assert stats.kstest(t, stats.expon(scale=1 / 0.5).cdf).pvalue > 0.01

    def test_hazard_scaling(self):
        spec = preset("study1-desk")
        beta = generate_coefficients(spec, np.random.default_rng(0))
        a = generate_survival_data(beta, replace(spec, censor_time=1e300),
                                   np.random.default_rng(5))
        b = generate_survival_data(beta, replace(spec, censor_time=1e300, baseline_hazard=1.0),
                                   np.random.default_rng(5))
        np.testing.assert_allclose(b[3].times, a[3].times / 2, rtol=1e-12)

    def test_study1_censoring_band(self):
        spec = preset("study1-desk")
        D = graph_distance_matrix(spec.graph)
        rates = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            beta = generate_coefficients(spec, rng, D)
            rates.append(censoring(generate_survival_data(beta, spec, rng)))
        assert abs(np.mean(rates) - 0.35) <= 0.05

    def test_extreme_predictor_is_clamped(self, rng):
        spec = StudySpec(pattern=[CoefficientSpec("static", value=1e4)], n_sites=4)
        sites = generate_survival_data(np.full((4, 1), 1e4), spec, rng)
        assert all(np.all(np.isfinite(s.times)) and np.all(s.times > 0) for s in sites)


@pytest.fixture(scope="module")
def small():
    return StudySpec(pattern=[CoefficientSpec("null"), CoefficientSpec("static", value=1.0),
                              CoefficientSpec("varying", mean=1.0, decay=1.0)],
                     n_sites=9, per_site_n=40, chain=TINY_CHAIN, replications=3)


class TestReplications:

    def test_seed_derivation(self):
        assert replication_seed(7, 0) == replication_seed(7, 0)
        assert len({replication_seed(7, i) for i in range(50)}) == 50
        assert replication_seed(7, 1) != replication_seed(8, 1)
        assert 0 <= replication_seed(123, 4) < 2 ** 64

    def test_identical_runs(self, small):
        a = run_replication(small, 11, 0)
        b = run_replication(small, 11, 0)
        assert a.ok, a.error
        for field in ("selected", "mse", "lambda_mean", "c_mean"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
        assert a.varying == b.varying and a.censoring_rate == b.censoring_rate
        assert a.spatial.tp + a.spatial.fn == 1

    def test_failure_is_captured(self, small):
        bad = replace(small, per_site_n=4)
        object.__setattr__(bad, "per_site_n", 1)
        res = run_replication(bad, 3, 0)
        assert not res.ok and "seed 3" in res.error

    def test_workers_do_not_change_results(self, small):
        a = run_study(small, 5, workers=1)
        b = run_study(small, 5, workers=2)
        assert [r.seed for r in a] == [r.seed for r in b]
        assert all(np.array_equal(x.lambda_mean, y.lambda_mean) for x, y in zip(a, b))

    def test_aggregate(self, small):
        results = run_study(small, 5)
        agg = aggregate(results, small)
        assert agg["replications"] == 3 and agg["succeeded"] == 3
        assert all(c["selected"] <= 3 for c in agg["coefficients"])
        assert len(agg["metrics"]) == 8


def _result(i, tpr, tnr):
    m = OperatingCharacteristics(1, 0, 1, 0, tpr, tnr, 1.0, 1.0)
    return ReplicationResult(index=i, seed=i, significance=m, spatial=m,
                             selected=np.array([True]), varying=[False], mse=np.array([0.1]))


class TestAggregate:
    spec = StudySpec(pattern=[CoefficientSpec("static", value=1.0)], n_sites=4)

    def test_identical_results_zero_sd(self):
        agg = aggregate([_result(i, 0.8, 1.0) for i in range(4)], self.spec)
        row = next(m for m in agg["metrics"] if m["metric"] == "tpr")
        assert row["mean"] == pytest.approx(0.8) and row["sd"] == 0.0

    def test_nan_excluded_from_mean(self):
        agg = aggregate([_result(0, 1.0, math.nan), _result(1, 0.5, 1.0)], self.spec)
        row = next(m for m in agg["metrics"]
                   if m["metric"] == "tnr" and m["level"] == "significance")
        assert row["mean"] == 1.0 and row["n_defined"] == 1 and row["n_undefined"] == 1

    def test_failed_replications_listed(self):
        bad = ReplicationResult(index=1, seed=9, error="seed 9: NumericalError: boom")
        agg = aggregate([_result(0, 1.0, 1.0), bad], self.spec)
        assert agg["failed"] == [{"index": 1, "error": "seed 9: NumericalError: boom"}]
        assert agg["succeeded"] == 1

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            aggregate([], self.spec)
