import math

import numpy as np
import pytest
from scipy.special import expit, ndtri
from scipy.stats import kstest

from scoredecomp.decomp_est import ScoredSample, crossfit_predictions, grouping_hat, reliability_hat
from scoredecomp.errors import DegenerateDataError
from scoredecomp.finite_world import (
    BlockPredictor,
    counterexample_average,
    example_constant_score,
    random_chain,
    random_predictor,
    random_space,
)
from scoredecomp.losses import BRIER, LOGLOSS
from scoredecomp.recalib import exact_fit
from scoredecomp.synthgen import (
    DGPConfig,
    SweepConfig,
    SyntheticDataset,
    boosting_demo,
    ensemble_average,
    ensemble_stack,
    fit_logistic,
    quantize_score,
    sample_copula,
    sample_dataset,
    sample_splits,
    stagewise_recalibrate,
    sweep_cell,
    sweep_columns,
    true_q,
)

# sigma(2 (e - 1)), evaluated independently with math.exp
Q_MAIN_10 = 1.0 / (1.0 + math.exp(-2.0 * (math.e - 1.0)))


class TestCopula:
    def test_independent(self):
        x1, x2 = sample_copula(DGPConfig(rho=0.0, n=100_000, seed=1))
        assert abs(np.corrcoef(ndtri(x1), ndtri(x2))[0, 1]) < 0.02

    def test_correlated(self):
        x1, x2 = sample_copula(DGPConfig(rho=0.7, n=100_000, seed=2))
        r = np.corrcoef(ndtri(x1), ndtri(x2))[0, 1]
        assert abs(r - 0.7) < 0.01
        # three standard errors of a Pearson correlation
        assert abs(r - 0.7) < 3 * (1 - 0.49) / math.sqrt(100_000)

    def test_uniform_marginals(self):
        n = 100_000
        x1, x2 = sample_copula(DGPConfig(rho=-0.5, n=n, seed=3))
        for x in (x1, x2):
            stat = kstest(x, "uniform").statistic
            assert stat < 0.01
            assert stat < 1.63 / math.sqrt(n)
            assert np.all((x > 0) & (x < 1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DGPConfig(rho=1.0)
        with pytest.raises(ValueError):
            DGPConfig(n=0)
        with pytest.raises(ValueError):
            DGPConfig(surface="other")


class TestTrueQ:
    def test_values(self):
        assert true_q(0.5, 0.5) == 0.5
        assert true_q(1.0, 0.0) == pytest.approx(Q_MAIN_10, abs=1e-15)
        # the commonly quoted rounded value 0.96876 agrees only to 1e-4
        assert true_q(1.0, 0.0) == pytest.approx(0.96876, abs=1e-4)
        assert true_q(0.5, 0.5, "appendix_sim") == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)

    def test_recomputable(self):
        d = sample_dataset(DGPConfig(rho=0.3, n=1000, seed=4))
        assert np.array_equal(true_q(d.x1, d.x2), d.q)
        assert np.all((d.q > 0) & (d.q < 1))


class TestDataset:
    def test_base_rate(self):
        d = sample_dataset(DGPConfig(n=100_000, seed=5))
        assert abs(d.y.mean() - d.q.mean()) < 0.005
        assert abs(d.y.mean() - d.q.mean()) < 3 * math.sqrt(0.25 / 100_000)

    def test_deterministic(self):
        cfg = DGPConfig(rho=0.2, n=500, seed=6)
        a, b = sample_dataset(cfg), sample_dataset(cfg)
        for f in ("x1", "x2", "y", "q"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_splits_independent(self):
        tr, ca, te = sample_splits(DGPConfig(n=200, seed=7))
        assert not np.array_equal(tr.x1, ca.x1)
        assert len(te) == 200

    def test_csv_roundtrip(self):
        d = sample_dataset(DGPConfig(n=50, seed=8))
        back = SyntheticDataset.from_csv(d.to_csv())
        assert np.array_equal(back.x1, d.x1) and np.array_equal(back.q, d.q)
        assert d.to_csv().splitlines()[0] == "x1,x2,y,q"
        with pytest.raises(ValueError):
            SyntheticDataset.from_csv("a,b\n1,2\n")


class TestLogistic:
    def test_recovers_coefficients(self):
        rng = np.random.default_rng(9)
        x1 = rng.random(100_000)
        y = (rng.random(x1.size) < expit(-1.5 + 3.0 * x1)).astype(int)
        d = SyntheticDataset(x1, rng.random(x1.size), y, expit(-1.5 + 3.0 * x1))
        m = fit_logistic(d, ("x1",))
        assert m.converged and not m.separated
        assert m.coef == pytest.approx([-1.5, 3.0], rel=0.05)

    def test_intercept_only(self):
        d = sample_dataset(DGPConfig(n=2000, seed=10))
        m = fit_logistic(d, ())
        assert np.allclose(m.predict(d), d.y.mean(), atol=1e-9)

    def test_separation_flagged(self):
        rng = np.random.default_rng(11)
        x1 = rng.random(400)
        d = SyntheticDataset(x1, x1, (x1 > 0.5).astype(int), np.full(400, 0.5))
        m = fit_logistic(d, ("x1",))
        assert m.separated
        assert np.all(np.isfinite(m.coef))
        p = m.predict(d)
        assert np.all((p >= 0) & (p <= 1))

    def test_errors(self):
        d = sample_dataset(DGPConfig(n=10, seed=12))
        with pytest.raises(ValueError):
            fit_logistic(d, ("x3",))
        one = SyntheticDataset(d.x1, d.x2, np.ones(10, dtype=int), d.q)
        with pytest.raises(DegenerateDataError):
            fit_logistic(one, ("x1",))


class TestEnsembles:
    def test_average_of_equal(self):
        s = np.array([0.1, 0.4, 0.9])
        assert np.array_equal(ensemble_average(s, s), s)

    def test_average_population_reliability(self):
        ex = counterexample_average()
        s1 = ex.predictors["S1"].at_atoms()[:, 1]
        s2 = ex.predictors["S2"].at_atoms()[:, 1]
        avg = ensemble_average(s1, s2)
        assert np.array_equal(avg, ex.average)
        w = (ex.space.atom_probs[:, None] * ex.space.chance).ravel()
        scores, y = np.repeat(avg, 2), np.tile([0, 1], 4)
        keep = w > 0
        pop = ScoredSample(scores[keep], y[keep], weights=w[keep])
        chat = exact_fit(pop.scores, pop.outcomes, pop.weights)
        assert reliability_hat(BRIER, pop, chat) == pytest.approx(0.03125, abs=1e-15)

    def test_stacking_not_worse_than_average(self):
        tr, ca, te = sample_splits(DGPConfig(rho=0.0, n=10_000, seed=13))
        m1, m2 = fit_logistic(tr, ("x1",)), fit_logistic(tr, ("x2",))
        stack = ensemble_stack(m1.predict(ca), m2.predict(ca), ca.y)
        s_avg = ensemble_average(m1.predict(te), m2.predict(te))
        s_stk = stack.predict(m1.predict(te), m2.predict(te))

        def ll(s):
            return float(np.mean(LOGLOSS.binary_pointwise(s, te.y)))

        assert ll(s_stk) <= ll(s_avg) + 0.01


class TestQuantize:
    def test_two_levels(self):
        s = np.array([0.0, 0.2, 0.5, 0.7, 1.0])
        assert np.array_equal(quantize_score(s, 2), [0.25, 0.25, 0.75, 0.75, 0.75])
        with pytest.raises(ValueError):
            quantize_score(s, 1)

    def test_monotone(self):
        s = np.linspace(0, 1, 1001)
        assert np.all(np.diff(quantize_score(s, 8)) >= 0)

    def test_grouping_effects(self):
        tr, _, te = sample_splits(DGPConfig(rho=0.0, n=10_000, seed=14))
        s = fit_logistic(tr, ("x1", "x2")).predict(te)

        def grp(scores):
            c = crossfit_predictions(scores, te.y, "isotonic", folds=5, seed=0)
            return grouping_hat(BRIER, ScoredSample(scores, te.y, oracle_q=te.q), c)

        base = grp(s)
        assert grp(quantize_score(s, 8)) >= base - 0.005
        assert abs(grp(quantize_score(s, 1024)) - base) < 0.002


class TestBoosting:
    def test_trivial_refinement(self):
        rows = boosting_demo(depth=1, trivial=True)
        assert all(r.gain == 0.0 and r.logloss_gain == 0.0 for r in rows)

    @pytest.mark.parametrize("seed", range(5))
    def test_telescoping(self, seed):
        rows = boosting_demo(space_size=8, depth=3, seed=seed)
        assert rows[0].n_blocks == 1 and rows[-1].n_blocks == 8
        for a, b in zip(rows, rows[1:]):
            assert b.brier_risk == pytest.approx(a.brier_risk - a.gain, abs=1e-12)
            assert b.logloss_risk == pytest.approx(a.logloss_risk - a.logloss_gain, abs=1e-12)
            assert a.logloss_gain == pytest.approx(a.mutual_info, abs=1e-12)
            assert b.brier_risk <= a.brier_risk
        assert rows[0].logloss_risk == pytest.approx(
            sum(r.logloss_gain for r in rows) + rows[-1].logloss_risk, abs=1e-12)

    def test_deterministic(self):
        assert boosting_demo(seed=3) == boosting_demo(seed=3)


class TestStagewise:
    def test_already_calibrated(self):
        space, parts, _ = example_constant_score()
        from scoredecomp.finite_world import conditional_law

        r = stagewise_recalibrate(space, conditional_law(space, parts["X"]), BRIER)
        assert r.reliability_removed == pytest.approx(0.0, abs=1e-15)

    def test_constant_point_nine(self):
        space, parts, _ = example_constant_score()
        pred = BlockPredictor.binary(parts["S"], [0.9])
        r = stagewise_recalibrate(space, pred, BRIER)
        assert r.reliability_removed == pytest.approx(0.16, abs=1e-15)
        assert r.post_loss == pytest.approx(0.25, abs=1e-15)
        r = stagewise_recalibrate(space, pred, LOGLOSS)
        kl = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
        assert r.reliability_removed == pytest.approx(kl, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_identity_random(self, seed):
        rng = np.random.default_rng(seed)
        space = random_space(rng, 7, 2)
        part = random_chain(rng, 7, 3)[1]
        pred = random_predictor(rng, part, 2)
        for loss in (BRIER, LOGLOSS):
            r = stagewise_recalibrate(space, pred, loss)
            assert r.post_loss == pytest.approx(r.pre_loss - r.reliability_removed, abs=1e-12)
            again = stagewise_recalibrate(space, r.recalibrated, loss)
            assert again.reliability_removed == pytest.approx(0.0, abs=1e-14)


class TestSweep:
    def test_cell_rows_and_determinism(self):
        cfg = SweepConfig(rhos=(0.0,), n=1500, seed=2)
        rows = sweep_cell(0.0, cfg)
        assert [r["variant"] for r in rows] == ["s1", "s2", "avg", "s12", "s12q"]
        assert set(rows[0]) == set(sweep_columns())
        assert rows == sweep_cell(0.0, cfg)
        for r in rows:
            assert r["lcs_before"] >= 0 and r["rel_brier_after"] >= 0
