import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from scoredecomp.finite_world import (
    BlockPredictor,
    FiniteSpace,
    Partition,
    chain_decompose,
    conditional_entropy,
    conditional_law,
    counterexample_average,
    example_constant_score,
    expected_loss,
    four_term_decompose,
    identity_suite,
    load_space,
    martingale_gap,
    one_level_decompose,
    random_chain,
    random_predictor,
    random_space,
    save_space,
    space_from_dict,
    telescope_decompose,
    tower_check,
    urc_decompose,
)
from scoredecomp.losses import BRIER, LOGLOSS

KL_09_05 = 0.3680642071684971
LOSSES = (BRIER, LOGLOSS)


def random_setup(seed, n=None, k=None, levels=4):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 13))
    k = k or int(rng.integers(2, 5))
    space = random_space(rng, n, k)
    chain = random_chain(rng, n, levels)
    return rng, space, chain


class TestTypes:
    def test_space_validation(self):
        with pytest.raises(ValueError):
            FiniteSpace(np.array([0.5, 0.6]), np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(ValueError):
            FiniteSpace(np.array([1.0, 0.0]), np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(ValueError):
            FiniteSpace(np.array([0.5, 0.5]), np.array([[0.5, 0.6], [0.5, 0.5]]))

    def test_partition_relabels_contiguously(self):
        p = Partition.from_labels(["b", "a", "b", "c"])
        assert p.block_count == 3
        assert sorted(set(p.to_list())) == [0, 1, 2]

    def test_refinement(self):
        coarse = Partition.from_labels([0, 0, 1, 1])
        fine = Partition.from_labels([0, 1, 2, 2])
        straddle = Partition.from_labels([0, 1, 1, 2])
        assert coarse.is_coarser_than(fine)
        assert not fine.is_coarser_than(coarse)
        assert not coarse.is_coarser_than(straddle)
        assert Partition.trivial(4).is_coarser_than(coarse)

    def test_nonnested_chain_rejected(self):
        space = FiniteSpace(np.full(4, 0.25), np.full((4, 2), 0.5))
        a = Partition.from_labels([0, 0, 1, 1])
        b = Partition.from_labels([0, 1, 1, 2])
        with pytest.raises(ValueError):
            chain_decompose(space, a, b, conditional_law(space, a), BRIER)


class TestConditionalLaw:
    def test_trivial_partition_gives_marginal(self):
        _, space, _ = random_setup(0)
        law = conditional_law(space, Partition.trivial(space.n_atoms))
        assert np.allclose(law.probs[0], space.atom_probs @ space.chance, atol=1e-15)

    def test_discrete_partition_keeps_chance(self):
        _, space, _ = random_setup(1)
        law = conditional_law(space, Partition.discrete(space.n_atoms))
        assert np.allclose(law.at_atoms(), space.chance, atol=1e-15)

    def test_example_constant_score_one_block(self):
        space, parts, _ = example_constant_score()
        law = conditional_law(space, parts["S"])
        assert np.allclose(law.probs, [[0.5, 0.5]], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_loop_oracle(self, seed):
        _, space, chain = random_setup(seed)
        for part in chain:
            ours = conditional_law(space, part).at_atoms()
            ref = oracles.cond_law(space.atom_probs, space.chance, part.block_of_atom)
            assert np.allclose(ours, ref, atol=1e-14)

    def test_global_balance_of_calibrated_predictor(self):
        for seed in range(20):
            _, space, chain = random_setup(seed)
            t = conditional_law(space, chain[1]).at_atoms()
            assert np.allclose(space.atom_probs @ t, space.atom_probs @ space.chance, atol=1e-12)


class TestExampleConstantScore:
    def setup_method(self):
        self.space, self.parts, self.pred = example_constant_score()

    def test_one_level(self):
        r = one_level_decompose(self.space, self.parts["S"], self.pred, BRIER)
        assert r.regret == 0.0
        assert r.entropy_term == pytest.approx(0.25, abs=1e-15)

    def test_chain_brier(self):
        r = chain_decompose(self.space, self.parts["S"], self.parts["X"], self.pred, BRIER)
        assert r.reliability == 0.0
        assert r.grouping == pytest.approx(0.16, abs=1e-12)
        assert r.entropy_term == pytest.approx(0.09, abs=1e-12)

    def test_chain_logloss(self):
        r = chain_decompose(self.space, self.parts["S"], self.parts["X"], self.pred, LOGLOSS)
        assert r.grouping == pytest.approx(KL_09_05, abs=1e-12)
        assert r.total == pytest.approx(math.log(2), abs=1e-12)

    def test_urc(self):
        r = urc_decompose(self.space, self.parts["S"], self.pred, BRIER)
        assert (r.uncertainty, r.resolution, r.reliability) == pytest.approx((0.25, 0.0, 0.0), abs=1e-15)

    def test_tower(self):
        assert tower_check(self.space, self.parts["S"], self.parts["X"]) < 1e-15


class TestDecompositions:
    @pytest.mark.parametrize("seed", range(10))
    def test_one_level_against_oracle(self, seed):
        rng, space, chain = random_setup(seed, n=6)
        t = random_predictor(rng, chain[1], space.n_labels)
        for loss in LOSSES:
            r = one_level_decompose(space, chain[1], t, loss)
            direct = oracles.expected(loss.name, space.atom_probs, space.chance, t.at_atoms())
            assert r.direct == pytest.approx(direct, abs=1e-13)
            assert abs(r.residual) < 1e-12

    def test_bayes_predictor_has_zero_regret(self):
        _, space, chain = random_setup(5)
        for loss in LOSSES:
            r = one_level_decompose(space, chain[2], conditional_law(space, chain[2]), loss)
            assert r.regret == pytest.approx(0.0, abs=1e-15)

    def test_equal_levels_zero_grouping(self):
        rng, space, chain = random_setup(6)
        t = random_predictor(rng, chain[1], space.n_labels)
        for loss in LOSSES:
            assert chain_decompose(space, chain[1], chain[1], t, loss).grouping == pytest.approx(0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_chain_terms_against_oracle(self, seed):
        rng, space, chain = random_setup(seed)
        a, b = chain[1], chain[2]
        t = random_predictor(rng, a, space.n_labels)
        qa = oracles.cond_law(space.atom_probs, space.chance, a.block_of_atom)
        qb = oracles.cond_law(space.atom_probs, space.chance, b.block_of_atom)
        for loss in LOSSES:
            r = chain_decompose(space, a, b, t, loss)
            assert r.reliability == pytest.approx(
                oracles.mean_div(loss.name, space.atom_probs, t.at_atoms(), qa), abs=1e-12)
            assert r.grouping == pytest.approx(
                oracles.mean_div(loss.name, space.atom_probs, qa, qb), abs=1e-12)

    def test_four_term_special_cases(self):
        rng, space, chain = random_setup(7, n=8)
        s, x = chain[1], chain[2]
        t = random_predictor(rng, s, space.n_labels)
        for loss in LOSSES:
            r = four_term_decompose(space, s, x, x, t, loss)
            assert r.chance_heterogeneity == pytest.approx(0.0, abs=1e-15)
        det = FiniteSpace(np.full(4, 0.25), np.eye(2)[[0, 1, 1, 0]])
        z = Partition.discrete(4)
        pred = BlockPredictor.binary(Partition.trivial(4), [0.3])
        for loss in LOSSES:
            r = four_term_decompose(det, Partition.trivial(4), Partition.from_labels([0, 0, 1, 1]),
                                    z, pred, loss)
            assert r.intrinsic == pytest.approx(0.0, abs=1e-12)
            assert abs(r.residual) < 1e-12

    def test_urc_climatology_predictor(self):
        _, space, _ = random_setup(8)
        trivial = Partition.trivial(space.n_atoms)
        clim = conditional_law(space, trivial)
        for loss in LOSSES:
            r = urc_decompose(space, trivial, clim, loss)
            assert r.resolution == pytest.approx(0.0, abs=1e-15)
            assert r.reliability == pytest.approx(0.0, abs=1e-15)

    def test_urc_two_block_calibrated(self):
        space = FiniteSpace(np.array([0.2, 0.3, 0.1, 0.4]),
                            np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8]]))
        s = Partition.from_labels([0, 0, 1, 1])
        c = conditional_law(space, s)
        r = urc_decompose(space, s, c, BRIER)
        # hand: block masses 0.5/0.5, C = 0.28 and 0.7857142857..., climatology 0.5333...
        c1 = (0.2 * 0.1 + 0.3 * 0.4) / 0.5
        c2 = (0.1 * 0.7 + 0.4 * 0.8) / 0.5
        clim = 0.5 * c1 + 0.5 * c2
        assert r.reliability == pytest.approx(0.0, abs=1e-15)
        assert r.resolution == pytest.approx(0.5 * (c1 - clim) ** 2 + 0.5 * (c2 - clim) ** 2, abs=1e-15)
        assert r.uncertainty == pytest.approx(clim * (1 - clim), abs=1e-15)

    def test_length_one_filtration_is_one_level(self):
        rng, space, chain = random_setup(9)
        t = random_predictor(rng, chain[1], space.n_labels)
        for loss in LOSSES:
            tel = telescope_decompose(space, [chain[1]], t, loss)
            one = one_level_decompose(space, chain[1], t, loss)
            assert tel.gains == ()
            assert tel.initial_regret == pytest.approx(one.regret, abs=1e-15)
            assert tel.final_entropy == pytest.approx(one.entropy_term, abs=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_pythagoras_per_stage(self, seed):
        rng, space, chain = random_setup(seed, n=8, k=2)
        tel = telescope_decompose(space, chain, conditional_law(space, chain[0]), BRIER)
        for t, gain in enumerate(tel.gains):
            assert tel.stage_risks[t + 1] == pytest.approx(tel.stage_risks[t] - gain, abs=1e-12)
        assert np.all(np.diff(tel.stage_risks) <= 1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_logloss_gains_are_information(self, seed):
        _, space, chain = random_setup(seed, n=8)
        tel = telescope_decompose(space, chain, conditional_law(space, chain[0]), LOGLOSS)
        for (a, b), gain in zip(zip(chain[:-1], chain[1:]), tel.gains):
            ha = oracles.shannon_cond_entropy(space.atom_probs, space.chance, a.block_of_atom)
            hb = oracles.shannon_cond_entropy(space.atom_probs, space.chance, b.block_of_atom)
            assert gain == pytest.approx(ha - hb, abs=1e-12)

    def test_conditional_entropy_matches_oracle(self):
        _, space, chain = random_setup(3)
        for part in chain:
            assert conditional_entropy(space, part) == pytest.approx(
                oracles.shannon_cond_entropy(space.atom_probs, space.chance, part.block_of_atom),
                abs=1e-13)

    def test_expected_loss_matches_oracle(self):
        rng, space, chain = random_setup(4)
        t = random_predictor(rng, chain[2], space.n_labels)
        for loss in LOSSES:
            assert expected_loss(space, t.at_atoms(), loss) == pytest.approx(
                oracles.expected(loss.name, space.atom_probs, space.chance, t.at_atoms()), abs=1e-13)


class TestGroupingZeroCharacterization:
    def test_zero_grouping_iff_laws_agree(self):
        # laws agree: the finer split separates atoms with identical chance rows
        space = FiniteSpace(np.array([0.25, 0.25, 0.5]),
                            np.array([[0.3, 0.7], [0.3, 0.7], [0.6, 0.4]]))
        a = Partition.from_labels([0, 0, 1])
        b = Partition.discrete(3)
        qa = conditional_law(space, a).at_atoms()
        qb = conditional_law(space, b).at_atoms()
        for loss in LOSSES:
            g = chain_decompose(space, a, b, conditional_law(space, a), loss).grouping
            assert g < 1e-12
        assert np.max(np.abs(qa - qb)) < 1e-9
        # laws differ: grouping is strictly positive
        space2 = FiniteSpace(np.array([0.25, 0.25, 0.5]),
                             np.array([[0.3, 0.7], [0.4, 0.6], [0.6, 0.4]]))
        for loss in LOSSES:
            g = chain_decompose(space2, a, b, conditional_law(space2, a), loss).grouping
            assert g > 1e-4


class TestMartingale:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_tower_and_martingale(self, seed):
        _, space, chain = random_setup(seed)
        assert tower_check(space, chain[1], chain[3]) < 1e-12
        assert martingale_gap(space, chain) < 1e-12

    def test_same_partition_gap_zero(self):
        _, space, chain = random_setup(2)
        assert tower_check(space, chain[2], chain[2]) == pytest.approx(0.0, abs=1e-16)


class TestCounterexample:
    def test_components_calibrated_and_average_not(self):
        ex = counterexample_average()
        for name, value in (("S1", 0.25), ("S2", 0.25)):
            law = conditional_law(ex.space, ex.partitions[name]).at_atoms()[:, 1]
            comp = ex.predictors[name].at_atoms()[:, 1]
            assert np.allclose(law, comp, atol=1e-15)
            assert law[comp == value][0] == pytest.approx(0.25, abs=1e-15)
        law_bar = conditional_law(ex.space, ex.partitions["Sbar"]).at_atoms()[:, 1]
        assert law_bar[ex.average == 0.25][0] == pytest.approx(0.0, abs=1e-12)

    def test_average_reliability(self):
        ex = counterexample_average()
        for name, expected in (("S1", 0.0), ("S2", 0.0), ("Sbar", 0.03125)):
            part = ex.partitions[name]
            r = chain_decompose(ex.space, part, ex.partitions["pair"], ex.predictors[name], BRIER)
            assert r.reliability == pytest.approx(expected, abs=1e-12)


class TestJSON:
    def test_roundtrip(self, tmp_path):
        _, space, chain = random_setup(11)
        path = tmp_path / "space.json"
        save_space(path, space, {"S": chain[1], "X": chain[2]})
        loaded, parts = load_space(path)
        assert np.array_equal(loaded.atom_probs, space.atom_probs)
        assert np.array_equal(loaded.chance, space.chance)
        assert parts["S"].to_list() == chain[1].to_list()

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            space_from_dict({"atom_probs": [1.0], "chance": [[0.5, 0.5]], "extra": 1})

    def test_json_is_plain(self, tmp_path):
        path = tmp_path / "s.json"
        save_space(path, FiniteSpace(np.array([1.0]), np.array([[0.5, 0.5]])))
        assert json.loads(path.read_text())["atom_probs"] == [1.0]


def test_identity_suite_small():
    worst = identity_suite(n_spaces=20, seed=3)
    assert max(worst.values()) < 1e-12
    assert set(worst) >= {"one_level", "chain", "four_term", "urc", "telescope",
                          "logloss_information", "tower"}
