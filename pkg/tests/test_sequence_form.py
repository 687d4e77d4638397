import numpy as np
import pytest

from qrepath import game_model as gm
from qrepath import normal_form_oracle as nfo
from qrepath import sequence_form as sf
from conftest import TYPE_C_PAYOFF, chance, leaf, make_game, node


def coef_lookup(seq, labels):
    """Coefficient vector at a tuple of per-player sequence labels."""
    idx = tuple(seq.seq_labels[i].index(lbl) for i, lbl in enumerate(labels))
    for m in range(seq.coef_idx.shape[0]):
        if tuple(seq.coef_idx[m]) == idx:
            return seq.coef_val[m]
    return None


def test_selten_sequence_counts(selten_seq):
    assert selten_seq.n_seqs == [5, 3, 3]
    # sequence count identity: one per (infoset, action) plus the empty one
    for i in range(3):
        expected = sum(len(info.actions) for info in selten_seq.infosets[i]) + 1
        assert selten_seq.n_seqs[i] == expected
    assert selten_seq.n_actions == 8
    assert selten_seq.n_infosets == 4


def test_selten_coefficients(selten_seq):
    assert np.allclose(coef_lookup(selten_seq, ("L/r", "R2", "R3")), (4, 4, 0))
    assert np.allclose(coef_lookup(selten_seq, ("R", "∅", "L3")), (0, 0, 0))
    assert np.allclose(coef_lookup(selten_seq, ("R", "∅", "R3")), (3, 0, 3))
    assert np.allclose(coef_lookup(selten_seq, ("L", "L2", "∅")), (1, 3, 0))
    assert coef_lookup(selten_seq, ("L", "R2", "∅")) is None
    assert selten_seq.coef_idx.shape[0] == 6  # one entry per terminal


def test_chance_folding_merges_terminals(chance_game):
    seq = sf.compile(chance_game)
    # both terminals reached through the same sequence tuple: coefficients sum
    assert seq.coef_idx.shape[0] == 2
    assert np.allclose(coef_lookup(seq, ("a",)), (2.0,))
    assert np.allclose(coef_lookup(seq, ("b",)), (0.0,))


def test_compile_refuses_imperfect_recall():
    g = make_game(["P1"], node("P1", "1", [
        ("a", node("P1", "2", [("x", leaf(1)), ("y", leaf(0))])),
        ("b", node("P1", "2", [("x", leaf(0)), ("y", leaf(1))])),
    ]))
    with pytest.raises(gm.PerfectRecallError):
        sf.compile(g)


def test_realization_of_uniform(selten_seq):
    sigma = sf.MixedProfile((np.full(3, 1 / 3), np.full(2, 0.5), np.full(2, 0.5)))
    gamma = sf.realization_of(selten_seq, sigma)
    assert np.allclose(gamma[0], [1, 2 / 3, 1 / 3, 1 / 3, 1 / 3])


def test_realization_of_type_c(selten_seq, type_c_profile):
    gamma = sf.realization_of(selten_seq, type_c_profile)
    assert np.allclose(gamma[0], [1, 24 / 49, 25 / 49, 0, 24 / 49])


def test_realization_of_pure_is_indicator(selten_seq):
    for si in range(3):
        sigma = sf.MixedProfile((np.eye(3)[si], np.eye(2)[0], np.eye(2)[1]))
        gamma = sf.realization_of(selten_seq, sigma)
        for i in range(3):
            assert set(np.unique(gamma[i])) <= {0.0, 1.0}


def test_realization_dimension_mismatch(selten_seq):
    sigma = sf.MixedProfile((np.full(4, 0.25), np.full(2, 0.5), np.full(2, 0.5)))
    with pytest.raises(ValueError):
        sf.realization_of(selten_seq, sigma)


def test_mixed_of_type_c_boundary(selten_seq):
    gamma = sf.RealizationProfile((
        np.array([1, 24 / 49, 25 / 49, 0, 24 / 49]),
        np.array([1, 3 / 8, 5 / 8]),
        np.array([1, 1 / 4, 3 / 4])))
    sigma = sf.mixed_of(selten_seq, gamma)
    assert np.allclose(sigma[0], [0, 24 / 49, 25 / 49])


def test_mixed_of_uniform_single_infoset(one_player_game):
    seq = sf.compile(one_player_game)
    gamma = sf.uniform_behavioral(seq)
    sigma = sf.mixed_of(seq, gamma)
    assert np.allclose(sigma[0], [0.5, 0.5])


def test_mixed_of_rejects_flow_violation(selten_seq):
    gamma = sf.uniform_behavioral(selten_seq)
    gamma[0][1] += 1e-3
    with pytest.raises(ValueError):
        sf.mixed_of(selten_seq, gamma)


def test_t_correspondence_roundtrip(selten_seq):
    rng = np.random.default_rng(11)
    for _ in range(100):
        gamma = sf.random_interior(selten_seq, rng)
        back = sf.realization_of(selten_seq, sf.mixed_of(selten_seq, gamma))
        for i in range(3):
            assert np.abs(back[i] - gamma[i]).max() <= 1e-12


def test_expected_payoff_type_c(selten_seq, type_c_profile):
    gamma = sf.realization_of(selten_seq, type_c_profile)
    assert np.abs(sf.expected_payoff(selten_seq, gamma) - TYPE_C_PAYOFF).max() < 1e-14


def test_expected_payoff_type_a(selten_seq):
    gamma = sf.RealizationProfile((
        np.array([1.0, 0, 1, 0, 0]),
        np.array([1.0, 0.5, 0.5]),
        np.array([1.0, 0, 1])))
    assert np.allclose(sf.expected_payoff(selten_seq, gamma), (3, 0, 3))


def test_expected_payoff_matches_tree_walk(selten_game, selten_seq):
    # all-uniform behavior, independently evaluated by recursive descent
    gamma = sf.uniform_behavioral(selten_seq)
    beh = sf.behavior_of(selten_seq, gamma)

    def walk(node, hist):
        n = selten_game.nodes[hist]
        if isinstance(n, gm.Terminal):
            return np.asarray(n.payoffs, dtype=float)
        total = np.zeros(3)
        i = selten_game.players.index(n.player)
        cell = selten_game.infosets[n.player][n.infoset]
        probs = beh[i][cell.id.index]
        for pos, a in enumerate(n.actions):
            total += probs[pos] * walk(None, hist + (a,))
        return total

    assert np.allclose(sf.expected_payoff(selten_seq, gamma), walk(None, ()))


def test_payoff_identity_vs_normal_form(selten_seq, selten_nf):
    rng = np.random.default_rng(5)
    for _ in range(200):
        sigma = sf.MixedProfile(tuple(rng.dirichlet(np.ones(k))
                                      for k in selten_nf.shape))
        gamma = sf.realization_of(selten_seq, sigma)
        u = nfo.expected_payoffs(selten_nf, sigma)
        g = sf.expected_payoff(selten_seq, gamma)
        assert np.abs(u - g).max() <= 1e-10


def test_seq_marginal_payoff_values(selten_seq):
    gamma = sf.RealizationProfile((
        np.array([1.0, 0.5, 0.5, 0.25, 0.25]),
        np.array([1.0, 1.0, 0.0]),
        np.array([1.0, 0.5, 0.5])))
    marg = sf.seq_marginal_payoff(selten_seq, 0, gamma)
    assert marg[selten_seq.seq_labels[0].index("L")] == pytest.approx(1.0)

    gamma3 = sf.RealizationProfile((
        np.array([1.0, 0.5, 0.5, 0.25, 0.25]),
        np.array([1.0, 0.5, 0.5]),
        np.array([1.0, 1 / 4, 3 / 4])))
    marg = sf.seq_marginal_payoff(selten_seq, 0, gamma3)
    assert marg[selten_seq.seq_labels[0].index("R")] == pytest.approx(9 / 4)


def test_seq_marginal_zero_mass_partners(selten_seq):
    gamma = sf.RealizationProfile((
        np.array([1.0, 0.5, 0.5, 0.25, 0.25]),
        np.array([1.0, 0.0, 0.0]),
        np.array([1.0, 0.0, 0.0])))
    marg = sf.seq_marginal_payoff(selten_seq, 0, gamma)
    assert np.allclose(marg[1:], 0.0)  # no opponent mass on any partner


def test_seq_marginal_multilinear(selten_seq):
    rng = np.random.default_rng(3)
    gamma = sf.random_interior(selten_seq, rng)
    marg = sf.seq_marginal_payoff(selten_seq, 0, gamma)
    scaled = gamma.copy()
    scaled.per_player[1][:] *= 2.5
    assert np.allclose(sf.seq_marginal_payoff(selten_seq, 0, scaled), 2.5 * marg)


def test_marginal_consistent_with_expected(selten_seq):
    rng = np.random.default_rng(4)
    gamma = sf.random_interior(selten_seq, rng)
    g = sf.expected_payoff(selten_seq, gamma)
    for i in range(3):
        marg = sf.seq_marginal_payoff(selten_seq, i, gamma)
        assert gamma[i] @ marg == pytest.approx(g[i])


def test_best_response_at_equilibria(selten_seq, type_c_profile):
    gamma = sf.realization_of(selten_seq, type_c_profile)
    g = sf.expected_payoff(selten_seq, gamma)
    for i in range(3):
        assert sf.best_response_value(selten_seq, i, gamma) == pytest.approx(g[i])


def test_best_response_type_b_boundary(selten_seq):
    # second player commits left, third mixes at the component boundary
    gamma = sf.RealizationProfile((
        np.array([1.0, 1.0, 0.0, 0.5, 0.5]),
        np.array([1.0, 1.0, 0.0]),
        np.array([1.0, 2 / 3, 1 / 3])))
    assert sf.best_response_value(selten_seq, 0, gamma) == pytest.approx(1.0)


def test_best_response_matches_enumeration(selten_seq, selten_nf):
    rng = np.random.default_rng(9)
    for _ in range(25):
        sigma = sf.MixedProfile(tuple(rng.dirichlet(np.ones(k))
                                      for k in selten_nf.shape))
        gamma = sf.realization_of(selten_seq, sigma)
        for i in range(3):
            brute = nfo.payoff_vector(selten_nf, i, sigma).max()
            assert sf.best_response_value(selten_seq, i, gamma) == pytest.approx(brute)
        assert sf.nash_gap_sequence(selten_seq, gamma) == pytest.approx(
            nfo.nash_gap(selten_nf, sigma), abs=1e-12)


def test_best_response_dominates_payoff(selten_seq):
    rng = np.random.default_rng(17)
    for _ in range(50):
        gamma = sf.random_interior(selten_seq, rng)
        g = sf.expected_payoff(selten_seq, gamma)
        for i in range(3):
            assert sf.best_response_value(selten_seq, i, gamma) >= g[i] - 1e-12


def test_flow_residuals_of_module_outputs(selten_seq):
    rng = np.random.default_rng(23)
    for _ in range(50):
        gamma = sf.random_interior(selten_seq, rng)
        assert gamma.flow_residual(selten_seq) <= 1e-12
        sigma = sf.MixedProfile(tuple(rng.dirichlet(np.ones(len(s)))
                                      for s in selten_seq.strategies))
        assert sf.realization_of(selten_seq, sigma).flow_residual(selten_seq) <= 1e-12


def test_strategy_enumeration_matches_oracle(selten_seq, selten_nf):
    assert selten_seq.strategy_labels == selten_nf.strategy_labels


def test_strategyless_player_cap():
    g = make_game(["P1", "P2"], node("P1", "1", [
        ("a", leaf(1, 0)), ("b", leaf(0, 1))]))
    seq = sf.compile(g)
    assert len(seq.strategies[1]) == 1  # the empty plan
    assert seq.n_seqs[1] == 1
    gamma = sf.uniform_behavioral(seq)
    assert np.allclose(sf.expected_payoff(seq, gamma), (0.5, 0.5))
