import numpy as np
import pytest

from qrepath import normal_form_oracle as nfo
from qrepath import qre_system as qs
from qrepath import sequence_form as sf
from conftest import leaf, make_game, node


@pytest.fixture
def anchored(selten_seq):
    rng = np.random.default_rng(42)
    return qs.QreInstance(selten_seq, sf.random_interior(selten_seq, rng), 1.0)


def test_residual_zero_at_anchor_t1(anchored):
    seq = anchored.seq
    res = qs.residual_gamma_sys(anchored, anchored.anchor,
                                qs.MultiplierSet.zeros(seq))
    assert np.abs(res).max() <= 1e-12


def test_residual_uniform_behavior_anchor_free_t1(selten_seq):
    inst = qs.QreInstance(selten_seq, None, 1.0)
    gamma = sf.uniform_behavioral(selten_seq)
    res = qs.residual_gamma_sys(inst, gamma, qs.MultiplierSet.zeros(selten_seq))
    # stationarity rows reduce to ln of the action count (2 everywhere here)
    assert np.allclose(res[:selten_seq.n_actions], np.log(2.0))
    assert np.allclose(res[selten_seq.n_actions:], 0.0)


def test_flow_violation_appears_verbatim(selten_seq):
    inst = qs.QreInstance(selten_seq, None, 0.5)
    gamma = sf.uniform_behavioral(selten_seq)
    delta = 1e-3
    j = selten_seq.infosets[0][0]
    gamma.per_player[0][j.ext[0]] += delta
    res = qs.residual_gamma_sys(inst, gamma, qs.MultiplierSet.zeros(selten_seq))
    flow = res[selten_seq.n_actions:]
    assert flow[selten_seq.nu_index(0, 0)] == pytest.approx(delta)


def test_residual_rejects_boundary(selten_seq):
    inst = qs.QreInstance(selten_seq, None, 0.5)
    gamma = sf.uniform_behavioral(selten_seq)
    gamma.per_player[0][3] = 0.0
    with pytest.raises(ValueError):
        qs.residual_gamma_sys(inst, gamma, qs.MultiplierSet.zeros(selten_seq))


def test_recursive_ge_trivial_leaf():
    g = make_game(["P1"], node("P1", "1", [("a", leaf(0)), ("b", leaf(0))]))
    seq = sf.compile(g)
    inst = qs.QreInstance(seq, None, 0.5)
    ge = qs.recursive_ge(inst, 0, sf.uniform_behavioral(seq))
    assert ge.infoset_values[0] == pytest.approx(2.0)
    nu = qs.recover_multipliers(inst, sf.uniform_behavioral(seq))
    assert nu[0][0] == pytest.approx(0.5 * np.log(2.0))


def test_recursive_ge_zero_game_counts_strategies(selten_seq):
    # zero payoffs make the root aggregate count reduced pure strategies
    zero = make_game(
        ["P1", "P2", "P3"],
        node("P1", "1", [
            ("L", node("P2", "1", [
                ("L2", leaf(0, 0, 0)),
                ("R2", node("P1", "2", [
                    ("l", leaf(0, 0, 0)),
                    ("r", node("P3", "1", [("L3", leaf(0, 0, 0)),
                                           ("R3", leaf(0, 0, 0))])),
                ])),
            ])),
            ("R", node("P3", "1", [("L3", leaf(0, 0, 0)),
                                   ("R3", leaf(0, 0, 0))])),
        ]))
    seq = sf.compile(zero)
    inst = qs.QreInstance(seq, None, 0.37)
    gamma = sf.uniform_behavioral(seq)
    for i, expected in enumerate([3, 2, 2]):
        ge = qs.recursive_ge(inst, i, gamma)
        assert np.exp(ge.log_seq[0] / inst.t) == pytest.approx(expected)


def test_recursive_ge_matches_oracle_sum(selten_seq, selten_nf):
    rng = np.random.default_rng(7)
    for t in (0.9, 0.5, 0.2):
        inst = qs.QreInstance(selten_seq, None, t)
        gamma = sf.random_interior(selten_seq, rng)
        sigma = sf.mixed_of(selten_seq, gamma)
        for i in range(3):
            ge = qs.recursive_ge(inst, i, gamma)
            u = nfo.payoff_vector(selten_nf, i, sigma)
            direct = inst.t * np.log(np.exp(inst.lam_r * u).sum())
            assert ge.log_infoset.shape == (len(selten_seq.infosets[i]),)
            assert ge.log_seq[0] == pytest.approx(direct, rel=1e-8)


def test_leaf_infosets_recover_directly(selten_seq):
    # infosets whose actions lead nowhere deeper: aggregate is a plain sum
    rng = np.random.default_rng(8)
    inst = qs.QreInstance(selten_seq, None, 0.4)
    gamma = sf.random_interior(selten_seq, rng)
    nu = qs.recover_multipliers(inst, gamma)
    for i in range(3):
        marg = sf.seq_marginal_payoff(selten_seq, i, gamma)
        for info in selten_seq.infosets[i]:
            if any(selten_seq.downstream[i][l] for l in info.ext):
                continue
            direct = inst.t * np.log(
                sum(np.exp(inst.lam_r * marg[l]) for l in info.ext))
            assert nu[i][info.index] == pytest.approx(direct)


def test_sigma_e_uniform_at_t1(selten_seq):
    inst = qs.QreInstance(selten_seq, None, 1.0)
    gamma = sf.uniform_behavioral(selten_seq)
    sigma = qs.sigma_e(inst, gamma)
    for vec in sigma.per_player:
        assert np.allclose(vec, 1.0 / vec.size)


def test_sigma_e_anchored_t1_returns_anchor_weights(anchored):
    sigma = qs.sigma_e(anchored, anchored.anchor)
    expect = sf.mixed_of(anchored.seq, anchored.anchor)
    for i in range(anchored.seq.n):
        assert np.abs(sigma[i] - expect[i]).max() <= 1e-12


@pytest.mark.parametrize("t", [0.9, 0.5, 0.2])
def test_fixed_point_consistency_anchor_free(selten_seq, selten_nf, t):
    inst = qs.QreInstance(selten_seq, None, t)
    gamma, nu = qs.solve_qre_ladder(inst)
    assert np.abs(qs.residual_gamma_sys(inst, gamma, nu)).max() <= 1e-10
    sigma = qs.sigma_e(inst, gamma)
    reply = nfo.logit_response(selten_nf, sigma, inst.lam_r)
    assert max(np.abs(sigma[i] - reply[i]).max() for i in range(3)) <= 1e-8
    back = sf.realization_of(selten_seq, sigma)
    assert max(np.abs(back[i] - gamma[i]).max() for i in range(3)) <= 1e-8


def test_fixed_t_matches_oracle(selten_seq, selten_nf):
    inst = qs.QreInstance(selten_seq, None, 0.9)
    gamma, _ = qs.solve_fixed_t(inst)
    sigma = nfo.solve_logit_qre(selten_nf, 1.0 / 9.0)
    expect = sf.realization_of(selten_seq, sigma)
    assert max(np.abs(gamma[i] - expect[i]).max() for i in range(3)) <= 1e-8


def test_oracle_qre_solves_system(selten_seq, selten_nf):
    for lam in (1 / 9, 1.0, 4.0):
        sigma = nfo.solve_logit_qre(selten_nf, lam)
        gamma = sf.realization_of(selten_seq, sigma)
        inst = qs.QreInstance(selten_seq, None, 1.0 / (1.0 + lam))
        nu = qs.recover_multipliers(inst, gamma)
        assert np.abs(qs.residual_gamma_sys(inst, gamma, nu)).max() <= 1e-6


def test_interior_ratio_closed_form(selten_seq):
    # at interior solutions, child/parent mass equals the aggregate ratio
    inst = qs.QreInstance(selten_seq, None, 0.5)
    gamma, _ = qs.solve_qre_ladder(inst)
    for i in range(3):
        ge = qs.recursive_ge(inst, i, gamma)
        for info in selten_seq.infosets[i]:
            parent = info.parent_seq
            pmass = gamma[i][parent]
            for l in info.ext:
                ratio = np.exp((ge.log_seq[l] - ge.log_infoset[info.index])
                               / inst.t)
                assert gamma[i][l] / pmass == pytest.approx(ratio, rel=1e-8)


def test_solve_fixed_t_t1_anchored_immediate(anchored):
    gamma, nu = qs.solve_fixed_t(anchored)
    for i in range(anchored.seq.n):
        assert np.array_equal(gamma[i], anchored.anchor[i])
    assert np.abs(nu.as_vector()).max() <= 1e-12


def test_solve_fixed_t_anchored_roundtrip(selten_seq):
    rng = np.random.default_rng(100)
    anchor = sf.random_interior(selten_seq, rng)
    inst = qs.QreInstance(selten_seq, anchor, 0.5)
    gamma, nu = qs.solve_qre_ladder(inst)
    assert np.abs(qs.residual_gamma_sys(inst, gamma, nu)).max() <= 1e-10
    sigma = qs.sigma_e(inst, gamma)
    back = sf.realization_of(selten_seq, sigma)
    assert max(np.abs(back[i] - gamma[i]).max() for i in range(3)) <= 1e-8


def test_anchored_t1_multiplier_recovery(anchored):
    nu = qs.recover_multipliers(anchored, anchored.anchor)
    assert np.abs(nu.as_vector()).max() <= 1e-12
    res = qs.residual_gamma_sys(anchored, anchored.anchor, nu)
    assert np.abs(res).max() <= 1e-12


def test_uniform_mixed_anchor_is_multiplier_shift(selten_seq):
    # anchoring at the realization of the uniform mixed profile equals the
    # anchor-free system after shifting each multiplier by t*ln of the
    # number of continuation strategies below its infoset
    uniform_sigma = sf.MixedProfile(tuple(
        np.full(len(s), 1.0 / len(s)) for s in selten_seq.strategies))
    anchor = sf.realization_of(selten_seq, uniform_sigma)
    rng = np.random.default_rng(12)
    t = 0.45
    anchored = qs.QreInstance(selten_seq, anchor, t)
    free = qs.QreInstance(selten_seq, None, t)
    counts = qs.QreInstance(selten_seq, None, 1.0)  # aggregates count plans at t=1
    gamma = sf.random_interior(selten_seq, rng)
    nu = qs.MultiplierSet(tuple(rng.normal(size=len(selten_seq.infosets[i]))
                                for i in range(3)))
    shift = qs.MultiplierSet(tuple(
        nu[i] + t * qs.recursive_ge(counts, i, gamma).log_infoset
        for i in range(3)))
    res_anchored = qs.residual_gamma_sys(anchored, gamma, nu)
    res_free = qs.residual_gamma_sys(free, gamma, shift)
    assert np.abs(res_anchored - res_free).max() <= 1e-10


def test_zeta_topology(selten_seq):
    nu = qs.MultiplierSet((np.array([2.0, 5.0]), np.array([7.0]),
                           np.array([11.0])))
    # first player's opening move leads to the second infoset of the same
    # player; the closing moves lead nowhere
    l_seq = selten_seq.seq_labels[0].index("L")
    assert nu.zeta(selten_seq, 0, l_seq) == 5.0
    r_seq = selten_seq.seq_labels[0].index("R")
    assert nu.zeta(selten_seq, 0, r_seq) == 0.0


def test_instance_validation(selten_seq):
    with pytest.raises(ValueError):
        qs.QreInstance(selten_seq, None, 0.0)
    with pytest.raises(ValueError):
        qs.QreInstance(selten_seq, None, 1.5)
    bad = sf.uniform_behavioral(selten_seq)
    bad.per_player[0][1] = 0.0
    with pytest.raises(ValueError):
        qs.QreInstance(selten_seq, bad, 0.5)
