"""Smoothed equilibrium systems on realization plans.

At smoothing level t in (0,1] each player maximizes a payoff term weighted
by (1-t) minus t times a conditional-entropy penalty (optionally measured
relative to an anchor plan).  Stationarity plus flow conservation gives a
square system in the plan masses and one multiplier per information set;
its solutions correspond to logit quantal-response equilibria at
rationality (1-t)/t.  This module evaluates that system, the recursive
exponentiated-payoff aggregates used to recover multipliers, the induced
logit mixed profile, and a damped Newton solver at fixed t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qrepath.normal_form_oracle import (
    ConvergenceError,
    NormalForm,
    build_normal_form,
    payoff_vector,
)
from qrepath.sequence_form import (
    MixedProfile,
    RealizationProfile,
    SequenceSpace,
    all_marginals,
    marginal_cross_jacobian,
    mixed_of,
    seq_marginal_payoff,
    uniform_behavioral,
)


@dataclass
class MultiplierSet:
    """One multiplier per information set, in discovery order per player."""

    per_player: tuple[np.ndarray, ...]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.per_player[i]

    def as_vector(self) -> np.ndarray:
        return np.concatenate(self.per_player)

    @staticmethod
    def zeros(seq: SequenceSpace) -> "MultiplierSet":
        return MultiplierSet(tuple(np.zeros(len(seq.infosets[i]))
                                   for i in range(seq.n)))

    @staticmethod
    def from_vector(seq: SequenceSpace, vec: np.ndarray) -> "MultiplierSet":
        parts = []
        for i in range(seq.n):
            lo = seq.m_offset[i]
            parts.append(np.asarray(vec[lo:lo + len(seq.infosets[i])], dtype=float))
        return MultiplierSet(tuple(parts))

    def zeta(self, seq: SequenceSpace, i: int, local: int) -> float:
        """Sum of multipliers over the infosets the sequence leads to."""
        return float(sum(self.per_player[i][jq]
                         for jq in seq.downstream[i][local]))


@dataclass
class QreInstance:
    """A smoothed system: sequence space, optional anchor plan, level t."""

    seq: SequenceSpace
    anchor: RealizationProfile | None
    t: float
    _nf: NormalForm | None = field(default=None, repr=False, compare=False)
    _sigma0: MixedProfile | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.t <= 1.0):
            raise ValueError(f"t must lie in (0, 1], got {self.t}")
        seq = self.seq
        if self.anchor is not None:
            if not self.anchor.is_interior():
                raise ValueError("anchor plan must be strictly positive")
            # absolute log masses of non-root sequences, and child-minus-parent
            # differences (the form the stationarity rows consume)
            self.log_anchor = np.concatenate(
                [np.log(self.anchor[i][1:]) for i in range(seq.n)])
            self.log_anchor_diff = seq.diff_pattern @ self.log_anchor
        else:
            self.log_anchor = np.zeros(seq.n_actions)
            self.log_anchor_diff = np.zeros(seq.n_actions)

    @property
    def anchored(self) -> bool:
        return self.anchor is not None

    @property
    def lam_r(self) -> float:
        return (1.0 - self.t) / self.t

    @property
    def normal_form(self) -> NormalForm:
        if self._nf is None:
            self._nf = build_normal_form(self.seq.game)
        return self._nf

    @property
    def sigma0(self) -> MixedProfile | None:
        if self.anchor is None:
            return None
        if self._sigma0 is None:
            self._sigma0 = mixed_of(self.seq, self.anchor)
        return self._sigma0

    def at(self, t: float) -> "QreInstance":
        """Same game and anchor at a different smoothing level."""
        inst = QreInstance(self.seq, self.anchor, t)
        inst._nf = self._nf
        inst._sigma0 = self._sigma0
        return inst


def residual_gamma_sys(inst: QreInstance, gamma: RealizationProfile,
                       nu: MultiplierSet) -> np.ndarray:
    """Stationarity and flow residuals at an interior plan.

    Row order: every (player, infoset, action) stationarity row in canonical
    sequence order, then one flow row per (player, infoset).
    """
    seq = inst.seq
    t = inst.t
    gam_nr = gamma.nonroot_vector(seq)
    if np.any(gam_nr <= 0):
        raise ValueError("plan must be strictly positive")
    log_nr = np.log(gam_nr)
    marg = all_marginals(seq, gamma)
    stat = ((1.0 - t) * marg
            - t * (seq.diff_pattern @ log_nr - inst.log_anchor_diff)
            + seq.nu_pattern @ nu.as_vector())
    flow = seq.flow_pattern @ gam_nr
    flow[seq.flow_root_row] -= 1.0
    return np.concatenate([stat, flow])


@dataclass
class GeValues:
    """Exponentiated-payoff aggregates of one player, kept as t*log values.

    ``log_seq[l]`` is t*ln of the aggregate of sequence l, ``log_infoset[j]``
    the same for infoset j; ``seq_values``/``infoset_values`` exponentiate
    (overflow-prone at small t, the log forms are the stable interface).
    """

    t: float
    log_seq: np.ndarray
    log_infoset: np.ndarray

    @property
    def seq_values(self) -> np.ndarray:
        return np.exp(self.log_seq / self.t)

    @property
    def infoset_values(self) -> np.ndarray:
        return np.exp(self.log_infoset / self.t)


def recursive_ge(inst: QreInstance, i: int, gamma: RealizationProfile) -> GeValues:
    """Leaf-first recursion of exponentiated continuation payoffs.

    A sequence aggregates exp(lam_r * marginal payoff) times the product of
    its successor infosets' aggregates; an infoset sums its extensions.
    Anchored instances weight each extension by the anchor's behavioral
    ratio.  Computed in t*log space with log-sum-exp so small t stays usable.
    """
    seq = inst.seq
    t = inst.t
    marg = seq_marginal_payoff(seq, i, gamma)
    base = (1.0 - t) * marg
    if inst.anchored:
        lo = seq.x_offset[i]
        base[1:] += t * inst.log_anchor_diff[lo:lo + seq.n_seqs[i] - 1]

    log_seq = np.zeros(seq.n_seqs[i])
    log_inf = np.zeros(len(seq.infosets[i]))
    down = seq.downstream[i]
    for info in reversed(seq.infosets[i]):
        ext_vals = []
        for l in info.ext:
            log_seq[l] = base[l] + sum(log_inf[jq] for jq in down[l])
            ext_vals.append(log_seq[l])
        v = np.asarray(ext_vals) / t
        m = v.max()
        log_inf[info.index] = t * (m + np.log(np.exp(v - m).sum()))
    log_seq[0] = base[0] + sum(log_inf[jq] for jq in down[0])
    return GeValues(t, log_seq, log_inf)


def recover_multipliers(inst: QreInstance, gamma: RealizationProfile) -> MultiplierSet:
    """Multipliers consistent with the stationarity rows at a given plan:
    t*ln of each infoset's exponentiated-payoff aggregate."""
    return MultiplierSet(tuple(recursive_ge(inst, i, gamma).log_infoset
                               for i in range(inst.seq.n)))


def sigma_e(inst: QreInstance, gamma: RealizationProfile) -> MixedProfile:
    """Logit mixed profile induced by a realization plan.

    Strategies are weighted by exp(lam_r * payoff against the mixed profile
    realizing gamma), anchored instances additionally by the anchor's mixed
    weights.  Evaluated through the reduced normal form, so desk scale only.
    """
    seq = inst.seq
    nf = inst.normal_form
    sigma_minus = mixed_of(seq, gamma)
    sigma0 = inst.sigma0
    parts = []
    for i in range(seq.n):
        logits = inst.lam_r * payoff_vector(nf, i, sigma_minus)
        if sigma0 is not None:
            logits = logits + np.log(sigma0[i])
        logits -= logits.max()
        w = np.exp(logits)
        parts.append(w / w.sum())
    return MixedProfile(tuple(parts))


def _fixed_t_jacobian(inst: QreInstance, gamma: RealizationProfile) -> np.ndarray:
    seq = inst.seq
    t = inst.t
    n0, m0 = seq.n_actions, seq.n_infosets
    gam_nr = gamma.nonroot_vector(seq)
    J = np.zeros((n0 + m0, n0 + m0))
    J[:n0, :n0] = (-t * seq.diff_pattern / gam_nr[None, :]
                   + (1.0 - t) * marginal_cross_jacobian(seq, gamma,
                                                         np.ones(n0)))
    J[:n0, n0:] = seq.nu_pattern
    J[n0:, :n0] = seq.flow_pattern
    return J


def solve_fixed_t(inst: QreInstance, gamma0: RealizationProfile | None = None,
                  nu0: MultiplierSet | None = None, tol: float = 1e-10,
                  max_iter: int = 100) -> tuple[RealizationProfile, MultiplierSet]:
    """Damped Newton solve of the smoothed system at fixed t.

    The default start is the anchor plan (or uniform behavior) with its
    recovered multipliers.  Steps are cut back to keep the plan strictly
    positive, then halved until the residual norm decreases.
    """
    seq = inst.seq
    gamma = gamma0.copy() if gamma0 is not None else (
        inst.anchor.copy() if inst.anchored else uniform_behavioral(seq))
    nu = nu0 if nu0 is not None else recover_multipliers(inst, gamma)

    gam_nr = gamma.nonroot_vector(seq)
    nu_vec = nu.as_vector()
    best = (np.inf, gam_nr, nu_vec)
    n0 = seq.n_actions
    for _ in range(max_iter):
        gamma = RealizationProfile.from_nonroot(seq, gam_nr)
        F = residual_gamma_sys(inst, gamma, MultiplierSet.from_vector(seq, nu_vec))
        fnorm = np.abs(F).max()
        if fnorm < best[0]:
            best = (fnorm, gam_nr.copy(), nu_vec.copy())
        if fnorm <= tol:
            return gamma, MultiplierSet.from_vector(seq, nu_vec)
        J = _fixed_t_jacobian(inst, gamma)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        dg, dn = step[:n0], step[n0:]
        # fraction to boundary: keep the plan strictly positive
        scale = 1.0
        neg = dg < 0
        if np.any(neg):
            scale = min(1.0, 0.995 * np.min(-gam_nr[neg] / dg[neg]))
        accepted = False
        for _ in range(40):
            cand_g = gam_nr + scale * dg
            cand_n = nu_vec + scale * dn
            if np.all(cand_g > 0):
                cand = residual_gamma_sys(
                    inst, RealizationProfile.from_nonroot(seq, cand_g),
                    MultiplierSet.from_vector(seq, cand_n))
                if np.abs(cand).max() <= (1.0 - 1e-4 * scale) * fnorm:
                    gam_nr, nu_vec = cand_g, cand_n
                    accepted = True
                    break
            scale *= 0.5
        if not accepted:
            break
    raise ConvergenceError("fixed-t solve did not converge", float(best[0]),
                           (RealizationProfile.from_nonroot(seq, best[1]),
                            MultiplierSet.from_vector(seq, best[2])))


def solve_qre_ladder(inst: QreInstance, tol: float = 1e-10,
                     step: float = 0.6) -> tuple[RealizationProfile, MultiplierSet]:
    """Warm-started chain of fixed-t solves from near t=1 down to inst.t."""
    target = inst.t
    ts = []
    t = 0.9
    while t > target * 1.0001:
        ts.append(t)
        t *= step
    ts.append(target)
    gamma, nu = None, None
    for tk in ts:
        gamma, nu = solve_fixed_t(inst.at(tk), gamma, nu, tol=tol)
    return gamma, nu
