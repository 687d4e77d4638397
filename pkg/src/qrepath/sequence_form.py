"""Sequence-form compilation and evaluation.

Replaces pure strategies by action sequences: player i's sequences are the
action lists i can produce on some path, indexed 0..K_i-1 with index 0 the
empty sequence.  A realization plan puts probability mass on sequences
subject to per-infoset flow conservation.  Terminal payoffs are folded into
a sparse coefficient table keyed by one sequence index per player, with
chance-path probabilities multiplied in, so downstream systems never see
the chance player.

The compiler also precomputes the constant index patterns used by the
equilibrium systems (stationarity/flow row structure, multiplier scatter),
and the reduced pure strategies with their sequence indicator matrices for
conversions between mixed strategies and realization plans.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qrepath.game_model import (
    CHANCE,
    Decision,
    GameTree,
    PerfectRecallError,
    Terminal,
    check_perfect_recall,
)

EMPTY_LABEL = "∅"

#: flow-conservation tolerance accepted on realization-plan inputs
FLOW_TOL = 1e-9


class InfosetSeq:
    """Sequence-form view of one information set."""

    __slots__ = ("player", "index", "label", "actions", "parent_seq", "ext")

    def __init__(self, player, index, label, actions, parent_seq, ext):
        self.player = player            # player position in the game's list
        self.index = index              # discovery index within the player
        self.label = label              # declared textual id
        self.actions = actions          # tuple of action labels
        self.parent_seq = parent_seq    # local index of the sequence leading here
        self.ext = ext                  # local sequence index per action


class SequenceSpace:
    """Compiled sequence form of a game tree.

    Per-player attributes (lists indexed by player position):
      n_seqs[i]        number of sequences K_i (index 0 = empty sequence)
      seq_labels[i]    display label per sequence
      seq_parent[i]    local parent index per sequence (root: -1)
      seq_chain[i]     per sequence, tuple of (infoset_index, action_pos) pairs
                       from the root down to the sequence
      infosets[i]      list of InfosetSeq in discovery order
      downstream[i]    per sequence, tuple of infoset indices whose leading
                       sequence it is
      strategies[i]    reduced pure strategies as dicts infoset_index -> action_pos
      strategy_labels[i]
      indicator[i]     0/1 matrix (num strategies x K_i): strategy consistent
                       with sequence

    Coefficient table: ``coef_idx`` (num entries x n) local sequence indices,
    ``coef_val`` (num entries x n) payoff per player, chance folded in; one
    entry per terminal up to merging of identical index tuples.
    """

    def __init__(self, game: GameTree):
        violations = check_perfect_recall(game)
        if violations:
            raise PerfectRecallError(violations)
        self.game = game
        self.players = list(game.players)
        self.n = len(self.players)

        n = self.n
        self.n_seqs = [1] * n
        self.seq_labels = [[EMPTY_LABEL] for _ in range(n)]
        self.seq_parent = [[-1] for _ in range(n)]
        self.seq_chain = [[()] for _ in range(n)]
        self.infosets: list[list[InfosetSeq]] = [[] for _ in range(n)]
        self._infoset_by_label: list[dict[str, int]] = [{} for _ in range(n)]

        coeffs: dict[tuple[int, ...], np.ndarray] = {}
        self._walk(game, coeffs)

        self.coef_idx = np.array(sorted(coeffs.keys()), dtype=int).reshape(
            len(coeffs), n)
        self.coef_val = np.array([coeffs[tuple(row)] for row in self.coef_idx])

        self.downstream = []
        for i in range(n):
            down = [[] for _ in range(self.n_seqs[i])]
            for info in self.infosets[i]:
                down[info.parent_seq].append(info.index)
            self.downstream.append([tuple(d) for d in down])

        self._build_indexing()
        self._build_patterns()
        self._build_strategies()

    # -- tree walk -----------------------------------------------------------

    def _walk(self, game: GameTree, coeffs):
        # iterative DFS preserving declared action order
        root_state = (game.root, tuple([0] * self.n), 1.0)
        stack = [root_state]
        while stack:
            node, seqvec, weight = stack.pop()
            if isinstance(node, Terminal):
                key = tuple(seqvec)
                vec = weight * np.asarray(node.payoffs, dtype=float)
                if key in coeffs:
                    coeffs[key] = coeffs[key] + vec
                else:
                    coeffs[key] = vec
                continue
            assert isinstance(node, Decision)
            if node.player == CHANCE:
                entries = [(node.children[k], seqvec, weight * node.probs[k])
                           for k in range(len(node.actions))]
                stack.extend(reversed(entries))
                continue
            i = self.players.index(node.player)
            by_label = self._infoset_by_label[i]
            j = by_label.get(node.infoset)
            if j is None:
                j = len(self.infosets[i])
                by_label[node.infoset] = j
                ext = []
                for pos, a in enumerate(node.actions):
                    local = self.n_seqs[i]
                    self.n_seqs[i] += 1
                    parent = seqvec[i]
                    parent_label = self.seq_labels[i][parent]
                    label = a if parent == 0 else f"{parent_label}/{a}"
                    self.seq_labels[i].append(label)
                    self.seq_parent[i].append(parent)
                    self.seq_chain[i].append(self.seq_chain[i][parent] + ((j, pos),))
                    ext.append(local)
                self.infosets[i].append(InfosetSeq(
                    i, j, node.infoset, node.actions, seqvec[i], tuple(ext)))
            info = self.infosets[i][j]
            # perfect recall guarantees a unique leading sequence
            assert info.parent_seq == seqvec[i]
            entries = []
            for pos in range(len(node.actions)):
                nxt = list(seqvec)
                nxt[i] = info.ext[pos]
                entries.append((node.children[pos], tuple(nxt), weight))
            stack.extend(reversed(entries))

    # -- static index structures ----------------------------------------------

    def _build_indexing(self):
        n = self.n
        self.x_offset = np.zeros(n, dtype=int)
        self.m_offset = np.zeros(n, dtype=int)
        for i in range(1, n):
            self.x_offset[i] = self.x_offset[i - 1] + self.n_seqs[i - 1] - 1
            self.m_offset[i] = self.m_offset[i - 1] + len(self.infosets[i - 1])
        self.n_actions = int(self.x_offset[-1] + self.n_seqs[-1] - 1)   # n0
        self.n_infosets = int(self.m_offset[-1] + len(self.infosets[-1]))  # m0

        # row r <-> non-root sequence (player xrow_player[r], local xrow_local[r])
        self.xrow_player = np.zeros(self.n_actions, dtype=int)
        self.xrow_local = np.zeros(self.n_actions, dtype=int)
        self.xrow_infoset = np.zeros(self.n_actions, dtype=int)  # global infoset
        for i in range(n):
            for l in range(1, self.n_seqs[i]):
                r = self.x_offset[i] + l - 1
                self.xrow_player[r] = i
                self.xrow_local[r] = l
                j = self.seq_chain[i][l][-1][0]
                self.xrow_infoset[r] = self.m_offset[i] + j

    def x_index(self, i: int, local: int) -> int:
        """Global index of a non-root sequence among the n0 action variables."""
        assert local >= 1
        return int(self.x_offset[i] + local - 1)

    def nu_index(self, i: int, j: int) -> int:
        return int(self.m_offset[i] + j)

    def _build_patterns(self):
        n0, m0 = self.n_actions, self.n_infosets
        # difference pattern: row value minus parent value (non-root parents)
        self.diff_pattern = np.zeros((n0, n0))
        # -1 adjustment for rows whose parent sequence is the root
        self.root_parent_row = np.zeros(n0, dtype=bool)
        # multiplier scatter: -1 for the row's own infoset, +1 for each
        # infoset the extended sequence leads to
        self.nu_pattern = np.zeros((n0, m0))
        # flow rows: +1 on extension sequences, -1 on the non-root parent
        self.flow_pattern = np.zeros((m0, n0))
        self.flow_root_row = np.zeros(m0, dtype=bool)

        for r in range(n0):
            i, l = int(self.xrow_player[r]), int(self.xrow_local[r])
            parent = self.seq_parent[i][l]
            self.diff_pattern[r, r] = 1.0
            if parent == 0:
                self.root_parent_row[r] = True
            else:
                self.diff_pattern[r, self.x_index(i, parent)] = -1.0
            self.nu_pattern[r, self.xrow_infoset[r]] = -1.0
            for jq in self.downstream[i][l]:
                self.nu_pattern[r, self.nu_index(i, jq)] += 1.0

        for i in range(self.n):
            for info in self.infosets[i]:
                row = self.nu_index(i, info.index)
                for l in info.ext:
                    self.flow_pattern[row, self.x_index(i, l)] = 1.0
                if info.parent_seq == 0:
                    self.flow_root_row[row] = True
                else:
                    self.flow_pattern[row, self.x_index(i, info.parent_seq)] = -1.0

    # -- reduced pure strategies ----------------------------------------------

    def _build_strategies(self):
        self.strategies: list[list[dict[int, int]]] = []
        self.strategy_labels: list[list[str]] = []
        self.indicator: list[np.ndarray] = []
        for i in range(self.n):
            downstream = self.downstream[i]
            infosets = self.infosets[i]

            def enum_forest(js, i=i, downstream=downstream, infosets=infosets):
                if not js:
                    yield {}
                    return
                j0, rest = js[0], js[1:]
                info = infosets[j0]
                for pos in range(len(info.actions)):
                    for sub in enum_forest(tuple(downstream[info.ext[pos]])):
                        for tail in enum_forest(rest):
                            out = {j0: pos}
                            out.update(sub)
                            out.update(tail)
                            yield out

            strats = list(enum_forest(downstream[0]))
            self.strategies.append(strats)
            labels = []
            for s in strats:
                parts = [infosets[j].actions[pos]
                         for j, pos in sorted(s.items())]
                labels.append("+".join(parts) if parts else "·")
            self.strategy_labels.append(labels)

            ind = np.zeros((len(strats), self.n_seqs[i]))
            for si, s in enumerate(strats):
                ind[si, 0] = 1.0
                for l in range(1, self.n_seqs[i]):
                    if all(s.get(j) == pos for j, pos in self.seq_chain[i][l]):
                        ind[si, l] = 1.0
            self.indicator.append(ind)

    def __repr__(self):
        sizes = "x".join(str(k) for k in self.n_seqs)
        return f"SequenceSpace({self.players}, W={sizes}, terms={len(self.coef_val)})"


def compile(game: GameTree) -> SequenceSpace:
    """Compile a perfect-recall game tree into its sequence form."""
    return SequenceSpace(game)


# -- profiles -----------------------------------------------------------------

@dataclass
class RealizationProfile:
    """Per-player probability mass over sequences (index 0 must carry 1)."""

    per_player: tuple[np.ndarray, ...]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.per_player[i]

    def copy(self) -> "RealizationProfile":
        return RealizationProfile(tuple(g.copy() for g in self.per_player))

    def flow_residual(self, seq: SequenceSpace) -> float:
        worst = 0.0
        for i in range(seq.n):
            g = self.per_player[i]
            worst = max(worst, abs(g[0] - 1.0))
            for info in seq.infosets[i]:
                lhs = sum(g[l] for l in info.ext)
                worst = max(worst, abs(lhs - g[info.parent_seq]))
        return worst

    def is_interior(self) -> bool:
        return all(np.all(g > 0) for g in self.per_player)

    def nonroot_vector(self, seq: SequenceSpace) -> np.ndarray:
        return np.concatenate([g[1:] for g in self.per_player])

    @staticmethod
    def from_nonroot(seq: SequenceSpace, vec: np.ndarray) -> "RealizationProfile":
        parts = []
        for i in range(seq.n):
            g = np.empty(seq.n_seqs[i])
            g[0] = 1.0
            g[1:] = vec[seq.x_offset[i]:seq.x_offset[i] + seq.n_seqs[i] - 1]
            parts.append(g)
        return RealizationProfile(tuple(parts))


@dataclass
class MixedProfile:
    """Per-player distribution over reduced pure strategies."""

    per_player: tuple[np.ndarray, ...]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.per_player[i]

    def copy(self) -> "MixedProfile":
        return MixedProfile(tuple(s.copy() for s in self.per_player))


def behavioral_realization(seq: SequenceSpace,
                           behavior: list[list[np.ndarray]]) -> RealizationProfile:
    """Compose a realization plan from per-infoset action distributions."""
    parts = []
    for i in range(seq.n):
        g = np.zeros(seq.n_seqs[i])
        g[0] = 1.0
        for info in seq.infosets[i]:
            b = np.asarray(behavior[i][info.index], dtype=float)
            for pos, l in enumerate(info.ext):
                g[l] = g[info.parent_seq] * b[pos]
        parts.append(g)
    return RealizationProfile(tuple(parts))


def uniform_behavioral(seq: SequenceSpace) -> RealizationProfile:
    beh = [[np.full(len(info.actions), 1.0 / len(info.actions))
            for info in seq.infosets[i]] for i in range(seq.n)]
    return behavioral_realization(seq, beh)


def random_interior(seq: SequenceSpace, rng: np.random.Generator,
                    floor: float = 1e-4) -> RealizationProfile:
    """Strictly positive realization plan from Dirichlet(1,...,1) behavior.

    Draws with any action probability below ``floor`` are redrawn so the
    start stays comfortably interior.
    """
    beh = []
    for i in range(seq.n):
        rows = []
        for info in seq.infosets[i]:
            while True:
                b = rng.dirichlet(np.ones(len(info.actions)))
                if b.min() >= floor:
                    break
            rows.append(b)
        beh.append(rows)
    return behavioral_realization(seq, beh)


# -- conversions ---------------------------------------------------------------

def realization_of(seq: SequenceSpace, sigma: MixedProfile) -> RealizationProfile:
    """Realization plan induced by a mixed profile (mass of consistent strategies)."""
    parts = []
    for i in range(seq.n):
        s = np.asarray(sigma[i], dtype=float)
        if s.shape != (len(seq.strategies[i]),):
            raise ValueError(
                f"player {seq.players[i]}: mixed strategy has {s.shape[0]} "
                f"entries, expected {len(seq.strategies[i])}")
        parts.append(seq.indicator[i].T @ s)
    return RealizationProfile(tuple(parts))


def behavior_of(seq: SequenceSpace, gamma: RealizationProfile) -> list[list[np.ndarray]]:
    """Per-infoset action distributions of a realization plan.

    Unreachable infosets (zero mass on the leading sequence) get the
    uniform distribution, which keeps the conversion total and deterministic.
    """
    out = []
    for i in range(seq.n):
        g = gamma[i]
        rows = []
        for info in seq.infosets[i]:
            parent_mass = g[info.parent_seq]
            if parent_mass > 0:
                rows.append(np.array([g[l] / parent_mass for l in info.ext]))
            else:
                rows.append(np.full(len(info.ext), 1.0 / len(info.ext)))
        out.append(rows)
    return out


def mixed_of(seq: SequenceSpace, gamma: RealizationProfile) -> MixedProfile:
    """A mixed profile realizing ``gamma`` (behavioral product construction)."""
    resid = gamma.flow_residual(seq)
    if resid > FLOW_TOL:
        raise ValueError(f"flow constraints violated by {resid:.3g}")
    beh = behavior_of(seq, gamma)
    parts = []
    for i in range(seq.n):
        probs = np.empty(len(seq.strategies[i]))
        for si, s in enumerate(seq.strategies[i]):
            p = 1.0
            for j, pos in s.items():
                p *= beh[i][j][pos]
            probs[si] = p
        parts.append(probs)
    return MixedProfile(tuple(parts))


# -- payoff evaluation ----------------------------------------------------------

def _gathered(seq: SequenceSpace, gamma: RealizationProfile) -> np.ndarray:
    """Coefficient-table gather: entry (m, q) = gamma[q][coef_idx[m, q]]."""
    return np.stack([gamma[q][seq.coef_idx[:, q]] for q in range(seq.n)], axis=1)

def expected_payoff(seq: SequenceSpace, gamma: RealizationProfile) -> np.ndarray:
    """Expected payoff vector: sum of coefficients weighted by sequence masses."""
    gathered = _gathered(seq, gamma)
    return (seq.coef_val * np.prod(gathered, axis=1)[:, None]).sum(axis=0)


def seq_marginal_payoff(seq: SequenceSpace, i: int,
                        gamma: RealizationProfile) -> np.ndarray:
    """Per-sequence payoff of player i against the others' realization masses.

    Linear in each opponent's plan; weighting by gamma[i] and summing
    recovers the expected payoff.
    """
    gathered = _gathered(seq, gamma)
    others = [q for q in range(seq.n) if q != i]
    weight = seq.coef_val[:, i] * np.prod(gathered[:, others], axis=1)
    out = np.zeros(seq.n_seqs[i])
    np.add.at(out, seq.coef_idx[:, i], weight)
    return out


def all_marginals(seq: SequenceSpace, gamma: RealizationProfile) -> np.ndarray:
    """Marginal payoffs of every player's non-root sequence, stacked (length n0)."""
    gathered = _gathered(seq, gamma)
    out = np.zeros(seq.n_actions)
    for i in range(seq.n):
        others = [q for q in range(seq.n) if q != i]
        weight = seq.coef_val[:, i] * np.prod(gathered[:, others], axis=1)
        idx = seq.coef_idx[:, i]
        mask = idx >= 1
        np.add.at(out, seq.x_offset[i] + idx[mask] - 1, weight[mask])
    return out


def marginal_cross_jacobian(seq: SequenceSpace, gamma: RealizationProfile,
                            col_scale: np.ndarray) -> np.ndarray:
    """d(stacked marginals)/d(non-root masses), columns scaled entrywise.

    Entry (r, c) with r the stationarity row of player i's sequence and c an
    opponent sequence variable: sum over coefficient entries pairing the two
    sequences of the payoff times the remaining players' masses, times
    ``col_scale[c]``.  Own-player columns are structurally zero.
    """
    n0 = seq.n_actions
    J = np.zeros((n0, n0))
    gathered = _gathered(seq, gamma)
    for i in range(seq.n):
        ridx = seq.coef_idx[:, i]
        rmask = ridx >= 1
        for q in range(seq.n):
            if q == i:
                continue
            rest = [p for p in range(seq.n) if p not in (i, q)]
            w = seq.coef_val[:, i]
            if rest:
                w = w * np.prod(gathered[:, rest], axis=1)
            cidx = seq.coef_idx[:, q]
            mask = rmask & (cidx >= 1)
            rows = seq.x_offset[i] + ridx[mask] - 1
            cols = seq.x_offset[q] + cidx[mask] - 1
            np.add.at(J, (rows, cols), w[mask] * col_scale[cols])
    return J


def best_response_value(seq: SequenceSpace, i: int,
                        gamma: RealizationProfile) -> float:
    """Best attainable payoff for player i against the others, by backward DP
    over the player's infoset forest (max over actions, sum over successors)."""
    marg = seq_marginal_payoff(seq, i, gamma)
    down = seq.downstream[i]
    value = np.zeros(len(seq.infosets[i]))
    for info in reversed(seq.infosets[i]):
        best = -np.inf
        for l in info.ext:
            v = marg[l] + sum(value[jq] for jq in down[l])
            best = max(best, v)
        value[info.index] = best
    return float(marg[0] + sum(value[j] for j in down[0]))


def nash_gap_sequence(seq: SequenceSpace, gamma: RealizationProfile) -> float:
    """Largest unilateral payoff improvement over the realized payoff."""
    g = expected_payoff(seq, gamma)
    gap = 0.0
    for i in range(seq.n):
        gap = max(gap, best_response_value(seq, i, gamma) - g[i])
    return gap


def strategy_payoff_tensor(seq: SequenceSpace) -> np.ndarray:
    """Reduced-normal-form payoff tensor from the coefficient table.

    Shape (,|S^1|, ..., |S^n|, n).  Used for cross-checks against the
    independently built oracle tensor.
    """
    shape = tuple(len(s) for s in seq.strategies) + (seq.n,)
    out = np.zeros(shape)
    for m in range(seq.coef_idx.shape[0]):
        masks = [seq.indicator[q][:, seq.coef_idx[m, q]].astype(bool)
                 for q in range(seq.n)]
        out[np.ix_(*masks)] += seq.coef_val[m]
    return out
