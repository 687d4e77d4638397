"""Desk-scale reduced-normal-form reference.

Enumerates reduced pure strategies straight from the game tree, builds the
payoff tensor by summing terminal contributions (chance folded in), and
provides logit best responses, logit fixed points, and best-response gap
checks.  Everything here is deliberately brute force: it exists to validate
the sequence-form machinery, not to scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qrepath.game_model import CHANCE, Decision, GameTree, Terminal

DEFAULT_PROFILE_CAP = 10**6


class OracleCapExceeded(RuntimeError):
    """The profile count is past the configured desk-scale cap."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterate=None):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual
        self.iterate = iterate


@dataclass
class NormalForm:
    """Reduced normal form: strategies are action choices at own-reachable infosets."""

    players: list[str]
    strategies: list[list[dict[str, str]]]      # per player: infoset label -> action
    strategy_labels: list[list[str]]
    tensor: np.ndarray                           # shape (|S^1|,...,|S^n|, n)
    cap: int = field(default=DEFAULT_PROFILE_CAP, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape[:-1]


def _own_forest(game: GameTree, player: str):
    """Infoset forest of one player: discovery order, per-infoset own chain.

    The chain of an infoset is the list of (infoset label, action) pairs the
    player passed through before reaching it; with perfect recall it is
    independent of the member history.
    """
    order: list[str] = []
    chains: dict[str, tuple[tuple[str, str], ...]] = {}
    actions: dict[str, tuple[str, ...]] = {}
    stack = [(game.root, ())]
    while stack:
        node, chain = stack.pop()
        if isinstance(node, Terminal):
            continue
        assert isinstance(node, Decision)
        own = node.player == player
        if own and node.infoset not in chains:
            order.append(node.infoset)
            chains[node.infoset] = chain
            actions[node.infoset] = node.actions
        for k in range(len(node.actions) - 1, -1, -1):
            child_chain = chain + ((node.infoset, node.actions[k]),) if own else chain
            stack.append((node.children[k], child_chain))
    children: dict[tuple[str, str] | None, list[str]] = {}
    for label in order:
        chain = chains[label]
        key = chain[-1] if chain else None
        children.setdefault(key, []).append(label)
    return order, actions, children


def _enumerate_reduced(actions, children, frontier) -> list[dict[str, str]]:
    if not frontier:
        return [{}]
    head, rest = frontier[0], frontier[1:]
    out = []
    for a in actions[head]:
        subs = _enumerate_reduced(actions, children,
                                  tuple(children.get((head, a), [])))
        tails = _enumerate_reduced(actions, children, rest)
        for sub in subs:
            for tail in tails:
                s = {head: a}
                s.update(sub)
                s.update(tail)
                out.append(s)
    return out


def build_normal_form(game: GameTree, cap: int = DEFAULT_PROFILE_CAP) -> NormalForm:
    """Enumerate reduced strategies and fill the payoff tensor terminal by terminal."""
    strategies = []
    labels = []
    for player in game.players:
        order, actions, children = _own_forest(game, player)
        roots = tuple(children.get(None, []))
        strats = _enumerate_reduced(actions, children, roots)
        strategies.append(strats)
        labels.append(["+".join(s[j] for j in order if j in s) or "·"
                       for s in strats])

    total = 1
    for s in strategies:
        total *= len(s)
        if total > cap:
            raise OracleCapExceeded(
                f"{total}+ pure profiles exceed the cap of {cap}")

    n = game.n_players
    tensor = np.zeros(tuple(len(s) for s in strategies) + (n,))
    for z in game.terminals:
        weight = game.chance_weight(z)
        # own (infoset, action) requirements along z, per player
        required: list[list[tuple[str, str]]] = [[] for _ in range(n)]
        node = game.root
        for a in z:
            assert isinstance(node, Decision)
            if node.player != CHANCE:
                i = game.players.index(node.player)
                required[i].append((node.infoset, a))
            node = node.children[node.actions.index(a)]
        payoffs = np.asarray(game.nodes[z].payoffs, dtype=float)
        masks = []
        for i in range(n):
            need = required[i]
            masks.append(np.array(
                [all(s.get(j) == a for j, a in need) for s in strategies[i]],
                dtype=bool))
        tensor[np.ix_(*masks)] += weight * payoffs
    return NormalForm(list(game.players), strategies, labels, tensor, cap=cap)


def tree_walk_payoff(game: GameTree, profile: list[dict[str, str]]) -> np.ndarray:
    """Independent recursive payoff evaluation of one pure profile."""

    def walk(node) -> np.ndarray:
        if isinstance(node, Terminal):
            return np.asarray(node.payoffs, dtype=float)
        assert isinstance(node, Decision)
        if node.player == CHANCE:
            return sum(p * walk(c) for p, c in zip(node.probs, node.children))
        i = game.players.index(node.player)
        a = profile[i][node.infoset]
        return walk(node.children[node.actions.index(a)])

    return walk(game.root)


# -- logit machinery -------------------------------------------------------------

def payoff_vector(nf: NormalForm, i: int, sigma) -> np.ndarray:
    """Expected payoff of each of player i's strategies against sigma^{-i}."""
    v = nf.tensor[..., i]
    for q in range(len(nf.players) - 1, -1, -1):
        if q == i:
            continue
        v = np.tensordot(v, np.asarray(sigma[q], dtype=float), axes=([q], [0]))
    return v


def expected_payoffs(nf: NormalForm, sigma) -> np.ndarray:
    return np.array([float(np.asarray(sigma[i]) @ payoff_vector(nf, i, sigma))
                     for i in range(len(nf.players))])


def uniform_profile(nf: NormalForm):
    from qrepath.sequence_form import MixedProfile
    return MixedProfile(tuple(np.full(k, 1.0 / k) for k in nf.shape))


def logit_response(nf: NormalForm, sigma, lam_r: float, sigma0=None):
    """One application of the logit response map.

    Each strategy's weight is (anchor weight) * exp(lam_r * expected payoff),
    normalized per player.  Payoffs are shifted by their maximum before
    exponentiation; the shift cancels in the normalization.
    """
    from qrepath.sequence_form import MixedProfile
    if lam_r < 0:
        raise ValueError("rationality parameter must be nonnegative")
    parts = []
    for i in range(len(nf.players)):
        u = payoff_vector(nf, i, sigma)
        w = np.exp(lam_r * (u - u.max()))
        if sigma0 is not None:
            w = w * np.asarray(sigma0[i], dtype=float)
        parts.append(w / w.sum())
    return MixedProfile(tuple(parts))


def _fd_jacobian(residual, x, h=1e-7):
    m = x.size
    J = np.empty((m, m))
    for k in range(m):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (residual(xp) - residual(xm)) / (2 * h)
    return J


def _newton_polish(residual, x, tol, max_iter=200):
    """Regularized Newton on the residual map; None if no root is reached."""
    mu = 1e-8
    for _ in range(max_iter):
        r = residual(x)
        if np.abs(r).max() <= tol:
            return x
        rnorm = np.linalg.norm(r)
        J = _fd_jacobian(residual, x)
        eye = np.eye(x.size)
        while True:
            try:
                step = np.linalg.solve(J.T @ J + mu * eye, -J.T @ r)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            if np.linalg.norm(residual(x + step)) < rnorm:
                x = x + step
                mu = max(mu / 3, 1e-12)
                break
            mu *= 10
            if mu > 1e12:
                return None
    return None


def solve_logit_qre(nf: NormalForm, lam_r: float, sigma0=None,
                    tol: float = 1e-10, max_iter: int = 2000, beta: float = 0.5):
    """Logit fixed point: damped iteration plus a regularized Newton finish.

    The damped map alone stops contracting once rationality is moderate (the
    fixed point can be iteration-unstable), so past lam_r = 2 the solve
    continues the solution branch in rationality steps, polishing with
    Newton at each level.  Raises ConvergenceError with the best residual
    if the target tolerance is unreachable.
    """
    from qrepath.sequence_form import MixedProfile

    if lam_r < 0:
        raise ValueError("rationality parameter must be nonnegative")
    if sigma0 is not None and any(np.asarray(s).min() <= 0 for s in sigma0.per_player):
        raise ValueError("anchor profile must be strictly positive")
    if lam_r == 0:
        return sigma0.copy() if sigma0 is not None else uniform_profile(nf)

    sizes = list(nf.shape)
    splits = np.cumsum(sizes)[:-1]

    def pack(p):
        return np.concatenate(p.per_player)

    def unpack(v):
        return MixedProfile(tuple(np.split(v, splits)))

    def make_residual(lam):
        def residual(v):
            return v - pack(logit_response(nf, unpack(v), lam, sigma0))
        return residual

    start = sigma0.copy() if sigma0 is not None else uniform_profile(nf)
    x = pack(start)

    # rationality ladder: damped iteration while it contracts, Newton after
    levels = [lam_r] if lam_r <= 2.0 else list(
        np.geomspace(2.0, lam_r, max(2, int(np.ceil(np.log(lam_r / 2.0)
                                                    / np.log(1.5))) + 1)))
    best = (np.inf, x)
    for lam in levels:
        residual = make_residual(lam)
        for _ in range(max_iter):
            r = residual(x)
            rnorm = np.abs(r).max()
            if rnorm < best[0]:
                best = (rnorm, x.copy())
            if rnorm <= (tol if lam == lam_r else 1e-8) or rnorm <= 1e-4:
                break
            x_new = (1 - beta) * x + beta * (x - r)
            if np.abs(residual(x_new)).max() > rnorm:  # stopped contracting
                break
            x = x_new
        polished = _newton_polish(residual, x,
                                  tol if lam == lam_r else 1e-10)
        if polished is None:
            r = residual(best[1])
            raise ConvergenceError("logit fixed point did not converge",
                                   float(np.abs(r).max()), unpack(best[1]))
        x = polished
    return unpack(x)


def nash_gap(nf: NormalForm, sigma) -> float:
    """Largest unilateral improvement: zero exactly at Nash equilibria."""
    gap = 0.0
    for i in range(len(nf.players)):
        u = payoff_vector(nf, i, sigma)
        gap = max(gap, float(u.max() - np.asarray(sigma[i]) @ u))
    return gap
