"""Extensive-form game trees: parsing, validation, serialization.

A game is a finite tree of histories.  Non-terminal nodes are owned by a
player (or by "chance") and carry an ordered action list; terminal nodes
carry one payoff per non-chance player.  Information sets are declared
explicitly in the input and are scoped per player.

On-disk format ("qrepath-game v1"): a UTF-8 JSON document

    {"players": ["P1", ...], "root": <node>}

where a decision node is

    {"player": <name or "chance">, "infoset": "<id>", "actions":
     [{"label": "L", "prob": 0.5, "child": <node>}, ...]}

("prob" is required exactly when the player is "chance"; "infoset" is
ignored for chance nodes) and a terminal node is {"payoffs": [u1, ..., un]}.
Optional top-level keys "format" and "version" are accepted and written
back on serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Optional, Union

CHANCE = "chance"
FORMAT_NAME = "qrepath-game"
FORMAT_VERSION = 1

#: tolerance for chance probabilities summing to one
CHANCE_SUM_TOL = 1e-12

History = tuple[str, ...]


class GameFormatError(ValueError):
    """Raised for syntactic or semantic defects in a game description.

    ``line``/``col`` are set for JSON syntax errors, ``where`` is a
    dotted path into the document for semantic errors.
    """

    def __init__(self, message: str, line: int | None = None,
                 col: int | None = None, where: str | None = None):
        self.line = line
        self.col = col
        self.where = where
        prefix = ""
        if line is not None:
            prefix = f"line {line}, col {col}: "
        elif where is not None:
            prefix = f"at {where}: "
        super().__init__(prefix + message)


class PerfectRecallError(ValueError):
    """Raised when an operation requires perfect recall and the game lacks it."""

    def __init__(self, violations):
        self.violations = violations
        first = violations[0] if violations else None
        super().__init__(
            f"game violates perfect recall ({len(violations)} violation(s), "
            f"first: {first})")


@dataclass(frozen=True)
class Terminal:
    payoffs: tuple[float, ...]


@dataclass(frozen=True)
class Decision:
    player: str                      # player name, or CHANCE
    infoset: Optional[str]           # per-player infoset id; None for chance
    actions: tuple[str, ...]
    probs: Optional[tuple[float, ...]]   # chance probabilities, None otherwise
    children: tuple["Node", ...]


Node = Union[Terminal, Decision]


@dataclass(frozen=True)
class InfosetId:
    """Identifies the index-th information set of a player (discovery order)."""

    player: int
    index: int
    label: str = ""

    def __repr__(self):
        return f"I({self.player},{self.index}:{self.label})"


class Infoset:
    """One information set: owner, declared label, actions, member histories."""

    def __init__(self, ident: InfosetId, actions: tuple[str, ...]):
        self.id = ident
        self.actions = actions
        self.histories: list[History] = []

    def __repr__(self):
        return f"Infoset({self.id!r}, {len(self.histories)} nodes)"


class GameTree:
    """Immutable game tree with per-player information partitions.

    Construction validates everything except perfect recall, which is
    checked separately by :func:`check_perfect_recall` so that defective
    games can still be inspected and reported on.
    """

    def __init__(self, players: list[str], root: Node):
        if not players:
            raise GameFormatError("game needs at least one player")
        if len(set(players)) != len(players):
            raise GameFormatError("duplicate player names")
        if CHANCE in players:
            raise GameFormatError(f'"{CHANCE}" is reserved for the chance player')
        self.players = list(players)
        self.n_players = len(players)
        self.root = root

        self.nodes: dict[History, Node] = {}
        self.histories: list[History] = []          # canonical depth-first order
        self.terminals: list[History] = []
        # per player name: infoset label -> Infoset, in discovery order
        self.infosets: dict[str, dict[str, Infoset]] = {p: {} for p in players}
        self._index_tree()

    # -- construction ------------------------------------------------------

    def _index_tree(self):
        stack: list[tuple[History, Node, str]] = [((), self.root, "root")]
        while stack:
            hist, node, where = stack.pop()
            self.nodes[hist] = node
            self.histories.append(hist)
            if isinstance(node, Terminal):
                if len(node.payoffs) != self.n_players:
                    raise GameFormatError(
                        f"payoff vector has {len(node.payoffs)} entries, "
                        f"expected {self.n_players}", where=where)
                self.terminals.append(hist)
                continue
            if not node.actions:
                raise GameFormatError("decision node with no actions", where=where)
            if len(set(node.actions)) != len(node.actions):
                raise GameFormatError("duplicate action labels", where=where)
            if node.player == CHANCE:
                if node.probs is None:
                    raise GameFormatError("chance node without probabilities",
                                          where=where)
                if any(p < 0 for p in node.probs):
                    raise GameFormatError("negative chance probability", where=where)
                total = sum(node.probs)
                if abs(total - 1.0) > CHANCE_SUM_TOL:
                    raise GameFormatError(
                        f"chance probabilities sum {total:.12g} != 1", where=where)
            else:
                if node.player not in self.infosets:
                    raise GameFormatError(f"unknown player {node.player!r}",
                                          where=where)
                if node.infoset is None:
                    raise GameFormatError("decision node without infoset id",
                                          where=where)
                registry = self.infosets[node.player]
                cell = registry.get(node.infoset)
                if cell is None:
                    ident = InfosetId(self.players.index(node.player),
                                      len(registry), node.infoset)
                    cell = Infoset(ident, node.actions)
                    registry[node.infoset] = cell
                elif cell.actions != node.actions:
                    raise GameFormatError(
                        f"infoset {node.infoset!r} of {node.player} has "
                        f"inconsistent action sets {cell.actions} vs {node.actions}",
                        where=where)
                cell.histories.append(hist)
            # push children in reverse so the DFS visits declared order
            for k in range(len(node.actions) - 1, -1, -1):
                child_where = f"{where}.actions[{k}].child"
                stack.append((hist + (node.actions[k],), node.children[k],
                              child_where))

    # -- basic queries ------------------------------------------------------

    def node_at(self, h: History) -> Node:
        try:
            return self.nodes[tuple(h)]
        except KeyError:
            raise KeyError(f"unknown history {h!r}") from None

    def owner(self, h: History) -> str | None:
        node = self.node_at(h)
        return node.player if isinstance(node, Decision) else None

    def infoset_of(self, h: History) -> Infoset:
        node = self.node_at(h)
        if not isinstance(node, Decision) or node.player == CHANCE:
            raise KeyError(f"{h!r} is not a personal decision node")
        return self.infosets[node.player][node.infoset]

    def player_infosets(self, player: str) -> list[Infoset]:
        return list(self.infosets[player].values())

    def chance_weight(self, h: History) -> float:
        """Product of chance probabilities along h."""
        w = 1.0
        node: Node = self.root
        for a in h:
            assert isinstance(node, Decision)
            k = node.actions.index(a)
            if node.player == CHANCE:
                w *= node.probs[k]
            node = node.children[k]
        return w

    def __eq__(self, other):
        return (isinstance(other, GameTree)
                and self.players == other.players and self.root == other.root)

    def __repr__(self):
        return (f"GameTree({self.players}, |H|={len(self.histories)}, "
                f"|Z|={len(self.terminals)})")


# -- records and perfect recall --------------------------------------------

def record(game: GameTree, player: str | int, h) -> list[tuple[InfosetId, str | None]]:
    """Player's experience along ``h``: own infosets visited and actions taken.

    If ``h`` itself is the player's decision node its infoset is appended
    with action ``None``.
    """
    if isinstance(player, int):
        player = game.players[player]
    h = tuple(h)
    game.node_at(h)  # raises on unknown history
    out: list[tuple[InfosetId, str | None]] = []
    node: Node = game.root
    for a in h:
        assert isinstance(node, Decision)
        if node.player == player:
            cell = game.infosets[player][node.infoset]
            out.append((cell.id, a))
        node = node.children[node.actions.index(a)]
    if isinstance(node, Decision) and node.player == player:
        cell = game.infosets[player][node.infoset]
        out.append((cell.id, None))
    return out


def check_perfect_recall(game: GameTree) -> list[tuple[str, str, History, History]]:
    """Return perfect-recall violations as (player, infoset, h, h') tuples.

    Two histories in one information set must give the player identical
    records up to (and excluding) the set itself.  The scan order is
    canonical, so the report is deterministic.
    """
    violations = []
    for player in game.players:
        for label, cell in game.infosets[player].items():
            if len(cell.histories) < 2:
                continue
            # drop the trailing (this infoset, None) marker before comparing
            ref_h = cell.histories[0]
            ref = record(game, player, ref_h)[:-1]
            for h in cell.histories[1:]:
                if record(game, player, h)[:-1] != ref:
                    violations.append((player, label, ref_h, h))
    return violations


# -- parsing / serialization ------------------------------------------------

def _num(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GameFormatError(f"expected a number, got {value!r}", where=where)
    return float(value)


def _parse_node(obj, where: str) -> Node:
    if not isinstance(obj, dict):
        raise GameFormatError("node must be a JSON object", where=where)
    if "payoffs" in obj:
        pay = obj["payoffs"]
        if not isinstance(pay, list):
            raise GameFormatError('"payoffs" must be an array', where=where)
        return Terminal(tuple(_num(v, where) for v in pay))
    if "player" not in obj:
        raise GameFormatError('node needs "player" or "payoffs"', where=where)
    player = obj["player"]
    actions_in = obj.get("actions")
    if not isinstance(actions_in, list) or not actions_in:
        raise GameFormatError('node needs a nonempty "actions" array', where=where)
    labels, probs, children = [], [], []
    is_chance = player == CHANCE
    for k, act in enumerate(actions_in):
        aw = f"{where}.actions[{k}]"
        if not isinstance(act, dict) or "label" not in act:
            raise GameFormatError('action needs a "label"', where=aw)
        labels.append(str(act["label"]))
        if is_chance:
            if "prob" not in act:
                raise GameFormatError("chance action without prob", where=aw)
            probs.append(_num(act["prob"], aw))
        elif "prob" in act:
            raise GameFormatError("prob on a non-chance action", where=aw)
        if "child" not in act or act["child"] is None:
            raise GameFormatError(f'dangling action {act.get("label")!r} '
                                  "(no child)", where=aw)
        children.append(_parse_node(act["child"], aw + ".child"))
    infoset = None if is_chance else obj.get("infoset")
    if not is_chance and infoset is None:
        raise GameFormatError('decision node needs an "infoset" id', where=where)
    return Decision(player=str(player),
                    infoset=None if infoset is None else str(infoset),
                    actions=tuple(labels),
                    probs=tuple(probs) if is_chance else None,
                    children=tuple(children))


def parse_game(text: str) -> GameTree:
    """Parse a "qrepath-game v1" document into a validated GameTree.

    Perfect recall is *not* enforced here; run :func:`check_perfect_recall`
    (the sequence-form compiler refuses games that fail it).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise GameFormatError(e.msg, line=e.lineno, col=e.colno) from None
    if not isinstance(doc, dict):
        raise GameFormatError("top level must be an object", where="top")
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise GameFormatError(f'unknown format {doc.get("format")!r}', where="top")
    if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise GameFormatError(f'unsupported version {doc.get("version")!r}',
                              where="top")
    players = doc.get("players")
    if not isinstance(players, list) or not all(isinstance(p, str) for p in players):
        raise GameFormatError('"players" must be an array of names', where="top")
    if "root" not in doc:
        raise GameFormatError('missing "root" node', where="top")
    root = _parse_node(doc["root"], "root")
    return GameTree(players, root)


def _node_to_obj(node: Node):
    if isinstance(node, Terminal):
        return {"payoffs": list(node.payoffs)}
    out: dict = {"player": node.player}
    if node.player != CHANCE:
        out["infoset"] = node.infoset
    acts = []
    for k, label in enumerate(node.actions):
        act: dict = {"label": label}
        if node.probs is not None:
            act["prob"] = node.probs[k]
        act["child"] = _node_to_obj(node.children[k])
        acts.append(act)
    out["actions"] = acts
    return out


def serialize_game(game: GameTree) -> str:
    """Canonical textual form; ``parse_game(serialize_game(g)) == g``."""
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
           "players": list(game.players), "root": _node_to_obj(game.root)}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_game(path) -> GameTree:
    with open(path, "r", encoding="utf-8") as f:
        return parse_game(f.read())


def iter_terminals(game: GameTree) -> Iterator[tuple[History, Terminal]]:
    for h in game.terminals:
        yield h, game.nodes[h]
