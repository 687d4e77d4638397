import json
from pathlib import Path

import numpy as np
import pytest

from qrepath import game_model as gm
from qrepath import normal_form_oracle as nfo
from qrepath import sequence_form as sf

REPO = Path(__file__).resolve().parent.parent
GAMES = REPO / "games"


@pytest.fixture(scope="session")
def selten_path() -> Path:
    return GAMES / "selten.json"


@pytest.fixture(scope="session")
def selten_game(selten_path):
    return gm.load_game(selten_path)


@pytest.fixture(scope="session")
def selten_seq(selten_game):
    return sf.compile(selten_game)


@pytest.fixture(scope="session")
def selten_nf(selten_game):
    return nfo.build_normal_form(selten_game)


@pytest.fixture(scope="session")
def one_player_game():
    return gm.load_game(GAMES / "one_player.json")


@pytest.fixture(scope="session")
def chance_game():
    return gm.load_game(GAMES / "chance_demo.json")


def make_game(players, root) -> gm.GameTree:
    """Build a game from plain dicts (test helper)."""
    text = json.dumps({"players": players, "root": root})
    return gm.parse_game(text)


def leaf(*payoffs):
    return {"payoffs": list(payoffs)}


def node(player, infoset, actions):
    return {"player": player, "infoset": infoset,
            "actions": [{"label": a, "child": c} for a, c in actions]}


def chance(actions):
    return {"player": "chance",
            "actions": [{"label": a, "prob": p, "child": c}
                        for a, p, c in actions]}


# The example game's three Nash payoff types.  Each is the expected payoff
# of a representative equilibrium profile; the acceptance suite re-derives
# them and certifies the profiles by a zero best-response gap.
TYPE_A_PAYOFF = np.array([3.0, 0.0, 3.0])
TYPE_B_PAYOFF = np.array([1.0, 3.0, 0.0])
TYPE_C_PAYOFF = np.array([9 / 4, 72 / 49, 75 / 49])

TYPE_C_SIGMA = (np.array([0.0, 24 / 49, 25 / 49]),
                np.array([3 / 8, 5 / 8]),
                np.array([1 / 4, 3 / 4]))


@pytest.fixture(scope="session")
def type_c_profile():
    return sf.MixedProfile(tuple(v.copy() for v in TYPE_C_SIGMA))
