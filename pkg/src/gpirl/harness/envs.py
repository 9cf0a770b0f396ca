from __future__ import annotations

from ..errors import UsageError
from ..mdp import MdpModel, frozen_lake, random_mdp


def parse_env_name(name: str) -> MdpModel:
    """``frozenlake``, ``frozenlake-slippery`` or ``random-mdp:<states>:<actions>:<seed>``."""
    if name == "frozenlake":
        return frozen_lake(slippery=False)
    if name == "frozenlake-slippery":
        return frozen_lake(slippery=True)
    if name.startswith("random-mdp"):
        parts = name.split(":")
        if len(parts) != 4:
            raise UsageError("random MDPs are named random-mdp:<states>:<actions>:<seed>")
        try:
            n_s, n_a, seed = (int(p) for p in parts[1:])
        except ValueError:
            raise UsageError(f"bad random MDP name {name!r}") from None
        return random_mdp(n_s, n_a, seed)
    raise UsageError(f"unknown env {name!r}")
