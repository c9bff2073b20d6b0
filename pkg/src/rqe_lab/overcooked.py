"""A small two-agent cooking gridworld with shared rewards and private costs.

Both agents fetch onions and drop them into a solid pot. Picking up an onion
and delivering it pay a reward shared by the team, while moving and bumping
into the partner cost only the agent who acted. That split is what makes
free-riding attractive: one agent can stay put and still collect the team
reward.

Coordinates are ``(row, col)`` with row 0 at the top. Actions are
``0=up, 1=down, 2=left, 3=right, 4=stay``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

UP, DOWN, LEFT, RIGHT, STAY = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "stay")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))


def _cell(c) -> tuple[int, int]:
    r, col = c
    return int(r), int(col)


@dataclass(frozen=True)
class GridConfig:
    width: int = 5
    height: int = 5
    pot_cell: tuple = (2, 2)
    onion_cells: tuple = ((0, 4), (4, 0))
    start_configs: tuple = (((0, 0), (0, 1)), ((0, 0), (1, 0)))
    move_cost: float = 0.2
    collision_penalty: float = 2.0
    pickup_reward: float = 1.0
    delivery_reward: float = 10.0
    respawn_prob: float = 0.2
    episode_len: int = 128
    walls: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "pot_cell", _cell(self.pot_cell))
        object.__setattr__(self, "onion_cells", tuple(_cell(c) for c in self.onion_cells))
        object.__setattr__(self, "start_configs",
                           tuple((_cell(a), _cell(b)) for a, b in self.start_configs))
        object.__setattr__(self, "walls", tuple(_cell(c) for c in self.walls))
        if len(self.onion_cells) != 2 or len(self.start_configs) < 1:
            raise ValueError("need exactly two onion cells and at least one start configuration")
        cells = [self.pot_cell, *self.onion_cells, *self.walls]
        for a, b in self.start_configs:
            if a == b:
                raise ValueError("start positions must differ")
            if a in cells or b in cells:
                raise ValueError("start positions must be free cells")
        if len(set(cells)) != len(cells):
            raise ValueError("pot, onion and wall cells must be distinct")
        for c in cells + [p for pair in self.start_configs for p in pair]:
            if not self.in_bounds(c):
                raise ValueError(f"cell {c} is outside the grid")
        if not 0 <= self.respawn_prob <= 1 or self.episode_len < 1:
            raise ValueError("invalid respawn probability or episode length")

    def in_bounds(self, c) -> bool:
        return 0 <= c[0] < self.height and 0 <= c[1] < self.width

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def n_observations(self) -> int:
        return self.n_cells * self.n_cells * 16

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GridConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown grid config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> GridConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class GridState(NamedTuple):
    agent_pos: tuple
    carrying: tuple
    onion_available: tuple
    step_count: int


class StepResult(NamedTuple):
    state: GridState
    r1: float
    r2: float
    shared: float
    private: tuple


class EpisodeOver(RuntimeError):
    pass


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def reset(config: GridConfig, seed=None) -> GridState:
    """Fresh episode from one of the start configurations picked uniformly."""
    rng = _as_rng(seed)
    k = int(rng.integers(len(config.start_configs)))
    return GridState(config.start_configs[k], (False, False), (True, True), 0)


def step(config: GridConfig, state: GridState, a1: int, a2: int, rng: np.random.Generator) -> StepResult:
    """Advance one step. Agents move one after the other in a random order.

    Exactly three uniforms are drawn per call (order, two respawns), so the
    random stream stays aligned whatever happens in the grid.
    """
    if state.step_count >= config.episode_len:
        raise EpisodeOver("step called after the episode ended")
    actions = (int(a1), int(a2))
    for a in actions:
        if not 0 <= a < N_ACTIONS:
            raise ValueError(f"invalid action {a}")
    order = (0, 1) if rng.random() < 0.5 else (1, 0)
    respawn_draws = (rng.random(), rng.random())

    pos = list(state.agent_pos)
    carrying = list(state.carrying)
    available = list(state.onion_available)
    private = [0.0, 0.0]
    shared = 0.0
    pot, onions, walls = config.pot_cell, config.onion_cells, config.walls

    for i in order:
        a = actions[i]
        if a == STAY:
            continue
        private[i] -= config.move_cost
        dr, dc = _MOVES[a]
        target = (pos[i][0] + dr, pos[i][1] + dc)
        if not config.in_bounds(target) or target in walls:
            continue
        if target == pot:
            if carrying[i]:
                shared += config.delivery_reward
                carrying[i] = False
            continue
        if target == pos[1 - i]:
            private[i] -= config.collision_penalty
            continue
        pos[i] = target
        if not carrying[i]:
            for k, cell in enumerate(onions):
                if target == cell and available[k]:
                    available[k] = False
                    carrying[i] = True
                    shared += config.pickup_reward

    for k in range(2):
        if not available[k] and respawn_draws[k] < config.respawn_prob:
            available[k] = True

    new = GridState(tuple(pos), tuple(carrying), tuple(available), state.step_count + 1)
    return StepResult(new, shared + private[0], shared + private[1], shared, tuple(private))


def is_done(config: GridConfig, state: GridState) -> bool:
    return state.step_count >= config.episode_len


def encode_observation(config: GridConfig, state: GridState, agent: int | None = None) -> int:
    """Bijective index of the joint observation.

    With ``agent=1`` the agent slots are swapped so that the observer comes first.
    """
    w, n = config.width, config.n_cells
    (r1, c1), (r2, c2) = state.agent_pos
    p1, p2 = r1 * w + c1, r2 * w + c2
    k1, k2 = state.carrying
    if agent == 1:
        p1, p2, k1, k2 = p2, p1, k2, k1
    o1, o2 = state.onion_available
    return ((((p1 * n + p2) * 2 + int(k1)) * 2 + int(k2)) * 2 + int(o1)) * 2 + int(o2)


def decode_observation(config: GridConfig, index: int, step_count: int = 0) -> GridState:
    """Inverse of :func:`encode_observation` for the global (``agent=None``) ordering."""
    if not 0 <= index < config.n_observations:
        raise ValueError("observation index out of range")
    w, n = config.width, config.n_cells
    index, o2 = divmod(index, 2)
    index, o1 = divmod(index, 2)
    index, k2 = divmod(index, 2)
    index, k1 = divmod(index, 2)
    p1, p2 = divmod(index, n)
    return GridState((divmod(p1, w), divmod(p2, w)), (bool(k1), bool(k2)), (bool(o1), bool(o2)), step_count)


def write_trajectory_csv(path, records) -> None:
    """``records``: iterable of ``(state_before, a1, a2, StepResult)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "pos1_row", "pos1_col", "pos2_row", "pos2_col", "a1", "a2",
                    "shared", "private1", "private2"])
        for before, a1, a2, res in records:
            (r1, c1), (r2, c2) = before.agent_pos
            w.writerow([before.step_count, r1, c1, r2, c2, a1, a2,
                        repr(res.shared), repr(res.private[0]), repr(res.private[1])])
