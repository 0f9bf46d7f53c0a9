"""Two-agent rendezvous grid world.

Cells are numbered row-major starting from the bottom-left corner, so on a
4x4 grid cell 4 sits directly below cell 8.  Transitions are deterministic;
moves that would leave the grid keep the agent where it is.  The episode
ends as soon as one or both agents enter the goal cell.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Move(enum.IntEnum):
    RIGHT = 0
    LEFT = 1
    UP = 2
    DOWN = 3
    STOP = 4


N_MOVES = len(Move)

# (drow, dcol) per move, indexed by Move value
_DELTAS = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (0, 0)], dtype=np.int64)


@dataclass(frozen=True)
class GridSpec:
    n: int = 8
    goal: int = 22
    reward_small: float = 1.0
    reward_large: float = 10.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid side must be >= 2, got {self.n}")
        if not 0 <= self.goal < self.n * self.n:
            raise ValueError(f"goal cell {self.goal} outside a {self.n}x{self.n} grid")
        if not 0 < self.reward_small < self.reward_large:
            raise ValueError("need 0 < reward_small < reward_large")

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @classmethod
    def from_config(cls, cfg: dict) -> "GridSpec":
        """Build from harness config keys (grid_size, goal_cell, reward_small, reward_large)."""
        kw = {}
        if "grid_size" in cfg:
            kw["n"] = int(cfg["grid_size"])
        if "goal_cell" in cfg:
            kw["goal"] = int(cfg["goal_cell"])
        if "reward_small" in cfg:
            kw["reward_small"] = float(cfg["reward_small"])
        if "reward_large" in cfg:
            kw["reward_large"] = float(cfg["reward_large"])
        return cls(**kw)


def coords(o: int, n: int) -> tuple[int, int]:
    """(row, col) of a cell, row 0 at the bottom."""
    return divmod(o, n)


def transition(o: int, m: Move | int, spec: GridSpec) -> int:
    if not 0 <= o < spec.n_cells:
        raise ValueError(f"cell {o} outside grid")
    row, col = divmod(o, spec.n)
    dr, dc = _DELTAS[int(m)]
    r2, c2 = row + dr, col + dc
    if 0 <= r2 < spec.n and 0 <= c2 < spec.n:
        return int(r2 * spec.n + c2)
    return o


def transition_table(spec: GridSpec) -> np.ndarray:
    """Dense next-cell lookup, shape (n_cells, N_MOVES)."""
    table = np.empty((spec.n_cells, N_MOVES), dtype=np.int64)
    for o in range(spec.n_cells):
        for m in Move:
            table[o, m] = transition(o, m, spec)
    return table


def reward_of(o1: int, o2: int, spec: GridSpec) -> float:
    """Team reward for landing in the joint cell (o1, o2)."""
    hits = (o1 == spec.goal) + (o2 == spec.goal)
    if hits == 2:
        return spec.reward_large
    if hits == 1:
        return spec.reward_small
    return 0.0


def is_terminal(o1: int, o2: int, spec: GridSpec) -> bool:
    return o1 == spec.goal or o2 == spec.goal


def step(s: tuple[int, int], m1, m2, spec: GridSpec) -> tuple[tuple[int, int], float, bool]:
    n1 = transition(s[0], m1, spec)
    n2 = transition(s[1], m2, spec)
    r = reward_of(n1, n2, spec)
    return (n1, n2), r, r > 0


def non_goal_cells(spec: GridSpec) -> np.ndarray:
    cells = np.arange(spec.n_cells)
    return cells[cells != spec.goal]


def reset(rng: np.random.Generator, spec: GridSpec) -> tuple[int, int]:
    """Draw both agents independently and uniformly from the non-goal cells."""
    # sample from n_cells - 1 slots and shift past the goal
    a, b = rng.integers(0, spec.n_cells - 1, size=2)
    a += a >= spec.goal
    b += b >= spec.goal
    return int(a), int(b)


def manhattan_to_goal(spec: GridSpec) -> np.ndarray:
    """Shortest-path length (in moves) from each cell to the goal."""
    rows, cols = np.divmod(np.arange(spec.n_cells), spec.n)
    gr, gc = divmod(spec.goal, spec.n)
    return np.abs(rows - gr) + np.abs(cols - gc)


def goal_neighbours(spec: GridSpec) -> list[int]:
    """In-grid cells one move away from the goal, ascending."""
    return sorted({transition(spec.goal, m, spec) for m in Move} - {spec.goal})
