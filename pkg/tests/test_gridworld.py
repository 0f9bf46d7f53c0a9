import numpy as np
import pytest
from hypothesis import given, strategies as st

from saic.gridworld import (GridSpec, Move, goal_neighbours, is_terminal, manhattan_to_goal,
                            non_goal_cells, reset, reward_of, step, transition, transition_table)

SPEC4 = GridSpec(n=4, goal=15)


def test_up_moves_one_row():
    assert transition(4, Move.UP, SPEC4) == 8


def test_off_grid_move_stays():
    assert transition(0, Move.DOWN, SPEC4) == 0
    assert transition(0, Move.LEFT, SPEC4) == 0
    assert transition(15, Move.UP, SPEC4) == 15
    assert transition(3, Move.RIGHT, SPEC4) == 3


def test_stop_is_identity():
    assert transition(7, Move.STOP, SPEC4) == 7


def test_both_onto_goal_pays_large_reward():
    (n1, n2), r, term = step((14, 11), Move.RIGHT, Move.UP, SPEC4)
    assert (n1, n2, r, term) == (15, 15, 10.0, True)


def test_one_onto_goal_pays_small_reward():
    _, r, term = step((14, 0), Move.RIGHT, Move.UP, SPEC4)
    assert (r, term) == (1.0, True)


def test_no_goal_no_reward():
    nxt, r, term = step((0, 1), Move.UP, Move.UP, SPEC4)
    assert nxt == (4, 5) and r == 0.0 and not term


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(n=1, goal=0)
    with pytest.raises(ValueError):
        GridSpec(n=4, goal=16)
    with pytest.raises(ValueError):
        GridSpec(n=4, goal=3, reward_small=10, reward_large=1)
    with pytest.raises(ValueError):
        transition(16, Move.UP, SPEC4)


def test_from_config():
    spec = GridSpec.from_config({"grid_size": "5", "goal_cell": "7", "reward_large": "20"})
    assert spec == GridSpec(n=5, goal=7, reward_small=1.0, reward_large=20.0)


def test_transition_table_matches_function():
    spec = GridSpec(n=5, goal=3)
    table = transition_table(spec)
    for o in range(spec.n_cells):
        for m in Move:
            assert table[o, m] == transition(o, m, spec)


def test_reset_small_grid_support():
    spec = GridSpec(n=2, goal=3)
    rng = np.random.default_rng(0)
    seen = {reset(rng, spec) for _ in range(2000)}
    assert {a for a, _ in seen} == {0, 1, 2}
    assert {b for _, b in seen} == {0, 1, 2}


def test_reset_uniformity_chi_square():
    # critical value of chi-square with 62 dof at the 0.01 level
    spec = GridSpec(n=8, goal=22)
    rng = np.random.default_rng(123)
    draws = np.array([reset(rng, spec) for _ in range(100_000)])
    assert not (draws == spec.goal).any()
    crit = 92.01
    for comp in range(2):
        counts = np.bincount(draws[:, comp], minlength=64)[non_goal_cells(spec)]
        expected = len(draws) / 63
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < crit


def test_manhattan_and_neighbours():
    spec = GridSpec(n=8, goal=22)
    d = manhattan_to_goal(spec)
    assert d[22] == 0 and d[0] == 2 + 6 and d[63] == 5 + 1
    assert goal_neighbours(spec) == [14, 21, 23, 30]
    assert goal_neighbours(GridSpec(n=4, goal=0)) == [1, 4]


grids = st.builds(lambda n, g: GridSpec(n=n, goal=g % (n * n)),
                  st.integers(2, 9), st.integers(0, 80))


@given(grids, st.integers(0, 80), st.sampled_from(list(Move)))
def test_transition_stays_on_grid(spec, o, m):
    o %= spec.n_cells
    assert 0 <= transition(o, m, spec) < spec.n_cells


@given(grids, st.integers(0, 80))
def test_unclamped_moves_reverse(spec, o):
    o %= spec.n_cells
    for fwd, back in ((Move.UP, Move.DOWN), (Move.DOWN, Move.UP),
                      (Move.LEFT, Move.RIGHT), (Move.RIGHT, Move.LEFT)):
        nxt = transition(o, fwd, spec)
        if nxt != o:
            assert transition(nxt, back, spec) == o


@given(grids, st.integers(0, 80), st.integers(0, 80),
       st.sampled_from(list(Move)), st.sampled_from(list(Move)))
def test_reward_and_termination_agree(spec, o1, o2, m1, m2):
    o1 %= spec.n_cells
    o2 %= spec.n_cells
    nxt, r, term = step((o1, o2), m1, m2, spec)
    assert r in (0.0, spec.reward_small, spec.reward_large)
    assert term == (r > 0) == is_terminal(*nxt, spec)
    assert r == reward_of(*nxt, spec)
    assert step((o1, o2), m1, m2, spec) == (nxt, r, term)
