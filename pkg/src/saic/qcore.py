"""Tabular Q-learning (centralized and per-agent), UCB exploration and a
value-iteration oracle for the rendezvous task.

The inner training loops are compiled with numba; everything else is numpy.
Tables are plain ndarrays:

* central Q: ``(n_cells, n_cells, 5, 5)`` indexed ``[o1, o2, m1, m2]``
* agent Q:   ``(n_cells, n_msgs, 5)`` indexed ``[o, msg_from_other, m]``
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .gridworld import N_MOVES, GridSpec, transition_table

STANDARD = 0
OPTIMISTIC = 1
UPDATE_RULES = {"standard": STANDARD, "optimistic": OPTIMISTIC}


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    alpha: float = 0.07
    ucb_c: float = 12.5
    episodes: int = 200_000
    horizon: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.ucb_c < 0:
            raise ValueError("ucb_c must be non-negative")
        if self.episodes < 1 or self.horizon < 1:
            raise ValueError("episodes and horizon must be positive")

    @classmethod
    def from_config(cls, cfg: dict) -> "TrainConfig":
        kw = {}
        for key, cast in (("gamma", float), ("alpha", float), ("ucb_c", float),
                          ("episodes", int), ("horizon", int), ("seed", int)):
            if key in cfg:
                kw[key] = cast(cfg[key])
        return cls(**kw)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class RunRecord:
    """Per-episode training metrics: discounted return and episode length."""

    returns: np.ndarray
    lengths: np.ndarray

    def __len__(self):
        return len(self.returns)

    def smoothed(self, window: int) -> np.ndarray:
        from .harness import smooth

        return smooth(self.returns, window)

    def concat(self, other: "RunRecord") -> "RunRecord":
        return RunRecord(np.concatenate([self.returns, other.returns]),
                         np.concatenate([self.lengths, other.lengths]))


# --------------------------------------------------------------------------
# single-step primitives


@numba.njit(cache=True)
def _ucb_pick(q_row, n_row, total, c):
    for a in range(q_row.shape[0]):
        if n_row[a] == 0:
            return a
    best = -1
    best_score = -np.inf
    log_total = math.log(total) if total > 0 else 0.0
    for a in range(q_row.shape[0]):
        score = q_row[a] + c * math.sqrt(log_total / n_row[a])
        if score > best_score:
            best_score = score
            best = a
    return best


@numba.njit(cache=True)
def _ucb_pick_random(q_row, n_row, total, c):
    # same rule, ties resolved uniformly at random (needs a seeded numba RNG)
    n_act = q_row.shape[0]
    n_unvisited = 0
    for a in range(n_act):
        if n_row[a] == 0:
            n_unvisited += 1
    if n_unvisited > 0:
        pick = np.random.randint(0, n_unvisited)
        for a in range(n_act):
            if n_row[a] == 0:
                if pick == 0:
                    return a
                pick -= 1
    log_total = math.log(total) if total > 0 else 0.0
    best_score = -np.inf
    n_best = 0
    best = -1
    for a in range(n_act):
        score = q_row[a] + c * math.sqrt(log_total / n_row[a])
        if score > best_score:
            best_score = score
            best = a
            n_best = 1
        elif score == best_score:
            n_best += 1
            # reservoir sampling over the tied maxima
            if np.random.randint(0, n_best) == 0:
                best = a
    return best


def ucb_select(q_row, n_row, total_visits, ucb_c) -> int:
    """UCB1 action choice.

    Unvisited actions come first (lowest index); otherwise the argmax of
    ``q + c * sqrt(ln(total) / n)`` with ties going to the lowest index.
    """
    q_row = np.asarray(q_row, dtype=np.float64)
    n_row = np.asarray(n_row, dtype=np.int64)
    if q_row.shape != n_row.shape or q_row.size == 0:
        raise ValueError("q_row and n_row must be non-empty and equally sized")
    return int(_ucb_pick(q_row, n_row, int(total_visits), float(ucb_c)))


def q_update(table, state, action, reward, next_state, terminal, cfg: TrainConfig) -> float:
    """One-step Q-learning on ``table[state][action]``; returns the new entry.

    ``state`` and ``next_state`` may be tuples indexing the leading axes; the
    trailing axes of ``table[next_state]`` are the action axes.
    """
    boot = 0.0 if terminal else float(np.max(table[next_state]))
    old = table[state][action]
    new = old + cfg.alpha * (reward + cfg.gamma * boot - old)
    table[state][action] = new
    return float(new)


def optimistic_q_update(table, state, action, reward, next_state, terminal, gamma) -> float:
    """Max-based update for deterministic cooperative MMDPs: Q never decreases."""
    boot = 0.0 if terminal else float(np.max(table[next_state]))
    new = max(table[state][action], reward + gamma * boot)
    table[state][action] = new
    return float(new)


# --------------------------------------------------------------------------
# training kernels


@numba.njit(cache=True)
def _train_joint(trans, goal, r_small, r_large, gamma, alpha, c,
                 episodes, horizon, seed, map1, map2, k2, q, cnt, tot, returns, lengths):
    # one learner choosing both moves; its state is (map1[o1], map2[o2])
    np.random.seed(seed)
    n_cells = trans.shape[0]
    for k in range(episodes):
        o1 = np.random.randint(0, n_cells - 1)
        o1 += o1 >= goal
        o2 = np.random.randint(0, n_cells - 1)
        o2 += o2 >= goal
        g = 0.0
        disc = 1.0
        t = 0
        while t < horizon:
            s = map1[o1] * k2 + map2[o2]
            a = _ucb_pick(q[s], cnt[s], tot[s], c)
            cnt[s, a] += 1
            tot[s] += 1
            o1 = trans[o1, a // 5]
            o2 = trans[o2, a % 5]
            hits = (o1 == goal) + (o2 == goal)
            r = 0.0
            if hits == 2:
                r = r_large
            elif hits == 1:
                r = r_small
            t += 1
            g += disc * r
            disc *= gamma
            if hits > 0:
                q[s, a] += alpha * (r - q[s, a])
                break
            s2 = map1[o1] * k2 + map2[o2]
            q[s, a] += alpha * (r + gamma * np.max(q[s2]) - q[s, a])
        returns[k] = g
        lengths[k] = t


def _run_joint(spec, cfg, map1, map2, q):
    k1 = int(map1.max()) + 1
    k2 = int(map2.max()) + 1
    qf = np.zeros((k1 * k2, N_MOVES * N_MOVES)) if q is None else \
        np.array(q, dtype=np.float64).reshape(k1 * k2, N_MOVES * N_MOVES)
    cnt = np.zeros(qf.shape, dtype=np.int64)
    tot = np.zeros(k1 * k2, dtype=np.int64)
    returns = np.zeros(cfg.episodes)
    lengths = np.zeros(cfg.episodes, dtype=np.int64)
    _train_joint(transition_table(spec), spec.goal, spec.reward_small, spec.reward_large,
                 cfg.gamma, cfg.alpha, cfg.ucb_c, cfg.episodes, cfg.horizon, cfg.seed,
                 map1, map2, k2, qf, cnt, tot, returns, lengths)
    return qf.reshape(k1, k2, N_MOVES, N_MOVES), cnt.reshape(k1, k2, -1).sum(axis=-1), \
        RunRecord(returns, lengths)


def train_centralized(spec: GridSpec, cfg: TrainConfig, q=None, return_visits: bool = False):
    """Q-learning over the joint state with the 25 joint moves as actions.

    Returns the ``(n, n, 5, 5)`` table and the training ``RunRecord``; with
    ``return_visits`` also the ``(n, n)`` joint-state visit counts.  An
    existing table may be passed in to continue training (it is copied).
    """
    ident = np.arange(spec.n_cells, dtype=np.int64)
    q, visits, rec = _run_joint(spec, cfg, ident, ident, q)
    return (q, rec, visits) if return_visits else (q, rec)


def train_joint_on_messages(spec: GridSpec, comm1, comm2, cfg: TrainConfig, q=None):
    """A central controller that only sees the two agents' messages.

    Same learner as :func:`train_centralized` with state ``(msg1, msg2)``;
    returns a ``(k1, k2, 5, 5)`` table and the ``RunRecord``.
    """
    q, _, rec = _run_joint(spec, cfg, _msg_table(comm1, spec), _msg_table(comm2, spec), q)
    return q, rec


@numba.njit(cache=True)
def _agent_update(q, o, c, m, r, o_next, c_next, terminal, gamma, alpha, rule):
    target = r
    if not terminal:
        target += gamma * np.max(q[o_next, c_next])
    if rule == 1:
        if target > q[o, c, m]:
            q[o, c, m] = target
    else:
        q[o, c, m] += alpha * (target - q[o, c, m])


@numba.njit(cache=True)
def _train_distributed(trans, goal, r_small, r_large, gamma, alpha, c,
                       episodes, horizon, seed, comm1, comm2, rule, random_ties,
                       q1, q2, n1, n2, t1, t2, returns, lengths):
    np.random.seed(seed)
    n_cells = trans.shape[0]
    for k in range(episodes):
        o1 = np.random.randint(0, n_cells - 1)
        o1 += o1 >= goal
        o2 = np.random.randint(0, n_cells - 1)
        o2 += o2 >= goal
        g = 0.0
        disc = 1.0
        t = 0
        while t < horizon:
            # messages are exchanged before moves are chosen
            c1 = comm1[o1]
            c2 = comm2[o2]
            if random_ties:
                m1 = _ucb_pick_random(q1[o1, c2], n1[o1, c2], t1[o1, c2], c)
                m2 = _ucb_pick_random(q2[o2, c1], n2[o2, c1], t2[o2, c1], c)
            else:
                m1 = _ucb_pick(q1[o1, c2], n1[o1, c2], t1[o1, c2], c)
                m2 = _ucb_pick(q2[o2, c1], n2[o2, c1], t2[o2, c1], c)
            n1[o1, c2, m1] += 1
            t1[o1, c2] += 1
            n2[o2, c1, m2] += 1
            t2[o2, c1] += 1
            p1 = trans[o1, m1]
            p2 = trans[o2, m2]
            hits = (p1 == goal) + (p2 == goal)
            r = 0.0
            if hits == 2:
                r = r_large
            elif hits == 1:
                r = r_small
            term = hits > 0
            _agent_update(q1, o1, c2, m1, r, p1, comm2[p2], term, gamma, alpha, rule)
            _agent_update(q2, o2, c1, m2, r, p2, comm1[p1], term, gamma, alpha, rule)
            o1 = p1
            o2 = p2
            t += 1
            g += disc * r
            disc *= gamma
            if term:
                break
        returns[k] = g
        lengths[k] = t


def train_distributed(spec: GridSpec, comm1, comm2, cfg: TrainConfig, rule: str = "optimistic",
                      q1=None, q2=None, random_ties: bool = True):
    """Independent per-agent learners, each seeing its own cell and the other's message.

    ``comm1``/``comm2`` are the message tables (or ``CommPolicy`` objects) of
    agent 1 and agent 2.  Returns ``(q1, q2, RunRecord)``.
    """
    m1 = _msg_table(comm1, spec)
    m2 = _msg_table(comm2, spec)
    nc = spec.n_cells
    k1 = int(m1.max()) + 1
    k2 = int(m2.max()) + 1
    # agent 1 conditions on agent 2's messages and vice versa
    q1 = np.zeros((nc, k2, N_MOVES)) if q1 is None else np.array(q1, dtype=np.float64)
    q2 = np.zeros((nc, k1, N_MOVES)) if q2 is None else np.array(q2, dtype=np.float64)
    n1 = np.zeros(q1.shape, dtype=np.int64)
    n2 = np.zeros(q2.shape, dtype=np.int64)
    t1 = np.zeros(q1.shape[:2], dtype=np.int64)
    t2 = np.zeros(q2.shape[:2], dtype=np.int64)
    returns = np.zeros(cfg.episodes)
    lengths = np.zeros(cfg.episodes, dtype=np.int64)
    _train_distributed(transition_table(spec), spec.goal, spec.reward_small, spec.reward_large,
                       cfg.gamma, cfg.alpha, cfg.ucb_c, cfg.episodes, cfg.horizon, cfg.seed,
                       m1, m2, UPDATE_RULES[rule], random_ties, q1, q2, n1, n2, t1, t2, returns, lengths)
    return q1, q2, RunRecord(returns, lengths)


def _msg_table(comm, spec: GridSpec) -> np.ndarray:
    table = getattr(comm, "table", comm)
    table = np.ascontiguousarray(table, dtype=np.int64)
    if table.shape != (spec.n_cells,):
        raise ValueError(f"message table must have one entry per cell ({spec.n_cells})")
    if table.min() < 0:
        raise ValueError("negative message id")
    return table


@numba.njit(cache=True)
def _train_lbic(trans, goal, r_small, r_large, gamma, alpha, c, episodes, horizon, seed, rule,
                qc1, qc2, nc1, nc2, tc1, tc2, qm1, qm2, nm1, nm2, tm1, tm2, returns, lengths):
    np.random.seed(seed)
    n_cells = trans.shape[0]
    for k in range(episodes):
        o1 = np.random.randint(0, n_cells - 1)
        o1 += o1 >= goal
        o2 = np.random.randint(0, n_cells - 1)
        o2 += o2 >= goal
        c1 = _ucb_pick_random(qc1[o1], nc1[o1], tc1[o1], c)
        c2 = _ucb_pick_random(qc2[o2], nc2[o2], tc2[o2], c)
        g = 0.0
        disc = 1.0
        t = 0
        while t < horizon:
            nc1[o1, c1] += 1
            tc1[o1] += 1
            nc2[o2, c2] += 1
            tc2[o2] += 1
            m1 = _ucb_pick_random(qm1[o1, c2], nm1[o1, c2], tm1[o1, c2], c)
            m2 = _ucb_pick_random(qm2[o2, c1], nm2[o2, c1], tm2[o2, c1], c)
            nm1[o1, c2, m1] += 1
            tm1[o1, c2] += 1
            nm2[o2, c1, m2] += 1
            tm2[o2, c1] += 1
            p1 = trans[o1, m1]
            p2 = trans[o2, m2]
            hits = (p1 == goal) + (p2 == goal)
            r = 0.0
            if hits == 2:
                r = r_large
            elif hits == 1:
                r = r_small
            term = hits > 0
            # next messages are needed before the move tables can bootstrap
            d1 = 0
            d2 = 0
            if not term:
                d1 = _ucb_pick_random(qc1[p1], nc1[p1], tc1[p1], c)
                d2 = _ucb_pick_random(qc2[p2], nc2[p2], tc2[p2], c)
            _agent_update(qm1, o1, c2, m1, r, p1, d2, term, gamma, alpha, rule)
            _agent_update(qm2, o2, c1, m2, r, p2, d1, term, gamma, alpha, rule)
            # message tables chase the same team return, bootstrapped on the sender's next cell
            _comm_update(qc1, o1, c1, r, p1, term, gamma, alpha, rule)
            _comm_update(qc2, o2, c2, r, p2, term, gamma, alpha, rule)
            o1 = p1
            o2 = p2
            c1 = d1
            c2 = d2
            t += 1
            g += disc * r
            disc *= gamma
            if term:
                break
        returns[k] = g
        lengths[k] = t


@numba.njit(cache=True)
def _comm_update(q, o, c, r, o_next, terminal, gamma, alpha, rule):
    target = r
    if not terminal:
        target += gamma * np.max(q[o_next])
    if rule == 1:
        if target > q[o, c]:
            q[o, c] = target
    else:
        q[o, c] += alpha * (target - q[o, c])


def train_lbic(spec: GridSpec, rate_bits: int, cfg: TrainConfig, rule: str = "optimistic"):
    """Joint learning of messages and moves, per agent.

    Each agent keeps a message table ``qc[o, msg]`` and a move table
    ``qm[o, msg_from_other, m]``.  Messages are picked by UCB before moves
    each step and both tables learn from the shared team reward.  Returns
    ``(qc1, qc2, qm1, qm2, RunRecord)``.
    """
    nc = spec.n_cells
    k = 2 ** rate_bits
    qc = [np.zeros((nc, k)) for _ in range(2)]
    ncnt = [np.zeros((nc, k), dtype=np.int64) for _ in range(2)]
    tc = [np.zeros(nc, dtype=np.int64) for _ in range(2)]
    qm = [np.zeros((nc, k, N_MOVES)) for _ in range(2)]
    nm = [np.zeros((nc, k, N_MOVES), dtype=np.int64) for _ in range(2)]
    tm = [np.zeros((nc, k), dtype=np.int64) for _ in range(2)]
    returns = np.zeros(cfg.episodes)
    lengths = np.zeros(cfg.episodes, dtype=np.int64)
    _train_lbic(transition_table(spec), spec.goal, spec.reward_small, spec.reward_large,
                cfg.gamma, cfg.alpha, cfg.ucb_c, cfg.episodes, cfg.horizon, cfg.seed,
                UPDATE_RULES[rule], qc[0], qc[1], ncnt[0], ncnt[1], tc[0], tc[1],
                qm[0], qm[1], nm[0], nm[1], tm[0], tm[1], returns, lengths)
    return qc[0], qc[1], qm[0], qm[1], RunRecord(returns, lengths)


# --------------------------------------------------------------------------
# exact planning


def value_iteration(spec: GridSpec, gamma: float, tol: float = 1e-10, max_iter: int = 10_000):
    """Bellman-optimal joint values ``V[o1, o2]`` and a greedy joint policy.

    States where either agent is on the goal are terminal and keep value 0.
    The policy array has shape ``(n, n, 2)`` holding ``(m1, m2)``; ties go to
    the lowest joint index ``m1 * 5 + m2``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = _joint_backup_tables(spec)
    nxt, rew, term = q
    nc = spec.n_cells
    v = np.zeros(nc * nc)
    live = ~_terminal_mask(spec).ravel()
    for _ in range(max_iter):
        qsa = rew + gamma * np.where(term, 0.0, v[nxt])
        v_new = np.where(live, qsa.max(axis=1), 0.0)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol:
            break
    qsa = rew + gamma * np.where(term, 0.0, v[nxt])
    qsa[~live] = 0.0
    best = qsa.argmax(axis=1)
    policy = np.stack([best // N_MOVES, best % N_MOVES], axis=-1).reshape(nc, nc, 2)
    return v.reshape(nc, nc), policy, qsa.reshape(nc, nc, N_MOVES, N_MOVES)


def _terminal_mask(spec: GridSpec) -> np.ndarray:
    cells = np.arange(spec.n_cells)
    at_goal = cells == spec.goal
    return at_goal[:, None] | at_goal[None, :]


def _joint_backup_tables(spec: GridSpec):
    """Next joint-state index, reward and terminal flag for every (state, joint move)."""
    trans = transition_table(spec)
    nc = spec.n_cells
    o1 = np.repeat(np.arange(nc), nc)
    o2 = np.tile(np.arange(nc), nc)
    a = np.arange(N_MOVES * N_MOVES)
    p1 = trans[o1[:, None], (a // N_MOVES)[None, :]]
    p2 = trans[o2[:, None], (a % N_MOVES)[None, :]]
    hits = (p1 == spec.goal).astype(int) + (p2 == spec.goal)
    rew = np.select([hits == 2, hits == 1], [spec.reward_large, spec.reward_small], 0.0)
    return p1 * nc + p2, rew, hits > 0


def greedy_value(q: np.ndarray) -> np.ndarray:
    """``V[o1, o2] = max`` over the joint moves of a central Q-table."""
    q = np.asarray(q)
    return q.reshape(q.shape[0], q.shape[1], -1).max(axis=-1)


def greedy_central_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic ``(m1, m2)`` per joint state, lowest joint index on ties."""
    flat = q.reshape(q.shape[0], q.shape[1], -1)
    best = flat.argmax(axis=-1)
    return np.stack([best // N_MOVES, best % N_MOVES], axis=-1)


def greedy_agent_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic move per ``(o, msg)`` from an agent table."""
    return q.argmax(axis=-1)


# --------------------------------------------------------------------------
# persistence


def save_table(path, q: np.ndarray, gamma: float, seed: int, kind: str = "central") -> None:
    """Write a Q-table as ``.npz`` with a small header (kind, dims, gamma, seed)."""
    np.savez(path, q=q, dims=np.array(q.shape, dtype=np.int64), gamma=np.float64(gamma),
             seed=np.int64(seed), kind=np.array(kind))


def load_table(path):
    with np.load(path) as z:
        q = z["q"]
        if tuple(z["dims"]) != q.shape:
            raise ValueError(f"{path}: header dims {tuple(z['dims'])} disagree with table {q.shape}")
        return q, {"gamma": float(z["gamma"]), "seed": int(z["seed"]), "kind": str(z["kind"])}
