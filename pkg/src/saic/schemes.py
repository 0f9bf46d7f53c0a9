"""End-to-end schemes for the rendezvous task.

Every scheme returns a :class:`SchemeResult` whose headline number is the
exact expected discounted return of its final greedy policies, averaged over
all start pairs, and the same number divided by the centralized optimum.

Registered names: ``centralized``, ``saic``, ``cic``, ``lbic``, ``nocomm``,
``hybrid``, ``hnc``, ``hoc``.
"""
from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import aggregation as agg
from . import qcore
from .gridworld import N_MOVES, GridSpec, Move, goal_neighbours, transition_table
from .qcore import RunRecord, TrainConfig


# --------------------------------------------------------------------------
# messages and the channel


@dataclass(frozen=True)
class CommPolicy:
    """Deterministic observation -> message map for an ``rate``-bit channel."""

    table: np.ndarray
    rate: int

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        object.__setattr__(self, "table", t)
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        Channel(self.rate).check(t)

    def __call__(self, o):
        return self.table[o]

    @property
    def n_messages(self) -> int:
        return int(self.table.max()) + 1

    @classmethod
    def from_partition(cls, partition: agg.Partition, rate: int) -> "CommPolicy":
        return cls(partition.assignment, rate)

    @classmethod
    def identity(cls, spec: GridSpec) -> "CommPolicy":
        return cls(np.arange(spec.n_cells), lossless_rate(spec))

    @classmethod
    def constant(cls, spec: GridSpec) -> "CommPolicy":
        return cls(np.zeros(spec.n_cells, dtype=np.int64), 0)


def comm_policy_from_partition(partition: agg.Partition, rate: int | None = None) -> CommPolicy:
    if rate is None:
        rate = max(0, math.ceil(math.log2(partition.k)))
    return CommPolicy.from_partition(partition, rate)


class Channel:
    """Error-free, instantaneous bit pipe carrying ``rate`` bits per step."""

    def __init__(self, rate: int):
        if rate < 0:
            raise ValueError("rate must be non-negative")
        self.rate = rate

    @property
    def capacity(self) -> int:
        return 2 ** self.rate

    def check(self, messages) -> None:
        m = np.asarray(messages)
        if m.size and (m.min() < 0 or m.max() >= self.capacity):
            raise ValueError(f"message outside [0, {self.capacity - 1}] for a {self.rate}-bit channel")

    def send(self, message: int) -> int:
        self.check(message)
        return int(message)


def lossless_rate(spec: GridSpec) -> int:
    return math.ceil(math.log2(spec.n_cells))


# --------------------------------------------------------------------------
# execution policies


class TablePolicy:
    """Joint moves looked up per joint state, shape ``(n, n, 2)``."""

    def __init__(self, table):
        self.table = np.asarray(table)

    def moves(self, o1, o2, t):
        m = self.table[o1, o2]
        return m[..., 0], m[..., 1]


class DistributedPolicy:
    """Each agent acts on (own cell, message from the other)."""

    def __init__(self, pi1, pi2, comm1: CommPolicy, comm2: CommPolicy):
        self.pi1, self.pi2 = np.asarray(pi1), np.asarray(pi2)
        self.comm1, self.comm2 = comm1, comm2

    @classmethod
    def from_tables(cls, q1, q2, comm1, comm2):
        return cls(qcore.greedy_agent_policy(q1), qcore.greedy_agent_policy(q2), comm1, comm2)

    def moves(self, o1, o2, t):
        return self.pi1[o1, self.comm2(o2)], self.pi2[o2, self.comm1(o1)]


class MessageControllerPolicy:
    """A central controller that sees only the pair of messages."""

    def __init__(self, q, comm1: CommPolicy, comm2: CommPolicy):
        flat = np.asarray(q).reshape(q.shape[0], q.shape[1], -1).argmax(axis=-1)
        self.joint = flat
        self.comm1, self.comm2 = comm1, comm2

    def moves(self, o1, o2, t):
        a = self.joint[self.comm1(o1), self.comm2(o2)]
        return a // N_MOVES, a % N_MOVES


def _route_table(spec: GridSpec, target: int) -> np.ndarray:
    """Next move from every cell along a shortest path to ``target`` that never
    enters the goal (BFS on the grid with the goal removed)."""
    trans = transition_table(spec)
    dist = np.full(spec.n_cells, -1)
    dist[target] = 0
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for m in Move:
            w = int(trans[u, m])
            if w != spec.goal and dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    route = np.full(spec.n_cells, int(Move.STOP))
    for o in range(spec.n_cells):
        if o == target or o == spec.goal:
            continue
        for m in Move:
            w = int(trans[o, m])
            if w != spec.goal and dist[w] == dist[o] - 1:
                route[o] = int(m)
                break
    return route


def waiting_cells(spec: GridSpec) -> tuple[int, int]:
    """Agent 1 waits on the lowest-index goal neighbour, agent 2 on the next."""
    nb = goal_neighbours(spec)
    return nb[0], nb[1]


def _enter_move(spec: GridSpec, cell: int) -> int:
    trans = transition_table(spec)
    return next(int(m) for m in Move if trans[cell, m] == spec.goal)


class _WaitingScript:
    def __init__(self, spec: GridSpec):
        self.w1, self.w2 = waiting_cells(spec)
        self.route1 = _route_table(spec, self.w1)
        self.route2 = _route_table(spec, self.w2)
        self.enter1 = _enter_move(spec, self.w1)
        self.enter2 = _enter_move(spec, self.w2)


class HNCPolicy(_WaitingScript):
    """Walk to the waiting cell, then step in once ``wait`` steps have passed.

    Both agents share a clock agreed before the episode, so with ``wait`` at
    least the longest approach they always enter together at step wait + 1.
    """

    def __init__(self, spec: GridSpec, wait: int):
        super().__init__(spec)
        self.wait = wait

    def moves(self, o1, o2, t):
        go = t > self.wait  # t is the 1-based step about to be taken
        m1 = np.where(o1 == self.w1, self.enter1 if go else Move.STOP, self.route1[o1])
        m2 = np.where(o2 == self.w2, self.enter2 if go else Move.STOP, self.route2[o2])
        return m1, m2


class HOCPolicy(_WaitingScript):
    """Walk to the waiting cell, raise a one-bit flag, step in when both flags are up."""

    def __init__(self, spec: GridSpec):
        super().__init__(spec)
        flag1 = (np.arange(spec.n_cells) == self.w1).astype(np.int64)
        flag2 = (np.arange(spec.n_cells) == self.w2).astype(np.int64)
        self.comm1 = CommPolicy(flag1, 1)
        self.comm2 = CommPolicy(flag2, 1)

    def moves(self, o1, o2, t):
        f1, f2 = self.comm1(o1), self.comm2(o2)
        both = (f1 == 1) & (f2 == 1)
        m1 = np.where(f1 == 1, np.where(both, self.enter1, Move.STOP), self.route1[o1])
        m2 = np.where(f2 == 1, np.where(both, self.enter2, Move.STOP), self.route2[o2])
        return m1, m2


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    mean: float
    se: float
    returns: np.ndarray = field(repr=False)


def start_pairs(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    cells = np.flatnonzero(np.arange(spec.n_cells) != spec.goal)
    return np.repeat(cells, len(cells)), np.tile(cells, len(cells))


def rollout_returns(policy, spec: GridSpec, o1, o2, gamma: float, horizon: int) -> np.ndarray:
    """Discounted return of greedy rollouts from each start pair (vectorized)."""
    trans = transition_table(spec)
    o1 = np.array(o1, dtype=np.int64)
    o2 = np.array(o2, dtype=np.int64)
    g = np.zeros(len(o1))
    alive = np.ones(len(o1), dtype=bool)
    disc = 1.0
    for t in range(1, horizon + 1):
        m1, m2 = policy.moves(o1, o2, t)
        p1 = trans[o1, np.asarray(m1, dtype=np.int64)]
        p2 = trans[o2, np.asarray(m2, dtype=np.int64)]
        hits = (p1 == spec.goal).astype(np.int64) + (p2 == spec.goal)
        r = np.where(hits == 2, spec.reward_large, np.where(hits == 1, spec.reward_small, 0.0))
        g += np.where(alive, disc * r, 0.0)
        alive &= hits == 0
        if not alive.any():
            break
        o1 = np.where(alive, p1, o1)
        o2 = np.where(alive, p2, o2)
        disc *= gamma
    return g


def evaluate(policy, spec: GridSpec, episodes: int | None = None, gamma: float = 0.9,
             rng: np.random.Generator | None = None, horizon: int = 100) -> Evaluation:
    """Mean discounted return of exploration-free rollouts from uniform starts.

    With ``episodes=None`` every start pair is enumerated once, which is the
    exact expectation for a deterministic policy (standard error 0).
    Otherwise ``episodes`` start pairs are sampled with ``rng``.
    """
    if episodes is None:
        o1, o2 = start_pairs(spec)
        g = rollout_returns(policy, spec, o1, o2, gamma, horizon)
        return Evaluation(float(g.mean()), 0.0, g)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    draws = rng.integers(0, spec.n_cells - 1, size=(2, episodes))
    draws += draws >= spec.goal
    g = rollout_returns(policy, spec, draws[0], draws[1], gamma, horizon)
    se = float(g.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    return Evaluation(float(g.mean()), se, g)


@functools.lru_cache(maxsize=64)
def _oracle(spec: GridSpec, gamma: float, horizon: int):
    v, policy, _ = qcore.value_iteration(spec, gamma)
    return v, policy, evaluate(TablePolicy(policy), spec, None, gamma, horizon=horizon).mean


def centralized_optimum(spec: GridSpec, gamma: float, horizon: int = 100) -> float:
    """Exact expected return of the value-iteration policy: the normalizer."""
    return _oracle(spec, gamma, horizon)[2]


def oracle_values(spec: GridSpec, gamma: float) -> np.ndarray:
    return _oracle(spec, gamma, 100)[0]


# --------------------------------------------------------------------------
# results


@dataclass
class SchemeResult:
    scheme: str
    rate: int | None
    seed: int
    record: RunRecord | None
    mean_return: float
    normalized: float
    se: float = 0.0
    epsilon: float | None = None
    bound: float | None = None
    extras: dict = field(default_factory=dict, repr=False)

    def final_smoothed(self, window: int) -> float | None:
        if self.record is None or len(self.record) == 0:
            return None
        return float(self.record.smoothed(window)[-1])


def _result(name, rate, spec, cfg, record, policy, **kw) -> SchemeResult:
    ev = evaluate(policy, spec, None, cfg.gamma, horizon=cfg.horizon)
    opt = centralized_optimum(spec, cfg.gamma, cfg.horizon)
    extras = kw.pop("extras", {})
    extras["policy"] = policy
    return SchemeResult(name, rate, cfg.seed, record, ev.mean, ev.mean / opt, ev.se,
                        extras=extras, **kw)


def _seeds(seed: int, n: int) -> list[int]:
    # independent stream per training phase; stream 0 always drives the final
    # distributed phase, so schemes that coincide at R = 0 coincide exactly
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# --------------------------------------------------------------------------
# schemes


def run_centralized(spec: GridSpec, cfg: TrainConfig) -> SchemeResult:
    q, rec = qcore.train_centralized(spec, cfg)
    return _result("centralized", None, spec, cfg, rec,
                   TablePolicy(qcore.greedy_central_policy(q)), extras={"q": q})


def saic_partition(spec: GridSpec, q, rate: int, marginal: str = "reset", visits=None):
    """Value-based clustering of cells from a central Q-table.

    ``marginal`` selects the distribution of the other agent's cell used to
    marginalize the joint value: ``"reset"`` (uniform over non-goal cells) or
    ``"occupancy"`` (empirical visits during central training, needs ``visits``).
    Returns ``(values, partition)``.
    """
    if marginal == "reset":
        p = agg.reset_distribution(spec)
    elif marginal == "occupancy":
        if visits is None:
            raise ValueError("occupancy marginal needs the central visit counts")
        occ = np.asarray(visits, dtype=np.float64).sum(axis=0)
        p = occ / occ.sum()
    else:
        raise ValueError(f"unknown marginal {marginal!r}")
    values = agg.marginal_value(q, p)
    return values, agg.value_partition(values, rate)


def run_saic(spec: GridSpec, cfg: TrainConfig, rate: int, rule: str = "optimistic",
             marginal: str = "reset", central_q=None) -> SchemeResult:
    """Central Q-learning, value k-median aggregation to ``2**rate`` messages,
    then distributed Q-learning with the frozen message map."""
    s_dist, s_central = _seeds(cfg.seed, 2)
    visits = None
    rec_c = None
    if central_q is None:
        central_q, rec_c, visits = qcore.train_centralized(spec, cfg.replace(seed=s_central),
                                                          return_visits=True)
    values, part = saic_partition(spec, central_q, rate, marginal, visits)
    comm = CommPolicy.from_partition(part, rate)
    q1, q2, rec = qcore.train_distributed(spec, comm, comm, cfg.replace(seed=s_dist), rule)
    eps = agg.epsilon_of_partition(values, part)
    p_obs = agg.reset_distribution(spec)
    ratio = agg.compression_ratio(p_obs, agg.message_distribution(part.assignment, p_obs))
    return _result("saic", rate, spec, cfg, rec, DistributedPolicy.from_tables(q1, q2, comm, comm),
                   epsilon=eps, bound=agg.return_gap_bound(eps, cfg.gamma),
                   extras={"values": values, "partition": part, "comm": comm,
                           "central_q": central_q, "central_record": rec_c,
                           "q1": q1, "q2": q2, "ratio": ratio})


def run_distributed(spec: GridSpec, cfg: TrainConfig, comm1: CommPolicy, comm2: CommPolicy,
                    name: str = "distributed", rule: str = "optimistic") -> SchemeResult:
    q1, q2, rec = qcore.train_distributed(spec, comm1, comm2, cfg, rule)
    return _result(name, comm1.rate, spec, cfg, rec, DistributedPolicy.from_tables(q1, q2, comm1, comm2),
                   extras={"q1": q1, "q2": q2, "comm": comm1})


def run_nocomm(spec: GridSpec, cfg: TrainConfig, rule: str = "optimistic") -> SchemeResult:
    c = CommPolicy.constant(spec)
    (s_dist,) = _seeds(cfg.seed, 1)
    res = run_distributed(spec, cfg.replace(seed=s_dist), c, c, "nocomm", rule)
    res.seed, res.rate = cfg.seed, 0
    return res


def observation_distribution(policy, spec: GridSpec, horizon: int = 100) -> np.ndarray:
    """Empirical cell distribution seen along greedy rollouts from every start pair,
    pooled over both agents."""
    trans = transition_table(spec)
    o1, o2 = start_pairs(spec)
    counts = np.zeros(spec.n_cells)
    alive = np.ones(len(o1), dtype=bool)
    for t in range(1, horizon + 1):
        np.add.at(counts, o1[alive], 1.0)
        np.add.at(counts, o2[alive], 1.0)
        m1, m2 = policy.moves(o1, o2, t)
        p1 = trans[o1, np.asarray(m1, dtype=np.int64)]
        p2 = trans[o2, np.asarray(m2, dtype=np.int64)]
        alive &= (p1 != spec.goal) & (p2 != spec.goal)
        if not alive.any():
            break
        o1, o2 = p1, p2
    return counts / counts.sum()


def run_cic(spec: GridSpec, cfg: TrainConfig, rate: int, rule: str = "optimistic",
            lloyd_restarts: int = 10) -> SchemeResult:
    """Spatial (distortion-driven) compression baseline.

    1. distributed learning with full observations exchanged;
    2. weighted Lloyd quantization of grid coordinates into ``2**rate`` cells,
       weights being the phase-1 observation distribution;
    3. distributed learning from scratch with the quantized messages.
    """
    s3, s1, s_lloyd = _seeds(cfg.seed, 3)
    ident = CommPolicy.identity(spec)
    q1, q2, rec1 = qcore.train_distributed(spec, ident, ident, cfg.replace(seed=s1), rule)
    phase1 = DistributedPolicy.from_tables(q1, q2, ident, ident)
    p_obs = observation_distribution(phase1, spec, cfg.horizon)
    part = agg.lloyd_quantize(agg.grid_points(spec), p_obs, 2 ** rate,
                              np.random.default_rng(s_lloyd), restarts=lloyd_restarts)
    comm = CommPolicy.from_partition(part, rate)
    q1, q2, rec = qcore.train_distributed(spec, comm, comm, cfg.replace(seed=s3), rule)
    p_reset = agg.reset_distribution(spec)
    ratio = agg.compression_ratio(p_reset, agg.message_distribution(part.assignment, p_reset))
    return _result("cic", rate, spec, cfg, rec, DistributedPolicy.from_tables(q1, q2, comm, comm),
                   extras={"partition": part, "comm": comm, "obs_dist": p_obs,
                           "phase1_record": rec1, "phase1_policy": phase1, "ratio": ratio})


def run_lbic(spec: GridSpec, cfg: TrainConfig, rate: int, rule: str = "optimistic") -> SchemeResult:
    """Messages and moves learned together by each agent (see ``qcore.train_lbic``)."""
    qc1, qc2, qm1, qm2, rec = qcore.train_lbic(spec, rate, cfg, rule)
    comm1 = CommPolicy(qcore.greedy_agent_policy(qc1), rate)
    comm2 = CommPolicy(qcore.greedy_agent_policy(qc2), rate)
    return _result("lbic", rate, spec, cfg, rec, DistributedPolicy.from_tables(qm1, qm2, comm1, comm2),
                   extras={"comm1": comm1, "comm2": comm2})


def run_hybrid(spec: GridSpec, cfg: TrainConfig, rate: int, partition: agg.Partition | None = None,
               marginal: str = "reset") -> SchemeResult:
    """Central controller over the pair of SAIC messages (not the raw cells)."""
    s_ctrl, s_central = _seeds(cfg.seed, 2)
    if partition is None:
        q, _, visits = qcore.train_centralized(spec, cfg.replace(seed=s_central), return_visits=True)
        _, partition = saic_partition(spec, q, rate, marginal, visits)
    comm = CommPolicy.from_partition(partition, rate)
    q, rec = qcore.train_joint_on_messages(spec, comm, comm, cfg.replace(seed=s_ctrl))
    return _result("hybrid", rate, spec, cfg, rec, MessageControllerPolicy(q, comm, comm),
                   extras={"partition": partition, "q": q})


def run_hnc(spec: GridSpec, cfg: TrainConfig, wait: int | None = None) -> SchemeResult:
    if wait is None:
        wait = 2 * (spec.n - 1)
    return _result("hnc", 0, spec, cfg, None, HNCPolicy(spec, wait), extras={"wait": wait})


def run_hoc(spec: GridSpec, cfg: TrainConfig) -> SchemeResult:
    return _result("hoc", 1, spec, cfg, None, HOCPolicy(spec))


SCHEMES = {
    "centralized": lambda spec, cfg, rate, **kw: run_centralized(spec, cfg),
    "saic": lambda spec, cfg, rate, **kw: run_saic(spec, cfg, rate, **kw),
    "cic": lambda spec, cfg, rate, **kw: run_cic(spec, cfg, rate, rule=kw.get("rule", "optimistic")),
    "lbic": lambda spec, cfg, rate, **kw: run_lbic(spec, cfg, rate, rule=kw.get("rule", "optimistic")),
    "nocomm": lambda spec, cfg, rate, **kw: run_nocomm(spec, cfg, rule=kw.get("rule", "optimistic")),
    "hybrid": lambda spec, cfg, rate, **kw: run_hybrid(spec, cfg, rate, marginal=kw.get("marginal", "reset")),
    "hnc": lambda spec, cfg, rate, **kw: run_hnc(spec, cfg),
    "hoc": lambda spec, cfg, rate, **kw: run_hoc(spec, cfg),
}


def run_scheme(name: str, spec: GridSpec, cfg: TrainConfig, rate: int = 2, **kw) -> SchemeResult:
    try:
        fn = SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; known: {', '.join(SCHEMES)}") from None
    return fn(spec, cfg, rate, **kw)
