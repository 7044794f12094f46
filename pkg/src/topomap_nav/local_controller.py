"""Goal-conditioned double DQN for short local navigation, plus an optional reach head.

The Q-network is a shared trunk over ``concat(o, o_goal)`` followed by a
linear head with one value per action. The "pred" variant adds a sigmoid head
on the trunk features that predicts whether the agent is at the goal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn_core
from .errors import NumericError, ParameterError, StateError, TrainingError
from .maze_world import (
    DEFAULT_DEPTH,
    Action,
    Cell,
    OccupancyGrid,
    extract_patch,
    neighbors4,
    panorama_table,
    step,
)

log = logging.getLogger(__name__)

N_ACTIONS = len(Action)
VARIANTS = ("oracle", "pred")


@dataclass
class Transition:
    o: np.ndarray
    a: int
    r: float
    o_next: np.ndarray
    o_goal: np.ndarray
    done: bool


@dataclass
class Batch:
    o: np.ndarray
    a: np.ndarray
    r: np.ndarray
    o_next: np.ndarray
    o_goal: np.ndarray
    done: np.ndarray

    @classmethod
    def of(cls, transitions: list[Transition]) -> Batch:
        return cls(
            np.array([t.o for t in transitions]),
            np.array([t.a for t in transitions], dtype=int),
            np.array([t.r for t in transitions], dtype=np.float64),
            np.array([t.o_next for t in transitions]),
            np.array([t.o_goal for t in transitions]),
            np.array([t.done for t in transitions], dtype=bool),
        )

    def __len__(self):
        return len(self.a)


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.o = np.zeros((capacity, obs_dim))
        self.o_next = np.zeros((capacity, obs_dim))
        self.o_goal = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        if (t.r == 0.0) != bool(t.done):
            raise ParameterError("reward must be 0 exactly on terminal transitions")
        i = self._next
        self.o[i], self.a[i], self.r[i] = t.o, t.a, t.r
        self.o_next[i], self.o_goal[i], self.done[i] = t.o_next, t.o_goal, t.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _batch(self, idx) -> Batch:
        return Batch(self.o[idx], self.a[idx], self.r[idx], self.o_next[idx], self.o_goal[idx], self.done[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return self._batch(idx)

    def sample_reach(self, batch_size: int, rng: np.random.Generator, pos_fraction: float = 0.25):
        """``(o_next, o_goal, label)`` with positives (terminal transitions) oversampled."""
        done = self.done[: self.size]
        pos = np.flatnonzero(done)
        neg = np.flatnonzero(~done)
        n_pos = min(len(pos), int(round(batch_size * pos_fraction))) if len(pos) else 0
        n_neg = min(len(neg), batch_size - n_pos)
        idx = np.concatenate([
            rng.choice(pos, size=n_pos, replace=n_pos > len(pos)) if n_pos else np.empty(0, dtype=int),
            rng.choice(neg, size=n_neg, replace=False) if n_neg else np.empty(0, dtype=int),
        ]).astype(int)
        return self.o_next[idx], self.o_goal[idx], done[idx].astype(np.float64)


@dataclass
class ControllerParams:
    trunk: nn_core.Network
    q_head: nn_core.Network
    target_trunk: nn_core.Network
    target_q_head: nn_core.Network
    reach_head: nn_core.Network | None = None
    gamma: float = 0.99
    tau: float = 0.05
    variant: str = "oracle"
    task: str = "local"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ParameterError("tau must be in (0, 1]")
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")
        if self.variant == "pred" and self.reach_head is None:
            raise ParameterError("pred variant needs a reach head")

    @property
    def obs_dim(self) -> int:
        return self.trunk.in_dim // 2

    def online_params(self) -> list[np.ndarray]:
        ps = self.trunk.params() + self.q_head.params()
        if self.reach_head is not None:
            ps += self.reach_head.params()
        return ps


def init_controller(
    obs_dim: int,
    hidden: int = 128,
    variant: str = "oracle",
    gamma: float = 0.99,
    tau: float = 0.05,
    seed: int = 0,
    task: str = "local",
) -> ControllerParams:
    trunk = nn_core.init_network([2 * obs_dim, hidden, hidden], ["relu", "relu"], seed)
    q_head = nn_core.init_network([hidden, N_ACTIONS], ["linear"], seed + 1)
    reach = nn_core.init_network([hidden, 1], ["sigmoid"], seed + 2) if variant == "pred" else None
    return ControllerParams(trunk, q_head, trunk.copy(), q_head.copy(), reach, gamma, tau, variant, task)


def _inputs(o, o_goal) -> np.ndarray:
    o = np.asarray(o, dtype=np.float64)
    g = np.asarray(o_goal, dtype=np.float64)
    if o.shape != g.shape:
        raise ParameterError(f"observation {o.shape} and goal {g.shape} shapes differ")
    return np.concatenate([o, g], axis=-1)


def q_values(p: ControllerParams, o, o_goal, target: bool = False) -> np.ndarray:
    trunk, head = (p.target_trunk, p.target_q_head) if target else (p.trunk, p.q_head)
    return head(trunk(_inputs(o, o_goal)))


def reach_probability(p: ControllerParams, o, o_goal) -> np.ndarray | float:
    if p.reach_head is None:
        raise StateError("oracle-variant controller has no reach head")
    out = p.reach_head(p.trunk(_inputs(o, o_goal)))
    return float(out[0]) if out.ndim == 1 else out[:, 0]


def greedy_action(p_or_q, o=None, o_goal=None) -> Action:
    """Argmax action; ties resolve to the earliest action in canonical order.

    Accepts either controller params plus observations, or a ready vector of Q-values.
    """
    q = q_values(p_or_q, o, o_goal) if isinstance(p_or_q, ControllerParams) else np.asarray(p_or_q)
    return Action(int(np.argmax(q)))


def double_dqn_target(p: ControllerParams, t: Transition | Batch) -> float | np.ndarray:
    """``r`` on terminal transitions, else ``r + gamma * Q_target(o', argmax_a' Q_online(o', a'))``."""
    if isinstance(t, Transition):
        return float(double_dqn_target(p, Batch.of([t]))[0])
    best = np.argmax(q_values(p, t.o_next, t.o_goal), axis=1)
    q_next = q_values(p, t.o_next, t.o_goal, target=True)[np.arange(len(best)), best]
    return t.r + p.gamma * np.where(t.done, 0.0, q_next)


def td_loss(p: ControllerParams, batch: Batch, y: np.ndarray | None = None):
    """Mean squared TD error with ``y`` held constant.

    Returns ``(loss, {"trunk": grads, "q_head": grads})``.
    """
    if len(batch) == 0:
        raise ParameterError("empty batch")
    if y is None:
        y = double_dqn_target(p, batch)
    h, tcache = nn_core.forward(p.trunk, _inputs(batch.o, batch.o_goal))
    q, hcache = nn_core.forward(p.q_head, h)
    rows = np.arange(len(batch))
    err = q[rows, batch.a] - y
    loss = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[rows, batch.a] = 2.0 * err / len(batch)
    g_head, dh = nn_core.backward(p.q_head, hcache, dq)
    g_trunk, _ = nn_core.backward(p.trunk, tcache, dh)
    return loss, {"trunk": g_trunk, "q_head": g_head}


def reach_loss(p: ControllerParams, o, o_goal, label):
    """Binary cross-entropy of the reach head, averaged over the batch."""
    if p.reach_head is None:
        raise StateError("oracle-variant controller has no reach head")
    x = np.atleast_2d(_inputs(o, o_goal))
    y = np.atleast_1d(np.asarray(label, dtype=np.float64))
    h, tcache = nn_core.forward(p.trunk, x)
    _, rcache = nn_core.forward(p.reach_head, h)
    logit = rcache.preacts[-1][:, 0]
    loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
    dlogit = ((nn_core.sigmoid(logit) - y) / len(y))[:, None]
    g_reach, dh = nn_core.backward(p.reach_head, rcache, dlogit, wrt_preact=True)
    g_trunk, _ = nn_core.backward(p.trunk, tcache, dh)
    return loss, {"trunk": g_trunk, "reach_head": g_reach}


def relabel_goal(t: Transition, generated, proportion: float, rng: np.random.Generator) -> Transition:
    if rng.random() < proportion:
        return replace(t, o_goal=np.asarray(generated))
    return t


def soft_update(p: ControllerParams, tau: float | None = None) -> None:
    tau = p.tau if tau is None else tau
    for online, target in ((p.trunk, p.target_trunk), (p.q_head, p.target_q_head)):
        for src, dst in zip(online.params(), target.params()):
            dst *= 1.0 - tau
            dst += tau * src


@dataclass
class ControllerHyper:
    steps: int = 200_000
    lr: float = 1e-3
    batch: int = 128
    train_every: int = 10
    buffer: int = 20_000
    gamma: float = 0.99
    tau: float = 0.05
    hidden: int = 128
    relabel: float = 0.5
    horizon: int = 10
    eps_start: float = 1.0
    eps_end: float = 0.05
    episodes_per_maze: int = 100
    variant: str = "oracle"
    task: str = "local"  # "local": goal is a free 4-neighbour; "flat": any free cell
    depth: int = DEFAULT_DEPTH
    palette_seed: int | None = 0
    reach_pos_fraction: float = 0.25
    holdout_goals: tuple = ()  # cells never used as training goals


@dataclass
class TrainTrace:
    episode_success: list[bool] = field(default_factory=list)
    td_losses: list[float] = field(default_factory=list)
    reach_losses: list[float] = field(default_factory=list)

    def success_curve(self, window: int = 100) -> list[float]:
        s = np.asarray(self.episode_success, dtype=float)
        return [float(s[max(0, i - window) : i].mean()) for i in range(window, len(s) + 1, window)]


def _maze_goal_tables(grid, generator, hyper):
    obs = panorama_table(grid, hyper.depth, hyper.palette_seed)
    gen = None
    if generator is not None:
        gen = {c: np.asarray(generator.landmark_observation(c, extract_patch(grid, c))) for c in obs}
    return obs, gen


def train_controller(
    mazes: list[OccupancyGrid],
    generator=None,
    hyper: ControllerHyper = ControllerHyper(),
    seed: int = 0,
) -> tuple[ControllerParams, TrainTrace]:
    """Train on episodic navigation tasks in ``mazes`` with goal relabelling.

    ``generator`` provides ``landmark_observation(cell, patch)``; pass one per
    maze as a list when it is map-specific. Without a generator no relabelling
    happens.
    """
    if not mazes:
        raise ParameterError("need at least one training maze")
    gens = generator if isinstance(generator, (list, tuple)) else [generator] * len(mazes)
    tables = [_maze_goal_tables(g, gen, hyper) for g, gen in zip(mazes, gens)]
    frees = [g.free_cells() for g in mazes]
    obs_dim = len(next(iter(tables[0][0].values())))
    p = init_controller(obs_dim, hyper.hidden, hyper.variant, hyper.gamma, hyper.tau, seed, hyper.task)
    rng = np.random.default_rng(seed + 1000)
    buf = ReplayBuffer(hyper.buffer, obs_dim)
    params = p.online_params()
    opt = nn_core.adam_init(params, hyper.lr)
    trace = TrainTrace()
    anneal = max(1, hyper.steps // 2)

    holdout = {Cell(*c) for c in hyper.holdout_goals}
    if all(set(f) <= holdout for f in frees):
        raise ParameterError("holdout_goals leaves no training goals")
    t = 0
    episode = 0
    while t < hyper.steps:
        mi = (episode // hyper.episodes_per_maze) % len(mazes)
        grid, (obs, gen_obs), free = mazes[mi], tables[mi], frees[mi]
        s = free[rng.integers(len(free))]
        if hyper.task == "local":
            options = [nb for _, nb in neighbors4(s) if grid.is_free(nb) and nb not in holdout]
        else:
            options = [c for c in free if c != s and c not in holdout]
        if not options:
            episode += 1
            continue
        goal = options[rng.integers(len(options))]
        g_true = obs[goal]
        success = False
        for _ in range(hyper.horizon):
            eps = hyper.eps_start + (hyper.eps_end - hyper.eps_start) * min(1.0, t / anneal)
            o = obs[s]
            if rng.random() < eps:
                a = int(rng.integers(N_ACTIONS))
            else:
                a = int(np.argmax(q_values(p, o, g_true)))
            s2 = step(grid, s, Action(a))
            done = s2 == goal
            tr = Transition(o, a, 0.0 if done else -1.0, obs[s2], g_true, done)
            if gen_obs is not None:
                tr = relabel_goal(tr, gen_obs[goal], hyper.relabel, rng)
            buf.add(tr)
            t += 1
            s = s2
            if t % hyper.train_every == 0 and len(buf) >= hyper.batch:
                _learn(p, buf, opt, params, hyper, rng, trace)
            if done or t >= hyper.steps:
                success = done
                break
        trace.episode_success.append(bool(success))
        episode += 1
    return p, trace


def _learn(p, buf, opt, params, hyper, rng, trace):
    batch = buf.sample(hyper.batch, rng)
    loss, g = td_loss(p, batch)
    grads = g["trunk"] + g["q_head"]
    if p.reach_head is not None:
        o2, og, lab = buf.sample_reach(hyper.batch, rng, hyper.reach_pos_fraction)
        rl, rg = reach_loss(p, o2, og, lab)
        grads = [a + b for a, b in zip(grads[: len(g["trunk"])], rg["trunk"])] + g["q_head"] + rg["reach_head"]
        trace.reach_losses.append(rl)
    if not np.isfinite(loss):
        raise TrainingError("TD loss diverged")
    try:
        nn_core.adam_update(params, grads, opt)
    except NumericError as exc:
        raise TrainingError("controller update produced non-finite gradients") from exc
    soft_update(p)
    trace.td_losses.append(loss)


def one_step_success(
    p: ControllerParams,
    grid: OccupancyGrid,
    goal_obs: dict[Cell, np.ndarray] | None = None,
    k_max: int = 10,
    depth: int = DEFAULT_DEPTH,
    palette_seed: int | None = 0,
) -> float:
    """Fraction of adjacent (start, goal) pairs reached greedily within ``k_max`` steps.

    Arrival is judged on the true cell. ``goal_obs`` overrides the goal
    observation per cell (e.g. generated panoramas); default is the true render.
    """
    obs = panorama_table(grid, depth, palette_seed)
    goal_obs = obs if goal_obs is None else goal_obs
    hits = total = 0
    for s in obs:
        for _, g in neighbors4(s):
            if g not in obs:
                continue
            total += 1
            c = s
            for _ in range(k_max):
                c = step(grid, c, greedy_action(p, obs[c], goal_obs[g]))
                if c == g:
                    hits += 1
                    break
    return hits / total


def reach_balanced_accuracy(
    p: ControllerParams,
    grid: OccupancyGrid,
    goal_obs: dict[Cell, np.ndarray] | None = None,
    threshold: float = 0.5,
    depth: int = DEFAULT_DEPTH,
    palette_seed: int | None = 0,
    cells=None,
) -> tuple[float, float, float]:
    """Balanced accuracy of the reach head: positives at the goal cell, negatives at its neighbours.

    ``cells`` restricts the goal cells evaluated (e.g. goals held out of training).
    Returns ``(balanced_accuracy, true_positive_rate, true_negative_rate)``.
    """
    obs = panorama_table(grid, depth, palette_seed)
    goal_obs = obs if goal_obs is None else goal_obs
    cells = list(obs) if cells is None else [Cell(*c) for c in cells]
    pos = reach_probability(p, np.array([obs[c] for c in cells]), np.array([goal_obs[c] for c in cells]))
    o_neg, g_neg = [], []
    for c in cells:
        for _, nb in neighbors4(c):
            if nb in obs:
                o_neg.append(obs[nb])
                g_neg.append(goal_obs[c])
    neg = reach_probability(p, np.array(o_neg), np.array(g_neg))
    tpr = float(np.mean(pos >= threshold))
    tnr = float(np.mean(neg < threshold))
    return (tpr + tnr) / 2, tpr, tnr


def save_controller(p: ControllerParams, path) -> None:
    nets = {
        "trunk": nn_core.network_to_dict(p.trunk),
        "q_head": nn_core.network_to_dict(p.q_head),
        "target_trunk": nn_core.network_to_dict(p.target_trunk),
        "target_q_head": nn_core.network_to_dict(p.target_q_head),
    }
    if p.reach_head is not None:
        nets["reach_head"] = nn_core.network_to_dict(p.reach_head)
    doc = {"variant": p.variant, "gamma": p.gamma, "tau": p.tau, "task": p.task, "nets": nets}
    Path(path).write_text(json.dumps(doc))


def load_controller(path) -> ControllerParams:
    doc = json.loads(Path(path).read_text())
    if "nets" not in doc or "variant" not in doc:
        raise ParameterError(f"{path} is not a controller checkpoint")
    nets = {k: nn_core.network_from_dict(v) for k, v in doc["nets"].items()}
    return ControllerParams(
        nets["trunk"],
        nets["q_head"],
        nets["target_trunk"],
        nets["target_q_head"],
        nets.get("reach_head"),
        doc["gamma"],
        doc["tau"],
        doc["variant"],
        doc.get("task", "local"),
    )
