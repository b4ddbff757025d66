"""Deep Q-learning over the shared attention critic.

One parameter store serves every intersection agent; experiences from all
agents land in one FIFO replay buffer. Each action interval the loop
rebuilds the dynamic neighbor graph from live EV routes, gathers top-K
observation matrices, acts epsilon-greedily, steps the simulator, stores
one transition per intersection, and descends the mean squared TD error
on one sampled batch. The target network is a frozen snapshot of the
online parameters, refreshed every few episodes.

Everything is driven by seeded generators: same (seed, scenario, config)
means bit-identical checkpoints and curves.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .microsim import ACTION_INTERVAL_S, EV, Simulator, travel_time
from .neural import (
    NetConfig, QNetworkParams, backward, forward_q, forward_q_data,
    gather_col, init_params, mean_all, square, sub, tensor, vstack,
)
from .road_network import FlowSpec, RoadGraph
from .route_planner import PlannerConfig
from .runner import make_router
from .signal_agents import (
    AgentConfig, active_ev_route_edges, neighbor_observation_matrix,
    observe, relational_distances, reward, top_k,
)


@dataclass
class TrainConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 10_000
    epsilon_start: float = 0.8
    epsilon_end: float = 0.05
    epsilon_decay_frac: float = 0.7  # fraction of episodes spent annealing
    target_sync_episodes: int = 5
    episodes: int = 100
    episode_seconds: int = 3600
    grad_clip: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must be in [0, 1]")


@dataclass
class Experience:
    obs: np.ndarray  # K x m neighbor matrix at t, target row first
    action: int
    reward: float
    next_obs: np.ndarray  # K x m neighbor matrix at t + 1
    terminal: bool


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.buf: deque[Experience] = deque(maxlen=capacity)

    def add(self, exp: Experience) -> None:
        self.buf.append(exp)

    def __len__(self) -> int:
        return len(self.buf)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        idx = rng.choice(len(self.buf), size=batch_size, replace=False)
        return [self.buf[int(i)] for i in idx]


def select_action(q_values: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Uniform exploration with probability epsilon, else greedy argmax."""
    q = np.asarray(q_values).ravel()
    if rng.random() < epsilon:
        return int(rng.integers(0, q.size))
    return int(np.argmax(q))  # argmax takes the lowest index on ties


def td_target(r: float, next_q_values, gamma: float, terminal: bool) -> float:
    if terminal:
        return float(r)
    return float(r) + gamma * float(np.max(next_q_values))


def discounted_return(rewards, gamma: float) -> float:
    total, factor = 0.0, 1.0
    for r in rewards:
        total += factor * r
        factor *= gamma
    return total


def batch_loss(batch: list[Experience], params: QNetworkParams,
               target_params: QNetworkParams, gamma: float):
    """Mean squared TD error; gradients flow only through the online net."""
    if not batch:
        raise ValueError("batch must not be empty")
    diffs = []
    for exp in batch:
        y = td_target(
            exp.reward, forward_q_data(target_params, exp.next_obs),
            gamma, exp.terminal)
        q = forward_q(params, exp.obs)
        diffs.append(sub(gather_col(q, exp.action), tensor([[y]])))
    return mean_all(square(vstack(diffs)))


def sgd_step(params: QNetworkParams, learning_rate: float,
             grad_clip: float) -> float:
    """Clipped gradient descent; returns the pre-clip global norm."""
    grads = [(t, t.grad) for t in params.parameters() if t.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for _, g in grads))
    factor = min(1.0, grad_clip / norm) if norm > 0 else 1.0
    for t, g in grads:
        t.data = t.data - learning_rate * factor * g
        t.grad = None
    return norm


def epsilon_for_episode(cfg: TrainConfig, episode: int) -> float:
    anneal = max(1, int(cfg.episodes * cfg.epsilon_decay_frac))
    frac = min(1.0, episode / anneal)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


@dataclass
class CurvePoint:
    episode: int
    avg_tt_ov: float
    avg_tt_ev: float
    mean_loss: float
    epsilon: float


@dataclass
class TrainResult:
    params: QNetworkParams
    curve: list[CurvePoint] = field(default_factory=list)
    target_params: QNetworkParams | None = None  # last target snapshot


def train(graph: RoadGraph, flows: FlowSpec,
          train_cfg: TrainConfig | None = None,
          net_cfg: NetConfig | None = None,
          agent_cfg: AgentConfig | None = None,
          planner_cfg: PlannerConfig | None = None,
          router_kind: str = "none", seed: int = 0,
          on_episode=None) -> TrainResult:
    train_cfg = train_cfg or TrainConfig()
    net_cfg = net_cfg or NetConfig()
    agent_cfg = agent_cfg or AgentConfig()
    planner_cfg = planner_cfg or PlannerConfig()

    params = init_params(net_cfg, seed=seed)
    target = params.copy()
    buffer = ReplayBuffer(train_cfg.buffer_capacity)
    rng = np.random.Generator(np.random.PCG64(seed))
    node_ids = [n.id for n in graph.intersections]
    k = min(agent_cfg.neighbors, len(node_ids))
    result = TrainResult(params=params)

    for episode in range(train_cfg.episodes):
        if episode % train_cfg.target_sync_episodes == 0:
            target = params.copy()
        epsilon = epsilon_for_episode(train_cfg, episode)
        router = make_router(router_kind, planner_cfg)
        sim = Simulator(graph, flows, seed=seed * 100_003 + episode,
                        on_spawn=router.on_spawn, log_events=False)

        prev: dict[int, tuple[np.ndarray, int]] = {}
        losses: list[float] = []
        ticks = train_cfg.episode_seconds
        for t in range(ticks + 1):
            last = t == ticks
            if t % ACTION_INTERVAL_S == 0 or last:
                router.replan(sim)
                dgraph = relational_distances(
                    graph, active_ev_route_edges(sim), agent_cfg.route_discount)
                mats = {}
                for nid in node_ids:
                    ns = top_k(dgraph, nid, k)
                    mats[nid] = neighbor_observation_matrix(sim, ns)
                for nid in node_ids:
                    if nid in prev:
                        obs_prev, act_prev = prev[nid]
                        r = reward(observe(sim, nid), agent_cfg.ev_share)
                        buffer.add(Experience(obs_prev, act_prev, r,
                                              mats[nid], terminal=last))
                if last:
                    break
                actions = {}
                for nid in node_ids:
                    q = forward_q_data(params, mats[nid])
                    actions[nid] = select_action(q, epsilon, rng)
                    prev[nid] = (mats[nid], actions[nid])
                sim.step(actions)
                if len(buffer) >= train_cfg.batch_size:
                    batch = buffer.sample(train_cfg.batch_size, rng)
                    loss = batch_loss(batch, params, target, train_cfg.gamma)
                    backward(loss)
                    sgd_step(params, train_cfg.learning_rate,
                             train_cfg.grad_clip)
                    losses.append(float(loss.data[0, 0]))
            else:
                sim.step(None)

        ov_tt = [travel_time(v) for v in sim.arrived_vehicles if v.vclass != EV]
        ev_tt = [travel_time(v) for v in sim.arrived_vehicles if v.vclass == EV]
        point = CurvePoint(
            episode=episode,
            avg_tt_ov=sum(ov_tt) / len(ov_tt) if ov_tt else math.nan,
            avg_tt_ev=sum(ev_tt) / len(ev_tt) if ev_tt else math.nan,
            mean_loss=sum(losses) / len(losses) if losses else math.nan,
            epsilon=epsilon)
        result.curve.append(point)
        if on_episode is not None:
            on_episode(point)
    result.target_params = target
    return result


def curve_to_csv(curve: list[CurvePoint]) -> str:
    lines = ["episode,avg_tt_ov,avg_tt_ev,mean_loss,epsilon"]
    lines.extend(
        f"{p.episode},{p.avg_tt_ov},{p.avg_tt_ev},{p.mean_loss},{p.epsilon}"
        for p in curve)
    return "\n".join(lines) + "\n"
