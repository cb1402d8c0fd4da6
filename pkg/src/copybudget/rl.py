"""Deep-Q machinery for both allocation levels.

A small fully-connected value network (hidden sizes 80 and 40, rectifier
units, linear head) is trained by plain SGD on the squared Bellman error,
with a bounded FIFO replay buffer and a periodically copied target network.

The outer agent sees the five-component environment state and picks a
budget level for the round; the inner agent sees only the constant round
budget and picks a point on the fraction simplex grid, which makes the
inner problem a bandit over a static reward — its training loop exploits
that (single shared state, terminal transitions) to stay fast.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .envsim import Episode, World, inner_reward, outer_reward

HIDDEN_SIZES = (80, 40)


class RLError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Value network


class QNetwork:
    """Two-hidden-layer MLP with manual gradients (no autodiff dependency)."""

    def __init__(
        self,
        in_dim: int,
        n_actions: int,
        rng: np.random.Generator | None = None,
        zero_head: bool = True,
    ):
        self.in_dim = in_dim
        self.n_actions = n_actions
        h1, h2 = HIDDEN_SIZES
        if rng is None:
            rng = np.random.default_rng(0)
        self.w1 = rng.standard_normal((in_dim, h1)) * np.sqrt(2.0 / in_dim)
        self.b1 = np.zeros(h1)
        self.w2 = rng.standard_normal((h1, h2)) * np.sqrt(2.0 / h1)
        self.b2 = np.zeros(h2)
        # A zero head makes the untrained net value every action identically,
        # so the first greedy pick is the deterministic lowest-index action.
        # A small random head instead breaks those ties, which keeps greedy
        # readouts from collapsing onto action 0 before values separate.
        if zero_head:
            self.w3 = np.zeros((h2, n_actions))
        else:
            self.w3 = rng.standard_normal((h2, n_actions)) * (0.01 * np.sqrt(2.0 / h2))
        self.b3 = np.zeros(n_actions)

    # -- forward --------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self._forward_cached(np.atleast_2d(x))[0]
        return out[0] if single else out

    def _forward_cached(self, x: np.ndarray):
        if x.shape[1] != self.in_dim:
            raise RLError(f"expected input dimension {self.in_dim}, got {x.shape[1]}")
        a1 = x @ self.w1 + self.b1
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ self.w2 + self.b2
        h2 = np.maximum(a2, 0.0)
        out = h2 @ self.w3 + self.b3
        return out, h1, h2, a1 > 0, a2 > 0

    # -- gradients --------------------------------------------------------

    def backward(self, x: np.ndarray, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dout * forward(x)) with respect to all parameters."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dout = np.atleast_2d(np.asarray(dout, dtype=float))
        _, h1, h2, mask1, mask2 = self._forward_cached(x)
        dw3 = h2.T @ dout
        db3 = dout.sum(axis=0)
        dh2 = (dout @ self.w3.T) * mask2
        dw2 = h1.T @ dh2
        db2 = dh2.sum(axis=0)
        dh1 = (dh2 @ self.w2.T) * mask1
        dw1 = x.T @ dh1
        db1 = dh1.sum(axis=0)
        return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}

    def loss_and_grads(
        self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error of Q(s, a) against targets, plus its gradients."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        n = len(actions)
        out = self._forward_cached(states)[0]
        err = out[np.arange(n), actions] - targets
        loss = float(np.mean(err**2))
        dout = np.zeros_like(out)
        dout[np.arange(n), actions] = 2.0 * err / n
        return loss, self.backward(states, dout)

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, grad in grads.items():
            param = getattr(self, name)
            param -= lr * grad

    # -- bookkeeping ------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("w1", "b1", "w2", "b2", "w3", "b3")}

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.in_dim, self.n_actions)
        twin.copy_from(self)
        return twin

    def copy_from(self, other: "QNetwork") -> None:
        for name, value in other.parameters().items():
            setattr(self, name, value.copy())

    def save(self, path: str | Path) -> None:
        """Flat binary weight dump with a JSON shape manifest alongside."""
        path = Path(path)
        params = self.parameters()
        flat = np.concatenate([params[k].ravel() for k in sorted(params)])
        flat.astype(np.float64).tofile(path)
        manifest = {k: list(params[k].shape) for k in sorted(params)}
        manifest["in_dim"] = self.in_dim
        manifest["n_actions"] = self.n_actions
        Path(str(path) + ".json").write_text(json.dumps(manifest), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        path = Path(path)
        manifest = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        net = cls(manifest.pop("in_dim"), manifest.pop("n_actions"))
        flat = np.fromfile(path, dtype=np.float64)
        offset = 0
        for name in sorted(manifest):
            shape = tuple(manifest[name])
            size = int(np.prod(shape))
            setattr(net, name, flat[offset : offset + size].reshape(shape).copy())
            offset += size
        return net


# ---------------------------------------------------------------------------
# Replay buffer


class ReplayBuffer:
    """Bounded FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise RLError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def add(
        self,
        state: np.ndarray,
        action: int,
        reward: float,
        next_state: np.ndarray,
        terminal: bool,
    ) -> None:
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise RLError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )


# ---------------------------------------------------------------------------
# Control


def select_action(values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy (lowest index wins ties) with probability 1 - epsilon, else uniform."""
    values = np.asarray(values)
    if values.size == 0:
        raise RLError("empty action values")
    if rng.random() < epsilon:
        return int(rng.integers(values.size))
    return int(np.argmax(values))


def dqn_update(
    net: QNetwork,
    target_net: QNetwork,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    discount: float,
    lr: float,
) -> float:
    """One SGD step on the squared Bellman error; returns the pre-step loss."""
    states, actions, rewards, next_states, terminals = batch
    if len(actions) == 0:
        raise RLError("empty batch")
    next_values = target_net.forward(np.atleast_2d(next_states))
    bootstrap = np.where(terminals, 0.0, next_values.max(axis=1))
    targets = rewards + discount * bootstrap
    loss, grads = net.loss_and_grads(states, actions, targets)
    if not np.isfinite(loss):
        raise RLError("non-finite Bellman loss")
    net.apply_gradients(grads, lr)
    return loss


# ---------------------------------------------------------------------------
# Action grids


def outer_levels(total_budget: float, bins: int) -> np.ndarray:
    """Sorted budget levels {0, B/G, ..., B}."""
    return np.linspace(0.0, total_budget, bins + 1)


def _compositions(total: int, slots: int):
    if slots == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, slots - 1):
            yield (first, *rest)


@dataclass(frozen=True)
class InnerGrid:
    """All fraction vectors with entries in multiples of 1/parts summing to 1.

    Action 0 is the all-to-first-holder vector; enumeration is descending
    lexicographic in the integer parts, which fixes the tie-break order.
    """

    n_holders: int
    parts: int
    fractions: tuple[tuple[Fraction, ...], ...] = field(init=False)
    matrix: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        fracs = tuple(
            tuple(Fraction(k, self.parts) for k in combo)
            for combo in _compositions(self.parts, self.n_holders)
        )
        object.__setattr__(self, "fractions", fracs)
        object.__setattr__(
            self, "matrix", np.array([[float(f) for f in row] for row in fracs])
        )

    def __len__(self) -> int:
        return len(self.fractions)


_GRID_CACHE: dict[tuple[int, int], InnerGrid] = {}


def inner_grid(n_holders: int, parts: int) -> InnerGrid:
    key = (n_holders, parts)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = InnerGrid(n_holders, parts)
    return _GRID_CACHE[key]


# ---------------------------------------------------------------------------
# Inner agent


@dataclass(frozen=True)
class InnerContext:
    """Everything an inner allocator may look at for one round."""

    budget: float
    beta_k: np.ndarray
    chat_k: np.ndarray
    available: np.ndarray
    round_index: int
    rng: np.random.Generator


def train_inner(
    ctx: InnerContext, cfg: ExperimentConfig, grid: InnerGrid | None = None
) -> tuple[Fraction, ...]:
    """Train a fresh inner Q-network on the round's static reward and return
    the greedy fraction vector.

    Within a round the state (the round budget) and the per-holder scores
    are fixed, so every transition is terminal and shares one state; the
    update below is algebraically the generic `dqn_update` specialized to
    that case, which keeps the 10^4-iteration loop cheap.
    """
    n = len(ctx.beta_k)
    if grid is None:
        grid = inner_grid(n, cfg.inner_parts)
    n_actions = len(grid)
    if n_actions == 0:
        raise RLError("empty inner action grid")

    rewards = np.array(
        [
            inner_reward(row, ctx.beta_k, ctx.chat_k, cfg.reward_contribution, cfg.reward_copyright)
            for row in grid.fractions
        ]
    )
    scale = max(1.0, float(np.abs(rewards).max()))
    scaled = rewards / scale

    rng = ctx.rng
    net = QNetwork(1, n_actions, rng=rng)
    state = np.array([ctx.budget / cfg.total_budget])
    capacity = min(cfg.replay_capacity, cfg.inner_iterations)
    buffer = ReplayBuffer(capacity, 1)
    batch = cfg.batch_size
    lr = cfg.learning_rate
    eps = cfg.explore_rate

    x = state  # (1,)
    for _ in range(cfg.inner_iterations):
        a1 = x @ net.w1 + net.b1
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ net.w2 + net.b2
        h2 = np.maximum(a2, 0.0)
        out = h2 @ net.w3 + net.b3

        action = select_action(out, eps, rng)
        buffer.add(state, action, scaled[action], state, True)

        idx = rng.integers(0, buffer.size, size=batch)
        _terminal_bandit_update(
            net, x, (a1, h1, a2, h2, out), buffer.actions[idx], buffer.rewards[idx], lr
        )

    greedy = int(np.argmax(net.forward(state)))
    return grid.fractions[greedy]


def _terminal_bandit_update(
    net: QNetwork,
    x: np.ndarray,
    cache: tuple[np.ndarray, ...],
    actions: np.ndarray,
    rewards: np.ndarray,
    lr: float,
) -> None:
    """SGD step on a batch of terminal transitions that share one state.

    Algebraically identical to `dqn_update` restricted to that case (the
    bootstrap term vanishes and every batch row reuses the same forward
    activations), which is what makes the inner training loop cheap.
    """
    a1, h1, a2, h2, out = cache
    batch = len(actions)
    err = out[actions] - rewards
    # d(mean err^2)/d out, accumulated per action over the batch
    g_out = np.bincount(actions, weights=2.0 * err / batch, minlength=net.n_actions)
    dh2 = (net.w3 @ g_out) * (a2 > 0)
    dh1 = (net.w2 @ dh2) * (a1 > 0)
    net.w3 -= lr * np.outer(h2, g_out)
    net.b3 -= lr * g_out
    net.w2 -= lr * np.outer(h1, dh2)
    net.b2 -= lr * dh2
    net.w1 -= lr * np.outer(x, dh1)
    net.b1 -= lr * dh1


# ---------------------------------------------------------------------------
# Outer agent


@dataclass
class OuterPolicy:
    """Greedy budget policy read out of a trained outer network."""

    net: QNetwork
    levels: np.ndarray

    def budget(self, state: np.ndarray, budget_left: float) -> float:
        values = self.net.forward(state)
        return float(min(self.levels[int(np.argmax(values))], budget_left))


@dataclass
class OuterTrainingResult:
    policy: OuterPolicy
    best_ledger: list | None
    best_q: float
    episode_qs: list[float]


def train_outer(
    world: World,
    cfg: ExperimentConfig,
    inner_fn: Callable[[InnerContext], Sequence[Fraction]],
    stream_factory: Callable[[str], np.random.Generator],
    tag: str = "outer",
) -> OuterTrainingResult:
    """Episodic DQN over the outer budget decision.

    Each episode replays the same world; per round the agent picks a budget
    level (clipped to what is left), delegates the split to `inner_fn`,
    steps the environment and trains on the stored transition. Mid-episode
    rewards are the small constant; the terminal reward is the final model
    quality, clipped and rescaled before entering the network.

    The explore rate starts at the configured value and decays linearly to
    a floor of 0.3x over the episodes, so late episodes mostly follow (and
    correct) the greedy policy that will be read out while still sampling
    alternatives.
    """
    levels = outer_levels(cfg.total_budget, cfg.outer_bins)
    net = QNetwork(5, len(levels), rng=stream_factory(f"{tag}/net"), zero_head=False)
    target = net.clone()
    buffer = ReplayBuffer(cfg.replay_capacity, 5)
    explore = stream_factory(f"{tag}/explore")
    updates = 0
    best_q = -np.inf
    best_ledger: list | None = None
    episode_qs: list[float] = []

    floor = 0.3 * cfg.explore_rate
    for e in range(cfg.outer_episodes):
        if cfg.outer_episodes > 1:
            epsilon = max(floor, cfg.explore_rate * (1.0 - e / (cfg.outer_episodes - 1)))
        else:
            epsilon = cfg.explore_rate
        ep = Episode(world, stream_factory, tag=f"{tag}/ep{e}")
        state = ep.state_vector()
        while not ep.done:
            t = ep.t
            values = net.forward(state)
            action = select_action(values, epsilon, explore)
            budget = float(min(levels[action], ep.budget_left))
            ctx = InnerContext(
                budget=budget,
                beta_k=ep.prev_beta_k,
                chat_k=ep.prev_chat_k,
                available=ep.available_mask(),
                round_index=t,
                rng=stream_factory(f"{tag}/ep{e}/inner/t{t}"),
            )
            record = ep.run_round(budget, inner_fn(ctx))
            terminal = ep.done
            if terminal:
                raw = record.q if record.q is not None else 0.0
            else:
                raw = outer_reward(record.t_left)
            reward = min(raw, cfg.reward_clip) / cfg.reward_scale
            next_state = ep.state_vector()
            buffer.add(state, action, reward, next_state, terminal)
            if buffer.size >= 1:  # replay sampling is with replacement
                for _ in range(cfg.outer_updates_per_step):
                    dqn_update(
                        net,
                        target,
                        buffer.sample(cfg.batch_size, explore),
                        cfg.discount,
                        cfg.learning_rate,
                    )
                    updates += 1
                    if updates % cfg.target_sync == 0:
                        target.copy_from(net)
            state = next_state
        final_q = ep.ledger[-1].q if ep.ledger and ep.ledger[-1].q is not None else 0.0
        episode_qs.append(final_q)
        if final_q > best_q:
            best_q = final_q
            best_ledger = list(ep.ledger)

    return OuterTrainingResult(
        policy=OuterPolicy(net=net, levels=levels),
        best_ledger=best_ledger,
        best_q=best_q,
        episode_qs=episode_qs,
    )
