"""Multi-head DQN: shared trunk, one main Q head plus one head per GVF.

All heads are stored as a single dense layer of width ``(M+1)*|A|``; head
``h`` owns columns ``h*|A| .. (h+1)*|A|-1``.  That is the same function as
M+1 separate linear maps on the trunk features, computed in one matmul.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit as nk
from .errors import ConfigError, NonFiniteError, UsageError

log = logging.getLogger(__name__)


def mlp_trunk(units: Sequence[int]) -> list[nk.LayerSpec]:
    specs = []
    for u in units:
        specs += [nk.dense(u), nk.relu()]
    return specs


class MultiHeadNet:
    """Train and target copies of a trunk + (M+1)-head Q network."""

    def __init__(self, obs_shape, n_actions: int, trunk: Sequence[nk.LayerSpec], n_gvfs: int = 0,
                 rng: np.random.Generator | None = None, head_bias: bool = True, zero_init: bool = False,
                 dtype=np.float32, momentum: float = 0.0, optimizer: str = "sgd"):
        if n_actions <= 0 or n_gvfs < 0:
            raise ConfigError("need n_actions > 0 and n_gvfs >= 0")
        if optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {optimizer!r}")
        self.obs_shape = tuple(obs_shape)
        self.n_actions = n_actions
        self.n_heads = n_gvfs + 1
        self.trunk = list(trunk)
        self.specs = self.trunk + [nk.dense(self.n_heads * n_actions, bias=head_bias)]
        rng = rng if rng is not None else np.random.default_rng(0)
        params = nk.init_params(self.trunk, self.obs_shape, rng, dtype)
        feat = int(np.prod(nk.output_shape(self.trunk, self.obs_shape)))
        # each head gets its own Glorot draw with fan_out = |A|
        bound = np.sqrt(6.0 / (feat + n_actions))
        w = np.concatenate([rng.uniform(-bound, bound, size=(feat, n_actions)).astype(dtype)
                            for _ in range(self.n_heads)], axis=1)
        params.layers.append([w, np.zeros(self.n_heads * n_actions, dtype)] if head_bias else [w])
        if zero_init:
            params = nk.zeros_like(params)
        self.train = params
        self.target = params.copy()
        self.optimizer = optimizer
        self.momentum = momentum
        self.opt_state = None  # SGD velocity or Adam moments
        self.head_reads = np.zeros(self.n_heads, dtype=np.int64)
        self.updates = 0

    @property
    def n_gvfs(self) -> int:
        return self.n_heads - 1

    def q_all(self, obs: np.ndarray, use_target: bool = False) -> np.ndarray:
        """Q-values for a batch, shape ``(B, M+1, |A|)``."""
        params = self.target if use_target else self.train
        if params is None:
            raise UsageError("network has no parameters")
        out, _ = nk.forward(self.specs, params, obs, cache=False)
        return out.reshape(obs.shape[0], self.n_heads, self.n_actions)

    def q_values(self, obs: np.ndarray, head: int = 0, use_target: bool = False) -> np.ndarray:
        """Q-vector of one head for a single observation.

        Every call is counted in ``head_reads``; acting code goes through
        here, training code uses :meth:`q_all`.
        """
        if not 0 <= head < self.n_heads:
            raise UsageError(f"head {head} outside 0..{self.n_heads - 1}")
        self.head_reads[head] += 1
        return self.q_all(obs[None], use_target)[0, head]

    def sync_target(self, tau: float = 1.0) -> None:
        self.target = nk.soft_update(self.target, self.train, tau)


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float  # extrinsic r_e
    r_main: float  # reward the main head learns from (after CIR / shaping)
    cumulants: np.ndarray
    next_obs: np.ndarray
    done: bool
    gvf_done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_shape, n_gvfs: int = 0):
        if capacity <= 0:
            raise ConfigError("buffer capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), np.float32)
        self.next_obs = np.zeros_like(self.obs)
        self.action = np.zeros(capacity, np.int64)
        self.reward = np.zeros(capacity, np.float32)
        self.r_main = np.zeros(capacity, np.float32)
        self.cumulants = np.zeros((capacity, n_gvfs), np.float32)
        self.done = np.zeros(capacity, bool)
        self.gvf_done = np.zeros((capacity, n_gvfs), bool)
        self.size = 0
        self.pos = 0
        self.last_indices = None

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.pos
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.r_main[i] = t.r_main
        self.cumulants[i] = t.cumulants
        self.next_obs[i] = t.next_obs
        self.done[i] = t.done
        self.gvf_done[i] = t.gvf_done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.size, size=batch_size)

    def get(self, idx) -> dict:
        return {"obs": self.obs[idx], "action": self.action[idx], "r_main": self.r_main[idx],
                "cumulants": self.cumulants[idx], "next_obs": self.next_obs[idx],
                "done": self.done[idx], "gvf_done": self.gvf_done[idx]}


def td_loss_and_grads(net: MultiHeadNet, batch: dict, gammas: np.ndarray):
    """Per-head mean squared TD error and the gradient of their sum."""
    obs, a = batch["obs"], batch["action"]
    b = obs.shape[0]
    out, tape = nk.forward(net.specs, net.train, obs)
    q = out.reshape(b, net.n_heads, net.n_actions)
    q_next = net.q_all(batch["next_obs"], use_target=True).max(axis=2)
    rewards = np.concatenate([batch["r_main"][:, None], batch["cumulants"]], axis=1)
    done = np.concatenate([batch["done"][:, None], batch["gvf_done"]], axis=1)
    # each GVF bootstraps from its own greedy max, not the behaviour action
    y = rewards + gammas[None, :] * q_next * (~done)
    rows = np.arange(b)
    err = q[rows, :, a] - y
    losses = np.mean(np.square(err, dtype=np.float64), axis=0)
    if not np.all(np.isfinite(losses)):
        raise NonFiniteError(f"non-finite TD loss {losses}")
    grad = np.zeros_like(q)
    grad[rows, :, a] = (2.0 / b) * err
    grads, _ = nk.backward(net.specs, net.train, tape, grad.reshape(b, -1))
    return losses, grads


def train_step(net: MultiHeadNet, buffer: ReplayBuffer, batch_size: int, gamma: float, alpha: float,
               rng: np.random.Generator, gvf_gammas: Sequence[float] | None = None):
    """One SGD step on a uniformly sampled batch; returns per-head losses.

    Returns ``None`` (and logs) when the buffer holds fewer than
    ``batch_size`` transitions.
    """
    if len(buffer) < batch_size or len(buffer) == 0:
        log.warning("replay buffer has %d < %d transitions; skipping update", len(buffer), batch_size)
        return None
    if gvf_gammas is None:
        gvf_gammas = [gamma] * net.n_gvfs
    gammas = np.array([gamma, *gvf_gammas], np.float32)
    idx = buffer.sample_indices(batch_size, rng)
    buffer.last_indices = idx
    losses, grads = td_loss_and_grads(net, buffer.get(idx), gammas)
    if net.optimizer == "adam":
        net.train, net.opt_state = nk.adam_step(net.train, grads, alpha, net.opt_state)
    else:
        net.train, net.opt_state = nk.sgd_step(net.train, grads, alpha, net.momentum, net.opt_state)
    net.updates += 1
    return losses


@dataclass(frozen=True)
class TargetSchedule:
    every: int = 100
    tau: float = 1.0  # 1.0 is a hard copy


def maybe_update_target(net: MultiHeadNet, step_count: int, schedule: TargetSchedule) -> bool:
    """Refresh the target copy when ``step_count`` lands on the schedule."""
    if step_count > 0 and step_count % schedule.every == 0:
        net.sync_target(schedule.tau)
        return True
    return False
