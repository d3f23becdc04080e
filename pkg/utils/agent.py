"""Model-C: a DDPG agent over the seven discrete shepherding actions."""
import copy
import logging
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import TrainingDivergedError
from .networks import Mlp, soft_update
from .simenv import Grant

logger = logging.getLogger(__name__)

STATE_DIM = 8


class SchedulingAction(IntEnum):
    CORE_UP = 0
    CORE_DOWN = 1
    WAY_UP = 2
    WAY_DOWN = 3
    BW_UP = 4
    BW_DOWN = 5
    IDLE = 6

    @property
    def unit(self) -> Grant:
        return _UNITS[self]

    @property
    def is_reclaim(self) -> bool:
        return self in (SchedulingAction.CORE_DOWN, SchedulingAction.WAY_DOWN, SchedulingAction.BW_DOWN)

    @property
    def is_grow(self) -> bool:
        return self in (SchedulingAction.CORE_UP, SchedulingAction.WAY_UP, SchedulingAction.BW_UP)

    @property
    def dimension(self) -> Optional[str]:
        return {0: "cores", 1: "cores", 2: "ways", 3: "ways", 4: "bw", 5: "bw"}.get(int(self))


_UNITS = {
    SchedulingAction.CORE_UP: Grant(1, 0, 0),
    SchedulingAction.CORE_DOWN: Grant(1, 0, 0),
    SchedulingAction.WAY_UP: Grant(0, 1, 0),
    SchedulingAction.WAY_DOWN: Grant(0, 1, 0),
    SchedulingAction.BW_UP: Grant(0, 0, 1),
    SchedulingAction.BW_DOWN: Grant(0, 0, 1),
    SchedulingAction.IDLE: Grant(),
}
N_ACTIONS = len(SchedulingAction)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: SchedulingAction
    reward: float
    next_state: np.ndarray


class ExperiencePool:
    """Bounded FIFO; the oldest transition is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("pool capacity must be positive")
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, transition: Transition) -> None:
        self.items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.choice(len(self.items), size=batch_size, replace=len(self.items) < batch_size)
        return [self.items[i] for i in idx]


@dataclass(frozen=True)
class UpdateResult:
    critic_loss: float
    actor_loss: float


def _stack(batch: Sequence[Transition]):
    states = torch.as_tensor(np.stack([t.state for t in batch]), dtype=torch.float64)
    actions = F.one_hot(torch.as_tensor([int(t.action) for t in batch]), N_ACTIONS).to(torch.float64)
    rewards = torch.as_tensor([t.reward for t in batch], dtype=torch.float64).unsqueeze(-1)
    next_states = torch.as_tensor(np.stack([t.next_state for t in batch]), dtype=torch.float64)
    return states, actions, rewards, next_states


class ShepherdAgent:
    """
    Actor: state -> softmax over actions. Critic: (state, one-hot action) -> Q.
    Both keep target copies blended at rate tau after every update.
    """

    def __init__(
        self,
        state_dim: int = STATE_DIM,
        gamma: float = 0.99,
        tau: float = 0.001,
        noise_mu: float = 0.0,
        noise_sigma: float = 0.1,
        noise_decay: float = 0.99,
        batch_size: int = 64,
        pool_capacity: int = 100_000,
        actor_lr: float = 1e-4,
        critic_lr: float = 1e-3,
        seed: int = 0,
    ):
        if not (0.0 <= gamma <= 1.0 and 0.0 <= tau <= 1.0):
            raise ValueError("gamma and tau must lie in [0, 1]")
        self.gamma = gamma
        self.tau = tau
        self.noise_mu = noise_mu
        self.noise_sigma = noise_sigma
        self.noise_decay = noise_decay
        self.batch_size = batch_size
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        # agent networks run without dropout
        self.actor = Mlp(state_dim, N_ACTIONS, head="softmax", dropout_rate=0.0, seed=seed)
        self.critic = Mlp(state_dim + N_ACTIONS, 1, head="linear", dropout_rate=0.0, seed=seed + 1)
        self.actor_target = copy.deepcopy(self.actor)
        self.critic_target = copy.deepcopy(self.critic)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=critic_lr)
        self.pool = ExperiencePool(pool_capacity)
        self.noise = torch.Generator().manual_seed(seed)
        self.rng = np.random.default_rng(seed)

    @classmethod
    def from_settings(cls, settings, seed: Optional[int] = None) -> "ShepherdAgent":
        return cls(
            gamma=settings.gamma,
            tau=settings.tau,
            noise_mu=settings.noise_mu,
            noise_sigma=settings.noise_sigma,
            noise_decay=settings.noise_decay,
            batch_size=settings.batch_size,
            pool_capacity=settings.pool_capacity,
            actor_lr=settings.actor_lr,
            critic_lr=settings.critic_lr,
            seed=settings.seed if seed is None else seed,
        )

    def networks(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "critic": self.critic,
            "actor_target": self.actor_target,
            "critic_target": self.critic_target,
        }

    def load_networks(self, networks: dict[str, Mlp]) -> None:
        for name, net in self.networks().items():
            net.copy_from(networks[name])
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=self.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=self.critic_lr)

    def action_scores(self, state, explore: bool = True) -> np.ndarray:
        x = torch.as_tensor(np.asarray(state, dtype=float), dtype=torch.float64)
        with torch.no_grad():
            logits = self.actor(x, logits=True)
            if explore and self.noise_sigma > 0:
                logits = logits + self.noise_mu + self.noise_sigma * torch.randn(logits.shape, generator=self.noise)
            return F.softmax(logits, dim=-1).numpy()

    def select_action(self, state, explore: bool = True) -> SchedulingAction:
        # np.argmax keeps the first maximum, so ties go to the lowest action id
        return SchedulingAction(int(np.argmax(self.action_scores(state, explore))))

    def remember(self, transition: Transition) -> None:
        self.pool.push(transition)

    def td_targets(self, rewards, next_states) -> torch.Tensor:
        """y = R + gamma * Q'(S', pi'(S'))"""
        with torch.no_grad():
            next_q = self.critic_target(torch.cat([next_states, self.actor_target(next_states)], dim=-1))
            return rewards + self.gamma * next_q

    def critic_loss(self, states, actions, rewards, next_states) -> torch.Tensor:
        y = self.td_targets(rewards, next_states)
        q = self.critic(torch.cat([states, actions], dim=-1))
        return F.mse_loss(q, y)

    def actor_loss(self, states) -> torch.Tensor:
        return -self.critic(torch.cat([states, self.actor(states)], dim=-1)).mean()

    def update(self, batch: Optional[Sequence[Transition]] = None) -> Optional[UpdateResult]:
        """One critic and one actor step, then soft target updates. None when the pool is too small."""
        if batch is None:
            if len(self.pool) < self.batch_size:
                logger.debug("Pool holds %d < %d transitions, update skipped", len(self.pool), self.batch_size)
                return None
            batch = self.pool.sample(self.batch_size, self.rng)
        states, actions, rewards, next_states = _stack(batch)

        self.critic_opt.zero_grad()
        c_loss = self.critic_loss(states, actions, rewards, next_states)
        c_loss.backward()
        self.critic_opt.step()

        self.actor_opt.zero_grad()
        a_loss = self.actor_loss(states)
        a_loss.backward()
        self.actor_opt.step()
        # actor step leaves gradients on the critic
        self.critic_opt.zero_grad()

        soft_update(self.actor_target, self.actor, self.tau)
        soft_update(self.critic_target, self.critic, self.tau)
        c, a = float(c_loss), float(a_loss)
        if not (np.isfinite(c) and np.isfinite(a)):
            raise TrainingDivergedError(f"agent losses diverged: critic={c}, actor={a}")
        return UpdateResult(c, a)

    def decay_noise(self) -> None:
        self.noise_sigma *= self.noise_decay

    def warm_start(self, pretrained: "ShepherdAgent") -> "ShepherdAgent":
        """Copy networks from a pretrained agent; the pool starts empty."""
        self.load_networks(pretrained.networks())
        return self
