"""RL environment around the cycling plant.

Observations are [sin(crank_angle), cos(crank_angle), cadence, previous
action]; one physical step yields two experience tuples, the right-leg one
and a mirrored left-leg one whose observation negates sine and cosine (the
left leg sees the crank half a turn ahead).  Reward is next-step cadence
minus a quadratic action penalty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import biomech
from .biomech import LEFT, RIGHT, CyclingConfig, SimState

DISCOUNT = 0.99


@dataclass(frozen=True)
class EpisodeConfig:
    steps: int = 100
    dt: float = 0.05
    beta: float = 1.0
    seed: int = 0
    gamma: float = DISCOUNT

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class ExperienceTuple:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray


def make_observation(state: SimState, prev_action, side: str) -> np.ndarray:
    s = math.sin(state.crank_angle)
    c = math.cos(state.crank_angle)
    if side == LEFT:
        s, c = -s, -c
    return np.array([s, c, state.cadence, *prev_action], dtype=float)


def reward(cadence_next: float, action, beta: float) -> float:
    a = np.asarray(action, dtype=float)
    return float(cadence_next - beta * np.sum(a * a))


class CyclingEnv:
    """Episodic wrapper: seeded resets, mirrored tuple construction, logging."""

    def __init__(self, config: CyclingConfig, muscles=None, episode: EpisodeConfig | None = None):
        self.config = biomech.validate_config(config)
        self.muscles = tuple(muscles) if muscles is not None else biomech.default_muscle_set(config)
        if len(self.muscles) != config.n_muscles_per_leg:
            raise ValueError("muscle set size does not match config.n_muscles_per_leg")
        self.episode = episode or EpisodeConfig()
        self.rng = np.random.default_rng(self.episode.seed)
        self.n_actions = config.n_muscles_per_leg
        self.obs_dim = 3 + self.n_actions
        self.interaction_count = 0
        self.state: SimState | None = None
        self._prev_right = np.zeros(self.n_actions)
        self._prev_left = np.zeros(self.n_actions)

    def reset(self, seed: int | None = None) -> tuple[SimState, np.ndarray]:
        rng = np.random.default_rng(seed) if seed is not None else self.rng
        angle = float(rng.uniform(0.0, biomech.TWO_PI))
        self.state = biomech.initial_state(self.config, angle)
        self._prev_right = np.zeros(self.n_actions)
        self._prev_left = np.zeros(self.n_actions)
        return self.state, make_observation(self.state, self._prev_right, RIGHT)

    def observe(self, side: str) -> np.ndarray:
        prev = self._prev_right if side == RIGHT else self._prev_left
        return make_observation(self.state, prev, side)

    def step(self, a_right, a_left) -> tuple[SimState, ExperienceTuple, ExperienceTuple]:
        """Apply both legs' stimulation for one control interval.

        Returns the new state plus the right and mirrored-left experience
        tuples; both share the next-step cadence but carry their own action
        penalty.
        """
        if self.state is None:
            raise RuntimeError("reset() the environment before stepping")
        a_right = np.clip(np.asarray(a_right, dtype=float), 0.0, 1.0)
        a_left = np.clip(np.asarray(a_left, dtype=float), 0.0, 1.0)

        obs_r = make_observation(self.state, self._prev_right, RIGHT)
        obs_l = make_observation(self.state, self._prev_left, LEFT)

        controls = np.concatenate([a_right, a_left])
        new_state = biomech.sim_step(
            self.config, self.muscles, self.state, controls, self.episode.dt
        )
        self.interaction_count += 1

        beta = self.episode.beta
        r_right = reward(new_state.cadence, a_right, beta)
        r_left = reward(new_state.cadence, a_left, beta)

        next_r = make_observation(new_state, a_right, RIGHT)
        next_l = make_observation(new_state, a_left, LEFT)

        self.state = new_state
        self._prev_right = a_right
        self._prev_left = a_left
        return (
            new_state,
            ExperienceTuple(obs_r, a_right, r_right, next_r),
            ExperienceTuple(obs_l, a_left, r_left, next_l),
        )


def run_episode(policy, env: CyclingEnv, log_path=None, seed: int | None = None):
    """Run one fixed-length episode, querying `policy(obs)` once per leg per
    step.  Returns (discounted right-leg return, list of all tuples)."""
    env.reset(seed=seed)
    ec = env.episode
    tuples = []
    episode_return = 0.0
    discount = 1.0
    rows = [] if log_path is not None else None
    for _ in range(ec.steps):
        a_right = policy(env.observe(RIGHT))
        a_left = policy(env.observe(LEFT))
        state, tup_r, tup_l = env.step(a_right, a_left)
        tuples.append(tup_r)
        tuples.append(tup_l)
        episode_return += discount * tup_r.reward
        discount *= ec.gamma
        if rows is not None:
            rows.append(
                (state.sim_time, state.crank_angle, state.cadence,
                 list(map(float, a_right)), list(map(float, a_left)),
                 tup_r.reward, tup_l.reward)
            )
    if rows is not None:
        write_episode_csv(log_path, rows, env.n_actions)
    return episode_return, tuples


def write_episode_csv(path, rows, n_actions: int) -> None:
    header = ["time_s", "crank_angle_rad", "cadence_rad_s"]
    header += [f"u_right_{i}" for i in range(n_actions)]
    header += [f"u_left_{i}" for i in range(n_actions)]
    header += ["reward_right", "reward_left"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, angle, cad, a_r, a_l, r_r, r_l in rows:
            writer.writerow(
                [f"{t:.9g}", f"{angle:.9g}", f"{cad:.9g}"]
                + [f"{v:.9g}" for v in a_r]
                + [f"{v:.9g}" for v in a_l]
                + [f"{r_r:.9g}", f"{r_l:.9g}"]
            )
