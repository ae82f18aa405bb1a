"""Fine-tuning phase: pattern-driven data collection, conversion of session
logs into mirrored experience datasets, conservative offline training, and
open-loop pattern evaluation.

The deployment rig is emulated by a perturbed copy of the simulator (scaled
peak torques, shifted torque-profile centres, heavier rolling resistance), so
an improvement from fine-tuning is measurable on the bench.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import biomech, pattern as patterns, sac
from .biomech import LEFT, RIGHT, CyclingConfig
from .env import reward
from .errors import InconsistentConfig, InsufficientData
from .pattern import PatternPerturbation, StimulationPattern, pattern_control

RPM_PER_RAD_S = 60.0 / (2.0 * math.pi)


@dataclass(frozen=True)
class RealityGapConfig:
    """Ranges for the simulator perturbation standing in for the real rig."""

    t_max_range: float = 0.2
    q_opt_shift_deg: float = 15.0
    resistance_scale: float = 1.3
    seed: int = 0


_GAP_FIELDS = ("t_max_range", "q_opt_shift_deg", "resistance_scale", "seed")


def gap_from_dict(data: dict) -> RealityGapConfig:
    unknown = sorted(set(data) - set(_GAP_FIELDS))
    if unknown:
        raise ValueError(f"unknown reality-gap keys: {', '.join(unknown)}")
    return RealityGapConfig(**data)


def apply_reality_gap(config: CyclingConfig, muscles, gap: RealityGapConfig):
    """Perturbed (config, muscles) drawn deterministically from gap.seed."""
    rng = np.random.default_rng(gap.seed)
    shift = math.radians(gap.q_opt_shift_deg)
    new_muscles = []
    for mp in muscles:
        scale = 1.0 + rng.uniform(-gap.t_max_range, gap.t_max_range)
        dq = rng.uniform(-shift, shift)
        new_muscles.append(
            replace(
                mp,
                t_max=mp.t_max * scale,
                hip_opt=mp.hip_opt + dq,
                knee_opt=mp.knee_opt + dq,
            )
        )
    new_config = replace(
        config,
        resistance_coulomb=config.resistance_coulomb * gap.resistance_scale,
        resistance_viscous=config.resistance_viscous * gap.resistance_scale,
        perturbation_seed=gap.seed,
    )
    return biomech.validate_config(new_config), tuple(new_muscles)


def config_fingerprint(config: CyclingConfig, muscles) -> str:
    blob = biomech.config_to_json(config) + json.dumps(
        [[m.name, m.t_max, m.activation_tau, m.hip_share, m.hip_opt, m.hip_width,
          m.knee_share, m.knee_opt, m.knee_width] for m in muscles]
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SessionLog:
    """One pattern-driven cycling session sampled at the control rate.

    Row k holds the state at t_k and the binary control applied at t_k; the
    final row's control is the one that would have been applied next, so a
    log of N+1 rows yields N transitions.
    """

    pattern_id: str
    config_hash: str
    dt: float
    times: np.ndarray
    crank_angles: np.ndarray
    cadences: np.ndarray
    controls: np.ndarray  # (rows, 2n), right-leg muscles first

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration_s(self) -> float:
        return float(self.times[-1])


def default_perturbation_schedule() -> tuple[PatternPerturbation | None, ...]:
    """Ten-session schedule: the base pattern first, then small rotations and
    arc-size tweaks around it."""
    return (
        None,
        PatternPerturbation(patterns.ROTATE, 10.0),
        PatternPerturbation(patterns.ROTATE, -10.0),
        PatternPerturbation(patterns.ROTATE, 20.0),
        PatternPerturbation(patterns.ROTATE, -20.0),
        PatternPerturbation(patterns.SHRINK, 10.0),
        PatternPerturbation(patterns.EXTEND, 10.0),
        PatternPerturbation(patterns.ROTATE, 15.0),
        PatternPerturbation(patterns.ROTATE, -15.0),
        PatternPerturbation(patterns.EXTEND, 20.0),
    )


def _describe(pert: PatternPerturbation | None) -> str:
    if pert is None:
        return "base"
    target = pert.muscle or "all"
    return f"{pert.kind}{pert.magnitude_deg:+g}:{target}"


ASSIST_CADENCE = 3.0  # rad/s handed to the crank at session start (the push a
                      # helper or motor gives before stimulation takes over)


def collect_sessions(config: CyclingConfig, muscles, base_pattern: StimulationPattern,
                     n_sessions: int = 10, duration_s: float = 10.0,
                     schedule=None, seed: int = 0, dt: float = 0.05,
                     start_cadence: float = ASSIST_CADENCE) -> list[SessionLog]:
    """Drive the simulator open loop with perturbed copies of the pattern.

    Each session resets to a random crank angle with an assisted starting
    push and logs state and controls at the control rate; the assisted early
    portion is what logs_to_dataset's discard window is for.
    """
    if schedule is None:
        schedule = default_perturbation_schedule()
    if len(schedule) < n_sessions:
        raise ValueError("perturbation schedule shorter than n_sessions")
    rng = np.random.default_rng(seed)
    steps = round(duration_s / dt)
    fingerprint = config_fingerprint(config, muscles)

    logs = []
    for k in range(n_sessions):
        pert = schedule[k]
        pat = base_pattern if pert is None else patterns.perturb_pattern(base_pattern, pert)
        state = biomech.initial_state(config, float(rng.uniform(0.0, biomech.TWO_PI)))
        state = replace(state, cadence=start_cadence)
        times = np.empty(steps + 1)
        angles = np.empty(steps + 1)
        cadences = np.empty(steps + 1)
        controls = np.empty((steps + 1, 2 * config.n_muscles_per_leg))

        def record(i, st):
            times[i] = st.sim_time
            angles[i] = st.crank_angle
            cadences[i] = st.cadence
            controls[i] = np.concatenate([
                pattern_control(pat, st.crank_angle, RIGHT),
                pattern_control(pat, st.crank_angle, LEFT),
            ])

        record(0, state)
        for i in range(1, steps + 1):
            state = biomech.sim_step(config, muscles, state, controls[i - 1], dt)
            record(i, state)
        logs.append(
            SessionLog(
                pattern_id=f"session{k:02d}:{_describe(pert)}",
                config_hash=fingerprint,
                dt=dt,
                times=times,
                crank_angles=angles,
                cadences=cadences,
                controls=controls,
            )
        )
    return logs


class OfflineDataset:
    """Fixed experience set with the same sampling interface as the replay
    buffer; behavior tag records the policy that generated it."""

    def __init__(self, obs, act, rew, next_obs, session_ids, behavior: str):
        self.obs = obs
        self.act = act
        self.rew = rew
        self.next_obs = next_obs
        self.session_ids = tuple(session_ids)
        self.behavior = behavior

    def __len__(self) -> int:
        return len(self.rew)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, len(self.rew), size=batch_size)
        return {
            "obs": self.obs[idx],
            "act": self.act[idx],
            "rew": self.rew[idx],
            "next_obs": self.next_obs[idx],
        }


def logs_to_dataset(logs, beta: float = 1.0, discard_first_s: float = 0.0) -> OfflineDataset:
    """Mirrored experience tuples from consecutive log rows.

    Each pair of consecutive rows yields a right-leg tuple and its mirrored
    left-leg twin; the last row of a session only serves as a next state.
    Rows earlier than discard_first_s are dropped to cut spin-up transients.
    """
    if not logs:
        raise InsufficientData("no session logs given")
    fingerprints = {log.config_hash for log in logs}
    if len(fingerprints) != 1:
        raise InconsistentConfig(f"logs from different simulators: {sorted(fingerprints)}")

    obs_rows, act_rows, rew_rows, next_rows = [], [], [], []
    n = logs[0].controls.shape[1] // 2
    for log in logs:
        rows = len(log)
        for i in range(rows - 1):
            if log.times[i] < discard_first_s:
                continue
            u_r = log.controls[i, :n]
            u_l = log.controls[i, n:]
            prev_r = log.controls[i - 1, :n] if i > 0 else np.zeros(n)
            prev_l = log.controls[i - 1, n:] if i > 0 else np.zeros(n)
            sin_i, cos_i = math.sin(log.crank_angles[i]), math.cos(log.crank_angles[i])
            sin_j, cos_j = math.sin(log.crank_angles[i + 1]), math.cos(log.crank_angles[i + 1])
            w_i, w_j = log.cadences[i], log.cadences[i + 1]

            obs_rows.append([sin_i, cos_i, w_i, *prev_r])
            act_rows.append(u_r)
            rew_rows.append(reward(w_j, u_r, beta))
            next_rows.append([sin_j, cos_j, w_j, *u_r])

            obs_rows.append([-sin_i, -cos_i, w_i, *prev_l])
            act_rows.append(u_l)
            rew_rows.append(reward(w_j, u_l, beta))
            next_rows.append([-sin_j, -cos_j, w_j, *u_l])

    return OfflineDataset(
        np.array(obs_rows),
        np.array(act_rows),
        np.array(rew_rows),
        np.array(next_rows),
        [log.pattern_id for log in logs],
        behavior="pattern_controller",
    )


def finetune(agent: sac.SacAgent, dataset: OfflineDataset, tc: sac.TrainConfig,
             epochs: int = 100) -> sac.SacAgent:
    """Conservative offline updates from the fixed dataset only.

    One epoch runs tc.grad_steps_per_episode gradient steps; nothing here
    touches the simulator, which biomech.sim_step_count() can prove.
    """
    if len(dataset) < tc.batch:
        raise InsufficientData(
            f"dataset has {len(dataset)} tuples, need at least {tc.batch}"
        )
    for _ in range(epochs):
        sac.sac_update(agent, dataset, tc)
    return agent


def evaluate_pattern(config: CyclingConfig, muscles, p: StimulationPattern,
                     duration_s: float = 30.0, n_trials: int = 5, seed: int = 0,
                     transient_s: float = 5.0, dt: float = 0.05,
                     start_cadence: float = ASSIST_CADENCE) -> dict:
    """Open-loop pattern drive from random start angles.

    Each trial begins with the assisted starting push; the mean RPM is taken
    after the transient window so the push itself does not count.
    """
    steps = round(duration_s / dt)
    skip = round(transient_s / dt)
    trials = []
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, trial])
        state = biomech.initial_state(config, float(rng.uniform(0.0, biomech.TWO_PI)))
        state = replace(state, cadence=start_cadence)
        rpm_trace = np.empty(steps)
        for i in range(steps):
            controls = np.concatenate([
                pattern_control(p, state.crank_angle, RIGHT),
                pattern_control(p, state.crank_angle, LEFT),
            ])
            state = biomech.sim_step(config, muscles, state, controls, dt)
            rpm_trace[i] = state.cadence * RPM_PER_RAD_S
        trials.append({
            "start_seed": [seed, trial],
            "mean_rpm": float(np.mean(rpm_trace[skip:])),
            "final_rpm": float(rpm_trace[-1]),
            "rpm_trace": rpm_trace,
        })
    return {
        "mean_rpm": float(np.mean([t["mean_rpm"] for t in trials])),
        "trials": trials,
        "duration_s": duration_s,
        "transient_s": transient_s,
    }


def save_session_log(log: SessionLog, csv_path) -> None:
    n2 = log.controls.shape[1]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["time_s", "crank_angle_rad", "cadence_rad_s"]
            + [f"u{i}" for i in range(n2)]
        )
        for i in range(len(log)):
            writer.writerow(
                [f"{log.times[i]:.9g}", f"{log.crank_angles[i]:.9g}",
                 f"{log.cadences[i]:.9g}"]
                + [f"{v:.9g}" for v in log.controls[i]]
            )
    sidecar = {
        "pattern_id": log.pattern_id,
        "config_hash": log.config_hash,
        "dt": log.dt,
        "rows": len(log),
    }
    with open(str(csv_path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_session_log(csv_path) -> SessionLog:
    with open(str(csv_path) + ".json") as fh:
        sidecar = json.load(fh)
    times, angles, cadences, controls = [], [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n2 = len(header) - 3
        for row in reader:
            times.append(float(row[0]))
            angles.append(float(row[1]))
            cadences.append(float(row[2]))
            controls.append([float(v) for v in row[3 : 3 + n2]])
    return SessionLog(
        pattern_id=sidecar["pattern_id"],
        config_hash=sidecar["config_hash"],
        dt=sidecar["dt"],
        times=np.array(times),
        crank_angles=np.array(angles),
        cadences=np.array(cadences),
        controls=np.array(controls),
    )
