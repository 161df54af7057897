"""Experiment orchestration: configs, the algorithm matrix, runs and sweeps."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from . import gridworlds as gw
from . import numkit as nk
from .auxrewards import ShapingRule, StateCounter, cir_reward, shaped_reward
from .errors import ConfigError, NonFiniteError
from .explore import (ActionRepeat, EpsilonSchedule, ExplorationState, MovementOptions, dez_action,
                      epsilon_at, eps_greedy_action)
from .gvf import SUITES, cumulants, gvf_suite
from .metrics import (EpisodeRecord, ci95, convergence, farthest_distance, unique_states,
                      write_csv)
from .qlearner import (MultiHeadNet, ReplayBuffer, TargetSchedule, Transition, maybe_update_target,
                       mlp_trunk, train_step)

log = logging.getLogger(__name__)

OUT_ENV_VAR = "DEZGREEDY_OUT"
DEFAULT_SEEDS = [54334, 82654, 21198, 83554, 29948]


@dataclass(frozen=True)
class Algorithm:
    behaviour: str  # "eps", "ez" or "dez"
    gvf_heads: bool = False
    reward: str | None = None  # "cir", "rs" or None
    options: bool = True  # DoorKey: movement options instead of raw repetition


ALGORITHMS = {
    "DQN": Algorithm("eps"),
    "DQN+GVF": Algorithm("eps", gvf_heads=True),
    "EZ-DQN": Algorithm("ez"),
    "EZ-DQN(Vanilla)": Algorithm("ez", options=False),
    "EZ-DQN+GVF": Algorithm("ez", gvf_heads=True),
    "DEZ-DQN+GVF": Algorithm("dez", gvf_heads=True),
    "DQN+CIR": Algorithm("eps", reward="cir"),
    "DQN+RS": Algorithm("eps", reward="rs"),
}

# hyper-parameter table rows; architecture lists hidden layers only, the
# (M+1) heads of width |A| are appended by the network
TABLE_ROWS = {
    ("tworooms", 50): dict(episodes=4000, batch=4096, gamma=0.99, alpha=0.001, epsilon_start=1.0,
                           epsilon_stop=0.01, epsilon_decay_base=0.01, beta=1.0, z_max=10, gvfs=1, eta=0.01,
                           architecture=[32, 32], buffer=50000, target_update=100, policy_update=10),
    ("subgoal", 50): dict(episodes=8000, batch=4096, gamma=0.99, alpha=0.001, epsilon_start=1.0,
                          epsilon_stop=0.01, epsilon_decay_base=0.001, beta=1.0, z_max=30, gvfs=2, eta=0.01,
                          architecture=[32, 32], buffer=60000, target_update=100, policy_update=10),
    ("doorkey", 6): dict(episodes=10000, batch=2048, gamma=0.95, alpha=0.0001, tau=0.05, epsilon_start=1.0,
                         epsilon_stop=0.01, epsilon_decay_base=0.01, beta=0.5, z_max=3, gvfs=2, eta=0.5,
                         architecture=["conv(C=16,F=2)", "maxpool(F=2,S=2)", 60, 60], buffer=50000,
                         target_update=1000, target_unit="steps", policy_update=10),
    ("doorkey", 8): dict(episodes=30000, batch=4096, gamma=0.95, alpha=0.0001, tau=0.05, epsilon_start=1.0,
                         epsilon_stop=0.01, epsilon_decay_base=0.01, beta=0.5, z_max=3, gvfs=2, eta=0.5,
                         architecture=["conv(C=16,F=2)", "maxpool(F=2,S=1)", "conv(C=16,F=2)",
                                       "maxpool(F=2,S=1)", 120, 60, 10],
                         buffer=60000, target_update=1000, target_unit="steps", policy_update=10),
}


def table_defaults(env: str, grid: int) -> dict:
    if env == "doorkey":
        row = TABLE_ROWS[("doorkey", 6 if grid <= 6 else 8)]
    elif env in ("subgoal",):
        row = TABLE_ROWS[("subgoal", 50)]
    else:
        row = TABLE_ROWS[("tworooms", 50)]
    d = dict(row, seeds=list(DEFAULT_SEEDS))
    d["shaping_bonus"] = d["eta"]
    return d


@dataclass
class RunConfig:
    env: str = "tworooms"
    grid: int = 50
    algorithm: str = "DEZ-DQN+GVF"
    episodes: int = 4000
    batch: int = 4096
    gamma: float = 0.99
    alpha: float = 0.001
    tau: float | None = None
    epsilon_start: float = 1.0
    epsilon_stop: float = 0.01
    epsilon_decay_base: float = 0.01
    beta: float = 1.0
    z_max: int = 10
    gvfs: int = 1
    eta: float = 0.01
    shaping_bonus: float | None = 0.01
    architecture: list = field(default_factory=lambda: [32, 32])
    buffer: int = 50000
    target_update: int = 100
    target_unit: str = "updates"  # count target_update in learner updates or env steps
    policy_update: int = 10
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    optimizer: str = "adam"
    momentum: float = 0.0
    gvf_gamma: float | None = None
    option_early_stop: bool = False
    timeout_bootstrap: bool = False  # True: time-outs are stored as non-terminal
    checkpoints: list | None = None  # episode indices; None = first, middle, last
    name: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        env, grid = d.get("env", "tworooms"), int(d.get("grid", 50))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        merged = table_defaults(env, grid)
        merged.update(d)
        merged.update(env=env, grid=grid)
        return cls(**merged)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)

    @property
    def run_id(self) -> str:
        if self.name:
            return self.name
        slug = re.sub(r"[^A-Za-z0-9]+", "-", self.algorithm).strip("-").lower()
        return f"{self.env}{self.grid}_{slug}"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys")
    return RunConfig.from_dict(data)


_CONV = re.compile(r"conv\w*\(\s*C\s*=\s*(\d+)\s*,\s*F\s*=\s*(\d+)\s*(?:,\s*S\s*=\s*(\d+)\s*)?\)", re.I)
_POOL = re.compile(r"maxpool\w*\(\s*F\s*=\s*(\d+)\s*,\s*S\s*=\s*(\d+)\s*\)", re.I)


def build_trunk(architecture: Sequence) -> list[nk.LayerSpec]:
    """Hidden layers from config items: ``32``, ``"conv(C=16,F=2)"``, ``"maxpool(F=2,S=2)"``."""
    specs = []
    for item in architecture:
        if isinstance(item, int):
            specs += mlp_trunk([item])
            continue
        text = str(item).strip()
        if text.isdigit():
            specs += mlp_trunk([int(text)])
        elif m := _CONV.fullmatch(text):
            specs += [nk.conv2d(int(m[1]), int(m[2]), int(m[3] or 1)), nk.relu()]
        elif m := _POOL.fullmatch(text):
            specs.append(nk.maxpool2d(int(m[1]), int(m[2])))
        else:
            raise ConfigError(f"cannot parse architecture item {item!r}")
    return specs


def validate(cfg: RunConfig) -> list[str]:
    """Return a list of problems; empty means the config is runnable."""
    bad = []
    if cfg.algorithm not in ALGORITHMS:
        bad.append(f"algorithm {cfg.algorithm!r} not in {sorted(ALGORITHMS)}")
    if cfg.env not in SUITES:
        bad.append(f"env {cfg.env!r} not in {sorted(SUITES)}")
    if cfg.grid < 5:
        bad.append("grid must be >= 5")
    algo = ALGORITHMS.get(cfg.algorithm)
    if algo and algo.behaviour in ("ez", "dez") and cfg.z_max < 1:
        bad.append("z_max must be >= 1 for EZ/DEZ algorithms")
    if algo and algo.reward == "rs" and not cfg.shaping_bonus:
        bad.append("DQN+RS needs a positive shaping_bonus")
    if algo and algo.gvf_heads and cfg.env in SUITES and cfg.gvfs != len(SUITES[cfg.env]):
        bad.append(f"gvfs={cfg.gvfs} but {cfg.env} defines {len(SUITES[cfg.env])} GVFs")
    if not 0 < cfg.beta <= 1:
        bad.append("beta must be in (0, 1]")
    if not 0 <= cfg.gamma <= 1:
        bad.append("gamma must be in [0, 1]")
    if cfg.gvf_gamma is not None and not 0 <= cfg.gvf_gamma <= 1:
        bad.append("gvf_gamma must be in [0, 1]")
    if cfg.alpha <= 0:
        bad.append("alpha must be positive")
    if cfg.tau is not None and not 0 < cfg.tau <= 1:
        bad.append("tau must be in (0, 1]")
    if not 0 <= cfg.epsilon_stop <= cfg.epsilon_start <= 1:
        bad.append("need 0 <= epsilon_stop <= epsilon_start <= 1")
    if not 0 < cfg.epsilon_decay_base < 1:
        bad.append("epsilon_decay_base must be in (0, 1)")
    if cfg.eta < 0:
        bad.append("eta must be >= 0")
    if cfg.episodes <= 0 or cfg.batch <= 0 or cfg.buffer < cfg.batch:
        bad.append("need episodes > 0, batch > 0 and buffer >= batch")
    if cfg.target_unit not in ("updates", "steps"):
        bad.append("target_unit must be 'updates' or 'steps'")
    if cfg.target_update <= 0 or cfg.policy_update <= 0:
        bad.append("update cadences must be positive")
    if not cfg.seeds:
        bad.append("seed list is empty")
    if cfg.optimizer not in ("sgd", "adam"):
        bad.append("optimizer must be 'sgd' or 'adam'")
    if not 0 <= cfg.momentum < 1:
        bad.append("momentum must be in [0, 1)")
    try:
        trunk = build_trunk(cfg.architecture)
        if cfg.env in gw.ENV_KINDS and cfg.grid >= 5:
            env = gw.GridEnv(cfg.env, cfg.grid)
            nk.output_shape(trunk, env.obs_shape)
    except ConfigError as exc:
        bad.append(str(exc))
    return bad


# --------------------------------------------------------------------------
# a single seed

@dataclass
class SeedResult:
    seed: int
    records: list
    summary: dict
    csv_path: str | None = None
    summary_path: str | None = None
    checkpoints: list = field(default_factory=list)


def _streams(seed: int):
    env_ss, init_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(4)
    return (int(env_ss.generate_state(1)[0]), np.random.default_rng(init_ss),
            np.random.default_rng(act_ss), np.random.default_rng(replay_ss))


def run_seed(cfg: RunConfig, seed: int, out_dir=None, stop_after: int | None = None) -> SeedResult:
    """Train one agent; optionally write CSV, JSON summary and checkpoints.

    ``stop_after`` ends the run early (smoke tests) without changing the
    epsilon schedule, which is always laid out over ``cfg.episodes``.
    """
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    algo = ALGORITHMS[cfg.algorithm]
    env_seed, rng_init, rng_act, rng_replay = _streams(seed)
    env = gw.make_env(cfg.env, cfg.grid, env_seed)
    m = cfg.gvfs if algo.gvf_heads else 0
    gvf_gamma = cfg.gamma if cfg.gvf_gamma is None else cfg.gvf_gamma
    specs = gvf_suite(cfg.env, gvf_gamma)[:m]
    net = MultiHeadNet(env.obs_shape, env.n_actions, build_trunk(cfg.architecture), m, rng_init,
                       momentum=cfg.momentum, optimizer=cfg.optimizer)
    buffer = ReplayBuffer(cfg.buffer, env.obs_shape, m)
    schedule = EpsilonSchedule(cfg.episodes, cfg.epsilon_start, cfg.epsilon_stop, cfg.epsilon_decay_base,
                               cfg.beta)
    target_schedule = TargetSchedule(cfg.target_update, 1.0 if cfg.tau is None else cfg.tau)
    if env.kind == gw.DOORKEY and algo.options:
        repeat = MovementOptions(env)
    else:
        repeat = ActionRepeat(env.n_actions)
    n_dez = m if algo.behaviour == "dez" else 0
    counter = StateCounter()
    rule = ShapingRule(cfg.shaping_bonus or 0.0, SUITES[cfg.env])
    seen = set()
    q = net.q_values
    ckpt_eps = set(cfg.checkpoints if cfg.checkpoints is not None
                   else (0, cfg.episodes // 2, cfg.episodes - 1))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.run_id}_seed{seed}"
    checkpoints = []
    records = []
    aborted = None
    steps_total = 0

    try:
        n_episodes = cfg.episodes if stop_after is None else min(stop_after, cfg.episodes)
        for ep in range(n_episodes):
            eps = epsilon_at(schedule, ep)
            obs = env.reset()
            rule.new_episode()
            key = env.state_key()
            new = 0
            if key not in seen:
                seen.add(key)
                new += 1
            spawn = env.state.pos
            positions = [spawn]
            xs = ExplorationState()
            gdone = None
            first = {}
            opt_counts = [0] * (n_dez + 1)
            z_counts = [0] * max(cfg.z_max, 1)
            while True:
                if algo.behaviour == "eps":
                    a = eps_greedy_action(q, obs, eps, rng_act, env.n_actions)
                else:
                    a, xs = dez_action(xs, eps, cfg.z_max, n_dez, q, obs, rng_act, repeat)
                    if xs.started:
                        opt_counts[xs.g] += 1
                        z_counts[xs.z - 1] += 1
                res = env.step(a)
                step_idx = env.state.t - 1
                for ev in res.events:
                    first.setdefault(ev, step_idx)
                key = env.state_key()
                if key not in seen:
                    seen.add(key)
                    new += 1
                positions.append(env.state.pos)
                if m:
                    before = gdone
                    c, gdone = cumulants(specs, res.events, gdone)
                    if (cfg.option_early_stop and xs.g > 0 and xs.z > 0 and gdone[xs.g - 1]
                            and not (before is not None and before[xs.g - 1])):
                        xs = dataclasses.replace(xs, z=0)
                else:
                    c, gdone = _EMPTY, _EMPTY_DONE
                if algo.reward == "cir":
                    r_main = cir_reward(counter, key, res.reward, cfg.eta)
                elif algo.reward == "rs":
                    r_main = shaped_reward(rule, res.events, res.reward)
                else:
                    r_main = res.reward
                done = res.goal_reached if cfg.timeout_bootstrap else res.terminal
                buffer.add(Transition(obs, a, res.reward, r_main, c, res.obs, done, gdone))
                steps_total += 1
                if steps_total % cfg.policy_update == 0 and len(buffer) >= cfg.batch:
                    train_step(net, buffer, cfg.batch, cfg.gamma, cfg.alpha, rng_replay,
                               [s.gamma for s in specs])
                    if cfg.target_unit == "updates":
                        maybe_update_target(net, net.updates, target_schedule)
                if cfg.target_unit == "steps":
                    maybe_update_target(net, steps_total, target_schedule)
                obs = res.obs
                if res.terminal:
                    break
            records.append(EpisodeRecord(cfg.run_id, seed, ep, res.reward, env.state.t, new,
                                         farthest_distance(positions, spawn), eps, first, opt_counts,
                                         z_counts if algo.behaviour != "eps" else []))
            if out is not None and ep in ckpt_eps:
                path = out / f"{stem}_ep{ep}.nkcp"
                with open(path, "wb") as fh:
                    nk.dump_params(fh, net.specs, net.train, env.obs_shape)
                checkpoints.append(str(path))
    except NonFiniteError as exc:
        aborted = {"episode": len(records), "step": steps_total, "error": str(exc)}
        log.error("run %s seed %d aborted: %s", cfg.run_id, seed, exc)

    summary = summarize(cfg, seed, records, net, len(seen), aborted)
    result = SeedResult(seed, records, summary, checkpoints=checkpoints)
    if out is not None:
        result.csv_path = str(out / f"{stem}.csv")
        result.summary_path = str(out / f"{stem}.json")
        write_csv(records, result.csv_path)
        with open(result.summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


_EMPTY = np.zeros(0, np.float32)
_EMPTY_DONE = np.zeros(0, bool)


def summarize(cfg: RunConfig, seed: int, records, net=None, unique_total=None, aborted=None) -> dict:
    stat = convergence(records)
    return {
        "run_id": cfg.run_id,
        "seed": seed,
        "config": cfg.to_dict(),
        "episodes_run": len(records),
        "final_reward": None if not stat.available else stat.final,
        "episodes_to_90": stat.episodes_to_90,
        "convergence_available": stat.available,
        "convergence_note": stat.note,
        "unique_states": unique_total,
        "unique_states_per_100": unique_states(records),
        "gvf_heads": None if net is None else net.n_gvfs,
        "head_reads": None if net is None else [int(v) for v in net.head_reads],
        "learner_updates": None if net is None else int(net.updates),
        "aborted": aborted,
    }


# --------------------------------------------------------------------------
# multi-seed runs and sweeps

@dataclass
class RunManifest:
    config: dict
    code_version: str
    outputs: dict  # seed -> {"csv", "summary", "checkpoints"}
    started: str
    finished: str
    path: str | None = None


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def _run_one(args):
    cfg, seed, out_dir, stop_after = args
    return run_seed(cfg, seed, out_dir, stop_after)


def run(cfg: RunConfig, out_dir=None, seeds: Sequence[int] | None = None, workers: int = 1,
        stop_after: int | None = None) -> RunManifest:
    """Run every seed, write per-seed outputs and a manifest."""
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.seeds if seeds is None else seeds)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    jobs = [(cfg, s, str(out), stop_after) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    manifest = RunManifest(cfg.to_dict(), __version__,
                           {str(r.seed): {"csv": r.csv_path, "summary": r.summary_path,
                                          "checkpoints": r.checkpoints} for r in results},
                           started, time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    manifest.path = str(out / f"{cfg.run_id}_manifest.json")
    with open(manifest.path, "w") as fh:
        json.dump(dataclasses.asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


SWEEP_AXES = {"z_max": "z_max", "beta": "beta", "grid": "grid", "grid_dim": "grid"}


def sweep_configs(base: RunConfig, axis: str, values: Sequence, paired_z_max: Sequence[int] | None = None):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    key = SWEEP_AXES[axis]
    if paired_z_max is not None and len(paired_z_max) != len(values):
        raise ConfigError("paired z_max list must match the values list")
    cfgs = []
    for i, v in enumerate(values):
        v = int(v) if key in ("z_max", "grid") else float(v)
        if key == "beta" and not 0 < v <= 1:
            raise ConfigError(f"beta={v} outside (0, 1]")
        kw = {key: v}
        if paired_z_max is not None:
            kw["z_max"] = int(paired_z_max[i])
        if key == "grid":
            kw["episodes"] = base.episodes
        cfg = base.replace(**kw)
        cfg = cfg.replace(name=f"{base.run_id}_{key}{v}" + (f"_z{kw['z_max']}" if paired_z_max else ""))
        cfgs.append(cfg)
    return cfgs


def sweep(base: RunConfig, axis: str, values: Sequence, out_dir=None, paired_z_max=None,
          workers: int = 1) -> list[RunManifest]:
    """Run one config per axis value and write ``<run_id>_sweep_<axis>.csv``."""
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    cfgs = sweep_configs(base, axis, values, paired_z_max)
    manifests = [run(c, out, workers=workers) for c in cfgs]
    rows = []
    for v, cfg, man in zip(values, cfgs, manifests):
        finals, ep90 = [], []
        for entry in man.outputs.values():
            with open(entry["summary"]) as fh:
                s = json.load(fh)
            if s["convergence_available"]:
                finals.append(s["final_reward"])
                ep90.append(s["episodes_to_90"])
        fm, fh_ = ci95(finals) if finals else (float("nan"), float("nan"))
        em, eh = ci95(ep90) if ep90 else (float("nan"), float("nan"))
        rows.append(f"{v},{cfg.z_max},{cfg.algorithm},{len(finals)},{fm!r},{fh_!r},{em!r},{eh!r}")
    path = out / f"{base.run_id}_sweep_{SWEEP_AXES[axis]}.csv"
    with open(path, "w") as fh:
        fh.write("value,z_max,algorithm,n_seeds,final_mean,final_ci95,ep90_mean,ep90_ci95\n")
        fh.write("\n".join(rows) + "\n")
    return manifests
