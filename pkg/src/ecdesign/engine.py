"""Workflow interpreter: run state, one-generation step and whole episodes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from . import operators as ops
from .es import ES_CLASSES
from .modular_space import BY_NAME, Kind, Variant
from .problem_suite import ProblemInstance
from .workflow import Workflow

STAGNATION_EPS = 1e-10


class ContractError(ValueError):
    pass


def default_np(dim: int) -> int:
    if dim <= 20:
        return 100
    return int(min(170, round(4 + 3 * math.log(dim) * 10)))


def quantize(value: float, n: int) -> int:
    """Equal-width bin of ``value`` in [0, 1] among ``n`` choices."""
    return int(min(max(int(np.floor(float(value) * n)), 0), n - 1))


@dataclass
class SubPop:
    X: np.ndarray
    f: np.ndarray
    size0: int
    arc_X: np.ndarray | None = None
    arc_f: np.ndarray | None = None
    vel: np.ndarray | None = None
    pbest_X: np.ndarray | None = None
    pbest_f: np.ndarray | None = None
    es: Any = None
    es_kind: str | None = None

    def reset_state(self):
        self.arc_X = self.arc_f = None
        self.vel = self.pbest_X = self.pbest_f = None
        self.es = self.es_kind = None


@dataclass
class RunState:
    subpops: list[SubPop]
    fes: int
    max_fes: int
    best_f: float
    best_x: np.ndarray
    f0: float
    f_star: float
    gen: int = 0
    np_init: int = 0
    stagnation: int = 0
    pop_best: float = np.inf
    restarts: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.fes >= self.max_fes

    @property
    def X(self) -> np.ndarray:
        return np.vstack([s.X for s in self.subpops])

    @property
    def f(self) -> np.ndarray:
        return np.concatenate([s.f for s in self.subpops])

    @property
    def degenerate(self) -> bool:
        return self.f0 <= self.f_star + 1e-12

    def warn(self, msg: str) -> None:
        if msg not in self.warnings:
            self.warnings.append(msg)


# ---------------------------------------------------------------------------
# configs

ConfigAssignment = dict  # token position -> {param name: value}


def default_config(v: Variant, rng: np.random.Generator) -> dict:
    out = {}
    for p in v.params:
        out[p.name] = p.default if p.default is not None else p.lower + (p.upper - p.lower) * rng.random()
    return out


def default_configs(wf: Workflow, rng: np.random.Generator) -> ConfigAssignment:
    return {i: default_config(BY_NAME[wf.names[i]], rng) for i in wf.controllable_positions}


def check_configs(wf: Workflow, configs: ConfigAssignment) -> None:
    for i in wf.controllable_positions:
        v = BY_NAME[wf.names[i]]
        if i not in configs:
            raise ContractError(f"no configuration for {v.name} at position {i}")
        for p in v.params:
            val = configs[i].get(p.name)
            if val is None:
                raise ContractError(f"{v.name}: missing {p.name}")
            if not p.lower - 1e-9 <= val <= p.upper + 1e-9:
                raise ContractError(f"{v.name}: {p.name}={val} outside [{p.lower}, {p.upper}]")


def resolve(v: Variant, cfg: dict) -> tuple[str, dict]:
    """Concrete operator name and its parameters, unpacking multi-strategies."""
    if not v.is_multi:
        return v.name, cfg
    k = quantize(cfg["op"], len(v.members))
    sub = BY_NAME[v.members[k]]
    out = {p.name: p.default for p in sub.params}
    out.update({k2: val for k2, val in cfg.items() if k2 != "op" and k2 in out})
    return sub.name, out


# ---------------------------------------------------------------------------
# evaluation with budget truncation

def _evaluate(state: RunState, inst: ProblemInstance, V: np.ndarray,
              X_par: np.ndarray, f_par: np.ndarray):
    """Evaluate as many rows of ``V`` as the budget allows; the rest keep their parents."""
    n = len(V)
    k = max(0, min(n, state.max_fes - state.fes))
    V = V.copy()
    fV = np.empty(n)
    if k:
        fV[:k] = inst(V[:k])
        state.fes += k
        j = int(np.argmin(fV[:k]))
        if fV[j] < state.best_f:
            state.best_f, state.best_x = float(fV[j]), V[j].copy()
    if k < n:
        V[k:] = X_par[k:]
        fV[k:] = f_par[k:]
    return V, fV


def start(wf: Workflow, inst: ProblemInstance, rng: np.random.Generator,
          np_init: int | None = None) -> RunState:
    n = int(np_init or wf.np_init or default_np(inst.dim))
    lb, ub = inst.lower, inst.upper
    X = ops.initialize(wf.init, n, lb, ub, rng)
    k = min(n, inst.max_fes)
    f = np.full(n, np.inf)
    f[:k] = inst(X[:k])
    j = int(np.argmin(f))
    state = RunState([], k, inst.max_fes, float(f[j]), X[j].copy(), float(f[j]),
                     float(inst.f_star), np_init=n)
    if wf.niching:
        groups = ops.apply_niching(wf.niching, X, f, wf.n_nich, rng, state.warn)
    else:
        groups = [np.arange(n)]
    state.subpops = [SubPop(X[g].copy(), f[g].copy(), len(g)) for g in groups]
    state.pop_best = float(np.min(f))
    return state


def _uses_archive(wf: Workflow, positions) -> bool:
    for i in positions:
        v = BY_NAME[wf.names[i]]
        if "archive" in v.name or any("archive" in m for m in v.members):
            return True
    return False


def _archive_add(sp: SubPop, Xl, fl, rng):
    if sp.arc_X is None:
        sp.arc_X, sp.arc_f = np.empty((0, sp.X.shape[1])), np.empty(0)
    if len(Xl):
        sp.arc_X = np.vstack([sp.arc_X, Xl])
        sp.arc_f = np.concatenate([sp.arc_f, fl])
    cap = len(sp.X)
    if len(sp.arc_X) > cap:
        keep = np.sort(rng.choice(len(sp.arc_X), size=cap, replace=False))
        sp.arc_X, sp.arc_f = sp.arc_X[keep], sp.arc_f[keep]


def _ensure_pso(sp: SubPop):
    if sp.vel is None:
        sp.vel = np.zeros_like(sp.X)
        sp.pbest_X, sp.pbest_f = sp.X.copy(), sp.f.copy()


def _run_branch(wf: Workflow, state: RunState, b: int, positions, configs, inst, rng):
    sp = state.subpops[b % len(state.subpops)]
    lb, ub = inst.lower, inst.upper
    V = None
    new_vel = None
    archive = _uses_archive(wf, positions)
    for pos in positions:
        v = BY_NAME[wf.names[pos]]
        name, cfg = resolve(v, configs.get(pos, {})) if v.controllable else (v.name, {})
        k = v.kind
        if k is Kind.MUTATION and v.style == "DE":
            V = ops.de_mutation(name, sp.X, sp.f, cfg, rng, sp.arc_X, state.warn)
        elif k is Kind.MUTATION:
            V = ops.ga_mutation(name, V, cfg, lb, ub, rng)
        elif k is Kind.CROSSOVER and v.style == "DE":
            V = ops.de_crossover(name, sp.X, V, sp.f, cfg, rng, sp.arc_X, sp.arc_f)
        elif k is Kind.CROSSOVER:
            V = ops.ga_crossover(name, sp.X, cfg, rng)
        elif k is Kind.OTHER_UPDATE and v.style == "PSO":
            _ensure_pso(sp)
            gbest = sp.pbest_X[int(np.argmin(sp.pbest_f))]
            new_vel = ops.pso_velocity(name, sp.X, sp.f, sp.vel, sp.pbest_X, sp.pbest_f,
                                       gbest, cfg, rng)
            V = sp.X + new_vel
        elif k is Kind.OTHER_UPDATE:
            if sp.es is None or sp.es_kind != name:
                sp.es, sp.es_kind = ES_CLASSES[name](sp.X, lb, ub), name
            sp.es.update(sp.X, sp.f, cfg.get("cc", 1.0), cfg.get("cs", 1.0))
            V = sp.es.sample(len(sp.X), rng)
        elif k is Kind.BOUNDARY_CONTROL:
            V = ops.boundary_control(name, V, lb, ub, rng, parents=sp.X)
        elif k is Kind.SELECTION:
            V, fV = _evaluate(state, inst, V, sp.X, sp.f)
            sel = ops.select(name, sp.X, sp.f, V, fV, rng)
            if sp.vel is not None:
                n = len(sp.X)
                vel_off = new_vel if new_vel is not None else sp.vel
                pb_X = np.vstack([sp.pbest_X, sp.pbest_X])
                pb_f = np.concatenate([sp.pbest_f, sp.pbest_f])
                better = fV < sp.pbest_f
                pb_X[n:][better] = V[better]
                pb_f[n:][better] = fV[better]
                sp.vel = np.vstack([sp.vel, vel_off])[sel.source]
                sp.pbest_X, sp.pbest_f = pb_X[sel.source], pb_f[sel.source]
            sp.X, sp.f = sel.X, sel.f
            if archive:
                _archive_add(sp, sel.losers_X, sel.losers_f, rng)
            V, new_vel = None, None
        elif k is Kind.INFO_SHARING:
            n_sub = len(state.subpops)
            tgt = state.subpops[quantize(cfg["target"], n_sub)]
            sp.X, sp.f, w = ops.share_info(sp.X, sp.f, tgt.X, tgt.f)
            if sp.vel is not None:
                sp.pbest_X[w], sp.pbest_f[w] = sp.X[w], sp.f[w]
                sp.vel[w] = 0.0
        else:
            raise ContractError(f"{v.name} cannot appear inside a branch")


def _reduce(state: RunState, name: str):
    for sp in state.subpops:
        size = ops.reduce_population(name, sp.size0, ops.NP_MIN, state.fes, state.max_fes)
        if size >= len(sp.X):
            continue
        keep = np.sort(np.argsort(sp.f, kind="stable")[:size])
        sp.X, sp.f = sp.X[keep], sp.f[keep]
        if sp.vel is not None:
            sp.vel, sp.pbest_X, sp.pbest_f = sp.vel[keep], sp.pbest_X[keep], sp.pbest_f[keep]
        if sp.arc_X is not None and len(sp.arc_X) > size:
            sp.arc_X, sp.arc_f = sp.arc_X[:size], sp.arc_f[:size]


def _restart(wf: Workflow, state: RunState, inst: ProblemInstance, rng):
    lb, ub = inst.lower, inst.upper
    for sp in state.subpops:
        Xn = ops.initialize(wf.init, len(sp.X), lb, ub, rng)
        sp.X, sp.f = _evaluate(state, inst, Xn, sp.X, sp.f)
        sp.reset_state()
    state.restarts += 1
    state.stagnation = 0
    state.pop_best = float(np.min(state.f))


def run_generation(wf: Workflow, state: RunState, configs: ConfigAssignment,
                   inst: ProblemInstance, rng: np.random.Generator):
    """One pass over the workflow. Returns ``(state, r_t, done)``."""
    if state.done:
        raise ContractError("episode already finished")
    check_configs(wf, configs)
    prev = state.best_f
    for b, positions in enumerate(wf.branches):
        _run_branch(wf, state, b, positions, configs, inst, rng)
    pop_best = float(np.min(state.f))
    if state.pop_best - pop_best <= STAGNATION_EPS:
        state.stagnation += 1
    else:
        state.stagnation = 0
    state.pop_best = pop_best
    diameter = float(np.linalg.norm(inst.upper - inst.lower))
    for pos in wf.tail:
        name = wf.names[pos]
        v = BY_NAME[name]
        if v.kind is Kind.POP_REDUCTION:
            _reduce(state, name)
        elif v.kind is Kind.RESTART and not state.done:
            if ops.check_restart(name, state.stagnation, state.X, state.f, diameter):
                _restart(wf, state, inst, rng)
    state.gen += 1
    r = 0.0 if state.degenerate else (prev - state.best_f) / (state.f0 - state.f_star)
    return state, r, state.done


# ---------------------------------------------------------------------------
# episodes

@dataclass
class ConfigStep:
    configs: ConfigAssignment
    raw: np.ndarray | None = None
    logp: float | None = None
    value: float | None = None


class Controller(Protocol):
    needs_obs: bool

    def __call__(self, wf: Workflow, obs: np.ndarray | None, rng: np.random.Generator) -> ConfigStep:
        ...


class DefaultController:
    needs_obs = False

    def __call__(self, wf, obs, rng):
        return ConfigStep(default_configs(wf, rng))


class FixedController:
    """Same assignment every generation; missing entries fall back to defaults."""
    needs_obs = False

    def __init__(self, configs: ConfigAssignment | dict[str, dict]):
        self.configs = configs

    def __call__(self, wf, obs, rng):
        out = default_configs(wf, rng)
        for key, cfg in self.configs.items():
            if isinstance(key, str):
                for i in wf.controllable_positions:
                    if wf.names[i] == key:
                        out[i].update(cfg)
            else:
                out[key].update(cfg)
        return ConfigStep(out)


@dataclass
class Trajectory:
    workflow: Workflow
    obs: list = field(default_factory=list)
    configs: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    fes: list = field(default_factory=list)
    best: list = field(default_factory=list)
    f0: float = 0.0
    f_star: float = 0.0
    final_best: float = np.inf
    warnings: list = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def to_jsonl(self) -> str:
        lines = []
        for t in range(len(self.rewards)):
            cfg = {str(k): {n: float(x) for n, x in v.items()} for k, v in self.configs[t].items()}
            lines.append(json.dumps({
                "t": t + 1, "FEs": int(self.fes[t]), "f_best": float(self.best[t]),
                "O_t": None if self.obs[t] is None else np.asarray(self.obs[t]).tolist(),
                "configs": cfg, "r_t": float(self.rewards[t]),
            }, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def run_episode(wf: Workflow, inst: ProblemInstance, controller: Controller,
                rng: np.random.Generator, np_init: int | None = None,
                record_obs: bool = False, on_step: Callable | None = None) -> Trajectory:
    from .features import token_observations

    state = start(wf, inst, rng, np_init)
    traj = Trajectory(wf, f0=state.f0, f_star=state.f_star)
    while not state.done:
        obs = None
        if controller.needs_obs or record_obs:
            obs = token_observations(wf, state, inst)
        step = controller(wf, obs, rng)
        state, r, done = run_generation(wf, state, step.configs, inst, rng)
        traj.obs.append(obs)
        traj.configs.append(step.configs)
        traj.raw.append(step.raw)
        traj.logps.append(step.logp)
        traj.values.append(step.value)
        traj.rewards.append(r)
        traj.fes.append(state.fes)
        traj.best.append(state.best_f)
        if on_step is not None:
            on_step(state, traj)
    traj.final_best = state.best_f
    traj.warnings = list(state.warnings)
    return traj
