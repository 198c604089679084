"""Two-stage cooperative training.

Stage 1 trains the workflow generator with REINFORCE while the configuration
policy is frozen. Stage 2 freezes the generator and trains the configuration
policy and critic with PPO over per-generation transitions.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .agents import Agents, PolicyController, build_agents, save_checkpoint
from .engine import DefaultController, run_generation, start
from .features import problem_features, token_observations
from .problem_suite import ProblemInstance
from .rng import stream
from .workflow import Workflow

DEGENERATE_GAP = 1e-12


def compute_reward(f_prev_best: float, f_cur_best: float, f0_best: float, f_star: float) -> float:
    """Normalized improvement of the best-so-far value; 0 on degenerate episodes."""
    gap = f0_best - f_star
    if gap <= DEGENERATE_GAP:
        return 0.0
    return (f_prev_best - f_cur_best) / gap


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    agent1_batch: int = 128
    agent2_batch: int = 64
    nstep: int = 10
    kepoch: int = 3
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    grad_clip: float = 1.0
    normalize_advantages: bool = True
    seed: int = 0
    stage1_controller: str = "agent2"     # or "defaults"
    cycles: int = 1
    zero_features: bool = False           # single-best-solver ablation
    record_wall_time: bool = False

    def __post_init__(self):
        for name in ("epochs", "agent1_batch", "agent2_batch", "nstep", "kepoch", "cycles"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.clip_eps <= 0 or self.grad_clip <= 0:
            raise ValueError("lr, clip_eps and grad_clip must be positive")
        if self.stage1_controller not in ("agent2", "defaults"):
            raise ValueError("stage1_controller must be 'agent2' or 'defaults'")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def param_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for p in module.parameters():
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def _grad_norm(params) -> float:
    g = [p.grad.reshape(-1) for p in params if p.grad is not None]
    return float(torch.linalg.vector_norm(torch.cat(g))) if g else 0.0


# ---------------------------------------------------------------------------
# REINFORCE

def reinforce_loss(agents: Agents, feats: np.ndarray, workflows: Sequence[Workflow],
                   returns: Sequence[float]) -> torch.Tensor:
    R = torch.as_tensor(np.asarray(returns, dtype=float))
    adv = R - R.mean()
    logp = agents.generator.score(feats, list(workflows))
    return -(adv * logp).mean()


def reinforce_update(agents: Agents, optimizer, feats, workflows, returns,
                     grad_clip: float = 1.0) -> dict:
    if len(workflows) == 0:
        return {"loss": 0.0, "grad_norm": 0.0, "skipped": True}
    optimizer.zero_grad()
    loss = reinforce_loss(agents, feats, workflows, returns)
    loss.backward()
    params = list(agents.generator.parameters())
    norm = _grad_norm(params)
    torch.nn.utils.clip_grad_norm_(params, grad_clip)
    optimizer.step()
    return {"loss": loss.item(), "grad_norm": norm}


# ---------------------------------------------------------------------------
# PPO

@dataclass
class Transition:
    workflow: Workflow
    obs: np.ndarray
    raw: np.ndarray
    logp: float
    value: float
    reward: float
    done: bool
    next_obs: np.ndarray | None = None


@dataclass
class RolloutBuffer:
    transitions: list[Transition] = field(default_factory=list)

    def add(self, t: Transition):
        self.transitions.append(t)

    def __len__(self):
        return len(self.transitions)

    def clear(self):
        self.transitions.clear()


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Generalized advantage estimates and the matching return targets."""
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        nxt = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + np.asarray(values, dtype=float)


def ppo_loss(agents: Agents, batch: Sequence[Transition], adv, returns,
             clip_eps: float = 0.2, value_coef: float = 0.5):
    logp, _, value = agents.controller.evaluate([(t.workflow, t.obs, t.raw) for t in batch])
    old = torch.as_tensor([t.logp for t in batch])
    adv = torch.as_tensor(np.asarray(adv, dtype=float))
    ret = torch.as_tensor(np.asarray(returns, dtype=float))
    ratio = torch.exp(logp - old)
    surr = torch.minimum(ratio * adv, torch.clamp(ratio, 1 - clip_eps, 1 + clip_eps) * adv)
    policy = -surr.mean()
    vloss = ((value - ret) ** 2).mean()
    return policy + value_coef * vloss, policy.item(), vloss.item()


def ppo_update(agents: Agents, optimizer, buffer: RolloutBuffer, cfg: TrainConfig) -> dict:
    if len(buffer) == 0:
        return {"passes": 0}
    tr = buffer.transitions
    last = tr[-1]
    last_value = 0.0
    if not last.done and last.next_obs is not None:
        last_value = agents.controller.value(last.workflow, last.next_obs)
    adv, ret = gae([t.reward for t in tr], [t.value for t in tr], [t.done for t in tr],
                   last_value, cfg.gamma, cfg.gae_lambda)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    params = list(agents.controller.parameters())
    stats = {"passes": 0, "loss": [], "policy_loss": [], "value_loss": [], "grad_norm": []}
    for _ in range(cfg.kepoch):
        optimizer.zero_grad()
        loss, pl, vl = ppo_loss(agents, tr, adv, ret, cfg.clip_eps, cfg.value_coef)
        loss.backward()
        stats["grad_norm"].append(_grad_norm(params))
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        optimizer.step()
        stats["passes"] += 1
        stats["loss"].append(loss.item())
        stats["policy_loss"].append(pl)
        stats["value_loss"].append(vl)
    buffer.clear()
    return stats


# ---------------------------------------------------------------------------
# trainer

class Trainer:
    """Runs the stages, writes ``ckpt_{stage}_{epoch}.bin`` and a JSON-lines log."""

    def __init__(self, problems: Sequence[ProblemInstance], cfg: TrainConfig,
                 agents: Agents | None = None, out_dir=None,
                 fixed_workflow: Workflow | None = None, feature_seed: int = 0):
        self.problems = list(problems)
        if not self.problems:
            raise ValueError("no training problems")
        self.cfg = cfg
        self.agents = agents or build_agents()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.fixed_workflow = fixed_workflow
        self.feature_seed = feature_seed
        self.step = 0
        self.ppo_passes = 0
        self.recorded_generations = 0
        self.history: list[dict] = []
        self.frozen_hashes: list[tuple[str, str, str]] = []
        self._feats: dict[int, np.ndarray] = {}

    # -- helpers -----------------------------------------------------------
    def features(self, i: int) -> np.ndarray:
        if self.cfg.zero_features:
            return np.zeros(13)
        if i not in self._feats:
            self._feats[i] = problem_features(self.problems[i], self.feature_seed)
        return self._feats[i]

    def _log(self, rec: dict):
        rec = {"step": self.step, **rec}
        self.history.append(rec)
        if self.out_dir is not None:
            with open(self.out_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def _checkpoint(self, stage: int, epoch: int):
        self.agents.step = self.step
        if self.out_dir is not None:
            save_checkpoint(self.agents, self.out_dir / f"ckpt_{stage}_{epoch}.bin")

    def _optimizer(self, module):
        return torch.optim.Adam(module.parameters(), lr=self.cfg.lr)

    def _stage1_controller(self):
        if self.cfg.stage1_controller == "defaults":
            return DefaultController()
        return PolicyController(self.agents.controller, zero_obs=self.cfg.zero_features)

    # -- stage 1 -----------------------------------------------------------
    def train_stage1(self, epochs: int | None = None, cycle: int = 0) -> list[float]:
        cfg = self.cfg
        opt = self._optimizer(self.agents.generator)
        frozen = param_hash(self.agents.controller)
        controller = self._stage1_controller()
        curve = []
        for epoch in range(epochs or cfg.epochs):
            rng = stream(cfg.seed, 1, cycle, epoch)
            order = rng.permutation(len(self.problems))
            rets = []
            for s in range(0, len(order), cfg.agent1_batch):
                idx = order[s:s + cfg.agent1_batch]
                feats = np.stack([self.features(int(i)) for i in idx])
                samples = self.agents.generator.sample(feats, rng)
                keep_f, keep_w, keep_r = [], [], []
                skipped = 0
                for j, (i, smp) in enumerate(zip(idx, samples)):
                    inst = self.problems[int(i)]
                    ep_rng = stream(cfg.seed, 1, cycle, epoch, int(i))
                    traj = _episode(smp.workflow, inst, controller, ep_rng)
                    if traj is None:
                        skipped += 1
                        continue
                    keep_f.append(feats[j])
                    keep_w.append(smp.workflow)
                    keep_r.append(traj)
                stats = reinforce_update(self.agents, opt, np.array(keep_f).reshape(-1, 13),
                                         keep_w, keep_r, cfg.grad_clip)
                self.step += 1
                mean_ret = float(np.mean(keep_r)) if keep_r else 0.0
                rets.extend(keep_r)
                rec = {"stage": 1, "cycle": cycle, "epoch": epoch, "mean_return": mean_ret,
                       "episodes": len(keep_r), "skipped": skipped, **stats}
                if cfg.record_wall_time:
                    rec["wall_time"] = time.time()
                self._log(rec)
            if param_hash(self.agents.controller) != frozen:
                raise RuntimeError("frozen configuration policy changed during stage 1")
            curve.append(float(np.mean(rets)) if rets else 0.0)
            self._checkpoint(1, epoch)
        self.frozen_hashes.append(("stage1", frozen, param_hash(self.agents.controller)))
        return curve

    # -- stage 2 -----------------------------------------------------------
    def train_stage2(self, epochs: int | None = None, cycle: int = 0) -> list[float]:
        cfg = self.cfg
        opt = self._optimizer(self.agents.controller)
        frozen = param_hash(self.agents.generator)
        buffer = RolloutBuffer()
        curve = []
        for epoch in range(epochs or cfg.epochs):
            rng = stream(cfg.seed, 2, cycle, epoch)
            order = rng.permutation(len(self.problems))[:cfg.agent2_batch]
            rets = []
            for i in order:
                inst = self.problems[int(i)]
                if self.fixed_workflow is not None:
                    wf = self.fixed_workflow
                else:
                    wf = self.agents.generator.sample(self.features(int(i)), rng)[0].workflow
                ep_rng = stream(cfg.seed, 2, cycle, epoch, int(i))
                total = self._ppo_episode(wf, inst, ep_rng, opt, buffer, epoch, cycle)
                rets.append(total)
            if param_hash(self.agents.generator) != frozen:
                raise RuntimeError("frozen workflow generator changed during stage 2")
            curve.append(float(np.mean(rets)) if rets else 0.0)
            rec = {"stage": 2, "cycle": cycle, "epoch": epoch, "mean_return": curve[-1],
                   "episodes": len(rets)}
            if cfg.record_wall_time:
                rec["wall_time"] = time.time()
            self._log(rec)
            self._checkpoint(2, epoch)
        self.frozen_hashes.append(("stage2", frozen, param_hash(self.agents.generator)))
        return curve

    def _ppo_episode(self, wf, inst, rng, opt, buffer, epoch, cycle) -> float:
        state = start(wf, inst, rng, wf.np_init)
        if state.degenerate:
            self._log({"stage": 2, "cycle": cycle, "epoch": epoch, "skipped_degenerate": True})
            return 0.0
        obs = token_observations(wf, state, inst)
        total = 0.0
        policy = self.agents.controller
        while not state.done:
            step = policy.act(wf, self._obs(obs), rng)
            state, r, done = run_generation(wf, state, step.configs, inst, rng)
            total += r
            nxt = None if done else token_observations(wf, state, inst)
            buffer.add(Transition(wf, self._obs(obs), step.raw, step.logp, step.value, r, done,
                                  None if nxt is None else self._obs(nxt)))
            self.recorded_generations += 1
            obs = nxt
            if len(buffer) >= self.cfg.nstep:
                stats = ppo_update(self.agents, opt, buffer, self.cfg)
                self.ppo_passes += stats["passes"]
                self.step += 1
        return total

    def _obs(self, obs):
        return np.zeros_like(obs) if self.cfg.zero_features else obs

    # -- both --------------------------------------------------------------
    def train(self, stage: str = "both") -> dict:
        curves = {"stage1": [], "stage2": []}
        for c in range(self.cfg.cycles if stage == "both" else 1):
            if stage in ("1", "both"):
                curves["stage1"].extend(self.train_stage1(cycle=c))
            if stage in ("2", "both"):
                curves["stage2"].extend(self.train_stage2(cycle=c))
        return curves


def _episode(wf: Workflow, inst: ProblemInstance, controller, rng) -> float | None:
    """Episode return, or ``None`` for degenerate instances."""
    from .engine import run_episode

    traj = run_episode(wf, inst, controller, rng, wf.np_init)
    if traj.f0 - traj.f_star <= DEGENERATE_GAP:
        return None
    return traj.total_reward
