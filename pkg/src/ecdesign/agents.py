"""Transformer policies.

``WorkflowPolicy`` writes workflows token by token from a problem feature
vector. ``ConfigPolicy`` emits Gaussian hyper-parameter actions for every
module of a workflow given per-token progress features, plus a value head.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .engine import ConfigStep
from .modular_space import (BY_NAME, INDEX, MAX_TOKENS, N_MAX, N_NICH_RANGE, VOCAB,
                            Kind, build_mask, id_bits, variant_at)
from .workflow import Workflow

DTYPE = torch.float64
N_FEAT = 13
N_OBS = 9
CKPT_MAGIC = b"ECDCKPT\x01"
CKPT_VERSION = 1

torch.set_default_dtype(DTYPE)


def sinusoidal(n: int, h: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=DTYPE)[:, None]
    i = torch.arange(0, h, 2, dtype=DTYPE)
    ang = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), i / h)
    pe = torch.zeros(n, h, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(ang)
    pe[:, 1::2] = torch.cos(ang[:, : h // 2])
    return pe


class Block(nn.Module):
    """Pre-norm GPT-2 block."""

    def __init__(self, h: int, k: int):
        super().__init__()
        if h % k:
            raise ValueError("width must be divisible by the head count")
        self.h, self.k = h, k
        self.ln1 = nn.LayerNorm(h)
        self.qkv = nn.Linear(h, 3 * h)
        self.proj = nn.Linear(h, h)
        self.ln2 = nn.LayerNorm(h)
        self.fc = nn.Linear(h, 4 * h)
        self.out = nn.Linear(4 * h, h)

    def attend(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        B, T, h = x.shape
        dh = h // self.k
        q, k, v = self.qkv(x).split(h, dim=-1)
        q = q.view(B, T, self.k, dh).transpose(1, 2)
        k = k.view(B, T, self.k, dh).transpose(1, 2)
        v = v.view(B, T, self.k, dh).transpose(1, 2)
        att = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if causal:
            mask = torch.ones(T, T, dtype=torch.bool).triu(1)
            att = att.masked_fill(mask, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, h)
        return self.proj(y)

    def forward(self, x: torch.Tensor, causal: bool = True) -> torch.Tensor:
        x = x + self.attend(self.ln1(x), causal)
        return x + self.out(nn.functional.gelu(self.fc(self.ln2(x))))


class Trunk(nn.Module):
    def __init__(self, h: int, k: int, layers: int):
        super().__init__()
        self.blocks = nn.ModuleList(Block(h, k) for _ in range(layers))
        self.ln_f = nn.LayerNorm(h)

    def forward(self, x, causal=True):
        for b in self.blocks:
            x = b(x, causal)
        return self.ln_f(x)


def _reset_layernorms(module: nn.Module):
    for m in module.modules():
        if isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# workflow generator

@dataclass
class WorkflowSample:
    workflow: Workflow
    token_logps: list[float]
    features: np.ndarray

    @property
    def logp(self) -> float:
        return float(np.sum(self.token_logps))


def _vocab_mask(allowed) -> np.ndarray:
    keep = np.ones(VOCAB + 1, dtype=bool)
    if allowed is not None:
        keep[:] = False
        keep[[INDEX[n] for n in allowed]] = True
    return keep


class WorkflowPolicy(nn.Module):
    def __init__(self, h: int = 64, k: int = 4, layers: int = 1):
        super().__init__()
        self.h, self.k, self.layers = h, k, layers
        self.W_feature = nn.Linear(N_FEAT, h, bias=False)
        self.W_token = nn.Linear(16, h, bias=False)
        self.trunk = Trunk(h, k, layers)
        self.W_sample = nn.Linear(h, VOCAB + 1, bias=False)
        self.register_buffer("pos", sinusoidal(MAX_TOKENS + 1, h), persistent=False)

    def logits(self, feats: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        """``feats`` (B, 13), ``bits`` (B, T, 16) -> logits (B, T+1, V+1)."""
        x = torch.cat([self.W_feature(feats)[:, None, :], self.W_token(bits)], dim=1)
        x = x + self.pos[: x.shape[1]]
        return self.W_sample(self.trunk(x, causal=True))

    @staticmethod
    def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)

    @torch.no_grad()
    def sample(self, feats: np.ndarray, rng: np.random.Generator, greedy: bool = False,
               np_init: int | None = None, allowed=None) -> list[WorkflowSample]:
        """Generate one workflow per row of ``feats`` in lock step.

        ``allowed`` optionally restricts the vocabulary to a set of module
        names; the caller must make sure the restricted grammar can still
        reach End.
        """
        keep = _vocab_mask(allowed)
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        B = len(feats)
        ft = torch.as_tensor(feats, dtype=DTYPE)
        names: list[list[str]] = [[] for _ in range(B)]
        nn_: list[int | None] = [None] * B
        lps: list[list[float]] = [[] for _ in range(B)]
        bits = torch.zeros(B, 0, 16, dtype=DTYPE)
        live = list(range(B))
        while live:
            lg = self.logits(ft[live], bits[live])[:, -1, :]
            masks = np.stack([build_mask(names[b], nn_[b], check=False) for b in live]) & keep
            logp = self.masked_log_softmax(lg, torch.as_tensor(masks)).numpy()
            new_bits = torch.zeros(B, 1, 16, dtype=DTYPE)
            for row, b in enumerate(live):
                lp = logp[row]
                if greedy:
                    idx = int(np.argmax(np.where(masks[row], lp, -np.inf)))
                else:
                    p = np.exp(lp)
                    c = np.cumsum(p)
                    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
                    idx = min(idx, len(p) - 1)
                    while not masks[row][idx]:
                        idx -= 1
                v = variant_at(idx)
                names[b].append(v.name)
                lps[b].append(float(lp[idx]))
                if v.kind is Kind.NICHING:
                    nn_[b] = int(rng.integers(N_NICH_RANGE[0], N_NICH_RANGE[1] + 1))
                new_bits[b, 0] = torch.as_tensor(id_bits(v.module_id))
            bits = torch.cat([bits, new_bits], dim=1)
            live = [b for b in live if names[b][-1] != "End"]
        out = []
        for b in range(B):
            wf = Workflow(names[b], n_nich=nn_[b] or 1, np_init=np_init)
            out.append(WorkflowSample(wf, lps[b], feats[b]))
        return out

    def score(self, feats, workflows: list[Workflow], allowed=None) -> torch.Tensor:
        """Differentiable log-probability of each workflow (teacher forcing)."""
        keep = _vocab_mask(allowed)
        feats = torch.as_tensor(np.atleast_2d(np.asarray(feats, dtype=float)), dtype=DTYPE)
        T = max(len(w.names) for w in workflows)
        B = len(workflows)
        bits = torch.zeros(B, T, 16, dtype=DTYPE)
        masks = np.zeros((B, T, VOCAB + 1), dtype=bool)
        targets = np.zeros((B, T), dtype=np.int64)
        valid = np.zeros((B, T), dtype=bool)
        for b, wf in enumerate(workflows):
            for t, name in enumerate(wf.names):
                masks[b, t] = build_mask(wf.names[:t], wf.n_nich if wf.niching else None,
                                         check=False) & keep
                targets[b, t] = INDEX[name]
                valid[b, t] = True
                bits[b, t] = torch.as_tensor(id_bits(BY_NAME[name].module_id))
        lg = self.logits(feats, bits[:, :-1] if T > 1 else bits[:, :0])
        masks[~valid] = True
        legal = np.take_along_axis(masks, targets[..., None], axis=-1)[..., 0]
        masks[~masks.any(axis=-1)] = True     # keep softmax finite; the step is -inf anyway
        logp = self.masked_log_softmax(lg, torch.as_tensor(masks))
        picked = logp.gather(-1, torch.as_tensor(targets)[..., None])[..., 0]
        picked = torch.where(torch.as_tensor(legal), picked, torch.full_like(picked, float("-inf")))
        picked = torch.where(torch.as_tensor(valid), picked, torch.zeros_like(picked))
        return picked.sum(dim=1)


# ---------------------------------------------------------------------------
# hyper-parameter controller

def _layout(wf: Workflow):
    """Per-token bounds and a mask of the action entries that matter."""
    M = len(wf.modules)
    lower = np.zeros((M, N_MAX))
    upper = np.ones((M, N_MAX))
    used = np.zeros((M, N_MAX), dtype=bool)
    for i in wf.controllable_positions:
        v = BY_NAME[wf.names[i]]
        for j, p in enumerate(v.params):
            lower[i, j], upper[i, j] = p.lower, p.upper
            used[i, j] = True
    return lower, upper, used


def token_inputs(wf: Workflow, obs: np.ndarray) -> np.ndarray:
    bits = np.stack([id_bits(BY_NAME[n].module_id) for n in wf.modules])
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = np.repeat(obs[None, :], len(bits), axis=0)
    return np.hstack([bits, obs])


def map_action(wf: Workflow, raw: np.ndarray) -> dict:
    lower, upper, used = _layout(wf)
    val = lower + (upper - lower) / (1.0 + np.exp(-np.clip(raw, -500, 500)))
    out = {}
    for i in wf.controllable_positions:
        v = BY_NAME[wf.names[i]]
        out[i] = {p.name: float(val[i, j]) for j, p in enumerate(v.params)}
    return out


class ConfigPolicy(nn.Module):
    def __init__(self, h: int = 64, k: int = 4, layers: int = 3):
        super().__init__()
        self.h, self.k, self.layers = h, k, layers
        self.W_emb = nn.Linear(16 + N_OBS, h, bias=False)
        self.trunk = Trunk(h, k, layers)
        self.W_mu = nn.Linear(h, N_MAX, bias=False)
        self.W_sigma = nn.Linear(h, N_MAX, bias=False)
        self.critic = nn.Linear(h, 1, bias=False)
        self.register_buffer("pos", sinusoidal(MAX_TOKENS, h), persistent=False)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None):
        """``x`` (B, M, 25) -> mu, sigma (B, M, N_max) and value (B,)."""
        hdec = self.trunk(self.W_emb(x) + self.pos[: x.shape[1]], causal=True)
        mu = self.W_mu(hdec)
        sigma = 1e-3 + nn.functional.softplus(self.W_sigma(hdec))
        if lengths is None:
            pooled = hdec.mean(dim=1)
        else:
            m = (torch.arange(x.shape[1])[None, :] < lengths[:, None]).to(DTYPE)
            pooled = (hdec * m[..., None]).sum(1) / lengths[:, None].to(DTYPE)
        return mu, sigma, self.critic(pooled)[:, 0]

    @staticmethod
    def gaussian_logp(raw, mu, sigma, used):
        lp = -0.5 * ((raw - mu) / sigma) ** 2 - torch.log(sigma) - 0.5 * math.log(2 * math.pi)
        return (lp * used).sum(dim=(-1, -2))

    @staticmethod
    def entropy(sigma, used):
        ent = 0.5 + 0.5 * math.log(2 * math.pi) + torch.log(sigma)
        return (ent * used).sum(dim=(-1, -2))

    def evaluate(self, batch: list[tuple[Workflow, np.ndarray, np.ndarray]]):
        """Log-probs, entropies and values for ``(workflow, obs, raw)`` triples."""
        B = len(batch)
        M = max(len(w.modules) for w, _, _ in batch)
        x = torch.zeros(B, M, 16 + N_OBS)
        raw = torch.zeros(B, M, N_MAX)
        used = torch.zeros(B, M, N_MAX)
        lengths = torch.zeros(B, dtype=torch.long)
        for b, (wf, obs, r) in enumerate(batch):
            m = len(wf.modules)
            x[b, :m] = torch.as_tensor(token_inputs(wf, obs))
            raw[b, :m] = torch.as_tensor(r)
            used[b, :m] = torch.as_tensor(_layout(wf)[2], dtype=DTYPE)
            lengths[b] = m
        mu, sigma, value = self(x, lengths)
        return self.gaussian_logp(raw, mu, sigma, used), self.entropy(sigma, used), value

    @torch.no_grad()
    def act(self, wf: Workflow, obs: np.ndarray, rng: np.random.Generator,
            deterministic: bool = False) -> ConfigStep:
        x = torch.as_tensor(token_inputs(wf, obs))[None]
        mu, sigma, value = self(x)
        mu, sigma = mu[0].numpy(), sigma[0].numpy()
        if deterministic:
            raw = mu.copy()
        else:
            raw = mu + sigma * rng.standard_normal(mu.shape)
        used = _layout(wf)[2]
        lp = -0.5 * ((raw - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)
        return ConfigStep(map_action(wf, raw), raw, float(np.sum(lp * used)), float(value[0]))

    @torch.no_grad()
    def value(self, wf: Workflow, obs: np.ndarray) -> float:
        x = torch.as_tensor(token_inputs(wf, obs))[None]
        return float(self(x)[2][0])


class PolicyController:
    """Adapter that lets a ``ConfigPolicy`` drive ``run_episode``."""
    needs_obs = True

    def __init__(self, policy: ConfigPolicy, deterministic: bool = False, zero_obs: bool = False):
        self.policy = policy
        self.deterministic = deterministic
        self.zero_obs = zero_obs

    def __call__(self, wf, obs, rng):
        if self.zero_obs:
            obs = np.zeros_like(obs)
        return self.policy.act(wf, obs, rng, self.deterministic)


# ---------------------------------------------------------------------------
# construction, parameter count, checkpoints

@dataclass
class AgentConfig:
    h: int = 64
    k: int = 4
    L1: int = 1
    L2: int = 3
    seed: int = 0

    def header(self) -> dict:
        return {"h": self.h, "k": self.k, "L1": self.L1, "L2": self.L2,
                "N_max": N_MAX, "V": VOCAB + 1, "seed": self.seed}


@dataclass
class Agents:
    cfg: AgentConfig
    generator: WorkflowPolicy
    controller: ConfigPolicy
    step: int = 0

    def modules(self):
        return [self.generator, self.controller]

    def num_params(self) -> int:
        return sum(p.numel() for m in self.modules() for p in m.parameters())

    def flat(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for m in self.modules() for p in m.parameters()])

    def load_flat(self, vec: torch.Tensor) -> None:
        i = 0
        with torch.no_grad():
            for m in self.modules():
                for p in m.parameters():
                    n = p.numel()
                    p.copy_(vec[i:i + n].view_as(p))
                    i += n
        if i != vec.numel():
            raise ValueError("flat vector length mismatch")


def build_agents(cfg: AgentConfig | None = None) -> Agents:
    cfg = cfg or AgentConfig()
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    a1 = WorkflowPolicy(cfg.h, cfg.k, cfg.L1)
    a2 = ConfigPolicy(cfg.h, cfg.k, cfg.L2)
    for m in (a1, a2):
        for name, p in m.named_parameters():
            with torch.no_grad():
                if p.dim() >= 2:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE) * 0.02)
                else:
                    p.zero_()
        _reset_layernorms(m)
    return Agents(cfg, a1, a2)


def expected_param_count(h: int, L1: int, L2: int, n_max: int = N_MAX, v1: int = VOCAB + 1) -> int:
    block = 12 * h * h + 13 * h
    a1 = N_FEAT * h + 16 * h + L1 * block + 2 * h + h * v1
    a2 = (16 + N_OBS) * h + L2 * block + 2 * h + 2 * h * n_max + h
    return a1 + a2


class CheckpointError(ValueError):
    pass


def save_checkpoint(agents: Agents, path) -> None:
    header = agents.cfg.header()
    header.update({"version": CKPT_VERSION, "step": int(agents.step),
                   "n_params": agents.num_params()})
    hb = json.dumps(header, sort_keys=True).encode()
    body = agents.flat().numpy().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(body)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointError("not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n))


def load_checkpoint(path, expect: AgentConfig | None = None) -> Agents:
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointError("not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        body = fh.read()
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    if header["N_max"] != N_MAX or header["V"] != VOCAB + 1:
        raise CheckpointError("checkpoint was written for a different module space")
    cfg = AgentConfig(header["h"], header["k"], header["L1"], header["L2"], header["seed"])
    if expect is not None:
        for key in ("h", "k", "L1", "L2"):
            if getattr(expect, key) != getattr(cfg, key):
                raise CheckpointError(f"checkpoint {key}={getattr(cfg, key)} but expected "
                                      f"{getattr(expect, key)}")
    agents = build_agents(cfg)
    vec = np.frombuffer(body, dtype="<f8")
    if vec.size != agents.num_params():
        raise CheckpointError("parameter block size does not match the header")
    agents.load_flat(torch.as_tensor(vec.copy()))
    agents.step = int(header.get("step", 0))
    return agents
