import json

import numpy as np
import pytest
import torch

from ecdesign.agents import AgentConfig, build_agents, load_checkpoint
from ecdesign.engine import run_episode
from ecdesign.problem_suite import generate_instance
from ecdesign.rng import stream
from ecdesign.training import (RolloutBuffer, TrainConfig, Trainer, Transition, gae, param_hash,
                               ppo_loss, ppo_update, reinforce_loss, reinforce_update)
from ecdesign.workflow import CANONICAL_DE, Workflow

SMALL = AgentConfig(h=8, k=2, L1=1, L2=1, seed=0)


def sampled_fd_error(fn, params, per_param=12, step=1e-5, seed=0):
    """Relative error of autograd vs central differences on a random subset of coordinates."""
    g = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    fn().backward()
    ana, num = [], []
    with torch.no_grad():
        for p in params:
            flat = p.data.view(-1)
            grad = p.grad.view(-1)
            for i in g.choice(flat.numel(), size=min(per_param, flat.numel()), replace=False):
                old = flat[i].item()
                flat[i] = old + step
                hi = fn().item()
                flat[i] = old - step
                lo = fn().item()
                flat[i] = old
                num.append((hi - lo) / (2 * step))
                ana.append(grad[i].item())
    ana, num = np.array(ana), np.array(num)
    return float(np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12))


def _scaled(agents, scale=0.5, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in agents.modules():
            for p in m.parameters():
                p.add_(torch.randn(p.shape, generator=g) * scale)
    return agents


def _reinforce_batch(agents, n=4, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, 13))
    wfs = [s.workflow for s in agents.generator.sample(feats, rng)]
    return feats, wfs, rng.random(n)


def reinforce_gradient_error():
    a = _scaled(build_agents(SMALL))
    feats, wfs, ret = _reinforce_batch(a)
    return sampled_fd_error(lambda: reinforce_loss(a, feats, wfs, ret), list(a.generator.parameters()))


def _ppo_batch(agents, n=6, seed=0):
    rng = np.random.default_rng(seed)
    wf = Workflow(["Uniform", "DE/current-to-pbest/1", "Exponential", "Clip_BC", "DE-like", "End"])
    out = []
    for t in range(n):
        obs = rng.normal(size=(len(wf.modules), 9))
        step = agents.controller.act(wf, obs, rng)
        out.append(Transition(wf, obs, step.raw, step.logp, step.value, float(rng.random()), t == n - 1))
    return out


def ppo_gradient_error():
    a = _scaled(build_agents(SMALL), 0.3)
    batch = _ppo_batch(a)
    # move the policy away from the behaviour one so the ratio differs from 1
    _scaled(a, 0.01, seed=1)
    rng = np.random.default_rng(2)
    adv, ret = rng.normal(size=len(batch)), rng.normal(size=len(batch))
    return sampled_fd_error(lambda: ppo_loss(a, batch, adv, ret, 0.2, 0.5)[0],
                            list(a.controller.parameters()))


def test_reinforce_gradient():
    assert reinforce_gradient_error() < 1e-4


def test_ppo_gradient():
    assert ppo_gradient_error() < 1e-4


def test_zero_advantage_leaves_parameters():
    a = build_agents(SMALL)
    feats, wfs, _ = _reinforce_batch(a)
    before = a.flat().clone()
    opt = torch.optim.Adam(a.generator.parameters(), lr=1e-2)
    reinforce_update(a, opt, feats, wfs, np.full(len(wfs), 0.7))
    assert torch.equal(a.flat(), before)


def test_reinforce_step_favours_better_workflow():
    a = _scaled(build_agents(SMALL), 0.1)
    feats, wfs, _ = _reinforce_batch(a, n=2, seed=3)
    assert wfs[0].names != wfs[1].names
    before = a.generator.score(feats, wfs).detach()
    opt = torch.optim.SGD(a.generator.parameters(), lr=1e-2)
    reinforce_update(a, opt, feats, wfs, [1.0, 0.0], grad_clip=1e9)
    after = a.generator.score(feats, wfs).detach()
    assert (after[0] - after[1]) > (before[0] - before[1])


def test_empty_batch_is_noop():
    a = build_agents(SMALL)
    before = a.flat().clone()
    opt = torch.optim.Adam(a.generator.parameters(), lr=1.0)
    out = reinforce_update(a, opt, np.zeros((0, 13)), [], [])
    assert out["skipped"] and torch.equal(a.flat(), before)


def test_surrogate_at_behaviour_policy():
    a = build_agents(SMALL)
    batch = _ppo_batch(a)
    adv = np.array([1.0, -2.0, 0.5, 3.0, 0.0, 1.5])
    _, policy, _ = ppo_loss(a, batch, adv, np.zeros(6))
    assert policy == pytest.approx(-adv.mean(), abs=1e-12)


def test_gae_against_direct_sum():
    rng = np.random.default_rng(0)
    r, v = rng.random(7), rng.random(7)
    dones = [False] * 6 + [True]
    g, lam = 0.9, 0.8
    adv, ret = gae(r, v, dones, last_value=123.0, gamma=g, lam=lam)
    nxt = np.append(v[1:], 0.0)
    delta = r + g * nxt - v
    direct = [sum((g * lam) ** (k - t) * delta[k] for k in range(t, 7)) for t in range(7)]
    assert np.allclose(adv, direct, atol=1e-12)
    assert np.allclose(ret, adv + v)
    adv2, _ = gae([1.0], [0.5], [False], last_value=2.0, gamma=0.5, lam=1.0)
    assert adv2[0] == pytest.approx(1.0 + 0.5 * 2.0 - 0.5)


def test_ppo_update_passes_and_clears():
    a = build_agents(SMALL)
    buf = RolloutBuffer()
    for t in _ppo_batch(a, n=10):
        buf.add(t)
    opt = torch.optim.Adam(a.controller.parameters(), lr=1e-3)
    stats = ppo_update(a, opt, buf, TrainConfig(kepoch=3))
    assert stats["passes"] == 3 and len(buf) == 0


def _tiny_problems(n=3, max_fes=600):
    return [generate_instance(31, i, "single", dim=2, max_fes=max_fes, functions=["Sphere"])
            for i in range(n)]


def stage2_pass_counts(epochs=2, seed=0):
    cfg = TrainConfig(epochs=epochs, agent2_batch=2, nstep=10, kepoch=3, seed=seed)
    tr = Trainer(_tiny_problems(max_fes=1250), cfg, build_agents(SMALL),
                 fixed_workflow=Workflow(CANONICAL_DE))
    tr.train_stage2()
    return tr.ppo_passes, tr.recorded_generations


def test_three_passes_per_ten_generations():
    passes, gens = stage2_pass_counts()
    assert gens % 10 != 0
    assert passes == 3 * (gens // 10)


def test_zero_learning_rate_keeps_parameters(tmp_path):
    a = build_agents(SMALL)
    before = a.flat().clone()
    cfg = TrainConfig(epochs=1, lr=0.0, agent1_batch=2, agent2_batch=2, stage1_controller="defaults")
    Trainer(_tiny_problems(), cfg, a).train("both")
    assert torch.equal(a.flat(), before)


def test_stage1_keeps_controller_frozen():
    a = build_agents(SMALL)
    h = param_hash(a.controller)
    g = param_hash(a.generator)
    cfg = TrainConfig(epochs=2, lr=1e-2, agent1_batch=2)
    Trainer(_tiny_problems(), cfg, a).train_stage1()
    assert param_hash(a.controller) == h
    assert param_hash(a.generator) != g


def test_checkpoints_and_log(tmp_path):
    cfg = TrainConfig(epochs=2, agent1_batch=3, stage1_controller="defaults")
    tr = Trainer(_tiny_problems(), cfg, build_agents(SMALL), out_dir=tmp_path)
    tr.train_stage1()
    assert (tmp_path / "ckpt_1_0.bin").exists() and (tmp_path / "ckpt_1_1.bin").exists()
    b = load_checkpoint(tmp_path / "ckpt_1_1.bin")
    assert torch.equal(b.flat(), tr.agents.flat())
    rows = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and all(r["stage"] == 1 for r in rows)


def test_training_is_reproducible(tmp_path):
    outs = []
    for k in range(2):
        cfg = TrainConfig(epochs=1, agent1_batch=2, agent2_batch=1, seed=4)
        tr = Trainer(_tiny_problems(), cfg, build_agents(SMALL), out_dir=tmp_path / str(k))
        tr.train("both")
        outs.append((tr.agents.flat(), (tmp_path / str(k) / "train_log.jsonl").read_bytes()))
    assert torch.equal(outs[0][0], outs[1][0])
    assert outs[0][1] == outs[1][1]


def test_config_file_validation(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 3, "lr": 0.01}))
    assert TrainConfig.from_file(tmp_path / "c.json").epochs == 3
    (tmp_path / "bad.json").write_text(json.dumps({"epoch": 3}))
    with pytest.raises(ValueError):
        TrainConfig.from_file(tmp_path / "bad.json")
    with pytest.raises(ValueError):
        TrainConfig(nstep=0)


def test_degenerate_instance_is_skipped():
    inst = generate_instance(31, 0, "single", dim=2, max_fes=300, functions=["Linear_Slope"])
    inst.shift, inst.rotation = np.full(2, -100.0), np.eye(2)   # whole box on the flat side
    inst.f_star = 0.0
    from ecdesign.training import _episode
    from ecdesign.engine import DefaultController
    assert _episode(Workflow(CANONICAL_DE), inst, DefaultController(), stream(0)) is None
    tr = run_episode(Workflow(CANONICAL_DE), inst, DefaultController(), stream(0))
    assert tr.total_reward == 0.0
