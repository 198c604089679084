"""Command-line entry point: ``ecdesign <command> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .agents import AgentConfig, build_agents, load_checkpoint, save_checkpoint
from .engine import DefaultController, run_episode
from .features import FEATURE_NAMES, problem_features
from .modular_space import dump_registry
from .problem_suite import generate_set, read_manifest, write_manifest
from .rng import stream
from .training import Trainer, TrainConfig
from .workflow import Workflow


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_registry(args):
    if args.action != "dump":
        raise SystemExit("only 'registry dump' is supported")
    text = dump_registry()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_problems(args):
    kw = {}
    if args.dim:
        kw["dim"] = args.dim
    if args.bound:
        kw["bound"] = args.bound
    if args.max_fes:
        kw["max_fes"] = args.max_fes
    if args.mode:
        kw["mode"] = args.mode
    train, test = generate_set(args.n, args.seed, args.test_fraction, **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(train, out / "train.json")
    write_manifest(test, out / "test.json")
    print(f"{len(train)} train / {len(test)} test instances written to {out}")


def cmd_features(args):
    items = read_manifest(args.instance)
    inst = items[args.index]
    F = problem_features(inst, args.seed)
    doc = {"schema_version": ex.SCHEMA_VERSION, "seed": args.seed, "instance": inst.index,
           "sample_size": 100 * inst.dim,
           "features": {n: float(v) for n, v in zip(FEATURE_NAMES, F)}}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    over = {"seed": args.seed}
    for name in ("epochs", "cycles", "stage1_controller", "lr"):
        val = getattr(args, name)
        if val is not None:
            over[name] = val
    if args.zero_features:
        over["zero_features"] = True
    cfg = TrainConfig(**{**cfg.__dict__, **over})
    if args.workers != 1:
        raise SystemExit("only single-worker training is implemented (--workers 1)")
    problems = read_manifest(args.problems)
    agents = load_checkpoint(args.init) if args.init else build_agents(
        AgentConfig(args.h, args.k, args.L1, args.L2, args.seed))
    fixed = Workflow.from_text(Path(args.workflow).read_text().strip()) if args.workflow else None
    trainer = Trainer(problems, cfg, agents, _out_dir(args), fixed_workflow=fixed)
    curves = trainer.train(args.stage)
    save_checkpoint(trainer.agents, Path(args.out_dir) / "final.bin")
    ex.dump_json({"schema_version": ex.SCHEMA_VERSION, "curves": curves,
                  "ppo_passes": trainer.ppo_passes,
                  "recorded_generations": trainer.recorded_generations},
                 Path(args.out_dir) / "train_summary.json")


def _write_result(res: ex.EvalResult, out: Path, name: str):
    ex.dump_json(res.to_json(), out / f"{name}.json")
    ex.write_csv(ex.results_table([res]), out / f"{name}.csv")


def cmd_eval(args):
    agents = load_checkpoint(args.ckpt)
    res = ex.evaluate_checkpoint(agents, read_manifest(args.problems), args.runs, args.seed,
                                 greedy=args.decode == "greedy", controller=args.controller,
                                 method=Path(args.ckpt).stem)
    _write_result(res, _out_dir(args), "eval")
    print(f"mean normalized objective: {res.mean:.6g}")


def cmd_ablate(args):
    trained = load_checkpoint(args.ckpt) if args.ckpt else None
    sbs = load_checkpoint(args.sbs_ckpt) if args.sbs_ckpt else None
    res = ex.ablation_run(args.mode, read_manifest(args.problems), trained, sbs, args.runs,
                          args.seed)
    _write_result(res, _out_dir(args), f"ablate_{args.mode}")
    print(f"{args.mode}: mean normalized objective {res.mean:.6g}")


def cmd_analyze(args):
    res = ex.EvalResult.from_json(json.loads(Path(args.results).read_text()))
    problems = read_manifest(args.problems)
    mat = ex.importance_analysis([r.names for r in res.instances], problems)
    out = _out_dir(args)
    ex.dump_json(mat.to_json(), out / "importance.json")
    ex.write_csv(ex.heatmap_rows(mat), out / "heatmap.csv")


def cmd_baseline(args):
    res = ex.run_baseline(args.name, read_manifest(args.problems), args.runs, args.seed)
    _write_result(res, _out_dir(args), f"baseline_{args.name}")
    print(f"{args.name}: mean normalized objective {res.mean:.6g}")


def cmd_report(args):
    results = [ex.EvalResult.from_json(json.loads(Path(p).read_text())) for p in args.results]
    imp = None
    if args.importance:
        d = json.loads(Path(args.importance).read_text())
        raw = np.array([[np.nan if x is None else x for x in r] for r in d["raw"]], dtype=float)
        imp = ex.ImportanceMatrix(tuple(d["rows"]), tuple(d["cols"]), raw,
                                  ex.standardize_columns(raw), np.isfinite(raw))
    ex.report(_out_dir(args), results, imp, args.train_log, args.reference)


def cmd_episode(args):
    inst = read_manifest(args.problems)[args.index]
    wf = Workflow.from_text(args.workflow)
    if args.ckpt:
        from .agents import PolicyController
        ctrl = PolicyController(load_checkpoint(args.ckpt).controller, deterministic=True)
    else:
        ctrl = DefaultController()
    traj = run_episode(wf, inst, ctrl, stream(args.seed, 0xE9), wf.np_init, record_obs=True)
    text = traj.to_jsonl()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _common(p, runs=True):
    p.add_argument("--seed", type=int, default=0)
    if runs:
        p.add_argument("--runs", type=int, default=ex.DEFAULT_RUNS)
    p.add_argument("--out-dir", default="out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecdesign", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("registry", help="module registry manifest")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--out")
    p.set_defaults(fn=cmd_registry)

    p = sub.add_parser("gen-problems", help="generate train/test problem manifests")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dim", type=int)
    p.add_argument("--bound", type=float)
    p.add_argument("--max-fes", type=int)
    p.add_argument("--mode", choices=["single", "composition", "hybrid"])
    p.set_defaults(fn=cmd_gen_problems)

    p = sub.add_parser("features", help="problem feature vector of one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--problems", required=True)
    p.add_argument("--stage", choices=["1", "2", "both"], default="both")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--stage1-controller", choices=["agent2", "defaults"])
    p.add_argument("--zero-features", action="store_true")
    p.add_argument("--init", help="checkpoint to continue from")
    p.add_argument("--workflow", help="file with a fixed workflow for stage 2")
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--L1", type=int, default=1)
    p.add_argument("--L2", type=int, default=3)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--problems", required=True)
    p.add_argument("--decode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--controller", choices=["agent2", "defaults"], default="agent2")
    _common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="ablation modes")
    p.add_argument("--mode", choices=ex.ABLATIONS, required=True)
    p.add_argument("--ckpt")
    p.add_argument("--sbs-ckpt")
    p.add_argument("--problems", required=True)
    _common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("analyze", help="module-importance KL analysis")
    p.add_argument("--results", required=True, help="eval JSON with recorded workflows")
    p.add_argument("--problems", required=True)
    _common(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("baseline", help="canonical baselines")
    p.add_argument("--name", choices=ex.BASELINES, required=True)
    p.add_argument("--problems", required=True)
    _common(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("report", help="tables, heatmap and curves as CSV/JSON")
    p.add_argument("--results", nargs="*", default=[])
    p.add_argument("--importance")
    p.add_argument("--train-log")
    p.add_argument("--reference")
    _common(p)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("episode", help="run one workflow and dump its trajectory as JSON lines")
    p.add_argument("--workflow", required=True, help="workflow text (16-bit ids)")
    p.add_argument("--problems", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_episode)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
