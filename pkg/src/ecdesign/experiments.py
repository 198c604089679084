"""Evaluation, baselines, ablations, module-importance analysis and reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import ranksums

from .agents import Agents, AgentConfig, PolicyController, build_agents
from .engine import DefaultController, run_episode
from .features import problem_features
from .functions import FUNCTION_BY_NAME
from .modular_space import BY_NAME, VARIANTS, Kind
from .problem_suite import ProblemInstance, normalize_objective, random_search_baseline
from .rng import stream
from .workflow import CANONICAL_DE, CANONICAL_PSO, Workflow

SCHEMA_VERSION = 1
DEFAULT_RUNS = 51
RS_SEED = 0          # seed of the cached random-search denominators

KIND_ROWS = (Kind.INITIALIZATION, Kind.NICHING, Kind.BOUNDARY_CONTROL, Kind.SELECTION,
             Kind.RESTART, Kind.POP_REDUCTION, Kind.MUTATION, Kind.CROSSOVER,
             Kind.OTHER_UPDATE, Kind.INFO_SHARING)
CHARACTERISTICS = ("Dimension", "maxFEs", "Search Range", "Modality", "Global Structure",
                   "Conditioning")

_EVAL_KEY = 0xE7A
_WF_KEY = 0xE7B


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class InstanceResult:
    index: int
    workflow: str
    finals: list[float]
    normalized: list[float]
    normalized_ok: bool
    names: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.normalized))

    @property
    def std(self) -> float:
        return float(np.std(self.normalized))


@dataclass
class EvalResult:
    method: str
    instances: list[InstanceResult]

    @property
    def mean(self) -> float:
        return float(np.mean([v for r in self.instances for v in r.normalized]))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "mean_normalized": self.mean,
            "instances": [{
                "index": r.index, "workflow": r.workflow, "modules": r.names,
                "final_best": r.finals, "normalized": r.normalized,
                "normalized_ok": r.normalized_ok, "mean": r.mean, "std": r.std,
            } for r in self.instances],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalResult":
        rows = [InstanceResult(r["index"], r["workflow"], r["final_best"], r["normalized"],
                               r["normalized_ok"], r.get("modules", [])) for r in data["instances"]]
        return cls(data["method"], rows)


def _normalized(inst: ProblemInstance, finals: Sequence[float]):
    f_rs = random_search_baseline(inst, RS_SEED)
    pairs = [normalize_objective(f, f_rs) for f in finals]
    return [p[0] for p in pairs], all(p[1] for p in pairs)


def evaluate_workflows(method: str, problems: Sequence[ProblemInstance],
                       workflows: Sequence[Workflow], controller, runs: int, seed: int) -> EvalResult:
    rows = []
    for i, (inst, wf) in enumerate(zip(problems, workflows)):
        finals = [run_episode(wf, inst, controller, stream(seed, _EVAL_KEY, i, r), wf.np_init).final_best
                  for r in range(runs)]
        norm, ok = _normalized(inst, finals)
        rows.append(InstanceResult(i, wf.to_text(), finals, norm, ok, wf.modules))
    return EvalResult(method, rows)


def generate_workflows(agents: Agents, problems: Sequence[ProblemInstance], seed: int,
                       greedy: bool = True, zero_features: bool = False) -> list[Workflow]:
    out = []
    for i, inst in enumerate(problems):
        if zero_features:
            # one shared stream: the single-best-solver gets one structure, N_nich included
            feats, rng = np.zeros(13), stream(seed, _WF_KEY)
        else:
            feats, rng = problem_features(inst, seed), stream(seed, _WF_KEY, i)
        out.append(agents.generator.sample(feats, rng, greedy=greedy)[0].workflow)
    return out


def evaluate_checkpoint(agents: Agents, problems: Sequence[ProblemInstance], runs: int = DEFAULT_RUNS,
                        seed: int = 0, greedy: bool = True, controller: str = "agent2",
                        zero_features: bool = False, method: str = "agents") -> EvalResult:
    """Generate one workflow per instance and run it ``runs`` times."""
    wfs = generate_workflows(agents, problems, seed, greedy, zero_features)
    if controller == "defaults":
        ctrl = DefaultController()
    else:
        ctrl = PolicyController(agents.controller, deterministic=greedy, zero_obs=zero_features)
    return evaluate_workflows(method, problems, wfs, ctrl, runs, seed)


# ---------------------------------------------------------------------------
# baselines

BASELINES = ("canonical_de", "canonical_pso", "random_search")


def baseline_workflow(name: str) -> Workflow | None:
    if name == "canonical_de":
        return Workflow(CANONICAL_DE)
    if name == "canonical_pso":
        return Workflow(CANONICAL_PSO)
    if name == "random_search":
        return None
    raise KeyError(f"unknown baseline {name!r}; choose from {BASELINES}")


def run_baseline(name: str, problems: Sequence[ProblemInstance], runs: int = DEFAULT_RUNS,
                 seed: int = 0) -> EvalResult:
    wf = baseline_workflow(name)
    if wf is not None:
        return evaluate_workflows(name, problems, [wf] * len(problems), DefaultController(), runs, seed)
    rows = []
    for i, inst in enumerate(problems):
        finals = [random_search_baseline(inst, int(stream(seed, _EVAL_KEY, i, r).integers(2**63)))
                  for r in range(runs)]
        norm, ok = _normalized(inst, finals)
        rows.append(InstanceResult(i, "random_search", finals, norm, ok, []))
    return EvalResult(name, rows)


# ---------------------------------------------------------------------------
# ablations

ABLATIONS = ("full", "no_a1", "no_a2", "no_a1a2", "sbs")


def ablation_run(mode: str, problems: Sequence[ProblemInstance], trained: Agents | None = None,
                 sbs: Agents | None = None, runs: int = DEFAULT_RUNS, seed: int = 0,
                 fresh_seed: int | None = None) -> EvalResult:
    """``no_a1``/``no_a1a2`` use untrained agents built from ``fresh_seed``."""
    if mode not in ABLATIONS:
        raise KeyError(f"unknown ablation {mode!r}; choose from {ABLATIONS}")
    cfg = trained.cfg if trained is not None else AgentConfig()
    fresh = build_agents(AgentConfig(cfg.h, cfg.k, cfg.L1, cfg.L2,
                                     seed if fresh_seed is None else fresh_seed))
    if mode == "no_a1a2":
        return evaluate_checkpoint(fresh, problems, runs, seed, method=mode)
    if mode == "sbs":
        if sbs is None:
            raise FileNotFoundError("sbs mode needs the checkpoint trained with zeroed features")
        return evaluate_checkpoint(sbs, problems, runs, seed, zero_features=True, method=mode)
    if trained is None:
        raise FileNotFoundError(f"{mode} mode needs a trained checkpoint")
    if mode == "full":
        return evaluate_checkpoint(trained, problems, runs, seed, method=mode)
    if mode == "no_a2":
        return evaluate_checkpoint(trained, problems, runs, seed, controller="defaults", method=mode)
    mixed = Agents(trained.cfg, fresh.generator, trained.controller)
    return evaluate_checkpoint(mixed, problems, runs, seed, method=mode)


# ---------------------------------------------------------------------------
# module importance

def instance_labels(inst: ProblemInstance) -> dict[str, object]:
    """Characteristic values; composed instances take the harder tag of any component."""
    fns = [FUNCTION_BY_NAME[n] for n in inst.names]
    return {
        "Dimension": inst.dim,
        "maxFEs": inst.max_fes,
        "Search Range": inst.ub,
        "Modality": "multimodal" if any(f.modality == "multimodal" for f in fns) else "unimodal",
        "Global Structure": "weak" if any(f.structure == "weak" for f in fns) else "adequate",
        "Conditioning": "high" if any(f.conditioning == "high" for f in fns) else "low",
    }


def kind_categories(kind: Kind) -> list[str]:
    return [v.name for v in VARIANTS if _topology_kind(v) is kind]


def _topology_kind(v) -> Kind:
    if v.is_multi:
        return BY_NAME[v.members[0]].kind
    return v.kind


def occurrence_counts(workflows: Sequence[Sequence[str]], kind: Kind) -> np.ndarray:
    cats = kind_categories(kind)
    pos = {c: i for i, c in enumerate(cats)}
    counts = np.zeros(len(cats))
    for names in workflows:
        for n in names:
            if n in pos:
                counts[pos[n]] += 1
    return counts


def smoothed(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    return (counts + 1.0) / (counts.sum() + len(counts))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p, q = np.asarray(p, float), np.asarray(q, float)
    m = p > 0
    return float(max(0.0, np.sum(p[m] * np.log(p[m] / q[m]))))


@dataclass
class ImportanceMatrix:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    raw: np.ndarray
    standardized: np.ndarray
    defined: np.ndarray

    def to_json(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(x) else float(x) for x in r] for r in a]
        return {"schema_version": SCHEMA_VERSION, "rows": list(self.rows), "cols": list(self.cols),
                "raw": clean(self.raw), "standardized": clean(self.standardized),
                "defined": self.defined.tolist()}


def standardize_columns(M: np.ndarray) -> np.ndarray:
    out = np.full_like(M, np.nan, dtype=float)
    for j in range(M.shape[1]):
        col = M[:, j]
        ok = np.isfinite(col)
        if not ok.any():
            continue
        mu, sd = col[ok].mean(), col[ok].std()
        out[ok, j] = (col[ok] - mu) / sd if sd > 0 else 0.0
    return out


def importance_analysis(workflows: Sequence[Sequence[str]],
                        problems: Sequence[ProblemInstance]) -> ImportanceMatrix:
    """Max pairwise KL between sub-module occurrence distributions across characteristic groups."""
    labels = [instance_labels(p) for p in problems]
    raw = np.full((len(KIND_ROWS), len(CHARACTERISTICS)), np.nan)
    for j, ch in enumerate(CHARACTERISTICS):
        groups: dict[object, list[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab[ch], []).append(i)
        keys = sorted(groups, key=str)
        for r, kind in enumerate(KIND_ROWS):
            dists = {k: smoothed(occurrence_counts([workflows[i] for i in groups[k]], kind))
                     for k in keys if groups[k]}
            vals = [kl_divergence(dists[a], dists[b]) for a, b in permutations(dists, 2)]
            if vals:
                raw[r, j] = max(vals)
    return ImportanceMatrix(tuple(k.value for k in KIND_ROWS), CHARACTERISTICS, raw,
                            standardize_columns(raw), np.isfinite(raw))


# ---------------------------------------------------------------------------
# reports

def _fmt(x: float) -> str:
    return repr(float(x))


def significance(reference: Sequence[float], other: Sequence[float], alpha: float = 0.05) -> str:
    """``+`` when the reference is significantly lower (better), ``-`` when higher."""
    a, b = np.asarray(reference, float), np.asarray(other, float)
    if len(a) < 2 or len(b) < 2 or (np.all(a == a[0]) and np.all(b == a[0])):
        return "="
    stat, p = ranksums(a, b)
    if not math.isfinite(p) or p >= alpha:
        return "="
    return "+" if stat < 0 else "-"


def results_table(results: Sequence[EvalResult], reference: str | None = None) -> list[dict]:
    ref = next((r for r in results if r.method == reference), results[0] if results else None)
    rows = []
    for res in results:
        for inst in res.instances:
            mark = ""
            if ref is not None and res is not ref:
                mark = significance(ref.instances[inst.index].normalized, inst.normalized)
            rows.append({"instance": inst.index, "method": res.method, "mean": inst.mean,
                         "std": inst.std, "runs": len(inst.normalized), "mark": mark})
    return rows


def write_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def heatmap_rows(mat: ImportanceMatrix, which: str = "standardized") -> list[dict]:
    data = mat.standardized if which == "standardized" else mat.raw
    return [{"kind": k, **{c: float(data[i, j]) for j, c in enumerate(mat.cols)}}
            for i, k in enumerate(mat.rows)]


def training_curve(log_path) -> list[dict]:
    rows = []
    for line in Path(log_path).read_text().splitlines():
        rec = json.loads(line)
        if "mean_return" in rec:
            rows.append({"step": rec["step"], "stage": rec["stage"], "epoch": rec["epoch"],
                         "mean_return": float(rec["mean_return"])})
    return rows


def report(out_dir, results: Sequence[EvalResult] = (), importance: ImportanceMatrix | None = None,
           train_log=None, reference: str | None = None) -> dict[str, Path]:
    """Write the table, heatmap and curve data as CSV plus one JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    summary: dict = {"schema_version": SCHEMA_VERSION,
                     "significance": "Wilcoxon rank-sum, alpha=0.05, against the reference method"}
    if results:
        rows = results_table(results, reference)
        write_csv(rows, out / "table.csv")
        written["table"] = out / "table.csv"
        summary["methods"] = {r.method: r.mean for r in results}
        summary["reference"] = reference or results[0].method
    if importance is not None:
        write_csv(heatmap_rows(importance), out / "heatmap.csv")
        write_csv(heatmap_rows(importance, "raw"), out / "heatmap_raw.csv")
        written["heatmap"] = out / "heatmap.csv"
        summary["importance"] = importance.to_json()
    if train_log is not None:
        write_csv(training_curve(train_log), out / "curves.csv")
        written["curves"] = out / "curves.csv"
    with open(out / "report.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written["summary"] = out / "report.json"
    return written


def dump_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
