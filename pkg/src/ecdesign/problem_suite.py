"""Synthetic problem instances: single, composition and hybrid functions."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .functions import FUNCTIONS
from .rng import stream

DIMS = (5, 10, 20, 50)
BOUNDS = (5.0, 10.0, 20.0, 50.0)
MAX_FES = (10_000, 20_000, 30_000, 40_000, 50_000)
MODES = ("single", "composition", "hybrid")

# spawn-key codes per instance field
_MODE, _DIM, _BOUND, _FES, _COMP, _WEIGHT, _SEG, _SHIFT, _ROT = range(9)
_SPLIT = 0x5B11
_RS = 0x25


@dataclass
class ProblemInstance:
    seed: int
    index: int
    mode: str
    components: tuple[int, ...]
    dim: int
    lb: float
    ub: float
    max_fes: int
    shift: np.ndarray = field(repr=False)
    rotation: np.ndarray = field(repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)
    segments: tuple[np.ndarray, ...] | None = field(default=None, repr=False)
    f_star: float = 0.0
    f_star_approx: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return evaluate(self, x)

    @property
    def lower(self) -> np.ndarray:
        return np.full(self.dim, self.lb)

    @property
    def upper(self) -> np.ndarray:
        return np.full(self.dim, self.ub)

    @property
    def names(self) -> list[str]:
        return [FUNCTIONS[c].name for c in self.components]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(_header(self), sort_keys=True).encode())
        for arr in (self.shift, self.rotation):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        out = _header(self)
        out["f_star"] = self.f_star
        out["f_star_approx"] = self.f_star_approx
        out["hash"] = self.content_hash()
        return out


def _header(p: ProblemInstance) -> dict:
    return {"seed": p.seed, "index": p.index, "mode": p.mode,
            "components": [FUNCTIONS[c].name for c in p.components],
            "dim": p.dim, "bounds": [p.lb, p.ub], "max_fes": p.max_fes}


def evaluate(p: ProblemInstance, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.ndim != 2 or x.shape[1] != p.dim:
        raise ValueError(f"expected points of dimension {p.dim}, got shape {x.shape}")
    z = (x - p.shift) @ p.rotation
    if p.mode == "single":
        return FUNCTIONS[p.components[0]](z)
    if p.mode == "composition":
        out = np.zeros(len(z))
        for w, c in zip(p.weights, p.components):
            out += w * FUNCTIONS[c](z)
        return out
    out = np.zeros(len(z))
    for seg, c in zip(p.segments, p.components):
        out += FUNCTIONS[c](z[:, seg])
    return out


def haar_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def generate_instance(seed: int, index: int = 0, mode: str | None = None, *,
                      dim: int | None = None, bound: float | None = None,
                      max_fes: int | None = None,
                      functions: Sequence[int | str] | None = None) -> ProblemInstance:
    """Draw instance ``index`` of the family keyed by ``seed``.

    Each field has its own stream, so fixing one (say ``dim``) leaves the
    others unchanged.
    """
    def g(code):
        return stream(seed, index, code)

    mode = mode or MODES[int(g(_MODE).integers(3))]
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    dim = int(dim or DIMS[int(g(_DIM).integers(len(DIMS)))])
    bound = float(bound or BOUNDS[int(g(_BOUND).integers(len(BOUNDS)))])
    max_fes = int(max_fes or MAX_FES[int(g(_FES).integers(len(MAX_FES)))])

    if functions is not None:
        comps = tuple(_function_index(f) for f in functions)
    else:
        rc = g(_COMP)
        n = 1 if mode == "single" else int(rc.integers(2, 6))
        if mode == "hybrid":
            n = min(n, dim)
        comps = tuple(int(c) for c in rc.integers(len(FUNCTIONS), size=n))
    if mode == "single" and len(comps) != 1:
        raise ValueError("single mode takes one function")
    if mode != "single" and not 2 <= len(comps) <= 5:
        raise ValueError("composed modes take 2 to 5 functions")

    lb, ub = -bound, bound
    shift = g(_SHIFT).uniform(0.8 * lb, 0.8 * ub, size=dim)
    rot = haar_rotation(g(_ROT), dim)
    weights = segments = None
    if mode == "composition":
        weights = 1.0 - g(_WEIGHT).random(len(comps))    # (0, 1]
    elif mode == "hybrid":
        if len(comps) > dim:
            raise ValueError("more hybrid segments than dimensions")
        rs = g(_SEG)
        perm = rs.permutation(dim)
        cuts = np.sort(rs.choice(np.arange(1, dim), size=len(comps) - 1, replace=False))
        segments = tuple(np.split(perm, cuts))
    p = ProblemInstance(seed, index, mode, comps, dim, lb, ub, max_fes, shift, rot,
                        weights, segments)
    # every basic function is minimised at the origin of its own frame,
    # so the shift vector is the optimum for all three modes
    p.f_star = float(evaluate(p, shift[None, :])[0])
    return p


def _function_index(f: int | str) -> int:
    if isinstance(f, str):
        for b in FUNCTIONS:
            if b.name == f:
                return b.index
        raise KeyError(f)
    return int(f)


def from_manifest(m: dict) -> ProblemInstance:
    p = generate_instance(int(m["seed"]), int(m["index"]), m["mode"], dim=int(m["dim"]),
                          bound=float(m["bounds"][1]), max_fes=int(m["max_fes"]),
                          functions=m["components"])
    if "hash" in m and p.content_hash() != m["hash"]:
        raise ValueError("manifest hash does not match the re-derived instance")
    return p


def generate_set(n: int, seed: int, test_fraction: float = 0.25, **kw):
    """Return ``(train, test)`` lists with ``round(n * test_fraction)`` test items."""
    if n < 2:
        raise ValueError("need at least two instances for a split")
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    items = [generate_instance(seed, i, **kw) for i in range(n)]
    order = stream(seed, _SPLIT).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [p for i, p in enumerate(items) if i not in test_idx]
    test = [p for i, p in enumerate(items) if i in test_idx]
    return train, test


_RS_CACHE: dict[tuple[str, int, int], float] = {}


def random_search_baseline(p: ProblemInstance, seed: int = 0, max_fes: int | None = None,
                           chunk: int = 2000) -> float:
    """Best value among ``max_fes`` uniform samples (cached)."""
    n = int(max_fes or p.max_fes)
    key = (p.content_hash(), int(seed), n)
    if key in _RS_CACHE:
        return _RS_CACHE[key]
    rng = stream(seed, _RS)
    best = np.inf
    left = n
    while left > 0:
        k = min(chunk, left)
        x = rng.uniform(p.lb, p.ub, size=(k, p.dim))
        best = min(best, float(np.min(evaluate(p, x))))
        left -= k
    _RS_CACHE[key] = best
    return best


def normalize_objective(f_best: float, f_rs: float) -> tuple[float, bool]:
    """``(f_best / f_rs, ok)``; when the baseline is ~0 the raw value comes back flagged."""
    if abs(f_rs) < 1e-12:
        return float(f_best), False
    return float(f_best) / float(f_rs), True


def write_manifest(instances, path) -> None:
    with open(path, "w") as fh:
        json.dump({"schema_version": 1, "instances": [p.manifest() for p in instances]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> list[ProblemInstance]:
    with open(path) as fh:
        data = json.load(fh)
    items = data["instances"] if isinstance(data, dict) and "instances" in data else data
    if isinstance(items, dict):
        items = [items]
    return [from_manifest(m) for m in items]
