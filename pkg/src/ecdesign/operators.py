"""Array-level implementations of the registered modules.

All routines work on a single (sub)population stored as ``X`` of shape
``(n, d)`` with objective values ``f``; randomness comes only from the
generator passed in, in a fixed consumption order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

NP_MIN = 4
MIN_NICHE = 2
Warn = Callable[[str], None]


def _nowarn(msg: str) -> None:
    pass


# ---------------------------------------------------------------------------
# initialization

def initialize(name: str, n: int, lb: np.ndarray, ub: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
    d = len(lb)
    if name == "Uniform":
        return rng.uniform(lb, ub, size=(n, d))
    if name == "Normal":
        x = rng.normal((ub + lb) / 2.0, (ub - lb) / 6.0, size=(n, d))
        return np.clip(x, lb, ub)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # Sobol balance warning for n != 2^k
        if name == "Sobol":
            u = qmc.Sobol(d, scramble=True, seed=rng).random(n)
        elif name == "LHS":
            u = qmc.LatinHypercube(d, seed=rng).random(n)
        elif name == "Halton":
            u = qmc.Halton(d, scramble=True, seed=rng).random(n)
        else:
            raise KeyError(f"not an initialization module: {name}")
    return lb + u * (ub - lb)


# ---------------------------------------------------------------------------
# index sampling

def pick_distinct(rng: np.random.Generator, n: int, k: int, warn: Warn = _nowarn) -> np.ndarray:
    """``k`` indices per row, distinct from each other and from the row index."""
    if k <= n - 1:
        keys = rng.random((n, n))
        keys[np.arange(n), np.arange(n)] = np.inf
        return np.argsort(keys, axis=1, kind="stable")[:, :k]
    warn(f"population of {n} too small for {k} distinct donors; sampling with replacement")
    return rng.integers(0, n, size=(n, k))


def pick_union(rng: np.random.Generator, n: int, n_arc: int, exclude: np.ndarray,
               warn: Warn = _nowarn) -> np.ndarray:
    """One index into population+archive per row, avoiding ``i`` and ``exclude[i]``."""
    m = n + n_arc
    if m >= 3:
        keys = rng.random((n, m))
        rows = np.arange(n)
        keys[rows, rows] = np.inf
        keys[rows, exclude] = np.inf
        return np.argmin(keys, axis=1)
    warn("population too small for a distinct archive donor; sampling with replacement")
    return rng.integers(0, m, size=n)


def _pbest(rng, f, p, size=None):
    n = len(f)
    top = max(1, int(round(p * n)))
    order = np.argsort(f, kind="stable")
    return order[rng.integers(0, top, size=n if size is None else size)]


# ---------------------------------------------------------------------------
# mutation

def de_mutation(name: str, X: np.ndarray, f: np.ndarray, cfg: dict, rng: np.random.Generator,
                archive: np.ndarray | None = None, warn: Warn = _nowarn) -> np.ndarray:
    n = len(X)
    F1 = cfg.get("F1", 0.5)
    F2 = cfg.get("F2", 0.5)
    p = cfg.get("p", 0.05)
    best = X[np.argmin(f)]
    arc = archive if archive is not None else np.empty((0, X.shape[1]))
    if name == "DE/rand/1":
        r = pick_distinct(rng, n, 3, warn)
        return X[r[:, 0]] + F1 * (X[r[:, 1]] - X[r[:, 2]])
    if name == "DE/rand/2":
        r = pick_distinct(rng, n, 5, warn)
        return X[r[:, 0]] + F1 * (X[r[:, 1]] - X[r[:, 2]]) + F2 * (X[r[:, 3]] - X[r[:, 4]])
    if name == "DE/best/1":
        r = pick_distinct(rng, n, 2, warn)
        return best + F1 * (X[r[:, 0]] - X[r[:, 1]])
    if name == "DE/best/2":
        r = pick_distinct(rng, n, 4, warn)
        return best + F1 * (X[r[:, 0]] - X[r[:, 1]]) + F2 * (X[r[:, 2]] - X[r[:, 3]])
    if name == "DE/current-to-best/1":
        r = pick_distinct(rng, n, 2, warn)
        return X + F1 * (best - X) + F2 * (X[r[:, 0]] - X[r[:, 1]])
    if name == "DE/current-to-rand/1":
        r = pick_distinct(rng, n, 3, warn)
        return X + F1 * (X[r[:, 0]] - X) + F2 * (X[r[:, 1]] - X[r[:, 2]])
    if name == "DE/rand-to-best/1":
        r = pick_distinct(rng, n, 2, warn)
        return X[r[:, 0]] + F1 * (best - X[r[:, 1]])
    if name == "DE/current-to-pbest/1":
        r = pick_distinct(rng, n, 2, warn)
        pb = _pbest(rng, f, p)
        return X + F1 * (X[pb] - X) + F2 * (X[r[:, 0]] - X[r[:, 1]])
    if name == "DE/current-to-pbest/1+archive":
        r1 = pick_distinct(rng, n, 1, warn)[:, 0]
        r2 = pick_union(rng, n, len(arc), r1, warn)
        pool = np.vstack([X, arc])
        pb = _pbest(rng, f, p)
        return X + F1 * (X[pb] - X) + F2 * (X[r1] - pool[r2])
    if name == "DE/weighted-rand-to-pbest/1":
        r = pick_distinct(rng, n, 2, warn)
        pb = _pbest(rng, f, p)
        return F1 * X[r[:, 0]] + F1 * F2 * (X[pb] - X[r[:, 1]])
    if name == "DE/current-to-rand/1+archive":
        r = pick_distinct(rng, n, 2, warn)
        r3 = pick_union(rng, n, len(arc), r[:, 1], warn)
        pool = np.vstack([X, arc])
        return X + F1 * (X[r[:, 0]] - X) + F2 * (X[r[:, 1]] - pool[r3])
    raise KeyError(f"not a DE mutation: {name}")


def ga_mutation(name: str, V: np.ndarray, cfg: dict, lb, ub, rng) -> np.ndarray:
    if name == "Gaussian":
        return V + rng.normal(0.0, 1.0, size=V.shape) * cfg.get("sigma", 0.1) * (ub - lb)
    if name == "Polynomial":
        eta = cfg.get("eta_m", 20.0)
        u = rng.random(V.shape)
        e = 1.0 / (1.0 + eta)
        lo = V + ((2.0 * u) ** e - 1.0) * (V - lb)
        hi = V + (1.0 - (2.0 - 2.0 * u) ** e) * (ub - V)
        return np.where(u <= 0.5, lo, hi)
    raise KeyError(f"not a GA mutation: {name}")


# ---------------------------------------------------------------------------
# crossover

def binomial(X, V, cr, rng):
    n, d = X.shape
    mask = rng.random((n, d)) < cr
    jrand = rng.integers(0, d, size=n)
    mask[np.arange(n), jrand] = True
    return np.where(mask, V, X)


def exponential(X, V, cr, rng):
    n, d = X.shape
    start = rng.integers(0, d, size=n)
    r = rng.random((n, d - 1)) < cr if d > 1 else np.zeros((n, 0), bool)
    length = 1 + np.cumprod(r, axis=1).sum(axis=1)
    offset = (np.arange(d)[None, :] - start[:, None]) % d
    return np.where(offset < length[:, None], V, X)


def de_crossover(name: str, X, V, f, cfg: dict, rng, archive=None, archive_f=None):
    cr = cfg.get("Cr", 0.9)
    if name == "Binomial":
        return binomial(X, V, cr, rng)
    if name == "Exponential":
        return exponential(X, V, cr, rng)
    if name in ("qbest_Binomial", "qbest_Binomial+archive"):
        p = cfg.get("p", 0.5 if name == "qbest_Binomial" else 0.18)
        pool, pf = X, f
        if name.endswith("+archive") and archive is not None and len(archive):
            pool, pf = np.vstack([X, archive]), np.concatenate([f, archive_f])
        base = pool[_pbest(rng, pf, p, len(X))]
        return binomial(base, V, cr, rng)
    raise KeyError(f"not a DE crossover: {name}")


def ga_crossover(name: str, X, cfg: dict, rng):
    n, d = X.shape
    r = np.stack([rng.integers(0, n, size=n), rng.integers(0, n, size=n)], axis=1)
    x1, x2 = X[r[:, 0]], X[r[:, 1]]
    if name == "Arithmetic":
        a = cfg.get("alpha", 0.5)
        return (1.0 - a) * x1 + a * x2
    if name == "SBX":
        return sbx(x1, x2, cfg.get("eta_c", 20.0), rng)
    raise KeyError(f"not a GA crossover: {name}")


def sbx(x1, x2, eta, rng):
    u = rng.random(x1.shape)
    beta = np.where(u <= 0.5, (2.0 * u) ** (1.0 / (eta + 1.0)),
                    (1.0 / (2.0 * (1.0 - u) + 1e-300)) ** (1.0 / (eta + 1.0)))
    sign = np.where(rng.random(len(x1)) < 0.5, 1.0, -1.0)[:, None]
    return 0.5 * ((x1 + x2) + sign * beta * (x1 - x2))


# ---------------------------------------------------------------------------
# particle swarms

def _rand01(rng, shape):
    # (0, 1] as in the velocity laws
    return 1.0 - rng.random(shape)


def fdr_nbest(X, f):
    """Per-dimension partner maximising the fitness-distance ratio."""
    n, d = X.shape
    dist = np.abs(X[None, :, :] - X[:, None, :])          # [i, p, j]
    gain = (f[:, None] - f[None, :])[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = gain / dist
    ratio = np.where(dist > 0, ratio, np.where(gain > 0, np.inf, -np.inf))
    ratio[np.arange(n), np.arange(n), :] = -np.inf
    idx = np.argmax(ratio, axis=1)                         # [i, j]
    return X[idx, np.arange(d)[None, :]]


def clpso_exemplar(pbest, pbest_f, rng):
    n, d = pbest.shape
    if n > 1:
        pc = 0.05 + 0.45 * (np.exp(10.0 * np.arange(n) / (n - 1)) - 1.0) / (np.exp(10.0) - 1.0)
    else:
        pc = np.full(1, 0.05)
    a = rng.integers(0, n, size=(n, d))
    b = rng.integers(0, n, size=(n, d))
    winner = np.where(pbest_f[a] <= pbest_f[b], a, b)
    own = rng.random((n, d)) > pc[:, None]
    return np.where(own, pbest, pbest[winner, np.arange(d)[None, :]])


def pso_velocity(name: str, X, f, vel, pbest, pbest_f, gbest, cfg: dict, rng) -> np.ndarray:
    w = cfg.get("w", 0.7)
    c1 = cfg.get("c1", 1.49445)
    c2 = cfg.get("c2", 1.49445)
    shape = X.shape
    if name == "Vanilla_PSO":
        return (w * vel + c1 * _rand01(rng, shape) * (pbest - X)
                + c2 * _rand01(rng, shape) * (gbest - X))
    if name == "FDR_PSO":
        nb = fdr_nbest(X, f)
        c3 = cfg.get("c3", 2.0)
        return (w * vel + c1 * _rand01(rng, shape) * (pbest - X)
                + c2 * _rand01(rng, shape) * (gbest - X) + c3 * _rand01(rng, shape) * (nb - X))
    if name == "CLPSO":
        ex = clpso_exemplar(pbest, pbest_f, rng)
        return (w * vel + c1 * _rand01(rng, shape) * (ex - X)
                + c2 * _rand01(rng, shape) * (gbest - X))
    raise KeyError(f"not a PSO update: {name}")


# ---------------------------------------------------------------------------
# boundary control

def boundary_control(name: str, X, lb, ub, rng, parents=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out_hi = X > ub
    out_lo = X < lb
    out = out_hi | out_lo
    if not out.any():
        return X.copy()
    rng_w = ub - lb
    if name == "Clip_BC":
        return np.clip(X, lb, ub)
    if name == "Rand_BC":
        fresh = rng.uniform(lb, ub, size=X.shape)
        return np.where(out, fresh, X)
    if name == "Periodic_BC":
        y = np.where(out_hi, lb + np.mod(X - ub, rng_w), X)
        y = np.where(out_lo, ub - np.mod(lb - X, rng_w), y)
        return np.clip(y, lb, ub)
    if name == "Reflect_BC":
        # fold repeatedly so far-out points land inside as well
        t = np.mod(X - lb, 2.0 * rng_w)
        t = np.where(t > rng_w, 2.0 * rng_w - t, t)
        return np.where(out, lb + t, X)
    if name == "Halving_BC":
        base = (lb + ub) / 2.0 if parents is None else np.clip(parents, lb, ub)
        base = np.broadcast_to(base, X.shape)
        y = np.where(out_hi, (base + ub) / 2.0, X)
        return np.where(out_lo, (base + lb) / 2.0, y)
    raise KeyError(f"not a boundary module: {name}")


# ---------------------------------------------------------------------------
# selection

@dataclass
class Selected:
    X: np.ndarray
    f: np.ndarray
    source: np.ndarray          # index into concat(parents, offspring)
    losers_X: np.ndarray
    losers_f: np.ndarray


def linear_ranking_probs(f: np.ndarray, eta_plus: float = 2.0, eta_minus: float = 0.0) -> np.ndarray:
    """Worst gets rank 1; with eta_plus=2 the best is drawn with probability 2/N."""
    n = len(f)
    rank = np.empty(n)
    rank[np.argsort(-f, kind="stable")] = np.arange(1, n + 1)
    if n == 1:
        return np.ones(1)
    p = (eta_minus + (eta_plus - eta_minus) * (rank - 1) / (n - 1)) / n
    return p / p.sum()


def roulette_probs(f: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    fit = np.max(f) - f + eps
    return fit / fit.sum()


def fitness_probs(fit: np.ndarray) -> np.ndarray:
    return fit / fit.sum()


def select(name: str, X, f, U, fU, rng) -> Selected:
    n = len(X)
    empty = np.empty((0, X.shape[1]))
    if name == "DE-like":
        win = fU <= f
        src = np.where(win, np.arange(n) + n, np.arange(n))
        return Selected(np.where(win[:, None], U, X), np.where(win, fU, f), src,
                        X[win], f[win])
    if name == "Crowding":
        Xn, fn = X.copy(), f.copy()
        src = np.arange(n)
        lx, lf = [], []
        for j in range(n):
            k = int(np.argmin(np.sum((Xn - U[j]) ** 2, axis=1)))
            if fU[j] <= fn[k]:
                lx.append(Xn[k].copy())
                lf.append(fn[k])
                Xn[k], fn[k], src[k] = U[j], fU[j], n + j
        lxa = np.array(lx).reshape(-1, X.shape[1])
        return Selected(Xn, fn, src, lxa, np.array(lf))
    if name == "PSO-like":
        return Selected(U.copy(), fU.copy(), np.arange(n) + n, empty, np.empty(0))
    allX = np.vstack([X, U])
    allf = np.concatenate([f, fU])
    if name == "Ranking":
        idx = rng.choice(2 * n, size=n, replace=True, p=linear_ranking_probs(allf))
    elif name == "Roulette":
        idx = rng.choice(2 * n, size=n, replace=True, p=roulette_probs(allf))
    elif name == "Tournament":
        perm = rng.permutation(2 * n).reshape(n, 2)
        idx = np.where(allf[perm[:, 0]] <= allf[perm[:, 1]], perm[:, 0], perm[:, 1])
    else:
        raise KeyError(f"not a selection module: {name}")
    return Selected(allX[idx], allf[idx], idx, empty, np.empty(0))


# ---------------------------------------------------------------------------
# niching, sharing, reduction, restart

def apply_niching(name: str, X, f, n_nich: int, rng, warn: Warn = _nowarn) -> list[np.ndarray]:
    """Index sets of the sub-populations."""
    n = len(X)
    if n < MIN_NICHE * n_nich:
        warn(f"population {n} too small for {n_nich} niches; niching skipped")
        return [np.arange(n)]
    if name == "Rand_Nich":
        return [np.sort(a) for a in np.array_split(rng.permutation(n), n_nich)]
    if name == "Ranking_Nich":
        return list(np.array_split(np.argsort(f, kind="stable"), n_nich))
    if name == "Distance_Nich":
        size = n // n_nich
        left = np.ones(n, bool)
        groups = []
        for g in range(n_nich):
            avail = np.flatnonzero(left)
            if g == n_nich - 1:
                groups.append(avail)
                break
            seed = avail[rng.integers(len(avail))]
            d = np.sum((X[avail] - X[seed]) ** 2, axis=1)
            take = avail[np.argsort(d, kind="stable")[:size]]
            left[take] = False
            groups.append(np.sort(take))
        return groups
    raise KeyError(f"not a niching module: {name}")


def share_info(X_cur, f_cur, X_tgt, f_tgt):
    """Copy the target's best over the current worst (in place on copies)."""
    X_cur, f_cur = X_cur.copy(), f_cur.copy()
    b = int(np.argmin(f_tgt))
    w = int(np.argmax(f_cur))
    X_cur[w] = X_tgt[b]
    f_cur[w] = f_tgt[b]
    return X_cur, f_cur, w


def reduce_population(name: str, np_max: int, np_min: int, g: float, H: float) -> int:
    frac = min(max(g / H, 0.0), 1.0) if H > 0 else 1.0
    if name == "Linear":
        size = round((np_min - np_max) * frac) + np_max
    elif name == "Non-Linear":
        size = round((np_min - np_max) * frac ** (1.0 - frac) + np_max)
    else:
        raise KeyError(f"not a reduction module: {name}")
    return int(min(max(size, np_min), np_max))


def check_restart(name: str, stagnation: int, X, f, diameter: float) -> bool:
    if name == "Stagnation":
        return stagnation >= 100
    if name == "Obj_Convergence":
        k = max(1, int(np.ceil(0.2 * len(f))))
        top = np.sort(f)[:k]
        return bool(top[-1] - top[0] < 1e-16)
    if name == "Solution_Convergence":
        spread = np.max(X.max(axis=0) - X.min(axis=0))
        return bool(spread < 1e-16 * diameter)
    if name == "Obj&Solution_Convergence":
        if np.max(f) - np.min(f) >= 1e-8:
            return False
        return bool(max_pairwise_distance(X) < 0.005 * diameter)
    raise KeyError(f"not a restart module: {name}")


def max_pairwise_distance(X: np.ndarray) -> float:
    if len(X) < 2:
        return 0.0
    return float(np.max(pdist(X)))
