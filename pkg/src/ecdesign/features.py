"""Problem features (basic descriptors plus nine landscape statistics) and
per-generation progress features."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import gaussian_kde

from .problem_suite import ProblemInstance
from .rng import stream

ELA_NAMES = (
    "ela_meta.lin_simple.intercept",
    "ela_meta.quad_simple.adj_r2",
    "ela_meta.lin_w_interact.adj_r2",
    "ic.m0",
    "ic.h_max",
    "ic.eps_ratio",
    "nbc.nn_nb.mean_ratio",
    "nbc.dist_ratio.coeff_var",
    "ela_distr.number_of_peaks",
)
BASIC_NAMES = ("dim", "max_fes", "ub", "lb")
FEATURE_NAMES = BASIC_NAMES + ELA_NAMES
PROGRESS_NAMES = ("local_best", "local_mean", "local_std", "max_distance", "dispersion_diff",
                  "local_fdc", "global_best", "global_fdc", "budget_left")

_EPS_GRID = np.logspace(-6, 2, 161)
_ELA_KEY = 0xE1A


# ---------------------------------------------------------------------------
# meta-models

def _adj_r2(A: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    n, cols = A.shape
    p = cols - 1
    sst = float(np.sum((y - y.mean()) ** 2))
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        coef = np.zeros(cols)
        coef[0] = y.mean()
        return 0.0, coef
    if p >= n - 1:
        lam = 1e-6
        coef = np.linalg.solve(A.T @ A + lam * np.eye(cols), A.T @ y)
        hat = A @ np.linalg.solve(A.T @ A + lam * np.eye(cols), A.T)
        p = min(float(np.trace(hat)) - 1.0, n - 2.0)
    else:
        coef = np.linalg.lstsq(A, y, rcond=None)[0]
    r2 = 1.0 - float(np.sum((y - A @ coef) ** 2)) / sst
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1), coef


def meta_models(X: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    n, d = X.shape
    ones = np.ones((n, 1))
    _, lin = _adj_r2(np.hstack([ones, X]), y)
    quad, _ = _adj_r2(np.hstack([ones, X, X * X]), y)
    iu, ju = np.triu_indices(d, k=1)
    inter, _ = _adj_r2(np.hstack([ones, X, X[:, iu] * X[:, ju]]), y)
    return float(lin[0]), float(quad), float(inter)


# ---------------------------------------------------------------------------
# information content

def nn_tour(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    seen = np.zeros(n, bool)
    cur = int(rng.integers(n))
    order = [cur]
    seen[cur] = True
    for _ in range(n - 1):
        d = np.sum((X - X[cur]) ** 2, axis=1)
        d[seen] = np.inf
        cur = int(np.argmin(d))
        seen[cur] = True
        order.append(cur)
    return np.array(order)


def _symbols(dy: np.ndarray, eps: float) -> np.ndarray:
    return np.where(dy > eps, 1, np.where(dy < -eps, -1, 0))


def _entropy(s: np.ndarray) -> float:
    if len(s) < 2:
        return 0.0
    a, b = s[:-1], s[1:]
    diff = a != b
    if not diff.any():
        return 0.0
    codes = (a[diff] + 1) * 3 + (b[diff] + 1)
    counts = np.bincount(codes, minlength=9)
    p = counts[counts > 0] / (len(s) - 1)
    return float(-np.sum(p * np.log(p) / np.log(6.0)))


def _partial(s: np.ndarray) -> float:
    nz = s[s != 0]
    if len(s) == 0:
        return 0.0
    if len(nz) == 0:
        return 0.0
    mu = 1 + int(np.sum(nz[1:] != nz[:-1]))
    return mu / len(s)


def information_content(X: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    """``(m0, h_max, eps_ratio)`` along a nearest-neighbour tour."""
    order = nn_tour(X, rng)
    dy = np.diff(y[order])
    ady = np.abs(dy)
    scale = float(np.median(ady))
    if scale <= 0:
        scale = float(np.max(ady)) if len(ady) else 0.0
    if scale <= 0:
        return 0.0, 0.0, float(np.log10(_EPS_GRID[0]))
    m0 = _partial(_symbols(dy, 0.0))
    hs = [_entropy(_symbols(dy, 0.0))]
    ratio = None
    if m0 <= 0.0:
        ratio = float(np.log10(_EPS_GRID[0]))
    for g in _EPS_GRID:
        s = _symbols(dy, g * scale)
        hs.append(_entropy(s))
        if ratio is None and _partial(s) <= 0.5 * m0:
            ratio = float(np.log10(g))
    if ratio is None:
        ratio = float(np.log10(_EPS_GRID[-1]))
    return float(m0), float(max(hs)), ratio


# ---------------------------------------------------------------------------
# nearest-better clustering

def nearest_better(X: np.ndarray, y: np.ndarray, chunk: int = 512):
    n = len(X)
    nn = np.empty(n)
    nb = np.full(n, np.nan)
    sq = np.sum(X * X, axis=1)
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * X[s:e] @ X.T
        d = np.sqrt(np.maximum(d2, 0.0))
        rows = np.arange(e - s)
        d[rows, rows + s] = np.inf
        nn[s:e] = d.min(axis=1)
        better = y[None, :] < y[s:e, None]
        db = np.where(better, d, np.inf).min(axis=1)
        nb[s:e] = np.where(np.isfinite(db), db, np.nan)
    return nn, nb


def nbc_features(X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    nn, nb = nearest_better(X, y)
    ok = ~np.isnan(nb)
    if ok.sum() < 2:
        return 1.0, 0.0
    mean_ratio = float(np.mean(nn[ok]) / np.mean(nb[ok]))
    ratio = nn[ok] / np.maximum(nb[ok], 1e-300)
    cv = float(np.std(ratio, ddof=1) / np.mean(ratio)) if np.mean(ratio) > 0 else 0.0
    return mean_ratio, cv


# ---------------------------------------------------------------------------
# distribution

def number_of_peaks(y: np.ndarray, grid: int = 512, mass: float = 0.01) -> int:
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        return 1
    kde = gaussian_kde(y, bw_method="silverman")
    bw = float(np.sqrt(kde.covariance[0, 0]))
    xs = np.linspace(y.min() - 3 * bw, y.max() + 3 * bw, grid)
    dens = kde(xs)
    # split the density at its local minima and count modes holding enough mass
    interior = np.flatnonzero((dens[1:-1] < dens[:-2]) & (dens[1:-1] <= dens[2:])) + 1
    cuts = np.concatenate([[0], interior, [grid - 1]])
    step = xs[1] - xs[0]
    total = dens.sum() * step
    peaks = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if dens[a:b + 1].sum() * step / total >= mass:
            peaks += 1
    return max(peaks, 1)


def ela_from_sample(X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lin, quad, inter = meta_models(X, y)
    m0, hmax, eps = information_content(X, y, rng)
    mr, cv = nbc_features(X, y)
    return np.array([lin, quad, inter, m0, hmax, eps, mr, cv, float(number_of_peaks(y))])


def compute_ela(inst: ProblemInstance, seed: int = 0) -> np.ndarray:
    """Nine landscape statistics from ``100*D`` uniform samples (not budgeted)."""
    return _ela_cached(inst.content_hash(), inst, int(seed)).copy()


_ELA: dict[tuple[str, int], np.ndarray] = {}


def _ela_cached(key: str, inst: ProblemInstance, seed: int) -> np.ndarray:
    hit = _ELA.get((key, seed))
    if hit is not None:
        return hit
    rng = stream(seed, _ELA_KEY)
    X = rng.uniform(inst.lb, inst.ub, size=(100 * inst.dim, inst.dim))
    y = inst(X)
    lo, hi = float(np.min(y)), float(np.max(y))
    yn = (y - lo) / (hi - lo) if hi > lo else np.zeros_like(y)
    Xn = (X - inst.lb) / (inst.ub - inst.lb)
    out = ela_from_sample(Xn, yn, rng)
    _ELA[(key, seed)] = out
    return out


def problem_features(inst: ProblemInstance, seed: int = 0) -> np.ndarray:
    basic = np.array([np.log10(inst.dim) / 5.0, np.log10(inst.max_fes) / 10.0,
                      inst.ub / 100.0, inst.lb / 100.0])
    return np.concatenate([basic, compute_ela(inst, seed)])


# ---------------------------------------------------------------------------
# progress features

def fdc(f: np.ndarray, d: np.ndarray) -> float:
    vd, vf = float(np.var(d)), float(np.var(f))
    if vd < 1e-24 or vf < 1e-24:
        return 0.0
    return float(np.mean((f - f.mean()) * (d - d.mean())) / (vd * vf))


def _maxdist(X: np.ndarray) -> float:
    return float(np.max(pdist(X))) if len(X) > 1 else 0.0


def progress_vector(X: np.ndarray, f: np.ndarray, X_all: np.ndarray, f_all: np.ndarray,
                    f0: float, f_star: float, diameter: float, fes: int, max_fes: int) -> np.ndarray:
    den = f0 - f_star
    if den <= 1e-12:
        den = 1.0
    fn = f / den
    top = max(1, int(np.ceil(0.1 * len(f))))
    idx = np.argsort(f, kind="stable")[:top]
    spread = _maxdist(X) / diameter
    xb = X[np.argmin(f)]
    xg = X_all[np.argmin(f_all)]
    return np.array([
        fn.min(), fn.mean(), fn.std(),
        spread,
        _maxdist(X[idx]) / diameter - spread,
        fdc(f, np.linalg.norm(X - xb, axis=1)),
        np.min(f_all) / den,
        fdc(f_all, np.linalg.norm(X_all - xg, axis=1)),
        (max_fes - fes) / max_fes,
    ])


def progress_features(state, inst: ProblemInstance, sub: int | None = None) -> np.ndarray:
    X_all, f_all = state.X, state.f
    if sub is None:
        X, f = X_all, f_all
    else:
        sp = state.subpops[sub % len(state.subpops)]
        X, f = sp.X, sp.f
    diameter = float(np.linalg.norm(inst.upper - inst.lower))
    return progress_vector(X, f, X_all, f_all, state.f0, state.f_star, diameter,
                           state.fes, state.max_fes)


def token_observations(wf, state, inst: ProblemInstance) -> np.ndarray:
    """One progress row per workflow module (End excluded)."""
    glob = progress_features(state, inst, None)
    rows = np.repeat(glob[None, :], len(wf.modules), axis=0)
    if wf.niching and len(state.subpops) > 1:
        for b, positions in enumerate(wf.branches):
            loc = progress_features(state, inst, b)
            rows[positions] = loc
    return rows
