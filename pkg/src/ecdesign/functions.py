"""Basic benchmark functions on already shifted and rotated inputs.

Each function maps an ``(n, d)`` array to ``n`` values and attains its global
minimum at the origin. Functions whose textbook optimum sits elsewhere are
translated internally so that this holds.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .rng import stream


@dataclass(frozen=True)
class BasicFunction:
    index: int
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    modality: str          # unimodal | multimodal
    structure: str         # adequate | weak
    conditioning: str      # low | high

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.fn(z)


def _ramp(d: int, base: float, power: float = 1.0) -> np.ndarray:
    if d == 1:
        return np.ones(1)
    return base ** (power * np.arange(d) / (d - 1))


def t_osz(x: np.ndarray) -> np.ndarray:
    xh = np.where(x != 0, np.log(np.abs(x) + (x == 0)), 0.0)
    c1 = np.where(x > 0, 10.0, 5.5)
    c2 = np.where(x > 0, 7.9, 3.1)
    return np.sign(x) * np.exp(xh + 0.049 * (np.sin(c1 * xh) + np.sin(c2 * xh)))


def t_asy(x: np.ndarray, beta: float) -> np.ndarray:
    d = x.shape[1]
    ramp = np.arange(d) / (d - 1) if d > 1 else np.zeros(1)
    pos = np.maximum(x, 0.0)
    expo = 1.0 + beta * ramp * np.sqrt(pos)
    return np.where(x > 0, pos ** expo, x)


def sphere(z):
    return np.sum(z * z, axis=1)


def schwefel_12(z):
    return np.sum(np.cumsum(z, axis=1) ** 2, axis=1)


def ellipsoidal(z):
    return np.sum(np.arange(1, z.shape[1] + 1) * z * z, axis=1)


def ellipsoidal_high(z):
    x = t_osz(z)
    return np.sum(_ramp(z.shape[1], 1e6) * x * x, axis=1)


def bent_cigar(z):
    return z[:, 0] ** 2 + 1e6 * np.sum(z[:, 1:] ** 2, axis=1)


def discus(z):
    return 1e6 * z[:, 0] ** 2 + np.sum(z[:, 1:] ** 2, axis=1)


def different_powers(z):
    d = z.shape[1]
    p = 2.0 + 4.0 * (np.arange(d) / (d - 1) if d > 1 else np.zeros(1))
    return np.sum(np.abs(z) ** p, axis=1)


def rosenbrock(z):
    x = z + 1.0
    if x.shape[1] == 1:
        return (x[:, 0] - 1.0) ** 2
    return np.sum(100.0 * (x[:, :-1] ** 2 - x[:, 1:]) ** 2 + (x[:, :-1] - 1.0) ** 2, axis=1)


def ackley(z):
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(z * z, axis=1)))
    b = -np.exp(np.mean(np.cos(2 * np.pi * z), axis=1))
    return a + b + 20.0 + np.e


_WK = np.arange(21)


def weierstrass(z):
    a, b = 0.5 ** _WK, 3.0 ** _WK
    inner = np.cos(2 * np.pi * b[None, None, :] * (z[:, :, None] + 0.5)) @ a
    return inner.sum(axis=1) - z.shape[1] * np.sum(a * np.cos(np.pi * b))


def griewank(z):
    i = np.sqrt(np.arange(1, z.shape[1] + 1))
    return np.sum(z * z, axis=1) / 4000.0 - np.prod(np.cos(z / i), axis=1) + 1.0


def rastrigin(z):
    return np.sum(z * z - 10.0 * np.cos(2 * np.pi * z) + 10.0, axis=1)


def buche_rastrigin(z):
    d = z.shape[1]
    x = t_osz(z)
    s = _ramp(d, 10.0, 0.5)
    odd = (np.arange(d) % 2 == 0)
    s = np.where((x > 0) & odd, 10.0 * s, s)
    x = s * x
    return 10.0 * (d - np.sum(np.cos(2 * np.pi * x), axis=1)) + np.sum(x * x, axis=1)


def _schwefel_g(t, d):
    out = t * np.sin(np.sqrt(np.abs(t)))
    hi = t > 500
    lo = t < -500
    r = 500.0 - np.mod(t, 500.0)
    out = np.where(hi, r * np.sin(np.sqrt(np.abs(r))) - (t - 500.0) ** 2 / (10000.0 * d), out)
    r2 = np.mod(np.abs(t), 500.0) - 500.0
    out = np.where(lo, r2 * np.sin(np.sqrt(np.abs(r2))) - (t + 500.0) ** 2 / (10000.0 * d), out)
    return out


@lru_cache(maxsize=1)
def schwefel_peak() -> float:
    """Maximiser of t*sin(sqrt(t)) near 420.97."""
    res = minimize_scalar(lambda t: -t * np.sin(np.sqrt(t)), bounds=(400.0, 440.0),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def modified_schwefel(z):
    c = schwefel_peak()
    d = z.shape[1]
    gc = c * np.sin(np.sqrt(c))
    return np.sum(gc - _schwefel_g(z + c, d), axis=1)


_KJ = 2.0 ** np.arange(1, 33)


def katsuura(z):
    d = z.shape[1]
    t = z[:, :, None] * _KJ
    s = np.sum(np.abs(t - np.round(t)) / _KJ, axis=2)
    prod = np.prod((1.0 + np.arange(1, d + 1) * s) ** (10.0 / d ** 1.2), axis=1)
    return 10.0 / d ** 2 * prod - 10.0 / d ** 2


def griewank_rosenbrock(z):
    x = z + 1.0
    y = np.roll(x, -1, axis=1)
    r = 100.0 * (x * x - y) ** 2 + (x - 1.0) ** 2
    return np.sum(r * r / 4000.0 - np.cos(r) + 1.0, axis=1)


def expanded_schaffer_f6(z):
    y = np.roll(z, -1, axis=1)
    s = z * z + y * y
    return np.sum(0.5 + (np.sin(np.sqrt(s)) ** 2 - 0.5) / (1.0 + 0.001 * s) ** 2, axis=1)


def happycat(z):
    x = z - 1.0
    d = z.shape[1]
    r2 = np.sum(x * x, axis=1)
    return np.abs(r2 - d) ** 0.25 + (0.5 * r2 + np.sum(x, axis=1)) / d + 0.5


def hgbat(z):
    x = z - 1.0
    d = z.shape[1]
    r2 = np.sum(x * x, axis=1)
    sx = np.sum(x, axis=1)
    return np.abs(r2 ** 2 - sx ** 2) ** 0.5 + (0.5 * r2 + sx) / d + 0.5


def lunacek(z):
    d = z.shape[1]
    mu0, dd = 2.5, 1.0
    s = 1.0 - 1.0 / (2.0 * np.sqrt(max(d, 2) + 20.0) - 8.2)  # d=1 would flip the sign
    mu1 = -np.sqrt((mu0 ** 2 - dd) / s)
    xh = z + mu0
    a = np.sum((xh - mu0) ** 2, axis=1)
    b = dd * d + s * np.sum((xh - mu1) ** 2, axis=1)
    return np.minimum(a, b) + 10.0 * (d - np.sum(np.cos(2 * np.pi * z), axis=1))


def zakharov(z):
    w = np.sum(0.5 * np.arange(1, z.shape[1] + 1) * z, axis=1)
    return np.sum(z * z, axis=1) + w ** 2 + w ** 4


def levy(z):
    w = 1.0 + z / 4.0
    a = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1) ** 2 * (1 + 10 * np.sin(np.pi * w[:, :-1] + 1) ** 2), axis=1)
    last = (w[:, -1] - 1) ** 2 * (1 + np.sin(2 * np.pi * w[:, -1]) ** 2)
    return a + mid + last


def schaffer_f7(z):
    d = z.shape[1]
    y = np.roll(z, -1, axis=1)
    s = np.sqrt(z * z + y * y)
    if d > 1:
        s = s[:, :-1]
    rs = np.sqrt(s)
    return (np.sum(rs + rs * np.sin(50.0 * s ** 0.2) ** 2, axis=1) / max(d - 1, 1)) ** 2


def step_rastrigin(z):
    y = np.where(np.abs(z) > 0.5, np.round(2.0 * z) / 2.0, z)
    return rastrigin(y)


def linear_slope(z):
    s = _ramp(z.shape[1], 10.0)
    return np.sum(s * np.maximum(0.0, -z), axis=1)


def attractive_sector(z):
    s = np.where(z > 0, 100.0, 1.0)
    return np.abs(t_osz(np.sum((s * z) ** 2, axis=1))) ** 0.9


def step_ellipsoidal(z):
    d = z.shape[1]
    zh = _ramp(d, 10.0, 0.5) * z
    zt = np.where(np.abs(zh) > 0.5, np.floor(0.5 + zh), np.floor(0.5 + 10.0 * zh) / 10.0)
    return 0.1 * np.maximum(np.abs(zh[:, 0]) / 1e4, np.sum(_ramp(d, 100.0) * zt * zt, axis=1))


def sharp_ridge(z):
    return z[:, 0] ** 2 + 100.0 * np.sqrt(np.sum(z[:, 1:] ** 2, axis=1))


def rastrigin_f15(z):
    d = z.shape[1]
    x = _ramp(d, 10.0, 0.5) * t_asy(t_osz(z), 0.2)
    return 10.0 * (d - np.sum(np.cos(2 * np.pi * x), axis=1)) + np.sum(x * x, axis=1)


_XOPT20 = 4.2096874633 / 2.0


def schwefel(z):
    d = z.shape[1]
    x = z + _XOPT20
    xh = 2.0 * x
    zh = xh.copy()
    zh[:, 1:] += 0.25 * (xh[:, :-1] - 2.0 * _XOPT20)
    zz = 100.0 * (_ramp(d, 10.0, 0.5) * (zh - 2.0 * _XOPT20) + 2.0 * _XOPT20)
    pen = np.sum(np.maximum(0.0, np.abs(zz / 100.0) - 5.0) ** 2, axis=1)
    return -np.sum(zz * np.sin(np.sqrt(np.abs(zz))), axis=1) / (100.0 * d) + 4.189828872724339 + 100.0 * pen


@lru_cache(maxsize=None)
def _gallagher_params(peaks: int, d: int):
    rng = stream(0x6A11, peaks, d)
    spread = 4.9 if peaks == 21 else 5.0
    y = rng.uniform(-spread, spread, size=(peaks, d))
    y[0] = 0.0
    w = np.empty(peaks)
    w[0] = 10.0
    w[1:] = 1.1 + 8.0 * np.arange(peaks - 1) / (peaks - 2)
    top = 1000.0 ** 2 if peaks == 21 else 1000.0
    alpha = np.empty(peaks)
    alpha[0] = top
    alpha[1:] = 1000.0 ** (2.0 * rng.permutation(peaks - 1) / (peaks - 2))
    cond = np.empty((peaks, d))
    ramp = np.arange(d) / (d - 1) if d > 1 else np.zeros(1)
    for i in range(peaks):
        cond[i] = rng.permutation(alpha[i] ** (0.5 * ramp)) / alpha[i] ** 0.25
    return y, w, cond


def _gallagher(z, peaks):
    d = z.shape[1]
    y, w, cond = _gallagher_params(peaks, d)
    diff = z[:, None, :] - y[None, :, :]
    q = np.einsum("npd,pd->np", diff * diff, cond)
    g = np.max(w * np.exp(-q / (2.0 * d)), axis=1)
    return t_osz(10.0 - g) ** 2


def gallagher_101(z):
    return _gallagher(z, 101)


def gallagher_21(z):
    return _gallagher(z, 21)


_U, _M = "unimodal", "multimodal"
_A, _W = "adequate", "weak"
_L, _H = "low", "high"

_TABLE = [
    ("Sphere", sphere, _U, _A, _L),
    ("Schwefel_F12", schwefel_12, _U, _A, _L),
    ("Ellipsoidal", ellipsoidal, _U, _A, _L),
    ("Ellipsoidal_high_condition", ellipsoidal_high, _U, _A, _H),
    ("Bent_cigar", bent_cigar, _U, _A, _H),
    ("Discus", discus, _U, _A, _H),
    ("Different_Powers", different_powers, _U, _A, _H),
    ("Rosenbrock", rosenbrock, _U, _A, _L),
    ("Ackley", ackley, _M, _A, _H),
    ("Weierstrass", weierstrass, _M, _W, _H),
    ("Griewank", griewank, _M, _W, _L),
    ("Rastrigin", rastrigin, _M, _W, _H),
    ("Buche_Rastrigin", buche_rastrigin, _U, _A, _H),
    ("Modified_Schwefel", modified_schwefel, _M, _W, _H),
    ("Katsuura", katsuura, _M, _W, _H),
    ("Griewank_Rosenbrock", griewank_rosenbrock, _U, _A, _L),
    ("Escaffer_F6", expanded_schaffer_f6, _M, _A, _H),
    ("Happycat", happycat, _M, _W, _L),
    ("Hgbat", hgbat, _U, _A, _L),
    ("Lunacek_bi_Rastrigin", lunacek, _M, _W, _H),
    ("Zakharov", zakharov, _U, _A, _L),
    ("Levy", levy, _M, _W, _H),
    ("Scaffer_F7", schaffer_f7, _M, _W, _L),
    ("Step_Rastrigin", step_rastrigin, _M, _W, _L),
    ("Linear_Slope", linear_slope, _U, _A, _L),
    ("Attractive_Sector", attractive_sector, _U, _A, _H),
    ("Step_Ellipsoidal", step_ellipsoidal, _M, _W, _L),
    ("Sharp_Ridge", sharp_ridge, _U, _A, _H),
    ("Rastrigin_F15", rastrigin_f15, _U, _W, _L),
    ("Schwefel", schwefel, _M, _W, _L),
    ("Gallagher_101", gallagher_101, _M, _W, _L),
    ("Gallagher_21", gallagher_21, _M, _W, _L),
]

FUNCTIONS: tuple[BasicFunction, ...] = tuple(
    BasicFunction(i, name, fn, m, s, c) for i, (name, fn, m, s, c) in enumerate(_TABLE)
)
FUNCTION_BY_NAME = {f.name: f for f in FUNCTIONS}
