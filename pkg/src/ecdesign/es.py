"""Evolution-strategy updates driven by the interpreter.

Each state is created lazily from the population it first sees. ``update``
digests the ranked current population, ``sample`` draws the next one.
The ``cc``/``cs`` configuration values multiply the reference defaults.
"""
from __future__ import annotations

import numpy as np


def _weights(lam: int):
    mu = max(1, lam // 2)
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    return mu, w, 1.0 / np.sum(w * w)


def _chi(d: int) -> float:
    return np.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))


class _Base:
    def __init__(self, X: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        self.d = X.shape[1]
        self.mean = X.mean(axis=0)
        self.sigma = float(np.mean(X.std(axis=0))) or 0.3 * float(np.mean(ub - lb))
        self.sigma_max = 10.0 * float(np.max(ub - lb))
        self.ps = np.zeros(self.d)
        self.pc = np.zeros(self.d)
        self.fresh = True
        self.gen = 0

    def _recombine(self, X, f):
        lam = len(X)
        mu, w, mueff = _weights(lam)
        order = np.argsort(f, kind="stable")[:mu]
        return order, w, mueff

    def _clamp(self):
        self.sigma = float(min(max(self.sigma, 1e-300), self.sigma_max))


class CMA(_Base):
    """Full-covariance CMA-ES with rank-one and rank-mu updates."""

    def __init__(self, X, lb, ub):
        super().__init__(X, lb, ub)
        self.C = np.eye(self.d)
        self.B = np.eye(self.d)
        self.D = np.ones(self.d)

    def _rates(self, mueff, d):
        cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
        cs = (mueff + 2) / (d + mueff + 5)
        c1 = 2 / ((d + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
        return cc, cs, c1, cmu

    def update(self, X, f, cc_mult=1.0, cs_mult=1.0):
        order, w, mueff = self._recombine(X, f)
        new_mean = w @ X[order]
        if self.fresh:
            self.mean, self.fresh = new_mean, False
            return
        d = self.d
        cc, cs, c1, cmu = self._rates(mueff, d)
        cc, cs = cc * cc_mult, cs * cs_mult
        damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (d + 1)) - 1) + cs
        y = (X[order] - self.mean) / self.sigma
        yw = (new_mean - self.mean) / self.sigma
        self.gen += 1
        inv_sqrt = self._inv_sqrt(yw)
        self.ps = (1 - cs) * self.ps + np.sqrt(cs * (2 - cs) * mueff) * inv_sqrt
        hs = (np.linalg.norm(self.ps) / np.sqrt(1 - (1 - cs) ** (2 * self.gen)) / _chi(d)
              < 1.4 + 2 / (d + 1))
        self.pc = (1 - cc) * self.pc + hs * np.sqrt(cc * (2 - cc) * mueff) * yw
        self._adapt(y, w, c1, cmu, cc, hs)
        self.sigma *= np.exp(min(50.0, (cs / damps) * (np.linalg.norm(self.ps) / _chi(d) - 1)))
        self._clamp()
        self.mean = new_mean

    def _inv_sqrt(self, v):
        return self.B @ ((self.B.T @ v) / self.D)

    def _adapt(self, y, w, c1, cmu, cc, hs):
        dh = (1 - hs) * cc * (2 - cc)
        rank_mu = (y.T * w) @ y
        self.C = ((1 - c1 - cmu) * self.C + c1 * (np.outer(self.pc, self.pc) + dh * self.C)
                  + cmu * rank_mu)
        self.C = (self.C + self.C.T) / 2
        evals, self.B = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(evals, 1e-300))

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.d))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    @property
    def scale(self) -> float:
        return self.sigma * float(np.max(self.D))


class SepCMA(CMA):
    """Diagonal covariance; learning rates enlarged by (d+2)/3."""

    def __init__(self, X, lb, ub):
        _Base.__init__(self, X, lb, ub)
        self.diag = np.ones(self.d)

    @property
    def D(self):
        return np.sqrt(self.diag)

    def _rates(self, mueff, d):
        cc, cs, c1, cmu = super()._rates(mueff, d)
        k = (d + 2) / 3
        c1 = min(1.0, c1 * k)
        return cc, cs, c1, min(1 - c1, cmu * k)

    def _inv_sqrt(self, v):
        return v / np.sqrt(self.diag)

    def _adapt(self, y, w, c1, cmu, cc, hs):
        dh = (1 - hs) * cc * (2 - cc)
        self.diag = ((1 - c1 - cmu) * self.diag + c1 * (self.pc ** 2 + dh * self.diag)
                     + cmu * (w @ (y * y)))
        self.diag = np.maximum(self.diag, 1e-300)

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.d))
        return self.mean + self.sigma * z * np.sqrt(self.diag)


class MMES(_Base):
    """Mixture-model ES: fast mixture sampling over an archive of evolution paths."""

    def __init__(self, X, lb, ub):
        super().__init__(X, lb, ub)
        d = self.d
        self.m = max(2, int(np.ceil(np.sqrt(d))))
        self.l = min(self.m, 4)
        self.ccov = 0.4 / np.sqrt(d + 1)
        self.interval = max(1, d // self.m)
        self.paths: list[np.ndarray] = []

    def update(self, X, f, cc_mult=1.0, cs_mult=1.0):
        order, w, mueff = self._recombine(X, f)
        new_mean = w @ X[order]
        if self.fresh:
            self.mean, self.fresh = new_mean, False
            return
        d = self.d
        cc = cc_mult / np.sqrt(d)
        cs = cs_mult * (mueff + 2) / (d + mueff + 5)
        damps = 1 + cs
        yw = (new_mean - self.mean) / self.sigma
        self.gen += 1
        self.pc = (1 - cc) * self.pc + np.sqrt(cc * (2 - cc) * mueff) * yw
        if self.gen % self.interval == 0:
            self.paths.append(self.pc.copy())
            self.paths = self.paths[-self.m:]
        self.ps = (1 - cs) * self.ps + np.sqrt(cs * (2 - cs) * mueff) * yw
        self.sigma *= np.exp(min(50.0, (cs / damps) * (np.linalg.norm(self.ps) / _chi(d) - 1)))
        self._clamp()
        self.mean = new_mean

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.d))
        if self.paths:
            P = np.array(self.paths)
            a = np.sqrt(1 - self.ccov)
            b = np.sqrt(self.ccov)
            for _ in range(self.l):
                j = rng.integers(0, len(P), size=n)
                r = rng.standard_normal(n)
                z = a * z + b * r[:, None] * P[j]
        return self.mean + self.sigma * z

    @property
    def scale(self) -> float:
        return self.sigma


ES_CLASSES = {"CMA-ES": CMA, "Sep-CMA-ES": SepCMA, "MMES": MMES}
