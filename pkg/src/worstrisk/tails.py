"""Tail models feeding the bound constants.

Every model exposes, per environment i and level R:

* ``box_tail(i, x)``  upper bound on 1 - F_{|X(1)|..|X(p)|,|Y|}(x, .., x)
* ``h(i, R)``, ``g(i, R)``  the tail integrals of the matrix/vector Hoeffding step
* ``h_coord(i, l, R)``, ``f(i, R)``, ``g_coord(i, l, R)``  per-coordinate tails of the risk bound
* moment constants ``moment``, ``cross_moment``, ``weak_moment``

Coordinates follow the (Y, X1..Xp) convention: index 0 is Y.
Where an exact value is not available a documented upper bound is returned,
which can only make thresholds larger and bounds more conservative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import UnsupportedTailKind


def _Q(t):
    return special.ndtr(-t)


def _sq_tail(t):
    """E[Z^2 1{|Z| > t}] for standard normal Z."""
    t = abs(t)
    return 2.0 * (t * stats.norm.pdf(t) + _Q(t))


def gaussian_abs_moment(s: float, mean: float = 0.0, sd: float = 1.0) -> float:
    """E|X|^s for X ~ N(mean, sd^2)."""
    if sd == 0:
        return abs(mean) ** s
    base = sd ** s * 2 ** (s / 2) * special.gamma((s + 1) / 2) / math.sqrt(math.pi)
    return float(base * special.hyp1f1(-s / 2, 0.5, -mean ** 2 / (2 * sd ** 2)))


def gaussian_weak_moment(s: float, sd: float) -> float:
    """sup_t t^s P(|X| > t) for X ~ N(0, sd^2)."""
    if sd == 0:
        return 0.0
    f = lambda u: -(s * math.log(u) + math.log(2.0) + stats.norm.logsf(u))
    res = optimize.minimize_scalar(f, bounds=(1e-6, 60.0), method="bounded",
                                   options={"xatol": 1e-10})
    return float(sd ** s * math.exp(-res.fun))


def _abs_tail_mean(m, sig, a):
    """E[|Y| 1{|Y| > a}] for Y ~ N(m, sig^2), vectorized in m."""
    m = np.asarray(m, dtype=float)
    if sig == 0:
        return np.abs(m) * (np.abs(m) > a)
    up = (a - m) / sig
    lo = (-a - m) / sig
    pos = m * _Q(up) + sig * stats.norm.pdf(up)
    neg = -m * special.ndtr(lo) + sig * stats.norm.pdf(lo)
    return pos + neg


class TailModel:
    kind = "abstract"

    def __init__(self, p: int, k: int):
        self.p, self.k = p, k

    def box_tail(self, i: int, x: float) -> float:
        raise UnsupportedTailKind(f"{self.kind} tail has no CDF evaluator")

    def h(self, i, R):
        raise UnsupportedTailKind(f"{self.kind} tail has no h evaluator")

    def g(self, i, R):
        raise UnsupportedTailKind(f"{self.kind} tail has no g evaluator")

    def h_coord(self, i, l, R):
        raise UnsupportedTailKind(f"{self.kind} tail has no per-coordinate h")

    def g_coord(self, i, l, R):
        raise UnsupportedTailKind(f"{self.kind} tail has no per-coordinate g")

    def f(self, i, R):
        raise UnsupportedTailKind(f"{self.kind} tail has no f evaluator")

    def moment(self, s, include_y=False):
        raise UnsupportedTailKind(f"{self.kind} tail has no moment {s}")

    def cross_moment(self, s):
        raise UnsupportedTailKind(f"{self.kind} tail has no cross moment {s}")

    def weak_moment(self, s, include_y=False):
        raise UnsupportedTailKind(f"{self.kind} tail has no weak moment {s}")

    def sigma(self, s):
        """sigma(s) = (p+1) M(s) with M over X and Y."""
        return (self.p + 1) * self.moment(s, include_y=True)

    def sigma_w(self, s):
        return self.p * self.weak_moment(s)

    @property
    def has_tail_functions(self) -> bool:
        try:
            self.h(0, 1.0)
            self.g(0, 1.0)
            return True
        except UnsupportedTailKind:
            return False


class GaussianTail(TailModel):
    """Centered jointly Gaussian (Y, X) per environment with covariance covs[i]."""
    kind = "gaussian"

    def __init__(self, covs):
        covs = [np.asarray(c, dtype=float) for c in covs]
        super().__init__(covs[0].shape[0] - 1, len(covs) - 1)
        self.covs = covs
        self.sds = [np.sqrt(np.diag(c)) for c in covs]

    def _rho(self, i, a, b):
        s = self.sds[i]
        return 0.0 if s[a] == 0 or s[b] == 0 else float(self.covs[i][a, b] / (s[a] * s[b]))

    def exponent(self, i: int) -> float:
        """c with 1 - F(x, .., x) <= (p+1) exp(-c x^2)."""
        return 1.0 / (2.0 * float(self.sds[i].max()) ** 2)

    def _p_exceed(self, i, c, R):
        s = self.sds[i][c]
        return 0.0 if s == 0 else float(special.erfc(R / (s * math.sqrt(2))))

    def box_tail(self, i, x):
        # union bound over the p+1 coordinates
        return min(1.0, sum(self._p_exceed(i, c, x) for c in range(self.p + 1)))

    def _sq_given_exceed(self, i, a, b, R):
        """E[S_a^2 1{|S_b| > R}] (exact for a centered pair)."""
        sa, sb = self.sds[i][a], self.sds[i][b]
        if sb == 0:
            return 0.0
        rho = self._rho(i, a, b)
        t = R / sb
        return sa ** 2 * (rho ** 2 * _sq_tail(t) + (1 - rho ** 2) * 2 * _Q(t))

    def h(self, i, R):
        xs = range(1, self.p + 1)
        tot = 0.0
        for u in xs:
            e = min(self.sds[i][u] ** 2, sum(self._sq_given_exceed(i, u, v, R) for v in xs))
            tot += math.sqrt(max(e, 0.0))
        return tot ** 2

    def _abs_prod_mean(self, i, a, b):
        rho = self._rho(i, a, b)
        return self.sds[i][a] * self.sds[i][b] * (2 / math.pi) * (
            math.sqrt(max(1 - rho ** 2, 0.0)) + rho * math.asin(max(-1.0, min(1.0, rho))))

    def g(self, i, R):
        pa = self.box_tail(i, R)
        tot = 0.0
        for u in range(1, self.p + 1):
            rho = self._rho(i, u, 0)
            m4 = (self.sds[i][u] * self.sds[i][0]) ** 2 * (1 + 2 * rho ** 2)
            tot += min(self._abs_prod_mean(i, u, 0), math.sqrt(m4 * pa))
        return tot

    def h_coord(self, i, l, R):
        s = self.sds[i][l]
        return 0.0 if s == 0 else s ** 2 * _sq_tail(math.sqrt(max(R, 0.0)) / s)

    def f(self, i, R):
        s = self.sds[i][0]
        return 0.0 if s == 0 else s ** 2 * _sq_tail(R / s)

    def g_coord(self, i, l, R):
        """E[|X_l Y| 1{|X_l Y| > R}] by one-dimensional quadrature over X_l."""
        sx, sy = self.sds[i][l], self.sds[i][0]
        if sx == 0 or sy == 0:
            return 0.0
        rho = self._rho(i, l, 0)
        sig = sy * math.sqrt(max(1 - rho ** 2, 0.0))

        r2 = math.sqrt(2.0)
        phi = lambda u: math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
        Qs = lambda u: 0.5 * math.erfc(u / r2)

        def integrand(z):
            x = sx * z
            if x == 0:
                return 0.0
            m, a = rho * sy * z, R / abs(x)
            if sig == 0:
                inner = abs(m) if abs(m) > a else 0.0
            else:
                up, lo = (a - m) / sig, (-a - m) / sig
                inner = m * Qs(up) + sig * phi(up) - m * Qs(-lo) + sig * phi(lo)
            return abs(x) * inner * phi(z)

        val, _ = integrate.quad(integrand, 0, np.inf, limit=200, epsabs=0, epsrel=1e-10)
        val2, _ = integrate.quad(integrand, -np.inf, 0, limit=200, epsabs=0, epsrel=1e-10)
        return val + val2

    def moment(self, s, include_y=False):
        idx = range(0 if include_y else 1, self.p + 1)
        return max(gaussian_abs_moment(s, 0.0, self.sds[i][c]) for i in range(self.k + 1) for c in idx)

    def weak_moment(self, s, include_y=False):
        idx = range(0 if include_y else 1, self.p + 1)
        # the weak quasi-norm depends only on the sd; evaluate at the largest one
        sd = max(self.sds[i][c] for i in range(self.k + 1) for c in idx)
        return gaussian_weak_moment(s, sd)

    def cross_moment(self, s):
        """max_{i,l} E|X_l Y|^s by quadrature over X_l of the conditional absolute moment."""
        best = 0.0
        for i in range(self.k + 1):
            sy = self.sds[i][0]
            for l in range(1, self.p + 1):
                sx = self.sds[i][l]
                if sx == 0 or sy == 0:
                    continue
                rho = self._rho(i, l, 0)
                sig = sy * math.sqrt(max(1 - rho ** 2, 0.0))
                fn = lambda z: (abs(sx * z) ** s * gaussian_abs_moment(s, rho * sy * z, sig)
                                * stats.norm.pdf(z))
                val = integrate.quad(fn, -np.inf, np.inf, limit=200)[0]
                best = max(best, val)
        return best


class BoundedTail(TailModel):
    """All coordinates bounded by ``radius`` in absolute value."""
    kind = "bounded"

    def __init__(self, p, k, radius: float):
        super().__init__(p, k)
        self.radius = float(radius)

    def box_tail(self, i, x):
        return 0.0 if x >= self.radius else 1.0

    def h(self, i, R):
        return 0.0 if R >= self.radius else (self.p * self.radius) ** 2

    def g(self, i, R):
        return 0.0 if R >= self.radius else self.p * self.radius ** 2

    def h_coord(self, i, l, R):
        return 0.0 if R >= self.radius ** 2 else self.radius ** 2

    def f(self, i, R):
        return 0.0 if R >= self.radius else self.radius ** 2

    def g_coord(self, i, l, R):
        return 0.0 if R >= self.radius ** 2 else self.radius ** 2

    def moment(self, s, include_y=False):
        return self.radius ** s

    def cross_moment(self, s):
        return self.radius ** (2 * s)

    def weak_moment(self, s, include_y=False):
        return self.radius ** s


class PolynomialTail(TailModel):
    """Finite moments: M(zeta) over X and Y, optionally M~(zeta) for X*Y.

    Tail integrals use Markov/Holder: E[Z 1{Z > R}] <= E[Z^s] / R^(s-1).
    """
    kind = "polynomial"

    def __init__(self, p, k, zeta: float, M: float, M_tilde: float | None = None):
        super().__init__(p, k)
        if zeta <= 2 or M <= 0:
            raise ValueError("need zeta > 2 and M > 0")
        self.zeta, self.M, self.M_tilde = float(zeta), float(M), M_tilde

    def box_tail(self, i, x):
        return 1.0 if x <= 0 else min(1.0, self.sigma(self.zeta) / x ** self.zeta)

    def h(self, i, R):
        z = self.zeta
        return self.p ** 2 * self.M ** (2 / z) * min(1.0, self.box_tail(i, R)) ** (1 - 2 / z)

    def g(self, i, R):
        z = self.zeta
        return self.p * self.M ** (2 / z) * min(1.0, self.box_tail(i, R)) ** (1 - 2 / z)

    def _markov(self, R, s, Ms):
        return Ms if R <= 0 else min(Ms, Ms / R ** (s - 1))

    def h_coord(self, i, l, R):
        # Z = X^2, s = zeta/2
        return self._markov(R, self.zeta / 2, self.M)

    def f(self, i, R):
        # E[Y^2 1{|Y| > R}] <= M / R^(zeta-2)
        return self.M if R <= 0 else min(self.M, self.M / R ** (self.zeta - 2))

    def g_coord(self, i, l, R):
        # E|XY|^(zeta/2) <= M by Cauchy-Schwarz
        return self._markov(R, self.zeta / 2, self.M)

    def moment(self, s, include_y=False):
        if s > self.zeta:
            raise UnsupportedTailKind(f"moment {s} exceeds the declared zeta={self.zeta}")
        return self.M ** (s / self.zeta)

    def cross_moment(self, s):
        if self.M_tilde is not None and s == self.zeta:
            return self.M_tilde
        if 2 * s <= self.zeta:
            return self.M ** (2 * s / self.zeta)
        raise UnsupportedTailKind("cross moment not available")

    def weak_moment(self, s, include_y=False):
        return self.moment(s)


class WeakTail(TailModel):
    """Weak L^zeta' control: sup_t t^zeta' P(|coordinate| > t) <= M_w."""
    kind = "weak"

    def __init__(self, p, k, zeta_prime: float, M_w: float):
        super().__init__(p, k)
        self.zeta_prime, self.M_w = float(zeta_prime), float(M_w)

    def box_tail(self, i, x):
        return 1.0 if x <= 0 else min(1.0, (self.p + 1) * self.M_w / x ** self.zeta_prime)

    def weak_moment(self, s, include_y=False):
        if s != self.zeta_prime:
            raise UnsupportedTailKind(f"weak moment only known at zeta'={self.zeta_prime}")
        return self.M_w


class EmpiricalTail(TailModel):
    """Plug-in tails from held-out samples S_i of shape (n_i, p+1), Y first."""
    kind = "empirical"

    def __init__(self, samples):
        self.S = [np.asarray(s, dtype=float) for s in samples]
        super().__init__(self.S[0].shape[1] - 1, len(self.S) - 1)
        self._absmax = [np.abs(s).max(axis=1) for s in self.S]
        self._xmax = [np.abs(s[:, 1:]).max(axis=1) for s in self.S]

    def box_tail(self, i, x):
        return float(np.mean(self._absmax[i] > x))

    def h(self, i, R):
        X = self.S[i][:, 1:]
        out = self._xmax[i] > R
        return float(np.sum(np.sqrt(np.mean(X ** 2 * out[:, None], axis=0))) ** 2)

    def g(self, i, R):
        S = self.S[i]
        out = self._absmax[i] > R
        return float(np.sum(np.mean(np.abs(S[:, 1:] * S[:, :1]) * out[:, None], axis=0)))

    def h_coord(self, i, l, R):
        x2 = self.S[i][:, l] ** 2
        return float(np.mean(x2 * (x2 > R)))

    def f(self, i, R):
        y = self.S[i][:, 0]
        return float(np.mean(y ** 2 * (np.abs(y) > R)))

    def g_coord(self, i, l, R):
        z = np.abs(self.S[i][:, l] * self.S[i][:, 0])
        return float(np.mean(z * (z > R)))

    def moment(self, s, include_y=False):
        lo = 0 if include_y else 1
        return max(float(np.max(np.mean(np.abs(S[:, lo:]) ** s, axis=0))) for S in self.S)

    def cross_moment(self, s):
        return max(float(np.max(np.mean(np.abs(S[:, 1:] * S[:, :1]) ** s, axis=0))) for S in self.S)

    def weak_moment(self, s, include_y=False):
        lo = 0 if include_y else 1
        best = 0.0
        for S in self.S:
            for c in range(lo, S.shape[1]):
                a = np.sort(np.abs(S[:, c]))[::-1]
                frac = np.arange(1, a.size + 1) / a.size
                best = max(best, float(np.max(a ** s * (frac - 1.0 / a.size))))
        return best
