"""Evaluable bound constants, the inverse-perturbation inequality and moment checks.

Exponential right-hand sides are assembled in log space; ``BoundReport.rhs`` is
the raw (possibly > 1) value and ``log_rhs`` its logarithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import EventNeverOccurred, HypothesisViolated, SingularC1, UnsupportedTailKind
from .population import MomentSet, check_gamma, minimizer
from .tails import (BoundedTail, EmpiricalTail, GaussianTail, PolynomialTail, TailModel,
                    WeakTail)

__all__ = ["BoundInputs", "BoundReport", "TailModel", "BoundedTail", "GaussianTail",
           "PolynomialTail", "WeakTail", "EmpiricalTail", "perturbation_inverse_bound",
           "concentration_rhs", "risk_concentration_rhs", "qvariance_bound",
           "remark_zeta_threshold", "conditional_qvariance_mc", "rio_moment_check",
           "log_tail_product"]

VARIANTS = ("moment-threshold", "weak-Lzeta", "finite-moment-corollary", "gaussian-corollary")


@dataclass(frozen=True)
class BoundInputs:
    c: float
    delta: float
    alpha: float
    gamma: float
    p: int
    k: int
    n: np.ndarray
    inv_norm: float
    norm: float
    z_norm: float
    beta_norm: float = 0.0
    q: float = 2.0
    zeta: float | None = None
    zeta_prime: float | None = None
    C: float | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.alpha < 0.25:
            raise ValueError("alpha must lie in (0, 1/4)")
        n = np.asarray(self.n, dtype=float).reshape(-1)
        if n.size != self.k + 1 or np.any(n < 1):
            raise ValueError("need k+1 counts, each >= 1")
        object.__setattr__(self, "n", n)

    @classmethod
    def from_moments(cls, moments: MomentSet, gamma: float, c: float, delta: float,
                     alpha: float, n, **kw):
        gamma = check_gamma(gamma)
        G, Z, _ = moments.combined(gamma)
        beta = minimizer(moments, gamma)
        return cls(c=c, delta=delta, alpha=alpha, gamma=gamma, p=moments.p, k=moments.k, n=n,
                   inv_norm=float(np.linalg.norm(np.linalg.inv(G), 2)),
                   norm=float(np.linalg.norm(G, 2)), z_norm=float(np.linalg.norm(Z)),
                   beta_norm=float(np.linalg.norm(beta)), **kw)

    def replace(self, **kw) -> "BoundInputs":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return BoundInputs(**d)


@dataclass
class BoundReport:
    theorem: str
    variant: str
    log_rhs: float
    applicable: bool
    constants: dict = field(default_factory=dict)
    thresholds: np.ndarray | None = None
    notes: list = field(default_factory=list)
    lhs_freq: float | None = None
    lhs_se: float | None = None

    @property
    def rhs(self) -> float:
        return math.exp(self.log_rhs) if self.log_rhs < 709 else math.inf

    @property
    def rhs_clipped(self) -> float:
        return min(1.0, self.rhs)

    def dominates(self, margin_se: float = 3.0) -> bool | None:
        if self.lhs_freq is None:
            return None
        return bool(self.lhs_freq <= self.rhs + margin_se * (self.lhs_se or 0.0))


# ---------------------------------------------------------------- inverse perturbation

def perturbation_inverse_bound(C1, C2):
    """(applicable, bound, actual) for ||C1^{-1} - C2^{-1}||_2.

    Applicable iff ||C1 - C2|| < 1/||C1^{-1}||; then C2 is invertible and
    ||C1^{-1} - C2^{-1}|| <= ||C1^{-1}|| x / (1 - x) with x = ||I - C1^{-1} C2||.
    """
    C1, C2 = np.asarray(C1, dtype=float), np.asarray(C2, dtype=float)
    sv = np.linalg.svd(C1, compute_uv=False)
    if not sv[-1] > 1e-14 * max(sv[0], 1e-300):
        raise SingularC1("C1 is not invertible")
    inv1 = np.linalg.inv(C1)
    ninv = float(np.linalg.norm(inv1, 2))
    applicable = bool(np.linalg.norm(C1 - C2, 2) < 1.0 / ninv)
    x = float(np.linalg.norm(np.eye(C1.shape[0]) - inv1 @ C2, 2))
    try:
        actual = float(np.linalg.norm(inv1 - np.linalg.inv(C2), 2))
    except np.linalg.LinAlgError:
        actual = math.inf
    bound = ninv * x / (1 - x) if (applicable and x < 1) else math.inf
    return applicable, bound, actual


# ---------------------------------------------------------------- shared pieces

def log_tail_product(tail: TailModel, n, alpha: float) -> float:
    """log(1 - prod_i F_i(n_i^alpha, ..)^{n_i}), with 1 - F_i replaced by its upper bound."""
    s = 0.0
    for i, ni in enumerate(n):
        eps = tail.box_tail(i, ni ** alpha)
        if eps >= 1.0:
            return 0.0
        s += ni * math.log1p(-eps)
    val = -math.expm1(s)
    return math.log(val) if val > 0 else -math.inf


def _log_exp_sum(log_coef: float, rate: float, n, alpha: float) -> float:
    """log(coef * sum_i exp(-rate n_i^{1-4 alpha}))."""
    return log_coef + float(special.logsumexp([-rate * ni ** (1 - 4 * alpha) for ni in n]))


def _radius(inp: BoundInputs):
    """r~(c) and r(c) = r~(c)/sqrt(2L), L = 2p^2(k+1)^2."""
    g, z, dl = inp.inv_norm, inp.z_norm, inp.delta
    rt = min(dl * g, inp.c) / (3 * g * (1 + dl) * max(1.0, g, z))
    L = 2 * inp.p ** 2 * (inp.k + 1) ** 2
    return rt, rt / math.sqrt(2 * L), L


def statement_E(inp: BoundInputs) -> float:
    g, z, dl = inp.inv_norm, inp.z_norm, inp.delta
    return (1 / (2 * math.sqrt(2) * inp.p * (inp.k + 1))
            * min(g, 1 / (6 * g * (1 + dl) * max(1.0, g * z))))


def _first_level(fn, target: float, alpha: float, strict: bool = True,
                 R_hi: float = 1e15) -> float:
    """Smallest integer n with fn(n^alpha) < target (<= if not strict); fn nonincreasing."""
    ok = (lambda v: v < target) if strict else (lambda v: v <= target)
    if ok(fn(1.0)):
        return 1.0
    if not ok(fn(R_hi)):
        return math.inf
    # integer bisection on n; fn(n^alpha) is nonincreasing in n
    lo, hi = 1, 2
    while not ok(fn(float(hi) ** alpha)):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(fn(float(mid) ** alpha)):
            hi = mid
        else:
            lo = mid
    return float(hi)


def concentration_thresholds(inp: BoundInputs, tail: TailModel) -> np.ndarray:
    """N_{A_i} = min{n : (1+gamma)(g_i v h_i)(n^alpha) < r~(c)/2}."""
    rt, _, _ = _radius(inp)
    g1 = 1.0 + inp.gamma
    out = []
    for i in range(inp.k + 1):
        fn = lambda R, i=i: g1 * max(tail.g(i, R), tail.h(i, R))
        out.append(_first_level(fn, rt / 2, inp.alpha))
    return np.array(out)


# ---------------------------------------------------------------- parameter concentration

def concentration_rhs(inputs: BoundInputs, tail: TailModel, variant: str = "moment-threshold"
                      ) -> BoundReport:
    """Bound on P(||beta_hat - beta_gamma|| >= c) in one of four forms."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    inp = inputs
    p, k, a, n = inp.p, inp.k, inp.alpha, inp.n
    rt, r, L = _radius(inp)
    consts = {"r_tilde": rt, "r": r, "L": L, "E": statement_E(inp)}
    notes = []

    if variant == "weak-Lzeta":
        return _weak_rhs(inp, tail, consts)

    if not tail.has_tail_functions:
        raise UnsupportedTailKind(f"{variant} needs h/g tail functions; {tail.kind} has none")
    N = concentration_thresholds(inp, tail)
    log_exp = _log_exp_sum(math.log(4 * p + 2), r ** 2, n, a)

    if variant == "moment-threshold":
        log_tail = log_tail_product(tail, n, a)
    elif variant == "finite-moment-corollary":
        eta = inp.zeta
        if eta is None or not (eta > 4 and 1 / eta < a):
            raise UnsupportedTailKind("finite-moment corollary needs eta > 4 and 1/eta < alpha")
        if isinstance(tail, WeakTail):
            raise UnsupportedTailKind("finite-moment corollary needs a strong moment")
        M = tail.moment(eta, include_y=True)
        consts["M_eta"] = M
        log_tail = (math.log((p + 1) * (k + 1) * M) - (a * eta - 1) * math.log(n.min()))
    else:  # gaussian-corollary
        if not isinstance(tail, GaussianTail):
            raise UnsupportedTailKind("gaussian corollary needs a gaussian tail model")
        cexp = [tail.exponent(i) for i in range(k + 1)]
        consts["gauss_exponent"] = cexp
        terms = [math.log(ni * (p + 1)) - ci * ni ** (2 * a) for ni, ci in zip(n, cexp)]
        log_tail = float(special.logsumexp(terms))
    log_rhs = float(np.logaddexp(log_exp, math.log(5) + log_tail))
    consts.update(log_exp_term=log_exp, log_tail_term=math.log(5) + log_tail)
    applicable = bool(np.all(n >= N))
    if not applicable:
        notes.append("n below N_{A_i} for some environment")
    return BoundReport("parameter-concentration", variant, log_rhs, applicable, consts, N, notes)


def _weak_rhs(inp: BoundInputs, tail: TailModel, consts: dict) -> BoundReport:
    p, k, a, n = inp.p, inp.k, inp.alpha, inp.n
    zeta = inp.zeta if inp.zeta is not None else getattr(tail, "zeta_prime", None)
    if zeta is None or zeta <= 2:
        raise UnsupportedTailKind("weak variant needs zeta > 2")
    Mw = tail.weak_moment(zeta, include_y=True)
    g, Gn, z, c, dl, gam = inp.inv_norm, inp.norm, inp.z_norm, inp.c, inp.delta, inp.gamma
    den = 6 * p ** 2 * (k + 1) ** 2
    K_minus = min(c, dl) ** 2 * min(g, Gn) ** 6 / (den * (1 + dl) * max(1.0, z) ** 2)
    K_plus = (max(c, dl) ** 2 * max(g, Gn) ** 6 / (den * min(1.0, z) ** 2)
              if z > 0 else math.inf)
    inner = max(1.0, 1 / c, 1 / dl) * 6 * (1 + gam) * (1 + dl) * max(1.0, g) ** 3 * max(1.0, z)
    log_Nmax = (math.log(Mw) / (a * (zeta - 2)) + math.log(p + 1) / (a * zeta)
                + math.log(inner) / (a * (zeta - 2)))
    log_V = math.log(10 * p) + K_plus * math.exp((1 - 4 * a) * log_Nmax)
    log_exp = _log_exp_sum(log_V, K_minus, n, a)
    # tail term from the weak quasi-norm: 1 - F(x) <= (p+1) M_w / x^zeta
    s = 0.0
    for ni in n:
        eps = min(1.0, (p + 1) * Mw / ni ** (a * zeta))
        s = -math.inf if eps >= 1 else s + ni * math.log1p(-eps)
        if s == -math.inf:
            break
    tail_val = -math.expm1(s) if s != -math.inf else 1.0
    log_tail = math.log(5 * tail_val) if tail_val > 0 else -math.inf
    log_rhs = float(np.logaddexp(log_exp, log_tail))
    disp = (1 + 2 * Mw ** ((2 + zeta) / (a * zeta * (zeta - 2)))
            * (p + 1) ** (2 * zeta / (a * zeta * (zeta - 2)))
            * max(1.0, 1 / c, 1 / dl) * 6 * (1 + gam) * max(1.0, g) ** 3 * max(1.0, z))
    consts.update(M_w=Mw, K_minus=K_minus, K_plus=K_plus, log_Nmax=log_Nmax, log_V=log_V,
                  log_V_display=math.log(10 * p) + K_plus * disp,
                  log_exp_term=log_exp, log_tail_term=log_tail)
    return BoundReport("parameter-concentration", "weak-Lzeta", log_rhs, True, consts,
                       np.ones(k + 1), ["V from the proof's final form; display form in log_V_display"])


# ---------------------------------------------------------------- risk concentration

def risk_concentration_rhs(inputs: BoundInputs, tail: TailModel) -> BoundReport:
    """Bound on P(|R_hat - R| >= c), evaluated in its stated closed form.

    The display's exponent carries no sample size, so the value does not decay in n.
    """
    inp = inputs
    p, k, a, n = inp.p, inp.k, inp.alpha, inp.n
    E = statement_E(inp)
    scale = 48 * (inp.gamma + 1) * (k + 1) * p
    ratio = math.inf if inp.beta_norm == 0 else inp.c / (inp.beta_norm * scale)
    inner = min(E, ratio)
    log_exp = math.log(2 * p * (k + 1) * (3 + 4 * p)) - min(inp.delta, inp.c) * inner ** 2
    log_tail = math.log(4 * k + 9) + log_tail_product(tail, n, a)
    log_rhs = float(np.logaddexp(log_exp, log_tail))

    N1 = concentration_thresholds(inp, tail)
    level = math.inf if inp.beta_norm == 0 else inp.c / (2 * inp.beta_norm * scale)
    Np = []
    for i in range(k + 1):
        fn = lambda R, i=i: max(tail.f(i, R), *(max(tail.h_coord(i, l, R), tail.g_coord(i, l, R))
                                               for l in range(1, p + 1)))
        Ni = 1.0 if math.isinf(level) else _first_level(fn, level, a, strict=False)
        Np.append(max(Ni, N1[i]))
    Np = np.array(Np)
    consts = {"E": E, "inner": inner, "log_exp_term": log_exp, "log_tail_term": log_tail,
              "N_parameter": N1}
    return BoundReport("risk-concentration", "display", log_rhs, bool(np.all(n >= Np)), consts, Np,
                       ["exponent has no sample-size dependence; RHS >= 2p(k+1)(3+4p)e^{-delta E^2}"])


# ---------------------------------------------------------------- q-variance

def remark_zeta_threshold(alpha: float, q: float) -> float:
    """zeta above which the rate exponent saturates at q/2 (zeta' = zeta)."""
    A = (2 + (4 * alpha + 1) * q) / (4 * alpha)
    disc = A * A - 2 * q / alpha
    return A + math.sqrt(max(disc, 0.0))


def qvariance_exponent(alpha, q, zeta, zeta_p) -> float:
    return min((alpha * zeta_p - 1) * (zeta - 2 * q) / zeta, q / 2)


def qvariance_bound(inputs: BoundInputs, tail: TailModel) -> BoundReport:
    """D, N and the bound D / (min n)^exponent on the conditional q-variance of beta_hat."""
    inp = inputs
    if inp.C is None or inp.zeta is None or inp.zeta_prime is None:
        raise ValueError("q-variance bound needs C, zeta and zeta'")
    g, Gn, z = inp.inv_norm, inp.norm, inp.z_norm
    if not inp.C > g + g ** 3:
        raise HypothesisViolated(f"C={inp.C} must exceed ||G^-1|| + ||G^-1||^3 = {g + g ** 3}")
    p, k, a, q, gam = inp.p, inp.k, inp.alpha, inp.q, inp.gamma
    zeta, zp = inp.zeta, inp.zeta_prime
    if not (a * zp > 1 and zeta > 2 * q):
        raise HypothesisViolated("need alpha * zeta' > 1 and zeta > 2q")
    dl = min(0.5, (inp.C - (g + g ** 3)) / (2 * g ** 3))
    psi = min(q, 2 * (a * zp - 1))
    if psi <= 1:
        raise HypothesisViolated(f"psi={psi} must exceed 1")
    eta_p = (zp + 2) / 4
    M2psi = tail.moment(2 * psi)
    Mt = tail.cross_moment(zeta)
    Mw = tail.weak_moment(zp)
    s = 1 - q / zeta
    e1 = 1 + 4 / (zp + 2)
    e2 = 2 * (a * zp - 1) / (1 - 4 * a)
    e12 = max(e1, e2)
    L = math.log
    logD = ((2 * q + 1) * L(2) + (q + e1 * s) * L(1 + gam) + (q + (1 + e2) * s) * L(k + 1)
            + max(2 * psi, q + 1 + e12 * s) * L(p) + 3 * q * L(1 + dl)
            + e1 * L(max(1.0, M2psi, Mt, Mw)) + (psi / 2) * L(psi - 1)
            + max(e12 * s, 3 * q) * L(max(Gn, g)) + q * L(max(1.0, z))
            + e12 * s * L(max(1.0, 1 / dl)))
    expo = qvariance_exponent(a, q, zeta, zp)

    # N = N1 v N2, all in log space
    b = a * zp - 1
    logN1 = (L(p + 1) + L(max(Mw, 1.0)) + zp * L(k + 1) - L(1 - 0.75 ** (1 / (k + 1)))) / b
    e = 1 / (a * zp * (eta_p - 1) / eta_p)
    sigma_w = p * Mw
    inner = p * Mw ** (1 / eta_p) / (zp / (2 * eta_p - 1)) + 1
    logT = max(0.0, e * L(2 * (1 + gam) / (dl * g)) + e * L(inner)) + L(sigma_w) / (a * zp)
    t1 = L(4 * p * (k + 1)) + b * logT
    t2 = L(4 * p * (k + 1)) + (b / (1 - 4 * a)) * L(b * 4 * p ** 2 * (k + 1) ** 2 / (dl ** 2 * g ** 2))
    logN2 = float(np.logaddexp(t1, t2)) / b
    logN = max(logN1, logN2)
    nmin = float(inp.n.min())
    log_rhs = logD - expo * L(nmin)
    consts = {"delta_q": dl, "psi": psi, "eta_prime": eta_p, "log_D": logD, "exponent": expo,
              "log_N": logN, "log_N1": logN1, "log_N2": logN2, "M_2psi": M2psi,
              "M_tilde": Mt, "M_w": Mw}
    applicable = bool(L(nmin) >= logN)
    return BoundReport("q-variance", "inverse-norm-event", log_rhs, applicable, consts,
                       np.full(k + 1, math.exp(logN) if logN < 709 else math.inf),
                       [] if applicable else ["n below N"])


def conditional_qvariance_mc(sampler, gamma: float, C: float, q: float, n, seeds: int,
                             seed: int = 0):
    """MC estimate of Var_q(beta_hat || {||(G_hat_+ + gamma G_hat_delta)^{-1}|| <= C}).

    ``sampler(n, seed, count)`` must return a summary batch (see estimator.SummaryBatch).
    Returns (value, event frequency).
    """
    batch = sampler(n, seed, seeds)
    G, _, _ = batch.combined(gamma)
    inv_norm = 1.0 / np.linalg.svd(G, compute_uv=False)[:, -1]
    A = inv_norm <= C
    if not A.any():
        raise EventNeverOccurred(f"no run has ||(G_hat)^-1|| <= {C}")
    beta = np.where(A[:, None], batch.beta_hat(gamma), 0.0)
    X = beta * A[:, None]
    mean = X.mean(axis=0)
    dev = np.linalg.norm(X - mean, axis=1) ** q
    P = A.mean()
    return float(np.sort(dev).sum() / dev.size / P), float(P)


# ---------------------------------------------------------------- Rio / Marcinkiewicz-Zygmund

_LAWS = {
    "uniform": lambda rng, size: rng.uniform(-1.0, 1.0, size),
    "exponential": lambda rng, size: rng.exponential(1.0, size) - 1.0,
    "gaussian": lambda rng, size: rng.standard_normal(size),
}


def rio_moment_check(sample_law, n: int, a: float, seeds: int, rng=None):
    """MC check of E|sum_j U_j|^a <= n^{a/2-1} (a-1)^{a/2} sum_j E|U_j|^a.

    Both sides use the same draws; the margin is 3 standard errors of the
    per-draw difference. Returns (lhs, rhs, holds).
    """
    if a < 2:
        raise ValueError("a must be >= 2")
    law = _LAWS[sample_law] if isinstance(sample_law, str) else sample_law
    rng = np.random.default_rng(42) if rng is None else rng
    const = n ** (a / 2 - 1) * (a - 1) ** (a / 2)
    acc = np.zeros(4)                     # sums of lhs, rhs, d, d^2
    chunk = max(1, 2 ** 22 // max(n, 1))
    done = 0
    while done < seeds:
        m = min(chunk, seeds - done)
        U = law(rng, (m, n))
        l = np.abs(U.sum(axis=1)) ** a
        r = const * (np.abs(U) ** a).sum(axis=1)
        d = l - r
        acc += [l.sum(), r.sum(), d.sum(), (d * d).sum()]
        done += m
    lhs, rhs, dm = acc[:3] / seeds
    var = max(acc[3] / seeds - dm * dm, 0.0) * seeds / max(seeds - 1, 1)
    se = math.sqrt(var / seeds)
    return float(lhs), float(rhs), bool(dm <= 3 * se)
