"""Moduli of continuity: Dini, slowly varying, Hölder-Dini brackets and class-C functions.

Every family evaluates through ``at_log_scale(u) = phi(exp(-u))`` so that
integrals of the form ``int phi(t)/t dt`` become plain integrals in ``u``
and the behaviour near ``t = 0`` is resolved without underflow.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, stats

from .errors import ModulusDomainError, ModulusParseError, ParameterError, UnboundedSupremumError

logger = logging.getLogger(__name__)

E_E = math.exp(math.e)

SUP_GRID_POINTS = 4096
SUP_GRID_LOW = 1e-12
DINI_LADDER_DEPTH = 60


def _fmt(x):
    return repr(float(x))


class LogTail(NamedTuple):
    rate: float
    power: float
    coef: float = 1.0

    def times(self, other):
        return LogTail(self.rate + other.rate, self.power + other.power, self.coef * other.coef)

    @property
    def dini(self):
        return self.rate > 0.0 or self.power > 1.0


class ModulusFn:
    """Base of the closed family of moduli; subclasses are frozen dataclasses."""

    def at_log_scale(self, u):
        raise NotImplementedError

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.at_log_scale(-np.log(t))
        return float(out) if out.ndim == 0 else out

    def config(self):
        raise NotImplementedError

    def log_tail(self):
        """``LogTail`` with phi(e^-u) ~ coef * u^-power * e^(-rate u) as u -> inf, or None if unknown."""
        return None

    def __str__(self):
        return self.config()


@dataclass(frozen=True)
class LogPower(ModulusFn):
    beta: float

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ModulusDomainError(f"logpow exponent must be positive, got {self.beta}")

    def at_log_scale(self, u):
        return np.logaddexp(0.0, np.asarray(u, dtype=float)) ** (-self.beta)

    def config(self):
        return f"logpow({_fmt(self.beta)})"

    def log_tail(self):
        return LogTail(0.0, self.beta)


@dataclass(frozen=True)
class Power(ModulusFn):
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ModulusDomainError(f"pow exponent must lie in [0, 1], got {self.alpha}")

    def at_log_scale(self, u):
        return np.exp(-self.alpha * np.asarray(u, dtype=float))

    def config(self):
        return f"pow({_fmt(self.alpha)})"

    def log_tail(self):
        return LogTail(self.alpha, 0.0)


@dataclass(frozen=True)
class Constant(ModulusFn):
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0.0:
            raise ModulusDomainError(f"const value must be positive, got {self.c}")

    def at_log_scale(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.c)

    def config(self):
        return f"const({_fmt(self.c)})"

    def log_tail(self):
        return LogTail(0.0, 0.0, self.c)


@dataclass(frozen=True)
class Product(ModulusFn):
    left: ModulusFn
    right: ModulusFn

    def at_log_scale(self, u):
        return self.left.at_log_scale(u) * self.right.at_log_scale(u)

    def config(self):
        return f"prod({self.left.config()}, {self.right.config()})"

    def log_tail(self):
        left, right = self.left.log_tail(), self.right.log_tail()
        return None if left is None or right is None else left.times(right)


def _two_branch(u, inner_fn, slope):
    # u >= 0 is t <= 1; beyond t = 1 the modulus is slope * t
    u = np.asarray(u, dtype=float)
    flat = np.atleast_1d(u)
    out = np.empty_like(flat)
    inner = flat >= 0.0
    out[inner] = inner_fn(flat[inner])
    out[~inner] = slope * np.exp(-flat[~inner])
    return out.reshape(u.shape)


@dataclass(frozen=True)
class Bracket(ModulusFn):
    """t^alpha * base(t) on (0, 1], c_alpha * t beyond."""

    alpha: float
    base: ModulusFn
    c_alpha: float = field(default=float("nan"), compare=False)

    def at_log_scale(self, u):
        return _two_branch(
            u, lambda v: np.exp(-self.alpha * v) * self.base.at_log_scale(v), self.c_alpha,
        )

    def config(self):
        return f"bracket({_fmt(self.alpha)}, {self.base.config()})"

    def log_tail(self):
        base = self.base.log_tail()
        return None if base is None else LogTail(self.alpha, 0.0).times(base)


@dataclass(frozen=True)
class LinearExtended(ModulusFn):
    """psi on (0, 1] continued linearly with slope sup_{(0,1]} psi."""

    base: ModulusFn
    sup: float = field(default=float("nan"), compare=False)

    def at_log_scale(self, u):
        return _two_branch(u, self.base.at_log_scale, self.sup)

    def config(self):
        return f"ext({self.base.config()})"

    def log_tail(self):
        return self.base.log_tail()


def _log_log(u):
    return np.log(np.logaddexp(1.0, u))


def _log_log_log(u):
    return np.log(np.log(np.logaddexp(math.e, u)))


@dataclass(frozen=True)
class ClassCGamma(ModulusFn):
    # level 3 uses exp(e) inside the triple logarithm so it stays positive on (0, 1]
    level: int

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ModulusParseError(f"class-C level must be 1, 2 or 3, got {self.level}")

    def at_log_scale(self, u):
        u = np.asarray(u, dtype=float)
        out = np.logaddexp(0.0, u)
        if self.level >= 2:
            out = out * _log_log(u)
        if self.level >= 3:
            out = out * _log_log_log(u)
        return out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        g1 = np.log1p(1.0 / t)
        d1 = -1.0 / (t * (t + 1.0))
        if self.level == 1:
            return d1
        l2 = np.log(np.log(math.e + 1.0 / t))
        dl2 = -1.0 / (t * (math.e * t + 1.0) * np.log(math.e + 1.0 / t))
        g2 = g1 * l2
        d2 = d1 * l2 + g1 * dl2
        if self.level == 2:
            return d2
        inner = np.log(E_E + 1.0 / t)
        l3 = np.log(np.log(inner))
        dl3 = -1.0 / (t * (E_E * t + 1.0) * inner * np.log(inner))
        return d2 * l3 + g2 * dl3

    def config(self):
        return f"gamma{self.level}"

    def log_tail(self):
        # grows like u times iterated logs; only the divergence matters
        return LogTail(0.0, -1.0)


def evaluate(phi, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr > 0.0)):
        raise ModulusDomainError(f"modulus {phi} evaluated at non-positive t")
    return phi(t)


# ---------------------------------------------------------------------------
# suprema, brackets and extensions


def _sup_on_unit_interval(fn_log, label):
    """sup over s in (0, 1] of a function given on the log scale u = -log s."""
    u_grid = np.linspace(0.0, -math.log(SUP_GRID_LOW), SUP_GRID_POINTS)
    values = fn_log(u_grid)
    i = int(np.argmax(values))
    if i == len(u_grid) - 1 and values[-1] > values[-2]:
        raise UnboundedSupremumError(f"{label}: supremum over (0, 1] not attained, values grow towards 0")
    lo = u_grid[max(i - 1, 0)]
    hi = u_grid[min(i + 1, len(u_grid) - 1)]
    best = float(values[i])
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda u: -float(fn_log(np.array([u]))[0]), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        if res.success:
            best = max(best, -float(res.fun))
    return best


def bracket(alpha, base):
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ModulusDomainError(f"bracket exponent must lie in [0, 1], got {alpha}")
    c = _sup_on_unit_interval(lambda u: np.exp(-alpha * u) * base.at_log_scale(u), f"bracket({alpha}, {base})")
    return Bracket(alpha, base, c)


def linear_extension(base):
    return LinearExtended(base, _sup_on_unit_interval(base.at_log_scale, f"ext({base})"))


# ---------------------------------------------------------------------------
# config grammar

_TOKEN = re.compile(r"\s*(?:(?P<num>[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?(?:/\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<sym>[(),]))")


def _tokenize(text):
    pos = 0
    tokens = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ModulusParseError(f"unexpected character at {pos} in {text!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ModulusParseError(f"malformed modulus {self.text!r}")
        self.i += 1
        return tok[1]

    def number(self):
        return float(Fraction(self.take("num")))

    def modulus(self):
        name = self.take("name").lower()
        if name in ("gamma1", "gamma2", "gamma3"):
            return ClassCGamma(int(name[-1]))
        self.take("sym", "(")
        if name == "logpow":
            out = LogPower(self.number())
        elif name == "pow":
            out = Power(self.number())
        elif name == "const":
            out = Constant(self.number())
        elif name == "bracket":
            alpha = self.number()
            self.take("sym", ",")
            out = bracket(alpha, self.modulus())
        elif name == "prod":
            left = self.modulus()
            self.take("sym", ",")
            out = Product(left, self.modulus())
        elif name == "ext":
            out = linear_extension(self.modulus())
        else:
            raise ModulusParseError(f"unknown modulus family {name!r}")
        self.take("sym", ")")
        return out

    def parse(self):
        out = self.modulus()
        if self.i != len(self.tokens):
            raise ModulusParseError(f"trailing input in {self.text!r}")
        return out


def parse_modulus(text):
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Dini classification


class DiniResult(NamedTuple):
    value: float
    verdict: str
    increments: np.ndarray
    tail_exponent: float


def _log_scale_quad(fn, a, b):
    value, _ = integrate.quad(fn, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)
    return value


def _ladder_verdict(increments, tol):
    """Verdict from the rung increments alone, with the fitted tail exponent."""
    depth = len(increments)
    late = increments[-10:]
    if np.any(late <= 0.0):
        return "converges", math.inf
    ratios = late[1:] / late[:-1]
    geometric = bool(np.max(ratios) < 0.95 and np.ptp(ratios) < 0.02)
    ks = np.arange(depth - 20, depth) + 1.0
    p = float(-stats.linregress(np.log(ks), np.log(increments[-20:])).slope)
    if geometric:
        r = float(np.max(ratios))
        return ("converges" if late[-1] * r / (1.0 - r) < tol else "inconclusive"), p
    if p >= 1.2:
        return "converges", p
    if p <= 1.05:
        return "diverges", p
    return "inconclusive", p


def dini_integral(phi, tol=1e-6, depth=DINI_LADDER_DEPTH):
    """Classify int_0^1 phi(t)/t dt on the ladder eps_k = 2^-k.

    Rung increments I_k are the integrals over [eps_{k+1}, eps_k]. Families
    with a known ``log_tail`` are classified exactly and the ladder only
    supplies the value. Anything else falls back to the ladder: it converges
    when the increments decay geometrically with a tail below ``tol`` or
    follow a power law k^-p with p >= 1.2, and diverges when they neither
    decay geometrically nor faster than k^-1.05.
    """
    ln2 = math.log(2.0)
    fn = lambda u: float(phi.at_log_scale(np.array([u]))[0])
    increments = np.array([_log_scale_quad(fn, k * ln2, (k + 1) * ln2) for k in range(depth)])
    partial = float(np.sum(increments))
    ladder, p = _ladder_verdict(increments, tol)

    tail = phi.log_tail()
    if tail is None:
        verdict = ladder
        if verdict == "inconclusive":
            logger.warning(f"Dini test inconclusive for {phi}: tail exponent {p:.3f}")
    else:
        verdict = "converges" if tail.dini else "diverges"
        if ladder != verdict:
            logger.info(f"Dini ladder for {phi} reads {ladder} (exponent {p:.3f}); exact tail says {verdict}")

    if verdict != "converges":
        value = partial
    elif tail is not None and tail.rate == 0.0:
        # remaining tail beyond the ladder: int_U^inf coef u^-power du
        U = depth * ln2
        value = partial + tail.coef * U ** (1.0 - tail.power) / (tail.power - 1.0)
    else:
        value = _log_scale_quad(fn, 0.0, math.inf)
    return DiniResult(value, verdict, increments, p)


def slow_variation_defect(phi, lambdas, ks=range(20, 41)):
    """max over lambda of |phi(lambda t)/phi(t) - 1| at the deepest rung t = 2^-max(ks)."""
    if len(lambdas) == 0:
        raise ParameterError("lambdas must be nonempty")
    t = 2.0 ** (-max(ks))
    base = phi(t)
    return max(abs(phi(lam * t) / base - 1.0) for lam in lambdas)


def slow_variation_ladder(phi, lambdas, ks=range(20, 41)):
    rows = []
    for k in ks:
        t = 2.0 ** (-k)
        rows.append((k, max(abs(phi(lam * t) / phi(t) - 1.0) for lam in lambdas)))
    return rows


def is_monotone(phi, n=10_000, low=1e-12):
    t = np.logspace(math.log10(low), 0.0, n)
    v = phi(t)
    return bool(np.all(np.diff(v) >= -1e-14 * np.abs(v[1:])))


def bar_modulus(phi, t):
    """t + t * int_t^1 phi(s)/s^2 ds + int_0^t phi(s)/s ds, for t in (0, 1)."""
    fn = lambda u: float(phi.at_log_scale(np.array([u]))[0])
    lt = -math.log(t)
    upper = _log_scale_quad(lambda u: fn(u) * math.exp(u), 0.0, lt)
    lower = _log_scale_quad(fn, lt, math.inf)
    return t + t * upper + lower


# ---------------------------------------------------------------------------
# property suite for brackets


class PropertyReport(NamedTuple):
    C_ratio: float
    C_monotone: float
    C_int1: float
    C_int2: float
    C_sub: float
    violations: list
    finite: bool


def default_property_grid(n=61, low=1e-6):
    pts = np.logspace(math.log10(low), 0.0, n)
    return [(t, s) for t in pts for s in pts]


def property_suite(psi, alpha, delta, grid=None, cap=1e6):
    grid = default_property_grid() if grid is None else grid
    pairs = np.asarray(grid, dtype=float)
    t, s = pairs[:, 0], pairs[:, 1]
    pt, ps = psi(t), psi(s)
    violations = []

    def record(name, values, mask=None):
        mask = np.ones_like(values, dtype=bool) if mask is None else mask
        vals = np.where(mask, values, -np.inf)
        for i in np.nonzero(vals > cap)[0]:
            violations.append((name, float(t[i]), float(s[i]), float(vals[i])))
        return float(np.max(vals)) if np.any(mask) else float("nan")

    q = t / s
    c_ratio = record("ratio", (pt / ps) / np.maximum(q ** (alpha + delta), q ** (alpha - delta)))
    c_mono = float("nan")
    if alpha < 1.0:
        c_mono = record("monotone", (s / ps) / (t / pt), t >= s)
    c_sub = record("subadditive", psi(s + t) / (ps + pt))

    c_int1 = c_int2 = float("nan")
    if 0.0 < alpha < 1.0:
        fn = lambda u: float(psi.at_log_scale(np.array([u]))[0])
        ts = np.unique(t[t <= 1.0])
        r1, r2 = [], []
        for tt in ts:
            lt = -math.log(tt)
            p_t = psi(tt)
            r1.append(_log_scale_quad(fn, lt, math.inf) / p_t)
            r2.append(_log_scale_quad(lambda u: fn(u) * math.exp(u), 0.0, lt) / (p_t / tt))
        c_int1, c_int2 = float(np.max(r1)), float(np.max(r2))
        for name, vals in (("integral_lower", r1), ("integral_upper", r2)):
            for tt, v in zip(ts, vals):
                if v > cap:
                    violations.append((name, float(tt), float("nan"), float(v)))

    constants = [c for c in (c_ratio, c_mono, c_int1, c_int2, c_sub) if not math.isnan(c)]
    finite = all(math.isfinite(c) and c <= cap for c in constants)
    return PropertyReport(c_ratio, c_mono, c_int1, c_int2, c_sub, violations, finite)


# ---------------------------------------------------------------------------
# class C


class ClassCReport(NamedTuple):
    level: int
    liminf_proxy: float
    criterion: list
    partial_integrals: list
    diverges: bool


def class_c_report(level, ks=range(1, 61)):
    """liminf of gamma/4 + t gamma' and partial integrals of int dt/(t gamma)."""
    gamma = ClassCGamma(level)
    ln2 = math.log(2.0)
    criterion = []
    partial = []
    running = 0.0
    inv = lambda u: 1.0 / float(gamma.at_log_scale(np.array([u]))[0])
    prev_u = 0.0
    for k in ks:
        t = 2.0 ** (-k)
        criterion.append((k, float(gamma(t) / 4.0 + t * gamma.derivative(t))))
        running += _log_scale_quad(inv, prev_u, k * ln2)
        prev_u = k * ln2
        partial.append((k, running))
    tail = [c for k, c in criterion if k >= max(ks) // 2]
    # all three built-ins diverge like iterated logarithms, too slowly for a ladder fit
    return ClassCReport(level, float(min(tail)), criterion, partial, True)
