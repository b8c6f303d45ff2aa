"""Frozen linear Hamiltonian system driven by piecewise-constant B_r and sigma_r.

    dX1 = B_r X2 dr,   dX2 = sigma_r dW_r

The state and the Bismut weights are Wiener integrals of deterministic,
piecewise-polynomial integrands, so their joint law is Gaussian and is
assembled exactly: every time integral is split at the breakpoints and
integrated with 3-point Gauss-Legendre, which is exact up to degree 5.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg, stats

from . import rng
from .errors import FactorizationError, ParameterError, PathSpanError, SingularMatrixError

logger = logging.getLogger(__name__)

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
SPAN_TOL = 1e-12
COND_CAP = 1e12
JITTER = 1e-12
MAX_ORDER = 3


@dataclass(frozen=True)
class PhaseVector:
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x1", np.atleast_1d(np.asarray(self.x1, dtype=float)))
        object.__setattr__(self, "x2", np.atleast_1d(np.asarray(self.x2, dtype=float)))
        if not (np.all(np.isfinite(self.x1)) and np.all(np.isfinite(self.x2))):
            raise ParameterError("phase vector entries must be finite")

    @property
    def d1(self):
        return self.x1.shape[0]

    @property
    def d2(self):
        return self.x2.shape[0]

    def as_array(self):
        return np.concatenate([self.x1, self.x2])

    @classmethod
    def from_array(cls, values, d1):
        values = np.asarray(values, dtype=float)
        return cls(values[:d1], values[d1:])

    @classmethod
    def zeros(cls, d1, d2):
        return cls(np.zeros(d1), np.zeros(d2))


def _check_invertible(matrix, what):
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > COND_CAP:
        raise SingularMatrixError(f"{what} is singular (condition number {cond:.3g})")
    return cond


@dataclass(frozen=True)
class TimeMatrixPath:
    breakpoints: np.ndarray
    B_pieces: np.ndarray
    sigma_pieces: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        B = np.asarray(self.B_pieces, dtype=float)
        S = np.asarray(self.sigma_pieces, dtype=float)
        if B.ndim == 2:
            B = B[None]
        if S.ndim == 2:
            S = S[None]
        if bp.ndim != 1 or len(bp) != len(B) + 1 or len(B) != len(S):
            raise ParameterError("need one B and one sigma piece per breakpoint interval")
        if np.any(np.diff(bp) <= 0.0):
            raise ParameterError("breakpoints must be strictly ascending")
        if S.shape[1] != S.shape[2] or B.shape[2] != S.shape[1]:
            raise ParameterError("B pieces must be d1 x d2 and sigma pieces d2 x d2")
        for k, sig in enumerate(S):
            _check_invertible(sig, f"sigma piece {k}")
        if B.shape[1] <= B.shape[2]:
            for k, b in enumerate(B):
                _check_invertible(b @ b.T, f"B B* piece {k}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "B_pieces", B)
        object.__setattr__(self, "sigma_pieces", S)

    @property
    def d1(self):
        return self.B_pieces.shape[1]

    @property
    def d2(self):
        return self.B_pieces.shape[2]

    @property
    def start(self):
        return float(self.breakpoints[0])

    @property
    def end(self):
        return float(self.breakpoints[-1])

    @cached_property
    def sigma_inv(self):
        return np.linalg.inv(self.sigma_pieces)

    @cached_property
    def kappa(self):
        worst = 0.0
        for b, sig, sig_inv in zip(self.B_pieces, self.sigma_pieces, self.sigma_inv):
            value = np.linalg.norm(b, 2) + np.linalg.norm(sig, 2) + np.linalg.norm(sig_inv, 2)
            if self.d1 <= self.d2:
                value += np.linalg.norm(np.linalg.inv(b @ b.T), 2)
            worst = max(worst, value)
        return float(worst)

    @classmethod
    def constant(cls, B, sigma, s=0.0, t=1.0):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        return cls(np.array([s, t]), B[None], sigma[None])

    @classmethod
    def random(cls, generator, d1=1, d2=1, n_pieces=3, s=0.0, t=1.0):
        widths = generator.uniform(0.5, 1.5, n_pieces)
        bp = s + (t - s) * np.concatenate(([0.0], np.cumsum(widths) / widths.sum()))
        bp[-1] = t
        lead = np.zeros((d1, d2))
        k = min(d1, d2)
        B = []
        S = []
        for _ in range(n_pieces):
            lead[np.arange(k), np.arange(k)] = generator.uniform(0.5, 2.0, k)
            B.append(lead + 0.1 * generator.standard_normal((d1, d2)))
            S.append(np.diag(generator.uniform(0.5, 2.0, d2)) + 0.1 * generator.standard_normal((d2, d2)))
        return cls(bp, np.array(B), np.array(S))

    def check_span(self, s, t):
        if s > t + SPAN_TOL or s < self.start - SPAN_TOL or t > self.end + SPAN_TOL:
            raise PathSpanError(f"[{s}, {t}] is not inside the path span [{self.start}, {self.end}]")

    def piece_at(self, r):
        idx = int(np.searchsorted(self.breakpoints, r, side="right")) - 1
        return min(max(idx, 0), len(self.B_pieces) - 1)

    def segments(self, a, b, extra=()):
        cuts = [a, b] + [p for p in itertools.chain(self.breakpoints, extra) if a < p < b]
        cuts = np.unique(cuts)
        return [(lo, hi, self.piece_at(0.5 * (lo + hi))) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi > lo]


def _integrate(path, a, b, fn, extra=()):
    """int_a^b fn(r, piece) dr, exact for integrands polynomial of degree <= 5 per segment."""
    total = 0.0
    for lo, hi, idx in path.segments(a, b, extra):
        half = 0.5 * (hi - lo)
        for x, w in zip(GL_NODES, GL_WEIGHTS):
            total = total + w * half * fn(lo + half * (x + 1.0), idx)
    return total


def gamma(path, s, t):
    path.check_span(s, t)
    out = np.zeros((path.d1, path.d2))
    for lo, hi, idx in path.segments(s, t):
        out += (hi - lo) * path.B_pieces[idx]
    return out


def q_matrix(path, s, t):
    path.check_span(s, t)
    if not s < t:
        raise PathSpanError("Q needs s < t")
    Q = _integrate(path, s, t, lambda r, i: (t - r) * (r - s) * path.B_pieces[i] @ path.B_pieces[i].T)
    _check_invertible(Q, f"Q on [{s}, {t}]")
    return Q


@dataclass(frozen=True)
class PhiShift:
    """Affine-in-r control Phi(r) = c0 + c1 r on [s, t]."""

    s: float
    t: float
    c0: np.ndarray
    c1: np.ndarray

    def __call__(self, r):
        return self.c0 + self.c1 * r


def phi_shift(path, s, t, h):
    """Cameron-Martin direction whose shift of W moves the flow by exactly h.

    Phi(r) = h2/(t-s) + (t+s-2r) c, where c is the minimum-norm solution of
    K c = h1 + int_s^t B_r (t-r)/(t-s) dr h2 with K = int_s^t (t-r)(r-s) B_r dr.
    For constant B this is c = B* Q^{-1}[...] .
    """
    path.check_span(s, t)
    if not s < t:
        raise PathSpanError("Phi needs s < t")
    delta = t - s
    K = _integrate(path, s, t, lambda r, i: (t - r) * (r - s) * path.B_pieces[i])
    rhs = h.x1 + _integrate(path, s, t, lambda r, i: (t - r) / delta * path.B_pieces[i] @ h.x2)
    KK = K @ K.T
    _check_invertible(KK, f"K K* on [{s}, {t}]")
    c = K.T @ np.linalg.solve(KK, rhs)
    return PhiShift(s, t, h.x2 / delta + (t + s) * c, -2.0 * c)


def null_shift_check(path, s, t, h):
    phi = phi_shift(path, s, t, h)
    res1 = np.linalg.norm(h.x2 - _integrate(path, s, t, lambda r, i: phi(r)))

    def inner(r, i):
        moved = phi.c0 * (r - s) + phi.c1 * (r * r - s * s) / 2.0
        return path.B_pieces[i] @ (h.x2 - moved)

    res2 = np.linalg.norm(h.x1 + _integrate(path, s, t, inner))
    return float(res1), float(res2)


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray
    n_w: int = 0
    d1: int = 1
    d2: int = 1

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def chol(self):
        try:
            return linalg.cholesky(self.cov, lower=True)
        except linalg.LinAlgError:
            trace = float(np.trace(self.cov))
            if trace == 0.0:
                return np.zeros_like(self.cov)
            logger.warning(f"covariance not positive definite, adding jitter {JITTER * trace:.3g}")
            try:
                return linalg.cholesky(self.cov + JITTER * trace * np.eye(self.dim), lower=True)
            except linalg.LinAlgError as exc:
                raise FactorizationError("Cholesky factorization failed after jitter") from exc

    def as_dict(self):
        return {
            "d1": self.d1,
            "d2": self.d2,
            "n_w": self.n_w,
            "mean": [float(v) for v in self.mean],
            "cov": [float(v) for v in self.cov.ravel()],
        }

    @classmethod
    def from_dict(cls, data):
        dim = len(data["mean"])
        return cls(
            np.asarray(data["mean"], dtype=float),
            np.asarray(data["cov"], dtype=float).reshape(dim, dim),
            int(data["n_w"]), int(data["d1"]), int(data["d2"]),
        )


def _gaussian_law(path, s, t, x, weights):
    """Law of (X1_t, X2_t, xi_1..xi_n); ``weights`` are (a, b, PhiShift) triples."""
    path.check_span(s, t)
    d1, d2 = path.d1, path.d2
    D = d1 + d2
    n_w = len(weights)
    extra = [p for a, b, _ in weights for p in (a, b)]

    def integrand(r, i):
        M = np.zeros((D + n_w, d2))
        sig = path.sigma_pieces[i]
        M[:d1] = gamma(path, r, t) @ sig
        M[d1:D] = sig
        for k, (a, b, phi) in enumerate(weights):
            if a <= r <= b:
                M[D + k] = path.sigma_inv[i] @ phi(r)
        return M @ M.T

    cov = np.zeros((D + n_w, D + n_w)) + _integrate(path, s, t, integrand, extra)
    cov = 0.5 * (cov + cov.T)
    mean = np.concatenate([x.x1 + gamma(path, s, t) @ x.x2, x.x2, np.zeros(n_w)])
    return GaussianLaw(mean, cov, n_w, d1, d2)


def uniform_partition(s, t, n):
    return np.linspace(s, t, n + 1)


def weight_segments(path, s, t, directions, partition=None):
    n = len(directions)
    if n == 0:
        return []
    partition = uniform_partition(s, t, n) if partition is None else np.asarray(partition, dtype=float)
    if len(partition) != n + 1 or abs(partition[0] - s) > SPAN_TOL or abs(partition[-1] - t) > SPAN_TOL:
        raise ParameterError("partition must run from s to t with one interval per direction")
    if np.any(np.diff(partition) <= 0.0):
        raise ParameterError("partition must be strictly ascending")
    segments = []
    for (a, b), h in zip(zip(partition[:-1], partition[1:]), directions):
        # directions after the first are transported by the flow up to their interval
        moved = PhaseVector(h.x1 + gamma(path, s, a) @ h.x2, h.x2)
        segments.append((a, b, phi_shift(path, a, b, moved)))
    return segments


def joint_law(path, s, t, x, partition=None, directions=()):
    return _gaussian_law(path, s, t, x, weight_segments(path, s, t, directions, partition))


def sample(law, seed, N, shards=1, purpose="linear.sample"):
    z = rng.standard_normal(seed, purpose, N, law.dim, shards)
    return law.mean + z @ law.chol.T


def _split(draws, d1, d2):
    return draws[:, :d1], draws[:, d1:d1 + d2], draws[:, d1 + d2:]


def semigroup(path, s, t, x, f, N, seed, shards=1):
    law = joint_law(path, s, t, x)
    x1, x2, _ = _split(sample(law, seed, N, shards, "linear.semigroup"), law.d1, law.d2)
    mean, se = rng.mean_and_stderr(f(x1, x2))
    return float(mean), float(se)


def bismut_derivative(path, s, t, x, f, directions, N, seed, shards=1, partition=None):
    """E[f(X_{s,t}(x)) prod xi_i], the derivative of P_{s,t} f along h_1..h_n."""
    if not 1 <= len(directions) <= MAX_ORDER:
        raise ParameterError(f"derivative order must be between 1 and {MAX_ORDER}")
    law = joint_law(path, s, t, x, partition, directions)
    x1, x2, xi = _split(sample(law, seed, N, shards, "linear.bismut"), law.d1, law.d2)
    mean, se = rng.mean_and_stderr(f(x1, x2) * np.prod(xi, axis=1))
    return float(mean), float(se)


def default_fd_step(N):
    # eps^2 bias against an N^-1/2 noise target
    return float(N) ** (-1.0 / 6.0)


def flow_shift(path, s, t, h):
    """Exact displacement of X_{s,t}(x) when x moves by h."""
    return np.concatenate([h.x1 + gamma(path, s, t) @ h.x2, h.x2])


def fd_derivative(path, s, t, x, f, directions, N, seed, shards=1, eps=None):
    """Central difference over +-eps per direction with common random numbers."""
    if not 1 <= len(directions) <= MAX_ORDER:
        raise ParameterError(f"derivative order must be between 1 and {MAX_ORDER}")
    eps = default_fd_step(N) if eps is None else float(eps)
    if eps <= 0.0:
        raise ParameterError("eps must be positive")
    law = joint_law(path, s, t, x)
    base = sample(law, seed, N, shards, "linear.fd")
    shifts = [flow_shift(path, s, t, h) for h in directions]
    acc = np.zeros(N)
    for signs in itertools.product((1.0, -1.0), repeat=len(directions)):
        moved = base + eps * sum(sg * sh for sg, sh in zip(signs, shifts))
        x1, x2, _ = _split(moved, law.d1, law.d2)
        acc += np.prod(signs) * f(x1, x2)
    mean, se = rng.mean_and_stderr(acc / (2.0 * eps) ** len(directions))
    return float(mean), float(se)


class SmoothFunction(NamedTuple):
    name: str
    f: Callable
    grad1: Callable
    grad2: Callable


def _sum(a):
    return np.sum(a, axis=1)


def smooth_suite():
    """Smooth test functions of (x1, x2) with their block gradients."""

    def cos_sum(x1, x2):
        return np.cos(_sum(x1) + _sum(x2))

    def gauss(x1, x2):
        return np.exp(-0.5 * (_sum(x1 ** 2) + _sum(x2 ** 2)))

    def sin_cos(x1, x2):
        return np.sin(x1[:, 0]) * np.cos(x2[:, 0])

    def tanh_diff(x1, x2):
        return np.tanh(_sum(x1) - 0.5 * _sum(x2))

    def rational(x1, x2):
        return 1.0 / (1.0 + _sum(x1 ** 2) + _sum(x2 ** 2))

    def dcos(x1, x2, block):
        return -np.sin(_sum(x1) + _sum(x2))[:, None] * np.ones_like(block)

    def sech2(x1, x2):
        return 1.0 - tanh_diff(x1, x2) ** 2

    return [
        SmoothFunction("cos_sum", cos_sum,
                     lambda x1, x2: dcos(x1, x2, x1), lambda x1, x2: dcos(x1, x2, x2)),
        SmoothFunction("gauss", gauss,
                     lambda x1, x2: -x1 * gauss(x1, x2)[:, None], lambda x1, x2: -x2 * gauss(x1, x2)[:, None]),
        SmoothFunction("sin_cos", sin_cos,
                     lambda x1, x2: _first_col(x1, np.cos(x1[:, 0]) * np.cos(x2[:, 0])),
                     lambda x1, x2: _first_col(x2, -np.sin(x1[:, 0]) * np.sin(x2[:, 0]))),
        SmoothFunction("tanh_diff", tanh_diff,
                     lambda x1, x2: sech2(x1, x2)[:, None] * np.ones_like(x1),
                     lambda x1, x2: -0.5 * sech2(x1, x2)[:, None] * np.ones_like(x2)),
        SmoothFunction("rational", rational,
                     lambda x1, x2: -2.0 * x1 * rational(x1, x2)[:, None] ** 2,
                     lambda x1, x2: -2.0 * x2 * rational(x1, x2)[:, None] ** 2),
    ]


def _first_col(block, values):
    g = np.zeros_like(block)
    g[:, 0] = values
    return g


def commutation_suite():
    """Linear, x1-only and mixed test functions for the commutation identities."""

    def linear(x1, x2):
        return 2.0 * _sum(x1) - _sum(x2) + 0.5

    def sin_x1(x1, x2):
        return np.sin(x1[:, 0])

    def mixed(x1, x2):
        return np.cos(_sum(x1) + _sum(x2))

    return [
        SmoothFunction("linear", linear, lambda x1, x2: 2.0 * np.ones_like(x1), lambda x1, x2: -np.ones_like(x2)),
        SmoothFunction("sin_x1", sin_x1, lambda x1, x2: _first_col(x1, np.cos(x1[:, 0])), lambda x1, x2: np.zeros_like(x2)),
        SmoothFunction("cos_sum", mixed,
                     lambda x1, x2: -np.sin(_sum(x1) + _sum(x2))[:, None] * np.ones_like(x1),
                     lambda x1, x2: -np.sin(_sum(x1) + _sum(x2))[:, None] * np.ones_like(x2)),
    ]


class IdentityResidual(NamedTuple):
    identity: str
    index: int
    residual: float
    stderr: float

    @property
    def passed(self):
        return abs(self.residual) <= 3.0 * self.stderr + 1e-12


def commutation_check(path, s, t, x, fn, N, seed, shards=1):
    """Paired MC residuals of grad1 P f = P grad1 f and P grad2 f = grad2 P f - Gamma* grad1 P f."""
    d1, d2 = path.d1, path.d2
    G = gamma(path, s, t)
    directions = [PhaseVector(np.eye(d1)[i], np.zeros(d2)) for i in range(d1)]
    directions += [PhaseVector(np.zeros(d1), np.eye(d2)[j]) for j in range(d2)]
    weights = [(s, t, phi_shift(path, s, t, h)) for h in directions]
    law = _gaussian_law(path, s, t, x, weights)
    x1, x2, xi = _split(sample(law, seed, N, shards, "linear.commutation"), d1, d2)
    fx = fn.f(x1, x2)
    g1 = fn.grad1(x1, x2)
    g2 = fn.grad2(x1, x2)

    out = []
    for i in range(d1):
        mean, se = rng.mean_and_stderr(fx * xi[:, i] - g1[:, i])
        out.append(IdentityResidual("x1", i, float(mean), float(se)))
    for j in range(d2):
        pushed = fx * xi[:, d1 + j] - sum(G[i, j] * fx * xi[:, i] for i in range(d1))
        mean, se = rng.mean_and_stderr(g2[:, j] - pushed)
        out.append(IdentityResidual("x2", j, float(mean), float(se)))
    return out


def flow_check(path, s, u, t, x):
    """Largest deviation between the law over [s, t] and the composition over [s, u], [u, t]."""
    first = joint_law(path, s, u, x)
    second = joint_law(path, u, t, PhaseVector.zeros(path.d1, path.d2))
    d1, d2 = path.d1, path.d2
    A = np.eye(d1 + d2)
    A[:d1, d1:] = gamma(path, u, t)
    mean = A @ first.mean
    cov = A @ first.cov @ A.T + second.cov
    direct = joint_law(path, s, t, x)
    return float(max(np.max(np.abs(mean - direct.mean)), np.max(np.abs(cov - direct.cov))))


class ScalingRow(NamedTuple):
    delta: float
    moment_p: float
    quantity: str
    estimate: float
    stderr: float


class ScalingFit(NamedTuple):
    quantity: str
    slope: float
    ci_low: float
    ci_high: float


def _fit(rows, quantity):
    picked = [r for r in rows if r.quantity == quantity and r.estimate > 0.0]
    if len(picked) < 3:
        raise ParameterError(f"not enough positive rungs to fit {quantity}")
    x = np.log([r.delta for r in picked])
    y = np.log([r.estimate for r in picked])
    if np.ptp(x) == 0.0:
        raise ParameterError("degenerate delta ladder")
    fit = stats.linregress(x, y)
    half = 1.96 * fit.stderr
    return ScalingFit(quantity, float(fit.slope), float(fit.slope - half), float(fit.slope + half))


def moment_scaling(deltas, p=2.0, N=100_000, seed=0, shards=1, B=1.0, sigma=1.0, exact=False):
    """||X1_{0,D}(0)||_p and ||X2_{0,D}(0)||_p along a ladder of horizons."""
    if len(deltas) < 6:
        raise ParameterError("the delta ladder needs at least 6 rungs")
    rows = []
    for k, delta in enumerate(deltas):
        path = TimeMatrixPath.constant(B, sigma, 0.0, delta)
        law = joint_law(path, 0.0, delta, PhaseVector.zeros(path.d1, path.d2))
        d1, d2 = law.d1, law.d2
        if exact and p == 2.0:
            rows.append(ScalingRow(delta, p, "x1", float(np.sqrt(np.trace(law.cov[:d1, :d1]))), 0.0))
            rows.append(ScalingRow(delta, p, "x2", float(np.sqrt(np.trace(law.cov[d1:, d1:]))), 0.0))
            continue
        x1, x2, _ = _split(sample(law, seed + k, N, shards, "linear.moments"), d1, d2)
        for name, block in (("x1", x1), ("x2", x2)):
            m, se = rng.mean_and_stderr(np.linalg.norm(block, axis=1) ** p)
            norm = float(m) ** (1.0 / p)
            rows.append(ScalingRow(delta, p, name, norm, float(se) / (p * float(m) ** ((p - 1.0) / p))))
    return rows, [_fit(rows, "x1"), _fit(rows, "x2")]


def gradient_scaling(deltas, fn, x, N=100_000, seed=0, shards=1, B=1.0, sigma=1.0, eps=1e-3):
    """|d/dx1 P_{0,D} f(x)| along a ladder, by common-random-number differences."""
    if len(deltas) < 6:
        raise ParameterError("the delta ladder needs at least 6 rungs")
    rows = []
    for k, delta in enumerate(deltas):
        path = TimeMatrixPath.constant(B, sigma, 0.0, delta)
        h = PhaseVector(np.eye(path.d1)[0], np.zeros(path.d2))
        est, se = fd_derivative(path, 0.0, delta, x, fn, [h], N, seed + k, shards, eps)
        rows.append(ScalingRow(delta, 1.0, "grad_x1", abs(est), se))
    return rows, [_fit(rows, "grad_x1")]


def scaling_probe(deltas, quantity="moments", **kwargs):
    if quantity == "moments":
        return moment_scaling(deltas, **kwargs)
    if quantity == "gradient":
        return gradient_scaling(deltas, **kwargs)
    raise ParameterError(f"unknown scaling quantity {quantity!r}")


def q_inverse_scaling(deltas, B=1.0, sigma=1.0):
    """||Q_{0,D}^{-1}|| along a ladder of horizons, with the fitted log-log slope."""
    rows = []
    for delta in deltas:
        path = TimeMatrixPath.constant(B, sigma, 0.0, delta)
        Q = q_matrix(path, 0.0, delta)
        rows.append(ScalingRow(delta, 0.0, "q_inverse", float(np.linalg.norm(np.linalg.inv(Q), 2)), 0.0))
    return rows, [_fit(rows, "q_inverse")]
