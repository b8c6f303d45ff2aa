"""Euler-Maruyama laboratory for the stochastic Hamiltonian system.

States are arrays of shape (paths, d1 + d2); noise enters the second block
only. Every coefficient callback takes (t, x) with x of shape (P, D) and is
evaluated for all paths at once.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import stats

from . import rng
from .errors import ModelParameterError, ParameterError, StepSizeError
from .linear_flow import PhaseVector, TimeMatrixPath

logger = logging.getLogger(__name__)

BLOWUP = 1e10
FD_STEP = 1e-6
PRESETS = ("example_1_1", "integral_drift", "delay_sde", "linear", "nondegenerate", "holder_drift")


class Lyapunov(NamedTuple):
    value: Callable
    grad: Callable
    hess22: Callable


@dataclass(frozen=True)
class SdeModel:
    d1: int
    d2: int
    b1: Callable
    b2: Callable
    sigma: Callable
    a: Optional[Callable] = None
    lyapunov: Optional[Lyapunov] = None
    eps_lyap: float = 1.0
    drift_jacobian: Optional[Callable] = None
    sigma_constant: bool = False
    regularity_meta: dict = field(default_factory=dict)
    linear_coefficients: Optional[tuple] = None
    name: str = "custom"

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 1:
            raise ModelParameterError("d1 and d2 must be positive")
        if not 0.0 < self.eps_lyap <= 1.0:
            raise ModelParameterError("eps_lyap must lie in (0, 1]")

    @property
    def dim(self):
        return self.d1 + self.d2

    def drift(self, t, x):
        out = np.concatenate([self.b1(t, x), self.b2(t, x)], axis=1)
        if self.a is not None:
            out = out + self.a(t, x)
        return out

    def jacobian(self, t, x):
        """Jacobian of b + a, shape (P, D, D); central differences without an analytic one."""
        if self.drift_jacobian is not None:
            return self.drift_jacobian(t, x)
        cols = []
        for m in range(self.dim):
            e = np.zeros(self.dim)
            e[m] = FD_STEP
            cols.append((self.drift(t, x + e) - self.drift(t, x - e)) / (2.0 * FD_STEP))
        return np.stack(cols, axis=2)

    def sigma_jacobian(self, t, x):
        """d sigma_ij / d x_m, shape (P, d2, d2, D)."""
        cols = []
        for m in range(self.dim):
            e = np.zeros(self.dim)
            e[m] = FD_STEP
            cols.append((self.sigma(t, x + e) - self.sigma(t, x - e)) / (2.0 * FD_STEP))
        return np.stack(cols, axis=3)

    def generator_of_h(self, t, x):
        """<b + a, grad H> + 1/2 tr(sigma sigma^* grad^(2) grad^(2) H)."""
        H = self.lyapunov
        sig = self.sigma(t, x)
        ss = np.einsum("pij,pkj->pik", sig, sig)
        first = np.sum(self.drift(t, x) * H.grad(x), axis=1)
        return first + 0.5 * np.einsum("pij,pji->p", ss, H.hess22(x))

    def linear_path(self, T):
        if self.linear_coefficients is None:
            raise ModelParameterError(f"model {self.name} has no linear-flow counterpart")
        B, sigma = self.linear_coefficients
        return TimeMatrixPath.constant(B, sigma, 0.0, T)


def _as_states(x0, dim, n_paths):
    if isinstance(x0, PhaseVector):
        x0 = x0.as_array()
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        if x0.shape[0] != dim:
            raise ParameterError(f"initial point must have {dim} coordinates")
        return np.tile(x0, (n_paths, 1))
    if x0.shape != (n_paths, dim):
        raise ParameterError(f"initial points must have shape {(n_paths, dim)}")
    return x0.copy()


# ---------------------------------------------------------------------------
# drivers


class BrownianDriver:
    """Brownian increments stored at the finest dyadic level.

    Coarser increments are pairwise sums of finer ones, so every step size in
    the ladder sees the same Brownian path.
    """

    def __init__(self, seed, T, h_min, n_paths, d2=1, shards=1, purpose="sde.driver"):
        n_fine = T / h_min
        if abs(n_fine - round(n_fine)) > 1e-9 * n_fine:
            raise StepSizeError("h_min must divide T")
        self.seed = int(seed)
        self.T = float(T)
        self.h_min = float(h_min)
        self.n_paths = int(n_paths)
        self.d2 = int(d2)
        self.shards = int(shards)
        self.n_fine = int(round(n_fine))
        blocks = []
        for shard, size in enumerate(rng.shard_sizes(self.n_paths, self.shards)):
            if size:
                gen = rng.stream(self.seed, purpose, shard)
                blocks.append(gen.standard_normal((size, self.n_fine, self.d2)))
        self._levels = {0: np.concatenate(blocks, axis=0) * math.sqrt(self.h_min)}

    def level_of(self, h):
        ratio = h / self.h_min
        level = int(round(math.log2(ratio))) if ratio >= 1.0 else -1
        if level < 0 or abs(2 ** level - ratio) > 1e-9 * ratio:
            raise StepSizeError(f"step {h} is not a power-of-two multiple of {self.h_min}")
        if self.n_fine % (2 ** level):
            raise StepSizeError(f"step {h} does not divide the driver horizon")
        return level

    def increments(self, h):
        """Increments of shape (paths, T/h, d2) at step h."""
        level = self.level_of(h)
        for lv in range(1, level + 1):
            if lv not in self._levels:
                fine = self._levels[lv - 1]
                self._levels[lv] = fine.reshape(self.n_paths, -1, 2, self.d2).sum(axis=2)
        return self._levels[level]

    def path(self, h=None):
        inc = self.increments(h or self.h_min)
        zero = np.zeros((self.n_paths, 1, self.d2))
        return np.concatenate([zero, np.cumsum(inc, axis=1)], axis=1)


@dataclass
class SamplePath:
    times: np.ndarray
    states: np.ndarray
    jacobian: Optional[np.ndarray]
    flags: np.ndarray
    blowup_index: np.ndarray

    @property
    def terminal(self):
        return self.states[:, -1, :]

    @property
    def flag_rate(self):
        return float(np.mean(self.flags))


def integrate(model, x0, h, T, driver, with_jacobian=False):
    """Euler-Maruyama on [0, T] with step h along the driver's Brownian path."""
    n = T / h
    if abs(n - round(n)) > 1e-9 * max(n, 1.0):
        raise StepSizeError(f"step {h} does not divide horizon {T}")
    n = int(round(n))
    if T > driver.T * (1.0 + 1e-12):
        raise StepSizeError("horizon exceeds the driver's horizon")
    if driver.d2 != model.d2:
        raise ParameterError("driver and model noise dimensions differ")
    dW = driver.increments(h)[:, :n, :]
    P, D, d1 = driver.n_paths, model.dim, model.d1

    x = _as_states(x0, D, P)
    states = np.full((P, n + 1, D), np.nan)
    states[:, 0] = x
    alive = np.ones(P, dtype=bool)
    blowup_index = np.full(P, -1)
    J = None
    jac = None
    if with_jacobian:
        J = np.broadcast_to(np.eye(D), (P, D, D)).copy()
        jac = np.full((P, n + 1, D, D), np.nan)
        jac[:, 0] = J

    times = h * np.arange(n + 1)
    for k in range(n):
        if not np.any(alive):
            break
        t = times[k]
        xa = x[alive]
        dw = dW[alive, k]
        sig = model.sigma(t, xa)
        step = xa + h * model.drift(t, xa)
        step[:, d1:] += np.einsum("pij,pj->pi", sig, dw)
        if with_jacobian:
            Ja = J[alive]
            Jn = Ja + h * model.jacobian(t, xa) @ Ja
            if not model.sigma_constant:
                noise = np.einsum("pijm,pj->pim", model.sigma_jacobian(t, xa), dw)
                Jn[:, d1:, :] += noise @ Ja
            J[alive] = Jn
        x[alive] = step
        blown = alive & ~(np.all(np.isfinite(x), axis=1) & (np.linalg.norm(np.nan_to_num(x, nan=np.inf), axis=1) <= BLOWUP))
        if np.any(blown):
            blowup_index[blown] = k + 1
            alive &= ~blown
            logger.warning(f"{int(np.count_nonzero(blown))} paths of {model.name} exceeded |X| > {BLOWUP:g} at t={times[k + 1]:.4g}")
        states[alive, k + 1] = x[alive]
        if with_jacobian:
            jac[alive, k + 1] = J[alive]
    return SamplePath(times, states, jac, blowup_index >= 0, blowup_index)


# ---------------------------------------------------------------------------
# presets


def _sigma_matrix(sigma, d):
    matrix = np.eye(d) * float(sigma) if np.isscalar(sigma) else np.asarray(sigma, dtype=float)
    if matrix.shape != (d, d):
        raise ModelParameterError(f"sigma must be a scalar or a {d}x{d} matrix")
    if np.linalg.cond(matrix) > 1e12:
        raise ModelParameterError("sigma must be invertible")
    return matrix


def _constant_sigma(matrix):
    return lambda t, x: np.broadcast_to(matrix, (x.shape[0],) + matrix.shape)


def _soft_power(block, gamma, delta):
    """(|y|^2 + delta^2)^{gamma/2} row-wise; delta = 0 gives |y|^gamma."""
    return (np.sum(block * block, axis=1, keepdims=True) + delta * delta) ** (gamma / 2.0)


def _radial_power(block, gamma, delta):
    """block * (|y|^2 + delta^2)^{(gamma-1)/2} row-wise, taken as 0 where that base vanishes."""
    base = np.sum(block * block, axis=1, keepdims=True) + delta * delta
    safe = np.where(base > 0.0, base, 1.0)
    return np.where(base > 0.0, block * safe ** ((gamma - 1.0) / 2.0), 0.0)


def _quadratic_lyapunov(d1):
    return Lyapunov(
        value=lambda x: 1.0 + np.sum(x * x, axis=1),
        grad=lambda x: 2.0 * x,
        hess22=lambda x: np.broadcast_to(2.0 * np.eye(x.shape[1] - d1), (x.shape[0], x.shape[1] - d1, x.shape[1] - d1)),
    )


def _example_1_1(d=1, alpha=1.0, m=1, c1=1.0, c2=0.0, sigma=1.0, delta=0.0):
    if not 2.0 / 3.0 < alpha <= 1.0:
        raise ModelParameterError("alpha must lie in (2/3, 1]")
    if int(m) != m or m < 1:
        raise ModelParameterError("m must be a positive integer")
    if c1 <= 0.0 or c2 < 0.0 or delta < 0.0:
        raise ModelParameterError("need c1 > 0, c2 >= 0 and delta >= 0")
    m = int(m)
    S = _sigma_matrix(sigma, d)

    def b1(t, x):
        return x[:, d:]

    def b2(t, x):
        y = x[:, :d]
        return -c1 * (alpha + 1.0) * _radial_power(y, alpha, delta)

    def a(t, x):
        y = x[:, :d]
        r = np.sqrt(np.sum(y * y, axis=1, keepdims=True))
        out = np.zeros_like(x)
        out[:, d:] = -c2 * (m + 1.0) * y * r ** (m - 1)
        return out

    def H(x):
        y, v = x[:, :d], x[:, d:]
        r = np.sqrt(np.sum(y * y, axis=1))
        soft = _soft_power(y, alpha + 1.0, delta)[:, 0] - delta ** (alpha + 1.0)
        return 1.0 + 0.5 * np.sum(v * v, axis=1) + c1 * soft + c2 * r ** (m + 1)

    def grad_H(x):
        y, v = x[:, :d], x[:, d:]
        r = np.sqrt(np.sum(y * y, axis=1, keepdims=True))
        g1 = c1 * (alpha + 1.0) * _radial_power(y, alpha, delta) + c2 * (m + 1.0) * y * r ** (m - 1)
        return np.concatenate([g1, v], axis=1)

    hess22 = lambda x: np.broadcast_to(np.eye(d), (x.shape[0], d, d))
    return SdeModel(
        d, d, b1, b2, _constant_sigma(S), a=a if c2 > 0.0 else None,
        lyapunov=Lyapunov(H, grad_H, hess22), eps_lyap=1.0, sigma_constant=True,
        regularity_meta={"alpha": alpha, "beta": 1.0, "modulus": "const(1)", "delta": delta},
        name="example_1_1",
    )


def _linear(d1=1, d2=1, B=1.0, sigma=1.0):
    Bm = np.eye(d1, d2) * float(B) if np.isscalar(B) else np.asarray(B, dtype=float)
    if Bm.shape != (d1, d2):
        raise ModelParameterError(f"B must be a scalar or a {d1}x{d2} matrix")
    S = _sigma_matrix(sigma, d2)
    D = d1 + d2
    jac = np.zeros((D, D))
    jac[:d1, d1:] = Bm
    return SdeModel(
        d1, d2,
        b1=lambda t, x: x[:, d1:] @ Bm.T,
        b2=lambda t, x: np.zeros((x.shape[0], d2)),
        sigma=_constant_sigma(S),
        lyapunov=_quadratic_lyapunov(d1),
        drift_jacobian=lambda t, x: np.broadcast_to(jac, (x.shape[0], D, D)),
        sigma_constant=True,
        regularity_meta={"alpha": 1.0, "beta": 1.0, "modulus": "const(1)"},
        linear_coefficients=(Bm, S),
        name="linear",
    )


def _holder_drift(d=1, gamma=2.0 / 3.0, c=1.0, delta=0.0, sigma=1.0):
    if not 0.0 < gamma <= 1.0 or delta < 0.0:
        raise ModelParameterError("need gamma in (0, 1] and delta >= 0")
    S = _sigma_matrix(sigma, d)
    return SdeModel(
        d, d,
        b1=lambda t, x: x[:, d:],
        b2=lambda t, x: -x[:, :d] + c * _soft_power(x[:, :d], gamma, delta),
        sigma=_constant_sigma(S),
        lyapunov=_quadratic_lyapunov(d),
        eps_lyap=1.0,
        sigma_constant=True,
        regularity_meta={"alpha": gamma, "beta": 1.0, "modulus": "const(1)", "delta": delta},
        name="holder_drift",
    )


def _integral_drift(d=1, gamma=2.0 / 3.0, c=1.0, delta=0.0, sigma=1.0):
    """dX = (b(X) + int_0^t sigma(X_s) dW_s) dt lifted to (X, int sigma dW)."""
    if delta < 0.0 or not 0.0 < gamma <= 1.0:
        raise ModelParameterError("need gamma in (0, 1] and delta >= 0")
    S = _sigma_matrix(sigma, d)

    def sig(t, x):
        y = x[:, :d]
        amp = 1.0 + 0.5 / (1.0 + np.sum(y * y, axis=1))
        return amp[:, None, None] * S

    return SdeModel(
        d, d,
        b1=lambda t, x: -x[:, :d] + c * _soft_power(x[:, :d], gamma, delta) + x[:, d:],
        b2=lambda t, x: np.zeros((x.shape[0], d)),
        sigma=sig,
        lyapunov=_quadratic_lyapunov(d),
        regularity_meta={"alpha": gamma, "beta": 1.0, "modulus": "const(1)", "delta": delta},
        name="integral_drift",
    )


def _delay_sde(d=1, sigma=1.0, damping=1.0):
    """dY = b2(int_0^t b1(Y_s) ds, Y_t) dt + sigma dW with X1 = int b1(Y), X2 = Y."""
    S = _sigma_matrix(sigma, d)
    return SdeModel(
        d, d,
        b1=lambda t, x: x[:, d:] + 0.5 * np.sin(x[:, d:]),
        b2=lambda t, x: -x[:, :d] - damping * x[:, d:],
        sigma=_constant_sigma(S),
        lyapunov=_quadratic_lyapunov(d),
        sigma_constant=True,
        regularity_meta={"alpha": 1.0, "beta": 1.0, "modulus": "const(1)"},
        name="delay_sde",
    )


def _nondegenerate(d=1, gamma=0.5, c=1.0, delta=0.0, sigma=1.0):
    """dX = b(X) dt + sigma dW lifted to (int_0^t X_s ds, X)."""
    if delta < 0.0 or not 0.0 < gamma <= 1.0:
        raise ModelParameterError("need gamma in (0, 1] and delta >= 0")
    S = _sigma_matrix(sigma, d)
    return SdeModel(
        d, d,
        b1=lambda t, x: x[:, d:],
        b2=lambda t, x: -x[:, d:] + c * _soft_power(x[:, d:], gamma, delta),
        sigma=_constant_sigma(S),
        lyapunov=_quadratic_lyapunov(d),
        sigma_constant=True,
        regularity_meta={"alpha": 1.0, "beta": gamma, "modulus": f"pow({gamma})", "delta": delta},
        name="nondegenerate",
    )


_BUILDERS = {
    "example_1_1": _example_1_1,
    "integral_drift": _integral_drift,
    "delay_sde": _delay_sde,
    "linear": _linear,
    "nondegenerate": _nondegenerate,
    "holder_drift": _holder_drift,
}


def preset(name, **params):
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ModelParameterError(f"unknown preset {name!r}; choose one of {PRESETS}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ModelParameterError(f"invalid parameters for {name}: {exc}") from None


# ---------------------------------------------------------------------------
# diagnostics


def phase_grid(d1, d2, radius=10.0, n=21):
    axes = [np.linspace(-radius, radius, n)] * (d1 + d2)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class LyapunovReport(NamedTuple):
    generator_ratio: float
    hessian_ratio: float
    min_H: float
    sandwich: tuple
    finite: bool


def lyapunov_check(model, grid, times=(0.0,), eps=None):
    """Grid maxima of L H / H and |grad^(2) H|^2 / H^(2 - eps), plus radial growth exponents."""
    if model.lyapunov is None:
        raise ModelParameterError(f"model {model.name} has no Lyapunov function")
    eps = model.eps_lyap if eps is None else eps
    grid = np.asarray(grid, dtype=float)
    H = model.lyapunov.value(grid)
    gen = max(float(np.max(model.generator_of_h(t, grid) / H)) for t in times)
    g2 = model.lyapunov.grad(grid)[:, model.d1:]
    hess = float(np.max(np.sum(g2 * g2, axis=1) / H ** (2.0 - eps)))

    radii = np.logspace(0.0, 2.0, 20)
    slopes = []
    directions = list(np.eye(model.dim)) + [np.ones(model.dim) / math.sqrt(model.dim)]
    for e in directions:
        values = model.lyapunov.value(radii[:, None] * e[None, :])
        slopes.append(stats.linregress(np.log1p(radii), np.log(values)).slope)
    report = LyapunovReport(gen, hess, float(np.min(H)), (float(min(slopes)), float(max(slopes))),
                            bool(np.isfinite(gen) and np.isfinite(hess) and np.min(H) >= 1.0))
    logger.info(f"lyapunov {model.name}: LH/H <= {gen:.4g}, |grad2 H|^2/H^(2-eps) <= {hess:.4g}")
    return report


class MomentEstimate(NamedTuple):
    estimate: float
    stderr: float
    cap_hit_rate: float
    quantiles: tuple
    blowup_rate: float


def moment_diag(model, x0, T, eps_prime, N=10_000, seed=0, h=None, cap=50.0, shards=1, driver=None):
    """MC estimate of E exp(min(cap, sup_t H(X_t)^eps'))."""
    if model.lyapunov is None:
        raise ModelParameterError(f"model {model.name} has no Lyapunov function")
    if not 0.0 < eps_prime < model.eps_lyap:
        raise ModelParameterError("eps_prime must lie in (0, eps_lyap)")
    h = h or T / 256
    driver = driver or BrownianDriver(seed, T, h, N, model.d2, shards, purpose="sde.moment")
    path = integrate(model, x0, h, T, driver)
    P, n1, D = path.states.shape
    H = model.lyapunov.value(path.states.reshape(-1, D)).reshape(P, n1)
    sup_h = np.where(path.flags, np.inf, np.nanmax(np.where(np.isnan(H), -np.inf, H), axis=1))
    exponent = np.minimum(cap, sup_h ** eps_prime)
    mean, se = rng.mean_and_stderr(np.exp(exponent))
    finite = sup_h[np.isfinite(sup_h)]
    quantiles = tuple(float(q) for q in np.quantile(finite, [0.05, 0.5, 0.95])) if finite.size else (math.inf,) * 3
    return MomentEstimate(float(mean), float(se), float(np.mean(sup_h ** eps_prime >= cap)), quantiles, path.flag_rate)


class StabilityReport(NamedTuple):
    rows: list
    monotone: bool
    reference_k: int


def _sup_distance(a, b):
    diff = np.linalg.norm(a.states - b.states, axis=2)
    out = np.max(np.where(np.isnan(diff), np.inf, diff), axis=1)
    return out


def stability_experiment(family, x0, T, eps, N=2000, k_list=range(1, 9), h=None, seed=0, shards=1):
    """Exceedance probabilities P(sup_t |X^k - X^ref| >= eps) on shared drivers.

    The member k_max + 2 stands in for the limit.
    """
    k_list = list(k_list)
    if k_list != sorted(k_list):
        raise ParameterError("k_list must be ascending")
    h = h or T / 256
    ref_k = k_list[-1] + 2
    reference = family(ref_k)
    driver = BrownianDriver(seed, T, h, N, reference.d2, shards, purpose="sde.stability")
    ref_path = integrate(reference, x0, h, T, driver)
    rows = []
    for k in k_list:
        path = integrate(family(k), x0, h, T, driver)
        hit = _sup_distance(path, ref_path) >= eps
        p = float(np.mean(hit))
        rows.append((k, p, math.sqrt(p * (1.0 - p) / N), path.flag_rate))
    monotone = all(b[1] <= a[1] + 2.0 * max(a[2], b[2]) for a, b in zip(rows, rows[1:]))
    logger.info(f"stability ladder vs k={ref_k}: " + ", ".join(f"{k}:{p:.4f}" for k, p, _, _ in rows))
    return StabilityReport(rows, monotone, ref_k)


class GapReport(NamedTuple):
    rows: list
    order: float
    decreasing: bool


def pathwise_gap(model, x0, T, driver, h_ladder):
    """E sup_t |X^h_t - X^{h/2}_t| over the coarse times, per rung of a dyadic ladder."""
    h_ladder = sorted(h_ladder, reverse=True)
    rows = []
    for h in h_ladder:
        coarse = integrate(model, x0, h, T, driver)
        fine = integrate(model, x0, h / 2.0, T, driver)
        diff = np.linalg.norm(coarse.states - fine.states[:, ::2], axis=2)
        gap = np.max(np.where(np.isnan(diff), np.inf, diff), axis=1)
        mean, se = rng.mean_and_stderr(gap)
        rows.append((h, float(mean), float(se)))
    positive = [(h, g) for h, g, _ in rows if g > 0.0 and np.isfinite(g)]
    order = math.nan
    if len(positive) >= 2:
        order = float(stats.linregress(np.log([p[0] for p in positive]), np.log([p[1] for p in positive])).slope)
    decreasing = all(b[1] <= a[1] for a, b in zip(rows, rows[1:]))
    return GapReport(rows, order, decreasing)
