"""Monte-Carlo Zvonkin transform Phi(x) = x + u_tau(x).

For a time-homogeneous model, u_tau(x) = int_0^tau exp(-lam r) E f(X_r(x)) dr.
Each simulated path serves every tau on the ladder through one cumulative
trapezoid sum, and every grid point reuses the same Brownian driver.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats
from scipy.interpolate import RegularGridInterpolator

from . import rng
from .errors import HullError, ParameterError, TransformError
from .sde_lab import BrownianDriver, integrate

logger = logging.getLogger(__name__)

CONTRACTION_LIMIT = 0.5
INVERSE_TOL = 1e-10
INVERSE_MAX_ITER = 200
FD_STEP = 1e-6
DRIVER_PURPOSE = "zvonkin.driver"


def drift_source(model):
    """The drift b = (b1, b2), without the extra term a."""
    return lambda t, x: np.concatenate([model.b1(t, x), model.b2(t, x)], axis=1)


def _source_jacobian(f, x):
    cols = []
    for m in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[m] = FD_STEP
        cols.append((f(0.0, x + e) - f(0.0, x - e)) / (2.0 * FD_STEP))
    return np.stack(cols, axis=2)


def mesh(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class TransformField:
    T: float
    lam: float
    axes: tuple
    taus: np.ndarray
    u: np.ndarray
    u_stderr: np.ndarray
    grad: Optional[np.ndarray] = None
    grad_stderr: Optional[np.ndarray] = None
    h: float = 0.0
    N: int = 0
    seed: int = 0
    shards: int = 1
    flag_rate: float = 0.0

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def points(self):
        return mesh(self.axes)

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def contraction(self):
        if self.grad is None:
            return math.nan
        return float(np.max(np.linalg.norm(self.grad, ord=2, axis=(-2, -1))))

    def tau_index(self, tau=None):
        if tau is None:
            return len(self.taus) - 1
        idx = int(np.argmin(np.abs(self.taus - tau)))
        if abs(self.taus[idx] - tau) > 1e-9:
            raise ParameterError(f"tau={tau} is not on the stored ladder {list(self.taus)}")
        return idx

    def in_hull(self, points):
        points = np.atleast_2d(points)
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return np.all((points >= lo - 1e-12) & (points <= hi + 1e-12), axis=1)

    def _interp(self, table, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.in_hull(points)):
            raise HullError("evaluation point outside the interpolation hull")
        tail = table.shape[1:]
        grid_values = table.reshape(self.shape + tail)
        return RegularGridInterpolator(self.axes, grid_values, method="linear")(points)

    def evaluate(self, points, tau=None):
        return self._interp(self.u[self.tau_index(tau)], points)

    def evaluate_grad(self, points, tau=None):
        if self.grad is None:
            raise TransformError("gradient not computed; call grad_u first")
        return self._interp(self.grad[self.tau_index(tau)], points)

    @classmethod
    def from_function(cls, axes, fn, lam=1.0, T=1.0, grad_fn=None):
        """Field with u_T = fn on the grid; gradients from grad_fn or grid differences."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        pts = mesh(axes)
        u = np.asarray(fn(pts), dtype=float)
        if grad_fn is not None:
            grad = np.asarray(grad_fn(pts), dtype=float)
        else:
            shape = tuple(len(a) for a in axes)
            D = len(axes)
            grid_u = u.reshape(shape + (D,))
            grad = np.stack([np.gradient(grid_u, axes[m], axis=m) for m in range(D)], axis=-1).reshape(-1, D, D)
        return cls(float(T), float(lam), axes, np.array([float(T)]), u[None], np.zeros_like(u)[None],
                   grad[None], np.zeros_like(grad)[None])

    def to_text(self):
        lines = [f"{self.T!r} {self.lam!r} {self.dim} {len(self.taus)} {self.h!r} {self.N} {self.seed} {self.shards}"]
        lines += [" ".join(repr(float(v)) for v in axis) for axis in self.axes]
        lines.append(" ".join(repr(float(v)) for v in self.taus))
        has_grad = self.grad is not None
        lines.append("grad" if has_grad else "nograd")
        for k in range(len(self.taus)):
            for i in range(self.u.shape[1]):
                row = list(self.u[k, i]) + list(self.u_stderr[k, i])
                if has_grad:
                    row += list(self.grad[k, i].ravel()) + list(self.grad_stderr[k, i].ravel())
                lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.strip().splitlines()
        T, lam, D, n_tau, h, N, seed, shards = lines[0].split()
        D, n_tau = int(D), int(n_tau)
        axes = tuple(np.array([float(v) for v in lines[1 + m].split()]) for m in range(D))
        taus = np.array([float(v) for v in lines[1 + D].split()])
        has_grad = lines[2 + D].strip() == "grad"
        M = int(np.prod([len(a) for a in axes]))
        table = np.array([[float(v) for v in line.split()] for line in lines[3 + D:]]).reshape(n_tau, M, -1)
        u, u_se = table[..., :D], table[..., D:2 * D]
        grad = grad_se = None
        if has_grad:
            grad = table[..., 2 * D:2 * D + D * D].reshape(n_tau, M, D, D)
            grad_se = table[..., 2 * D + D * D:].reshape(n_tau, M, D, D)
        return cls(float(T), float(lam), axes, taus, u, u_se, grad, grad_se,
                   float(h), int(N), int(seed), int(shards))


# ---------------------------------------------------------------------------
# Monte-Carlo evaluation


def transport_model(model):
    """The model with a removed; u solves the equation driven by b alone."""
    return model if model.a is None else replace(model, a=None, drift_jacobian=None)


def _path_integrals(model, f, x0, lams, T, h, driver, tau_idx, with_jacobian=False):
    """Per-path values of int_0^tau exp(-lam r) f(X_r) dr, shape (L, P, n_tau, D[, D])."""
    path = integrate(transport_model(model), x0, h, T, driver, with_jacobian=with_jacobian)
    P, n1, D = path.states.shape
    flat = path.states.reshape(-1, D)
    safe = np.nan_to_num(flat)
    if with_jacobian:
        J = np.nan_to_num(path.jacobian).reshape(-1, D, D)
        values = (_source_jacobian(f, safe) @ J).reshape(P, n1, D, D)
    else:
        values = f(0.0, safe).reshape(P, n1, D)
    out = []
    for lam in lams:
        weight = np.exp(-lam * path.times).reshape((1, n1) + (1,) * (values.ndim - 2))
        cum = sp_integrate.cumulative_trapezoid(weight * values, path.times, axis=1, initial=0.0)
        out.append(cum[:, tau_idx])
    return np.stack(out), path.flags


def _ladder_indices(taus, T, h):
    taus = np.atleast_1d(np.asarray(taus if taus is not None else [T], dtype=float))
    idx = np.rint(taus / h).astype(int)
    if np.any(np.abs(idx * h - taus) > 1e-9) or np.any(taus < 0.0) or np.any(taus > T + 1e-12):
        raise ParameterError("ladder times must be multiples of h inside [0, T]")
    return taus, idx


def _driver(seed, T, h, N, d2, shards):
    return BrownianDriver(seed, T, h, N, d2, shards, purpose=DRIVER_PURPOSE)


def solve_u(model, lam, T, grid_axes, h=None, N=1000, seed=0, shards=1, time_ladder=None, f=None):
    """Nested MC for u on a tensor grid; one shared driver serves all grid points."""
    if lam <= 0.0:
        raise ParameterError("lambda must be positive")
    h = h or T / 128
    f = f or drift_source(model)
    axes = tuple(np.asarray(a, dtype=float) for a in grid_axes)
    if len(axes) != model.dim:
        raise ParameterError(f"need {model.dim} grid axes")
    taus, tau_idx = _ladder_indices(time_ladder, T, h)
    driver = _driver(seed, T, h, N, model.d2, shards)
    points = mesh(axes)
    u = np.zeros((len(taus), len(points), model.dim))
    se = np.zeros_like(u)
    flagged = 0
    for i, x in enumerate(points):
        values, flags = _path_integrals(model, f, x, [lam], T, h, driver, tau_idx)
        flagged += int(np.count_nonzero(flags))
        mean, err = rng.mean_and_stderr(values[0][~flags])
        u[:, i], se[:, i] = mean, err
    flag_rate = flagged / (len(points) * N)
    if flagged:
        logger.warning(f"solve_u: {flagged} blown-up paths excluded ({flag_rate:.2%})")
    logger.info(f"solve_u lam={lam} on {len(points)} points, N={N}, h={h}")
    return TransformField(float(T), float(lam), axes, taus, u, se, None, None, float(h), int(N), int(seed), int(shards), flag_rate)


def evaluate_u(model, lam, T, points, h=None, N=1000, seed=0, shards=1, f=None):
    """Per-point MC of u_T at scattered points, on the same shared driver as ``solve_u``.

    Returns (u, stderr), each of shape (len(points), dim).
    """
    if lam <= 0.0:
        raise ParameterError("lambda must be positive")
    h = h or T / 128
    f = f or drift_source(model)
    _, tau_idx = _ladder_indices(None, T, h)
    driver = _driver(seed, T, h, N, model.d2, shards)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    u = np.zeros((len(points), model.dim))
    se = np.zeros_like(u)
    for i, x in enumerate(points):
        values, flags = _path_integrals(model, f, x, [lam], T, h, driver, tau_idx)
        mean, err = rng.mean_and_stderr(values[0][~flags])
        u[i], se[i] = mean[0], err[0]
    return u, se


def _crn_gradient(model, f, x, lams, T, h, driver, tau_idx, eps):
    """Central differences with common random numbers, shape (L, n_tau, D, D) plus stderr."""
    D = model.dim
    L = len(lams)
    grad = np.zeros((L, len(tau_idx), D, D))
    se = np.zeros_like(grad)
    for m in range(D):
        e = np.zeros(D)
        e[m] = eps[m]
        plus, fp = _path_integrals(model, f, x + e, lams, T, h, driver, tau_idx)
        minus, fm = _path_integrals(model, f, x - e, lams, T, h, driver, tau_idx)
        keep = ~(fp | fm)
        diff = (plus[:, keep] - minus[:, keep]) / (2.0 * eps[m])
        for k in range(L):
            mean, err = rng.mean_and_stderr(diff[k])
            grad[k, :, :, m], se[k, :, :, m] = mean, err
    return grad, se


def grad_u(field, model, method="crn_fd", f=None):
    """Populate grad with crn_fd (step = half the grid spacing) or jacobian_flow estimates."""
    f = f or drift_source(model)
    taus, tau_idx = _ladder_indices(field.taus, field.T, field.h)
    driver = _driver(field.seed, field.T, field.h, field.N, model.d2, field.shards)
    points = field.points
    D = field.dim
    grad = np.zeros((len(taus), len(points), D, D))
    se = np.zeros_like(grad)
    for i, x in enumerate(points):
        if method == "crn_fd":
            g, s = _crn_gradient(model, f, x, [field.lam], field.T, field.h, driver, tau_idx, field.spacing / 2.0)
            grad[:, i], se[:, i] = g[0], s[0]
        elif method == "jacobian_flow":
            values, flags = _path_integrals(model, f, x, [field.lam], field.T, field.h, driver, tau_idx, with_jacobian=True)
            grad[:, i], se[:, i] = rng.mean_and_stderr(values[0][~flags])
        else:
            raise ParameterError(f"unknown gradient method {method!r}")
    out = replace(field, grad=grad, grad_stderr=se)
    contraction = out.contraction
    if float(np.max(se)) > 0.1 * contraction:
        logger.warning(f"gradient stderr {float(np.max(se)):.3g} exceeds 0.1 x contraction {contraction:.3g}; increase N")
    return out


class SweepReport(NamedTuple):
    rows: list
    monotone: bool
    threshold: Optional[float]


def lambda_sweep(model, lambdas, T, points, h=None, N=1000, seed=0, shards=1, eps=0.05, f=None):
    """Contraction of grad u along an ascending lambda ladder; one simulation serves every lambda."""
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 4 or lambdas != sorted(lambdas) or lambdas[-1] / lambdas[0] < 100.0:
        raise ParameterError("need at least 4 ascending lambdas spanning two decades")
    h = h or T / 128
    f = f or drift_source(model)
    _, tau_idx = _ladder_indices(None, T, h)
    driver = _driver(seed, T, h, N, model.d2, shards)
    eps = np.full(model.dim, eps)
    best = np.zeros(len(lambdas))
    best_se = np.zeros(len(lambdas))
    for x in np.atleast_2d(points):
        grad, se = _crn_gradient(model, f, np.asarray(x, dtype=float), lambdas, T, h, driver, tau_idx, eps)
        norms = np.linalg.norm(grad[:, 0], ord=2, axis=(-2, -1))
        for k in range(len(lambdas)):
            if norms[k] > best[k]:
                best[k] = norms[k]
                best_se[k] = float(np.linalg.norm(se[k, 0]))
    rows = [(lam, float(c), float(s)) for lam, c, s in zip(lambdas, best, best_se)]
    monotone = all(b[1] <= a[1] + 2.0 * max(a[2], b[2]) for a, b in zip(rows, rows[1:]))
    threshold = next((lam for lam, c, _ in rows if c < CONTRACTION_LIMIT), None)
    logger.info(f"lambda sweep: " + ", ".join(f"{lam:g}:{c:.4f}" for lam, c, _ in rows) + f"; threshold {threshold}")
    return SweepReport(rows, monotone, threshold)


def envelope_integral(phi, lam, T):
    """int_0^T exp(-lam r) phi(sqrt r) / r dr, integrated with r = exp(-v)."""
    lo = -math.log(T)
    fn = lambda v: math.exp(-lam * math.exp(-v)) * float(phi.at_log_scale(np.array([v / 2.0]))[0])
    value, _ = sp_integrate.quad(fn, lo, math.inf, limit=400)
    return value


def envelope_slope(phi, lambdas, T=1.0):
    values = [envelope_integral(phi, lam, T) for lam in lambdas]
    return float(stats.linregress(np.log(lambdas), np.log(values)).slope), values


# ---------------------------------------------------------------------------
# transform, inverse and transformed coefficients


class Transform:
    """Phi = id + u_tau with its fixed-point inverse; requires contraction < 1/2."""

    def __init__(self, field, tau=None, omega=1.0):
        contraction = field.contraction
        if not contraction < CONTRACTION_LIMIT:
            raise TransformError(f"contraction {contraction:.4g} is not below {CONTRACTION_LIMIT}; raise lambda")
        if not 0.0 < omega <= 1.0:
            raise ParameterError("damping omega must lie in (0, 1]")
        self.field = field
        self.tau = field.taus[field.tau_index(tau)]
        self.omega = omega
        self.contraction = contraction

    def u(self, points):
        return self.field.evaluate(points, self.tau)

    def forward(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return points + self.u(points)

    def inverse(self, points):
        z = np.atleast_2d(np.asarray(points, dtype=float))
        y = z.copy()
        for it in range(INVERSE_MAX_ITER):
            if not np.all(self.field.in_hull(y)):
                raise HullError("inverse iterate left the interpolation hull")
            residual = y + self.u(y) - z
            if float(np.max(np.abs(residual))) < INVERSE_TOL:
                return y
            y = y - self.omega * residual
        raise TransformError(f"fixed-point inverse did not reach {INVERSE_TOL} in {INVERSE_MAX_ITER} iterations")

    def jacobian(self, points):
        return np.eye(self.field.dim) + self.field.evaluate_grad(points, self.tau)


def build_transform(field, tau=None, omega=1.0):
    return Transform(field, tau, omega)


class TransformedCoefficients(NamedTuple):
    g: Callable
    theta: Callable


def transformed_coeffs(model, transform):
    """g(y) = (lam u + grad Phi . a)(Phi^-1 y) and Theta(y) = (grad^(2) Phi sigma)(Phi^-1 y)."""
    lam = transform.field.lam
    d1 = model.d1

    def g(y):
        x = transform.inverse(y)
        out = lam * transform.u(x)
        if model.a is not None:
            out = out + np.einsum("pij,pj->pi", transform.jacobian(x), model.a(0.0, x))
        return out

    def theta(y):
        x = transform.inverse(y)
        return transform.jacobian(x)[:, :, d1:] @ model.sigma(0.0, x)

    return TransformedCoefficients(g, theta)


class LipschitzProfile(NamedTuple):
    rows: list
    slope: float


def lipschitz_probe(fn, origin, direction, scales, offsets=9):
    """L(r) = max |fn(x + r e) - fn(x)| / r over base points x = origin + j r/4 e, |j| <= offsets//2."""
    origin = np.asarray(origin, dtype=float)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    js = np.arange(offsets) - offsets // 2
    rows = []
    for r in sorted(scales, reverse=True):
        base = origin[None, :] + (js * r / 4.0)[:, None] * e[None, :]
        diff = np.asarray(fn(base + r * e[None, :]), dtype=float) - np.asarray(fn(base), dtype=float)
        diff = diff.reshape(len(js), -1)
        rows.append((float(r), float(np.max(np.linalg.norm(diff, axis=1))) / r))
    slope = float(stats.linregress(np.log([r for r, _ in rows]), np.log([v for _, v in rows])).slope)
    return LipschitzProfile(rows, slope)
