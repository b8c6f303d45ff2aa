"""Heat-semigroup probes on 1D and 2D grid functions.

P_theta f is a separable discrete convolution with the Gaussian kernel and
its analytic theta/space derivatives, truncated at 8 sqrt(theta). Grids are
padded by linear extrapolation, so affine functions stay exactly affine.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate, ndimage, stats

from .errors import DimensionError, GridMismatchError, ParameterError, ResolutionError
from .modulus import Product, bar_modulus

logger = logging.getLogger(__name__)

TRUNCATION = 8.0
MAX_2D_POINTS = 1025
COARSE_1D = 257
COARSE_2D = 33
FINE_OFFSETS = 64
GROWTH_TAGS = ("bounded", "polynomial")


@dataclass(frozen=True)
class GridFunction:
    dim: int
    n: int
    L: float
    values: np.ndarray
    growth_tag: str = "bounded"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.dim not in (1, 2):
            raise DimensionError(f"grid functions are 1D or 2D, got dim={self.dim}")
        if self.n < 129 or self.n % 2 == 0:
            raise ParameterError("n must be odd and at least 129")
        if self.dim == 2 and self.n > MAX_2D_POINTS:
            raise ParameterError(f"2D grids are capped at {MAX_2D_POINTS} points per axis")
        if values.shape != (self.n,) * self.dim:
            raise ParameterError(f"values must have shape {(self.n,) * self.dim}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("grid values must be finite")
        if self.growth_tag not in GROWTH_TAGS:
            raise ParameterError(f"growth_tag must be one of {GROWTH_TAGS}")
        object.__setattr__(self, "values", values)

    @property
    def x(self):
        return np.linspace(-self.L, self.L, self.n)

    @property
    def dx(self):
        return 2.0 * self.L / (self.n - 1)

    @classmethod
    def from_function(cls, fn, dim=1, n=1025, L=2.0, growth_tag="bounded"):
        x = np.linspace(-L, L, n)
        if dim == 1:
            return cls(1, n, L, fn(x), growth_tag)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return cls(2, n, L, fn(X1, X2), growth_tag)

    def with_values(self, values):
        return GridFunction(self.dim, self.n, self.L, values, self.growth_tag)

    def same_grid(self, other):
        return self.dim == other.dim and self.n == other.n and self.L == other.L

    def to_text(self):
        header = f"{self.dim} {self.n} {self.L!r} {self.growth_tag}"
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(self.values))
        return f"{header}\n{body}\n"

    @classmethod
    def from_text(cls, text):
        lines = text.strip().splitlines()
        dim, n, L, tag = lines[0].split()
        values = np.array([float(v) for line in lines[1:] for v in line.split()])
        n = int(n)
        return cls(int(dim), n, float(L), values.reshape((n,) * int(dim)), tag)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# kernels


def _kernel_1d(theta, dx, k, j):
    """Quadrature weights of d^k/dz^k d^j/dtheta^j p_theta on the grid offsets."""
    m = int(math.ceil(TRUNCATION * math.sqrt(theta) / dx))
    z = dx * np.arange(-m, m + 1)
    p = np.exp(-z * z / (2.0 * theta)) / math.sqrt(2.0 * math.pi * theta)
    if (k, j) == (0, 0):
        w = p
    elif (k, j) == (0, 1):
        w = p * (z * z / (2.0 * theta ** 2) - 1.0 / (2.0 * theta))
    elif (k, j) == (1, 0):
        w = -(z / theta) * p
    elif (k, j) == (1, 1):
        w = p * z * (1.5 / theta ** 2 - z * z / (2.0 * theta ** 3))
    else:
        raise ParameterError("k and j must be 0 or 1")
    return w * dx, m


def _pad_linear(values, m, axis):
    values = np.moveaxis(values, axis, 0)
    steps = np.arange(1, m + 1, dtype=float).reshape((-1,) + (1,) * (values.ndim - 1))
    left = values[0] + (values[0] - values[1]) * steps[::-1]
    right = values[-1] + (values[-1] - values[-2]) * steps
    return np.moveaxis(np.concatenate([left, values, right]), 0, axis)


def _pass(values, weights, m, axis):
    padded = _pad_linear(values, m, axis)
    out = ndimage.convolve1d(padded, weights, axis=axis, mode="constant")
    return np.take(out, np.arange(m, m + values.shape[axis]), axis=axis)


def _guard(f, theta):
    if not 0.0 < theta <= 1.0:
        raise ParameterError("theta must lie in (0, 1]")
    if math.sqrt(theta) < 2.0 * f.dx:
        raise ResolutionError(f"sqrt(theta)={math.sqrt(theta):.4g} below twice the grid spacing {f.dx:.4g}")


def heat_apply(f, theta, k=0, j=0, axis=0):
    """grad^k d_theta^j P_theta f; in 2D ``axis`` picks the gradient component."""
    _guard(f, theta)
    if f.dim == 1:
        w, m = _kernel_1d(theta, f.dx, k, j)
        return f.with_values(_pass(f.values, w, m, 0))

    def separable(k_axes, j_axes):
        out = f.values
        for ax in (0, 1):
            w, m = _kernel_1d(theta, f.dx, k_axes[ax], j_axes[ax])
            out = _pass(out, w, m, ax)
        return out

    ks = [0, 0]
    ks[axis] = k
    if j == 0:
        return f.with_values(separable(ks, (0, 0)))
    # d_theta of a product kernel is the sum of the axis-wise theta derivatives
    return f.with_values(separable(ks, (1, 0)) + separable(ks, (0, 1)))


def axis_heat_apply(f, theta, axis, k=0, j=0):
    """Heat semigroup acting on x1 (axis=1) or x2 (axis=2) alone."""
    if f.dim != 2:
        raise DimensionError("axis-wise operators need a 2D grid")
    if axis not in (1, 2):
        raise ParameterError("axis must be 1 or 2")
    _guard(f, theta)
    w, m = _kernel_1d(theta, f.dx, k, j)
    return f.with_values(_pass(f.values, w, m, axis - 1))


# ---------------------------------------------------------------------------
# seminorms


def _coarse_indices(n, size):
    c = (n - 1) // 2
    stride = max(1, int(math.ceil((n - 1) / (size - 1))))
    half = np.arange(0, c + 1, stride)
    return np.unique(np.concatenate([c - half, c + half])), stride


def _offset_scan(values, dx, psi, offsets, axis):
    best = 0.0
    n = values.shape[axis]
    for o in offsets:
        if o >= n or o * dx > 1.0 + 1e-12:
            continue
        a = np.take(values, np.arange(o, n), axis=axis)
        b = np.take(values, np.arange(0, n - o), axis=axis)
        best = max(best, float(np.max(np.abs(a - b))) / psi(o * dx))
    return best


def _pair_max(points, values, psi, other_points=None, other_values=None):
    """max |f(p) - f(q)| / psi(|p - q|) over pairs with 0 < |p - q| <= 1."""
    q_pts = points if other_points is None else other_points
    q_val = values if other_values is None else other_values
    dist = np.linalg.norm(points[:, None, :] - q_pts[None, :, :], axis=-1)
    ok = (dist > 0.0) & (dist <= 1.0 + 1e-12)
    if not np.any(ok):
        return 0.0, None
    ratio = np.zeros_like(dist)
    ratio[ok] = np.abs(values[:, None] - q_val[None, :])[ok] / psi(dist[ok])
    flat = int(np.argmax(ratio))
    i, jdx = np.unravel_index(flat, ratio.shape)
    return float(ratio[i, jdx]), (i, jdx)


def seminorm(f, psi):
    """[f]_psi = sup_{0<|x-y|<=1} |f(x) - f(y)| / psi(|x - y|), by a two-scale search."""
    x = f.x
    if f.dim == 1:
        idx, stride = _coarse_indices(f.n, COARSE_1D)
        pts = x[idx][:, None]
        best, arg = _pair_max(pts, f.values[idx], psi)
        best = max(best, _offset_scan(f.values, f.dx, psi, range(1, FINE_OFFSETS + 1), 0))
        if arg is not None:
            a, b = idx[arg[0]], idx[arg[1]]
            wa = np.arange(max(a - stride, 0), min(a + stride, f.n - 1) + 1)
            wb = np.arange(max(b - stride, 0), min(b + stride, f.n - 1) + 1)
            local, _ = _pair_max(x[wa][:, None], f.values[wa], psi, x[wb][:, None], f.values[wb])
            best = max(best, local)
        return best

    idx, stride = _coarse_indices(f.n, COARSE_2D)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    pts = np.stack([x[I].ravel(), x[J].ravel()], axis=1)
    best, arg = _pair_max(pts, f.values[I, J].ravel(), psi)
    small = range(0, 9)
    for o1 in small:
        for o2 in small:
            if (o1, o2) == (0, 0):
                continue
            for s2 in ((1, -1) if o1 and o2 else (1,)):
                d = f.dx * math.hypot(o1, o2)
                if d > 1.0:
                    continue
                a = f.values[o1:, max(s2 * o2, 0):f.n + min(s2 * o2, 0)]
                b = f.values[:f.n - o1, max(-s2 * o2, 0):f.n + min(-s2 * o2, 0)]
                best = max(best, float(np.max(np.abs(a - b))) / psi(d))
    if arg is not None:
        windows = []
        for p in arg:
            ci, cj = I.ravel()[p], J.ravel()[p]
            wi = np.arange(max(ci - stride, 0), min(ci + stride, f.n - 1) + 1)
            wj = np.arange(max(cj - stride, 0), min(cj + stride, f.n - 1) + 1)
            WI, WJ = np.meshgrid(wi, wj, indexing="ij")
            windows.append((np.stack([x[WI].ravel(), x[WJ].ravel()], axis=1), f.values[WI, WJ].ravel()))
        local, _ = _pair_max(windows[0][0], windows[0][1], psi, windows[1][0], windows[1][1])
        best = max(best, local)
    return best


def axis_seminorm(f, psi, axis):
    """[f]_{psi,inf} (axis=1) or [f]_{inf,psi} (axis=2): increments along one axis, sup over the other."""
    if f.dim != 2:
        raise DimensionError("axis-wise seminorms need a 2D grid")
    if axis not in (1, 2):
        raise ParameterError("axis must be 1 or 2")
    omax = min(f.n - 1, int(math.floor(1.0 / f.dx + 1e-9)))
    offsets = np.unique(np.concatenate([
        np.arange(1, min(FINE_OFFSETS, omax) + 1),
        np.arange(FINE_OFFSETS, omax + 1, max(1, omax // 256)),
    ]))
    return _offset_scan(f.values, f.dx, psi, offsets, axis - 1)


# ---------------------------------------------------------------------------
# modulus characterization and commutators


def default_theta_ladder(f, k_min=2):
    thetas = []
    k = k_min
    while math.sqrt(2.0 ** (-k)) >= 2.0 * f.dx:
        thetas.append(2.0 ** (-k))
        k += 1
    return thetas


class ModulusEstimate(NamedTuple):
    value: float
    sup_norm: float
    ladder: list
    slope: float
    diverges: bool


def modulus_estimate(f, phi, thetas=None):
    """||f||_inf + sup over the admissible ladder of theta ||d_theta P_theta f||_inf / phi(sqrt theta)."""
    thetas = default_theta_ladder(f) if thetas is None else list(thetas)
    ladder = []
    for theta in thetas:
        dtheta = heat_apply(f, theta, 0, 1).values
        ladder.append((theta, theta * float(np.max(np.abs(dtheta))) / phi(math.sqrt(theta))))
    sup_norm = float(np.max(np.abs(f.values)))
    terms = np.array([v for _, v in ladder])
    slope = 0.0
    positive = terms > 1e-300
    if np.count_nonzero(positive) >= 3:
        th = np.array([t for t, _ in ladder])[positive]
        slope = float(stats.linregress(np.log(th), np.log(terms[positive])).slope)
    diverges = slope < -0.1
    if diverges:
        logger.info(f"heat modulus term grows as theta decreases (slope {slope:.3f})")
    return ModulusEstimate(sup_norm + float(terms.max(initial=0.0)), sup_norm, ladder, slope, diverges)


class CommutatorResult(NamedTuple):
    F: GridFunction
    seminorm: float


def commutator(f, g, theta, psi):
    """F_theta = d_theta P_theta(f g) - f d_theta P_theta g and its psi-seminorm."""
    if not f.same_grid(g):
        raise GridMismatchError("commutator needs f and g on the same grid")
    F = heat_apply(f.with_values(f.values * g.values), theta, 0, 1).values
    F = F - f.values * heat_apply(g, theta, 0, 1).values
    out = f.with_values(F)
    return CommutatorResult(out, seminorm(out, psi))


class LadderReport(NamedTuple):
    rows: list
    median: float
    spread: float
    bounded: bool


def _ladder_report(rows, factor):
    implied = np.array([r[-1] for r in rows])
    median = float(np.median(implied))
    spread = float(max(implied.max() / median, median / implied.min())) if median > 0 else math.inf
    return LadderReport(rows, median, spread, spread <= factor)


def commutator_ladder(f, g, psi, phi, thetas, factor=3.0):
    """Implied constants [F_theta]_psi / ([f]_{psi phi} ||g||_inf theta^-1 phi(sqrt theta))."""
    f_norm = seminorm(f, Product(psi, phi))
    g_sup = float(np.max(np.abs(g.values)))
    rows = []
    for theta in thetas:
        result = commutator(f, g, theta, psi)
        scale = f_norm * g_sup * phi(math.sqrt(theta)) / theta
        rows.append((theta, result.seminorm, scale, result.seminorm / scale))
    return _ladder_report(rows, factor)


def anisotropic_commutator(f, g, theta, axis, psi):
    """Axis-wise commutator and both of its axis seminorms."""
    if not f.same_grid(g):
        raise GridMismatchError("commutator needs f and g on the same grid")
    F = axis_heat_apply(f.with_values(f.values * g.values), theta, axis, 0, 1).values
    F = F - f.values * axis_heat_apply(g, theta, axis, 0, 1).values
    out = f.with_values(F)
    return out, axis_seminorm(out, psi, 1), axis_seminorm(out, psi, 2)


def moment_bound_ladder(psi, beta, thetas, dim=1, factor=1.2):
    """int |z|^beta psi(|z|) p_theta(z) dz / (theta^{beta/2} psi(sqrt theta)) along a ladder."""
    if dim not in (1, 2):
        raise DimensionError("moment bounds are checked in dimension 1 or 2")
    rows = []
    for theta in thetas:
        st = math.sqrt(theta)
        # z = sqrt(theta) w puts the Gaussian at unit scale
        if dim == 1:
            fn = lambda w: 2.0 * (st * w) ** beta * psi(st * w) * math.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
        else:
            fn = lambda w: (st * w) ** beta * psi(st * w) * w * math.exp(-0.5 * w * w)
        value, _ = integrate.quad(fn, 0.0, math.inf, limit=200)
        rows.append((theta, value, theta ** (beta / 2.0) * psi(st), value / (theta ** (beta / 2.0) * psi(st))))
    return _ladder_report(rows, factor)


def gradient_bound_ladder(f, psi, thetas, k, j):
    """||grad^k d_theta^j P_theta f||_inf theta^{k/2+j} / psi(sqrt theta) along a ladder."""
    if k + j < 1:
        raise ParameterError("need at least one derivative")
    rows = []
    for theta in thetas:
        sup = float(np.max(np.abs(heat_apply(f, theta, k, j).values)))
        rows.append((theta, sup, theta ** (k / 2.0 + j) / psi(math.sqrt(theta))))
    return [(theta, sup, sup * w) for theta, sup, w in rows]


def bar_modulus_ladder(phi, ts):
    return [(t, bar_modulus(phi, t)) for t in ts]
