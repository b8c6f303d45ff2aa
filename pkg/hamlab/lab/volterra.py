"""Resolvent kernel a = sum a_n of the Dini convolution kernel a_1(t) = phi(t)/t.

Functions live on the nodes t_i = i*h, i = 1..n. The kernel enters only
through its cell masses: the first cell [0, h] is integrated exactly on the
log scale, the others by the midpoint rule.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import NotDiniError, ParameterError, ResolventDivergenceError
from .modulus import dini_integral

logger = logging.getLogger(__name__)

ITERATE_CAP = 200
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class KernelGrid:
    T: float
    n_steps: int
    phi: object
    masses: np.ndarray
    a1: np.ndarray
    iterates: list = field(repr=False)
    resolvent: np.ndarray = field(repr=False)
    residual: float = 0.0

    @property
    def h(self):
        return self.T / self.n_steps

    @property
    def t(self):
        return self.h * np.arange(1, self.n_steps + 1)

    @property
    def midpoints(self):
        return self.h * (np.arange(self.n_steps) + 0.5)

    def rows(self):
        ratio = self.resolvent / self.a1
        return [(float(t), float(a1), float(a), float(r)) for t, a1, a, r in zip(self.t, self.a1, self.resolvent, ratio)]


def _first_cell_mass(phi, h, lam=0.0):
    # int_0^h exp(-lam s) phi(s)/s ds with s = exp(-u)
    lo = -math.log(h)
    fn = lambda u: math.exp(-lam * math.exp(-u)) * float(phi.at_log_scale(np.array([u]))[0])
    value, _ = integrate.quad(fn, lo, math.inf, limit=200, epsabs=1e-14, epsrel=1e-12)
    return value


def kernel_masses(phi, T, n_steps, lam=0.0):
    h = T / n_steps
    mid = h * (np.arange(n_steps) + 0.5)
    masses = h * np.exp(-lam * mid) * phi(mid) / mid
    masses[0] = _first_cell_mass(phi, h, lam)
    return masses


def _cell_averages(node_values):
    # trapezoid average over [c h, (c+1) h], with the value 0 at t = 0
    padded = np.concatenate(([0.0], node_values))
    return 0.5 * (padded[:-1] + padded[1:])


def _convolve(masses, cell_avg):
    return np.convolve(masses, cell_avg)[: len(masses)]


def _l1(node_values, h):
    return float(np.sum(_cell_averages(node_values)) * h)


def resolvent(phi, T, n_steps):
    """Sum the convolution powers of a_1 until their L1 norm drops below 1e-10."""
    if n_steps < 64:
        raise ParameterError("n_steps must be at least 64")
    verdict = dini_integral(phi).verdict
    if verdict != "converges":
        raise NotDiniError(f"{phi} is not classified as Dini ({verdict})")

    h = T / n_steps
    t = h * np.arange(1, n_steps + 1)
    masses = kernel_masses(phi, T, n_steps)
    a1 = phi(t) / t

    iterates = [a1]
    total = a1.copy()
    current_avg = masses / h
    for n in range(2, ITERATE_CAP + 1):
        nxt = _convolve(masses, current_avg)
        iterates.append(nxt)
        total += nxt
        if _l1(nxt, h) < TAIL_TOL:
            break
        current_avg = _cell_averages(nxt)
    else:
        raise ResolventDivergenceError(f"resolvent of {phi} on [0, {T}] did not converge in {ITERATE_CAP} iterates")

    residual = _renewal_residual(masses, a1, total, h)
    logger.info(f"resolvent {phi} T={T} n={n_steps}: {len(iterates)} iterates, a(T)={total[-1]:.8g}")
    return KernelGrid(T, n_steps, phi, masses, a1, iterates, total, residual)


def _renewal_residual(masses, a1, total, h):
    resolvent_avg = masses / h + _cell_averages(total - a1)
    return float(np.max(np.abs(total - a1 - _convolve(masses, resolvent_avg))))


def renewal_residual(kg):
    """max |a - a1 - a * a1| on the nodes, with the same discrete convolution as the iteration."""
    return _renewal_residual(kg.masses, kg.a1, kg.resolvent, kg.h)


def renewal_tolerance(kg):
    return 10.0 * kg.h * float(np.sum(kg.masses)) ** 2


def check_domination(kg):
    return float(np.max(kg.resolvent / kg.a1))


def scaling_check(kg, r, orders=None, min_cells=16):
    """max of a_n(r t) r / a_n(t) over stored orders and nodes with r t >= 16 h."""
    if not 0.0 < r < 1.0:
        raise ParameterError("r must lie in (0, 1)")
    t = kg.t
    keep = r * t >= min_cells * kg.h
    orders = range(1, len(kg.iterates) + 1) if orders is None else orders
    worst = 0.0
    for n in orders:
        values = kg.iterates[n - 1]
        if n == 1:
            scaled = kg.phi(r * t[keep]) / (r * t[keep])
        else:
            scaled = np.interp(r * t[keep], np.concatenate(([0.0], t)), np.concatenate(([0.0], values)))
        base = values[keep]
        positive = base > 0.0
        if np.any(positive):
            worst = max(worst, float(np.max(scaled[positive] * r / base[positive])))
    return worst


def gronwall_solve(f, phi, lam, T, n_steps=4096, kg=None):
    """C * int_0^t exp(-lam (t-s)) phi(t-s)/(t-s) f(s) ds on the nodes t_0..t_n.

    ``f`` is either a callable or its values on the n_steps + 1 nodes.
    """
    nodes = T / n_steps * np.arange(n_steps + 1)
    values = np.asarray(f(nodes) if callable(f) else f, dtype=float)
    if values.shape != nodes.shape:
        raise ParameterError(f"f must be sampled on {n_steps + 1} nodes")
    if np.any(values < 0.0):
        raise ParameterError("f must be nonnegative")
    kg = kg or resolvent(phi, T, n_steps)
    C = check_domination(kg)
    masses = kernel_masses(phi, T, n_steps, lam)
    cell_avg = 0.5 * (values[:-1] + values[1:])
    out = np.concatenate(([0.0], C * _convolve(masses, cell_avg)))
    return nodes, out
