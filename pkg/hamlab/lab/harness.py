"""Experiment runner behind the management commands.

Each subcommand has a parameter schema in ``serializers.SCHEMAS`` and a
runner here that turns validated parameters into CSV tables and pass/fail
assertions. ``run`` validates, executes, writes artifacts and records an
``ExperimentRun`` row.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from django.conf import settings
from rest_framework import serializers

from . import acceptance, heat_probe, linear_flow, modulus, rng, sde_lab, volterra, zvonkin
from . import serializers as schemas
from .errors import LabError, ResolutionError
from .linear_flow import PhaseVector, TimeMatrixPath
from .models import ExperimentRun
from .reports import Assertion, Outcome, Table, write_outcome

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    shards: int = 1
    params: dict = field(default_factory=dict)
    out_dir: str = ""


class RunResult(NamedTuple):
    exit_code: int
    status: str
    out_dir: Path
    manifest: dict
    outcome: Outcome
    run: ExperimentRun


def resolve_params(subcommand, params):
    """Validate raw params; returns (validated values, echoed manifest values)."""
    try:
        schema = schemas.SCHEMAS[subcommand]
    except KeyError:
        raise serializers.ValidationError({"subcommand": f"unknown subcommand {subcommand!r}"}) from None
    serializer = schema(data=params)
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data, dict(serializer.data)


def resolve_out_dir(out_dir):
    if not out_dir:
        raise serializers.ValidationError({"out": "an output directory is required"})
    path = Path(out_dir)
    return path if path.is_absolute() else Path(settings.LAB_OUTPUT_ROOT) / path


def run(config):
    params, echoed = resolve_params(config.subcommand, config.params)
    if int(config.shards) < 1:
        raise serializers.ValidationError({"shards": "shards must be >= 1"})
    out_dir = resolve_out_dir(config.out_dir)
    manifest = {
        "subcommand": config.subcommand,
        "seed": int(config.seed),
        "shards": int(config.shards),
        "params": echoed,
    }
    logger.info(f"{config.subcommand} seed={config.seed} shards={config.shards} -> {out_dir}")
    try:
        outcome = RUNNERS[config.subcommand](params, int(config.seed), int(config.shards))
    except LabError as exc:
        logger.error(f"{config.subcommand} aborted: {exc}")
        ExperimentRun.objects.create(
            subcommand=config.subcommand, seed=config.seed, shards=config.shards,
            params=echoed, out_dir=str(out_dir), status='ERROR', summary=str(exc),
        )
        raise
    write_outcome(out_dir, manifest, outcome)
    failed = [a for a in outcome.assertions if not a.passed]
    for a in failed:
        logger.error(f"assertion failed: {a.name} ({a.detail})")
    status = 'FAILED' if failed else 'PASSED'
    record = ExperimentRun.objects.create(
        subcommand=config.subcommand, seed=config.seed, shards=config.shards, params=echoed,
        out_dir=str(out_dir), status=status,
        summary=f"{len(outcome.assertions) - len(failed)}/{len(outcome.assertions)} assertions passed",
    )
    return RunResult(1 if failed else 0, status, out_dir, manifest, outcome, record)


def _within(value, target, tol):
    return abs(value - target) <= tol


# ---------------------------------------------------------------------------
# modulus and resolvent


def run_modulus(p, seed, shards, scale=1.0):
    phi = p["phi"]
    dini = modulus.dini_integral(phi)
    defect = modulus.slow_variation_defect(phi, p["lambdas"])
    psi = modulus.bracket(p["alpha"], phi)
    report = modulus.property_suite(psi, p["alpha"], p["delta"], modulus.default_property_grid(p["grid_points"]))
    cc = modulus.class_c_report(p["class_c"])

    summary = [
        ("phi", phi.config()),
        ("dini_value", float(dini.value)),
        ("verdict", dini.verdict),
        ("tail_exponent", float(dini.tail_exponent)),
        ("slow_variation_defect", float(defect)),
        ("bracket", psi.config()),
        ("c_alpha", float(psi.c_alpha)),
        ("class_c_level", cc.level),
        ("class_c_liminf_proxy", cc.liminf_proxy),
    ]
    if dini.verdict == "converges":
        summary.append(("bar_modulus_at_half", modulus.bar_modulus(phi, 0.5)))
    tables = [
        Table("modulus", ("quantity", "value"), summary),
        Table("dini", ("k", "increment"), [(k, float(v)) for k, v in enumerate(dini.increments)]),
        Table("slow_variation", ("k", "defect"), modulus.slow_variation_ladder(phi, p["lambdas"])),
        Table("properties", ("constant", "value"), [
            ("C_ratio", report.C_ratio), ("C_monotone", report.C_monotone), ("C_int1", report.C_int1),
            ("C_int2", report.C_int2), ("C_sub", report.C_sub),
        ]),
        Table("class_c", ("k", "criterion", "partial_integral"),
              [(k, c, s) for (k, c), (_, s) in zip(cc.criterion, cc.partial_integrals)]),
    ]
    if report.violations:
        tables.append(Table("violations", ("property", "t", "s", "value"), report.violations))
    assertions = [
        Assertion("dini verdict conclusive", dini.verdict != "inconclusive", dini.verdict),
        Assertion("bracket constants finite", report.finite, f"{len(report.violations)} violations"),
        Assertion("bracket monotone", modulus.is_monotone(psi), psi.config()),
    ]
    if p["expect"] != "any":
        assertions.append(Assertion("dini verdict matches", dini.verdict == p["expect"], f"expected {p['expect']}"))
    return Outcome(tables, assertions)


def run_resolvent(p, seed, shards, scale=1.0):
    kg = volterra.resolvent(p["phi"], p["T"], p["n_steps"])
    residual = volterra.renewal_residual(kg)
    tolerance = volterra.renewal_tolerance(kg)
    C = volterra.check_domination(kg)
    a_T = float(kg.resolvent[-1])
    summary = [("a_T", a_T), ("iterates", len(kg.iterates)), ("renewal_residual", residual),
               ("renewal_tolerance", tolerance), ("domination", C)]
    for r in (0.5, 0.25):
        summary.append((f"scaling_r{r}", volterra.scaling_check(kg, r)))
    assertions = [
        Assertion("renewal residual", residual <= tolerance * scale, f"{residual:.3g} <= {tolerance * scale:.3g}"),
        Assertion("domination finite", math.isfinite(C), f"C={C:.6g}"),
    ]
    if p["expect"] is not None:
        assertions.append(Assertion("a(T) oracle", _within(a_T, p["expect"], p["tol"] * scale),
                                    f"|{a_T:.10g} - {p['expect']:.10g}| <= {p['tol'] * scale:.3g}"))
    if p["doubling"]:
        C2 = volterra.check_domination(volterra.resolvent(p["phi"], p["T"], 2 * p["n_steps"]))
        summary.append(("domination_doubled", C2))
        assertions.append(Assertion("domination stable under doubling", _within(C2 / C, 1.0, 0.1 * scale),
                                    f"C={C:.6g}, C'={C2:.6g}"))
    tables = [Table("resolvent", ("t", "a1", "a", "ratio"), kg.rows()),
              Table("resolvent_summary", ("quantity", "value"), summary)]
    return Outcome(tables, assertions)


# ---------------------------------------------------------------------------
# linear flow


def _random_paths(seed, count, n_pieces=3):
    gen = rng.stream(seed, "linear.paths")
    return gen, [TimeMatrixPath.random(gen, 1, 1, n_pieces, 0.0, 1.0) for _ in range(count)]


def _linear_covariance(p, seed, shards, scale):
    t, B, S = p["t"], p["B"], p["sigma"]
    path = TimeMatrixPath.constant(B, S, 0.0, t)
    law = linear_flow.joint_law(path, 0.0, t, PhaseVector.zeros(1, 1))
    exact = np.array([[B * B * S * S * t ** 3 / 3.0, B * S * S * t * t / 2.0],
                      [B * S * S * t * t / 2.0, S * S * t]])
    assembled = float(np.max(np.abs(law.cov - exact)))
    draws = linear_flow.sample(law, seed, p["N"], shards, "linear.covariance")
    rows = []
    mc_ok = True
    for i, j in ((0, 0), (0, 1), (1, 1)):
        m, se = rng.mean_and_stderr(draws[:, i] * draws[:, j])
        ok = abs(float(m) - exact[i, j]) <= 3.0 * float(se) * scale
        mc_ok &= ok
        rows.append((f"{i}{j}", exact[i, j], float(law.cov[i, j]), float(m), float(se), ok))
    tol = 1e-12 * max(1.0, float(np.max(np.abs(exact)))) * scale
    return Outcome([Table("covariance", ("entry", "exact", "assembled", "mc", "stderr", "passed"), rows)], [
        Assertion("assembled covariance", assembled <= tol, f"max error {assembled:.3g}"),
        Assertion("sample covariance", mc_ok, f"N={p['N']}"),
    ])


def _linear_bismut(p, seed, shards, scale):
    gen, paths = _random_paths(seed, 3)
    rows = []
    counter = 0
    for rep in range(p["trials"]):
        for pi, path in enumerate(paths):
            x = PhaseVector(0.5 * gen.standard_normal(1), 0.5 * gen.standard_normal(1))
            for fn in linear_flow.smooth_suite():
                for order in (1, 2):
                    directions = [PhaseVector(gen.standard_normal(1), gen.standard_normal(1)) for _ in range(order)]
                    bm, bs = linear_flow.bismut_derivative(path, 0.0, 1.0, x, fn.f, directions, p["N"], seed + counter, shards)
                    fm, fs = linear_flow.fd_derivative(path, 0.0, 1.0, x, fn.f, directions, p["N"], seed + counter, shards, p["eps"])
                    combined = math.hypot(bs, fs)
                    rows.append((rep, pi, fn.name, order, bm, bs, fm, fs, abs(bm - fm) <= 3.0 * combined * scale))
                    counter += 1
    rate = sum(1 for r in rows if r[-1]) / len(rows)
    header = ("repeat", "path", "function", "order", "bismut", "bismut_stderr", "fd", "fd_stderr", "agree")
    return Outcome([Table("bismut", header, rows)], [
        Assertion("bismut agrees with finite differences", rate >= 0.95, f"{rate:.3f} of {len(rows)} within 3 stderr"),
    ])


def _linear_null_shift(p, seed, shards, scale):
    gen = rng.stream(seed, "linear.null_shift")
    rows = []
    for trial in range(250 * p["trials"]):
        d2 = int(gen.integers(1, 3))
        d1 = int(gen.integers(1, d2 + 1))
        path = TimeMatrixPath.random(gen, d1, d2, int(gen.integers(1, 4)), 0.0, 1.0)
        s, t = np.sort(gen.uniform(0.0, 1.0, 2))
        h = PhaseVector(gen.standard_normal(d1), gen.standard_normal(d2))
        res1, res2 = linear_flow.null_shift_check(path, float(s), float(t), h)
        rows.append((trial, d1, d2, float(s), float(t), res1, res2))
    worst = max(max(r[5], r[6]) for r in rows)
    return Outcome([Table("null_shift", ("trial", "d1", "d2", "s", "t", "res1", "res2"), rows)], [
        Assertion("null-shift residuals", worst < 1e-9 * scale, f"max {worst:.3g} over {len(rows)} cases"),
    ])


def _ladder(p):
    return [2.0 ** (-k) for k in range(p["k_min"], p["k_max"] + 1)]


def _scaling_outcome(name, rows, fits, targets, tol):
    table = Table(name, ("delta", "moment_p", "quantity", "estimate", "stderr"), [tuple(r) for r in rows])
    fit_table = Table(f"{name}_fit", ("quantity", "slope", "ci_low", "ci_high"), [tuple(f) for f in fits])
    assertions = [Assertion(f"{f.quantity} slope", _within(f.slope, targets[f.quantity], tol),
                            f"{f.slope:.4f} vs {targets[f.quantity]} +- {tol:.3g}") for f in fits]
    return Outcome([table, fit_table], assertions)


def _linear_scaling(p, seed, shards, scale):
    rows, fits = linear_flow.moment_scaling(_ladder(p), 2.0, p["N"], seed, shards, p["B"], p["sigma"])
    return _scaling_outcome("scaling", rows, fits, {"x1": 1.5, "x2": 0.5}, 0.05 * scale)


def _linear_q_inverse(p, seed, shards, scale):
    rows, fits = linear_flow.q_inverse_scaling(_ladder(p), p["B"], p["sigma"])
    return _scaling_outcome("q_inverse", rows, fits, {"q_inverse": -3.0}, 0.01 * scale)


def _linear_commutation(p, seed, shards, scale):
    _, (path,) = _random_paths(seed, 1)
    x = PhaseVector(0.3, -0.2)
    rows = []
    for fn in linear_flow.commutation_suite():
        for r in linear_flow.commutation_check(path, 0.0, 1.0, x, fn, p["N"], seed, shards):
            rows.append((fn.name, r.identity, r.index, r.residual, r.stderr,
                         abs(r.residual) <= 3.0 * r.stderr * scale + 1e-12))
    return Outcome([Table("commutation", ("function", "identity", "index", "residual", "stderr", "passed"), rows)], [
        Assertion("commutation identities", all(r[-1] for r in rows), f"{len(rows)} residuals"),
    ])


def _linear_flow(p, seed, shards, scale):
    _, paths = _random_paths(seed, 3)
    x = PhaseVector(0.3, -0.2)
    rows = [(i, linear_flow.flow_check(path, 0.0, 0.4, 1.0, x)) for i, path in enumerate(paths)]
    worst = max(r[1] for r in rows)
    return Outcome([Table("flow", ("path", "deviation"), rows)], [
        Assertion("flow composition", worst < 1e-10 * scale, f"max {worst:.3g}"),
    ])


LINEAR_CHECKS = {
    "covariance": _linear_covariance,
    "bismut": _linear_bismut,
    "null_shift": _linear_null_shift,
    "scaling": _linear_scaling,
    "q_inverse": _linear_q_inverse,
    "commutation": _linear_commutation,
    "flow": _linear_flow,
}


def run_linear(p, seed, shards, scale=1.0):
    return LINEAR_CHECKS[p["probe"]](p, seed, shards, scale)


# ---------------------------------------------------------------------------
# heat semigroup

GRID_FUNCTIONS = {
    "sqrt_abs": lambda x: np.sqrt(np.minimum(np.abs(x), 1.0)),
    "sign": np.sign,
    "cos": np.cos,
}


def _grid_function(p, n=None):
    if p["grid_file"]:
        return heat_probe.GridFunction.load(p["grid_file"])
    return heat_probe.GridFunction.from_function(GRID_FUNCTIONS[p["function"]], 1, n or p["n"], p["L"])


def _heat_modulus(p, seed, shards, scale):
    phi = modulus.Power(p["alpha"])
    f = _grid_function(p)
    est = heat_probe.modulus_estimate(f, phi)
    semi = heat_probe.seminorm(f, phi)
    ratio = est.value / semi if semi > 0.0 else math.inf
    tables = [
        Table("heat_modulus", ("theta", "term"), est.ladder),
        Table("heat_modulus_summary", ("quantity", "value"), [
            ("estimate", est.value), ("sup_norm", est.sup_norm), ("seminorm", semi), ("ratio", ratio),
            ("slope", est.slope), ("diverges", est.diverges),
        ]),
    ]
    if p["function"] == "sign" and not p["grid_file"]:
        return Outcome(tables, [Assertion("divergence flagged", est.diverges, f"slope {est.slope:.3f}")])
    assertions = [
        Assertion("estimator bounded", not est.diverges, f"slope {est.slope:.3f}"),
        Assertion("estimator/seminorm ratio", 10.0 ** (-scale) <= ratio <= 10.0 ** scale, f"ratio {ratio:.4g}"),
    ]
    if not p["grid_file"]:
        fine = _grid_function(p, 2 * p["n"] - 1)
        ratio_fine = heat_probe.modulus_estimate(fine, phi).value / heat_probe.seminorm(fine, phi)
        tables[1].rows.append(("ratio_refined", ratio_fine))
        assertions.append(Assertion("stable under refinement", _within(ratio_fine / ratio, 1.0, 0.25 * scale),
                                    f"{ratio:.4g} -> {ratio_fine:.4g}"))
    return Outcome(tables, assertions)


def _heat_commutator(p, seed, shards, scale):
    f = heat_probe.GridFunction.from_function(GRID_FUNCTIONS["sqrt_abs"], 1, p["n"], p["L"])
    g = heat_probe.GridFunction.from_function(np.cos, 1, p["n"], p["L"])
    psi = modulus.Power(p["alpha"] / 2.0)
    report = heat_probe.commutator_ladder(f, g, psi, psi, _ladder(p), factor=1.0 + 2.0 * scale)
    return Outcome([Table("commutator", ("theta", "seminorm", "scale", "implied_constant"), report.rows)], [
        Assertion("commutator ladder bounded", report.bounded, f"spread {report.spread:.3f} around {report.median:.4g}"),
    ])


def _heat_moment(p, seed, shards, scale):
    report = heat_probe.moment_bound_ladder(modulus.Power(p["alpha"]), p["beta"], _ladder(p), factor=1.0 + 0.2 * scale)
    return Outcome([Table("moment_bound", ("theta", "moment", "scale", "constant"), report.rows)], [
        Assertion("moment bound stable", report.bounded, f"spread {report.spread:.4f}"),
    ])


def _heat_gradient(p, seed, shards, scale):
    f = _grid_function(p)
    rows = heat_probe.gradient_bound_ladder(f, modulus.Power(p["alpha"]), _ladder(p), 1, 0)
    values = np.array([r[2] for r in rows])
    spread = float(values.max() / values.min()) if values.min() > 0.0 else math.inf
    return Outcome([Table("gradient_bound", ("theta", "sup", "normalized"), rows)], [
        Assertion("gradient bound ladder bounded", spread <= 1.0 + 2.0 * scale, f"spread {spread:.3f}"),
    ])


def _heat_semigroup(p, seed, shards, scale):
    f = _grid_function(p)
    theta = 2.0 ** (-p["k_max"])
    twice = heat_probe.heat_apply(heat_probe.heat_apply(f, theta), theta).values
    once = heat_probe.heat_apply(f, 2.0 * theta).values
    # padding only reaches ~10 sqrt(2 theta) into the grid
    inner = np.abs(f.x) <= f.L - 10.0 * math.sqrt(2.0 * theta)
    if not np.any(inner):
        raise ResolutionError(f"grid half-width {f.L} leaves no interior at theta={theta}")
    mask = np.ix_(inner, inner) if f.dim == 2 else inner
    err = float(np.max(np.abs(twice[mask] - once[mask])))
    return Outcome([Table("semigroup", ("theta", "interior_points", "max_difference"),
                          [(theta, int(np.count_nonzero(inner)), err)])], [
        Assertion("semigroup property", err <= 1e-8 * scale, f"{err:.3g}"),
    ])


HEAT_CHECKS = {
    "modulus": _heat_modulus,
    "commutator": _heat_commutator,
    "moment": _heat_moment,
    "gradient": _heat_gradient,
    "semigroup": _heat_semigroup,
}


def run_heat(p, seed, shards, scale=1.0):
    return HEAT_CHECKS[p["probe"]](p, seed, shards, scale)


# ---------------------------------------------------------------------------
# SDE lab

PRESET_KEYS = {
    "example_1_1": ("alpha", "m", "c1", "c2", "sigma", "delta"),
    "linear": ("B", "sigma"),
    "holder_drift": ("gamma", "c", "delta", "sigma"),
    "integral_drift": ("gamma", "c", "delta", "sigma"),
    "nondegenerate": ("gamma", "c", "delta", "sigma"),
    "delay_sde": ("sigma",),
}


def _sde_model(p):
    return sde_lab.preset(p["preset"], **{k: p[k] for k in PRESET_KEYS[p["preset"]]})


def _sde_lyapunov(model, p, seed, shards, scale):
    report = sde_lab.lyapunov_check(model, sde_lab.phase_grid(model.d1, model.d2, p["radius"], p["grid_n"]))
    rows = [("generator_ratio", report.generator_ratio), ("hessian_ratio", report.hessian_ratio),
            ("min_H", report.min_H), ("sandwich_low", report.sandwich[0]), ("sandwich_high", report.sandwich[1])]
    assertions = [Assertion("lyapunov report finite", report.finite, f"min H {report.min_H:.4g}")]
    if p["preset"] == "example_1_1":
        assertions.append(Assertion("hessian ratio <= 2", report.hessian_ratio <= 2.0 * scale + 1e-12,
                                    f"{report.hessian_ratio:.6g}"))
        if p["alpha"] == 1.0 and p["c2"] == 0.0:
            bound = max(1.0, model.d2 * p["sigma"] ** 2)
            assertions.append(Assertion("generator bound", report.generator_ratio <= bound * scale,
                                        f"{report.generator_ratio:.4g} <= {bound:.4g}"))
    return Outcome([Table("lyapunov", ("quantity", "value"), rows)], assertions)


def _sde_moment(model, p, seed, shards, scale):
    x0 = np.array([p["x1"], p["x2"]])
    h = p["T"] / 256
    full = sde_lab.moment_diag(model, x0, p["T"], p["eps_prime"], p["N"], seed, h, p["cap"], shards)
    half = sde_lab.moment_diag(model, x0, p["T"], p["eps_prime"], p["N"], seed, h, p["cap"] / 2.0, shards)
    rows = [(p["cap"] / 2.0, *half[:3], *half.quantiles, half.blowup_rate),
            (p["cap"], *full[:3], *full.quantiles, full.blowup_rate)]
    header = ("cap", "estimate", "stderr", "cap_hit_rate", "q05", "q50", "q95", "blowup_rate")
    return Outcome([Table("moment", header, rows)], [
        Assertion("moment estimate finite", math.isfinite(full.estimate), f"{full.estimate:.6g}"),
        Assertion("cap rarely hit", full.cap_hit_rate < 1e-3 * scale + 1e-300, f"{full.cap_hit_rate:.3g}"),
        Assertion("monotone in cap", half.estimate <= full.estimate, f"{half.estimate:.6g} <= {full.estimate:.6g}"),
    ])


def _sde_gap(model, p, seed, shards, scale):
    x0 = np.array([p["x1"], p["x2"]])
    T = p["T"]
    driver = sde_lab.BrownianDriver(seed, T, T / 2 ** (p["levels"] + 3), p["N"], model.d2, shards, purpose="sde.gap")
    report = sde_lab.pathwise_gap(model, x0, T, driver, [T / 2 ** k for k in range(3, p["levels"] + 3)])
    return Outcome([
        Table("gap", ("k_or_h", "estimate", "stderr"), report.rows),
        Table("gap_fit", ("quantity", "value"), [("strong_order", report.order)]),
    ], [Assertion("gap ladder decreasing", report.decreasing, f"order {report.order:.3f}")])


def _sde_jacobian(model, p, seed, shards, scale):
    T = p["T"]
    h = T / 256
    driver = sde_lab.BrownianDriver(seed, T, h, p["N"], model.d2, shards, purpose="sde.jacobian")
    path = sde_lab.integrate(model, np.array([p["x1"], p["x2"]]), h, T, driver, with_jacobian=True)
    J = path.jacobian[~path.flags, -1]
    mean, se = rng.mean_and_stderr(J.reshape(len(J), -1))
    var = np.var(J.reshape(len(J), -1), axis=0)
    rows = [(i, float(m), float(s), float(v)) for i, (m, s, v) in enumerate(zip(mean, se, var))]
    assertions = [
        Assertion("jacobian starts at identity", bool(np.allclose(path.jacobian[:, 0], np.eye(model.dim))), ""),
        Assertion("jacobian finite", bool(np.all(np.isfinite(J))), f"{len(J)} paths"),
    ]
    if p["preset"] == "linear":
        exact = np.eye(model.dim)
        exact[:model.d1, model.d1:] = p["B"] * T
        err = float(np.max(np.abs(mean - exact.ravel())))
        assertions.append(Assertion("jacobian deterministic", float(np.max(var)) < 1e-20, f"max variance {float(np.max(var)):.3g}"))
        assertions.append(Assertion("jacobian matches propagator", err <= 1e-10 * scale, f"{err:.3g}"))
    return Outcome([Table("jacobian", ("entry", "mean", "stderr", "variance"), rows)], assertions)


def _sde_law(model, p, seed, shards, scale):
    T = p["T"]
    h = T / 2 ** p["levels"]
    x = PhaseVector(p["x1"], p["x2"])
    law = linear_flow.joint_law(model.linear_path(T), 0.0, T, x)
    driver = sde_lab.BrownianDriver(seed, T, h, p["N"], model.d2, shards, purpose="sde.law")
    terminal = sde_lab.integrate(model, x, h, T, driver).terminal
    mean, mean_se = rng.mean_and_stderr(terminal)
    centred = terminal - law.mean
    rows = []
    ok = True
    for i in range(model.dim):
        good = abs(float(mean[i]) - law.mean[i]) <= 3.0 * float(mean_se[i]) * scale
        ok &= good
        rows.append((f"mean{i}", float(law.mean[i]), float(mean[i]), float(mean_se[i]), good))
    bias = h * float(np.max(np.abs(law.cov)))
    for i in range(model.dim):
        for j in range(i, model.dim):
            m, s = rng.mean_and_stderr(centred[:, i] * centred[:, j])
            good = abs(float(m) - law.cov[i, j]) <= (3.0 * float(s) + 2.0 * bias) * scale
            ok &= good
            rows.append((f"cov{i}{j}", float(law.cov[i, j]), float(m), float(s), good))
    return Outcome([Table("law", ("quantity", "exact", "mc", "stderr", "passed"), rows)], [
        Assertion("terminal law matches exact gaussian", ok, f"h={h:.3g}, N={p['N']}"),
    ])


SDE_CHECKS = {
    "lyapunov": _sde_lyapunov,
    "moment": _sde_moment,
    "gap": _sde_gap,
    "jacobian": _sde_jacobian,
    "law": _sde_law,
}


def run_sde(p, seed, shards, scale=1.0):
    return SDE_CHECKS[p["probe"]](_sde_model(p), p, seed, shards, scale)


def run_stability(p, seed, shards, scale=1.0):
    family = lambda k: sde_lab.preset("holder_drift", gamma=p["gamma"], c=p["c"], delta=2.0 ** (-k))
    report = sde_lab.stability_experiment(
        family, np.array([p["x1"], p["x2"]]), p["T"], p["eps"], p["N"],
        range(p["k_min"], p["k_max"] + 1), p["T"] / p["steps"], seed, shards,
    )
    rows = report.rows
    monotone = all(b[1] <= a[1] + 2.0 * max(a[2], b[2]) * scale for a, b in zip(rows, rows[1:]))
    return Outcome([Table("stability", ("k_or_h", "estimate", "stderr", "flag_rate"), rows)], [
        Assertion("exceedance ladder non-increasing", monotone, f"reference k={report.reference_k}"),
    ])


# ---------------------------------------------------------------------------
# Zvonkin transform


def _zvonkin_model(p):
    return sde_lab.preset("example_1_1", alpha=p["alpha"], c1=p["c1"], delta=p["delta"])


def _envelope(p, scale):
    lambdas = np.logspace(0.0, 4.0, 9)
    slope, values = zvonkin.envelope_slope(p["phi"], lambdas, p["T"])
    table = Table("envelope", ("lambda", "integral"), list(zip(lambdas.tolist(), values)))
    assertions = []
    if isinstance(p["phi"], modulus.Power):
        target = -p["phi"].alpha / 2.0
        assertions.append(Assertion("envelope slope", _within(slope, target, 0.05 * scale), f"{slope:.4f} vs {target:.4f}"))
    return table, slope, assertions


def _zvonkin_sweep(p, seed, shards, scale):
    model = _zvonkin_model(p)
    axis = np.linspace(-p["radius"] / 2.0, p["radius"] / 2.0, 3)
    points = zvonkin.mesh([axis, axis])
    spacing = 2.0 * p["radius"] / (p["grid_n"] - 1)
    report = zvonkin.lambda_sweep(model, p["lambdas"], p["T"], points, p["T"] / p["steps"], p["N"], seed, shards, spacing / 2.0)
    rows = report.rows
    monotone = all(b[1] <= a[1] + 2.0 * max(a[2], b[2]) * scale for a, b in zip(rows, rows[1:]))
    env_table, slope, env_assertions = _envelope(p, scale)
    return Outcome([
        Table("lambda_sweep", ("lambda", "contraction", "stderr"), rows),
        Table("lambda_threshold", ("quantity", "value"), [("threshold", report.threshold), ("envelope_slope", slope)]),
        env_table,
    ], [Assertion("contraction non-increasing in lambda", monotone, f"threshold {report.threshold}")] + env_assertions)


def _zvonkin_envelope(p, seed, shards, scale):
    table, slope, assertions = _envelope(p, scale)
    return Outcome([table, Table("envelope_fit", ("quantity", "value"), [("slope", slope)])], assertions)


def _zvonkin_transform(p, seed, shards, scale):
    model = _zvonkin_model(p)
    axis = np.linspace(-p["radius"], p["radius"], p["grid_n"])
    field = zvonkin.solve_u(model, p["lam"], p["T"], [axis, axis], p["T"] / p["steps"], p["N"], seed, shards)
    field = zvonkin.grad_u(field, model)
    u_rows = [(*pt, *u, *se) for pt, u, se in zip(field.points, field.u[-1], field.u_stderr[-1])]
    tables = [Table("transform_u", ("x1", "x2", "u1", "u2", "u1_stderr", "u2_stderr"), u_rows)]
    files = {"transform_field.txt": field.to_text()}

    raw = zvonkin.lipschitz_probe(lambda x: np.abs(x[:, 0]) ** (2.0 / 3.0), (0.0, 0.0), (1.0, 0.0),
                                  [2.0 ** (-k) for k in range(10, 25)])
    tables.append(Table("lipschitz_raw", ("scale", "lipschitz"), raw.rows))
    assertions = [Assertion("raw drift slope", _within(raw.slope, -1.0 / 3.0, 0.07 * scale), f"{raw.slope:.4f}")]

    contraction = field.contraction
    summary = [("contraction", contraction), ("flag_rate", field.flag_rate), ("raw_slope", raw.slope)]
    if not contraction < zvonkin.CONTRACTION_LIMIT:
        assertions.append(Assertion("contraction below 1/2", False, f"{contraction:.4g}"))
        tables.append(Table("transform_summary", ("quantity", "value"), summary))
        return Outcome(tables, assertions, files)

    transform = zvonkin.build_transform(field)
    sample = rng.stream(seed, "zvonkin.roundtrip").uniform(-p["radius"] / 2.0, p["radius"] / 2.0, (100, 2))
    roundtrip = float(np.max(np.abs(transform.inverse(transform.forward(sample)) - sample)))
    coeffs = zvonkin.transformed_coeffs(model, transform)

    # g o Phi = lam u; the grid interpolant is piecewise linear below the spacing, so scales use per-point MC
    def scattered(x):
        u, _ = zvonkin.evaluate_u(model, p["lam"], p["T"], x, field.h, p["N"], seed, shards)
        return p["lam"] * u

    scales = [field.spacing[0] * 2.0 ** (-k) for k in range(0, 8)]
    smooth = zvonkin.lipschitz_probe(scattered, (0.0, 0.0), (1.0, 0.0), scales)
    origin = np.zeros((1, 2))
    g_gap = float(np.max(np.abs(coeffs.g(transform.forward(origin)) - scattered(origin))))
    tables.append(Table("lipschitz_transformed", ("scale", "lipschitz"), smooth.rows))
    summary += [("roundtrip_error", roundtrip), ("transformed_slope", smooth.slope), ("g_grid_gap", g_gap)]
    tables.append(Table("transform_summary", ("quantity", "value"), summary))
    assertions += [
        Assertion("inverse round trip", roundtrip < 1e-9 * scale, f"{roundtrip:.3g}"),
        Assertion("transformed drift matches per-point u", g_gap < 1e-6 * max(scale, 1.0), f"{g_gap:.3g}"),
        Assertion("transformed drift near-Lipschitz", smooth.slope > -0.1 * scale, f"{smooth.slope:.4f}"),
    ]
    return Outcome(tables, assertions, files)


ZVONKIN_CHECKS = {
    "sweep": _zvonkin_sweep,
    "envelope": _zvonkin_envelope,
    "transform": _zvonkin_transform,
}


def run_zvonkin(p, seed, shards, scale=1.0):
    return ZVONKIN_CHECKS[p["probe"]](p, seed, shards, scale)


def run_acceptance(p, seed, shards, scale=1.0):
    return acceptance.run_suite(p, seed, shards)


RUNNERS = {
    "modulus": run_modulus,
    "resolvent": run_resolvent,
    "linear": run_linear,
    "heat": run_heat,
    "sde": run_sde,
    "stability": run_stability,
    "zvonkin": run_zvonkin,
    "acceptance": run_acceptance,
}
