"""The pinned acceptance suite.

Every criterion reuses a subcommand runner with fixed parameters and
reports under its own key. ``quick`` shrinks Monte Carlo sample sizes for
smoke runs; thresholds stay the same and scale with ``tolerance_scale``.
"""
import json
import logging
import tempfile
from pathlib import Path
from typing import Callable, NamedTuple

from . import harness
from .reports import Assertion, Outcome, Table, write_outcome

logger = logging.getLogger(__name__)


class Criterion(NamedTuple):
    number: int
    key: str
    title: str
    run: Callable


def _runner(subcommand, params, full_n=None, quick_n=None):
    """Criterion body calling ``harness.RUNNERS[subcommand]`` with pinned params."""

    def body(seed, shards, scale, quick):
        values = dict(params)
        if full_n is not None:
            values["N"] = quick_n if quick else full_n
        resolved, _ = harness.resolve_params(subcommand, values)
        return harness.RUNNERS[subcommand](resolved, seed, shards, scale)

    return body


def _merge(*bodies):
    def body(seed, shards, scale, quick):
        outcomes = [b(seed, shards, scale, quick) for b in bodies]
        return Outcome(
            [t for o in outcomes for t in o.tables],
            [a for o in outcomes for a in o.assertions],
            {k: v for o in outcomes for k, v in o.files.items()},
        )

    return body


def _renamed(body, suffix):
    def wrapped(seed, shards, scale, quick):
        outcome = body(seed, shards, scale, quick)
        return outcome._replace(tables=[t._replace(name=f"{t.name}_{suffix}") for t in outcome.tables])

    return wrapped


DETERMINISM_KEYS = ("covariance", "bismut", "null_shift", "q_inverse", "lambda_sweep", "stability", "lyapunov")
# Monte-Carlo criteria repeat at their quick path counts
QUICK_DETERMINISM_KEYS = ("bismut", "lambda_sweep", "stability")


def _determinism(seed, shards, scale, quick):
    rows = []
    for key in DETERMINISM_KEYS:
        criterion = CRITERIA_BY_KEY[key]
        digests = []
        for attempt in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                run_quick = quick or key in QUICK_DETERMINISM_KEYS
                write_outcome(tmp, {"criterion": key}, criterion.run(seed, shards, scale, run_quick))
                digests.append({p.name: p.read_bytes() for p in sorted(Path(tmp).glob("*.csv"))})
        rows.append((key, len(digests[0]), digests[0] == digests[1]))
    return Outcome([Table("determinism", ("criterion", "csv_files", "identical"), rows)], [
        Assertion("repeated runs byte-identical", all(r[2] for r in rows), ", ".join(DETERMINISM_KEYS)),
    ])


CRITERIA = [
    Criterion(1, "covariance", "Kolmogorov covariance",
              _runner("linear", {"probe": "covariance"}, 1_000_000, 100_000)),
    Criterion(2, "bismut", "Bismut formula against finite differences",
              _runner("linear", {"probe": "bismut", "trials": 4}, 100_000, 20_000)),
    Criterion(3, "null_shift", "Null-shift identities",
              _runner("linear", {"probe": "null_shift", "trials": 4})),
    Criterion(4, "scaling", "Moment scalings",
              _runner("linear", {"probe": "scaling", "k_min": 3, "k_max": 10}, 100_000, 20_000)),
    Criterion(5, "q_inverse", "Inverse covariance scaling",
              _runner("linear", {"probe": "q_inverse", "k_min": 3, "k_max": 10})),
    Criterion(6, "resolvent", "Resolvent oracle and domination",
              _merge(
                  _renamed(_runner("resolvent", {"phi": "pow(1)", "T": 1.0, "n_steps": 4096,
                                                 "expect": 2.718281828459045, "tol": 1e-5}), "power"),
                  _renamed(_runner("resolvent", {"phi": "logpow(2)", "T": 1.0, "n_steps": 4096,
                                                 "doubling": True}), "logpow"),
              )),
    Criterion(7, "heat_modulus", "Heat characterization of the modulus",
              _merge(
                  _renamed(_runner("heat", {"probe": "modulus", "function": "sqrt_abs"}), "sqrt_abs"),
                  _renamed(_runner("heat", {"probe": "modulus", "function": "sign"}), "sign"),
              )),
    Criterion(8, "commutator", "Commutator ladder",
              _runner("heat", {"probe": "commutator", "k_min": 2, "k_max": 8})),
    Criterion(9, "commutation", "Commutation identity",
              _runner("linear", {"probe": "commutation"}, 100_000, 20_000)),
    Criterion(10, "lambda_sweep", "Contraction sweep over lambda",
              _runner("zvonkin", {"probe": "sweep", "lambdas": [1.0, 4.0, 16.0, 64.0, 256.0], "phi": "pow(1/3)"},
                      500, 200)),
    Criterion(11, "regularization", "Regularization by the transform",
              _runner("zvonkin", {"probe": "transform"}, 500, 200)),
    Criterion(12, "stability", "Stability ladder",
              _runner("stability", {"k_min": 1, "k_max": 8}, 2000, 500)),
    Criterion(13, "lyapunov", "Lyapunov checks",
              _runner("sde", {"preset": "example_1_1", "probe": "lyapunov", "alpha": 1.0, "c2": 0.0})),
    Criterion(14, "determinism", "Determinism", _determinism),
]

CRITERIA_BY_KEY = {c.key: c for c in CRITERIA}


def select_criteria(value):
    """``all`` or a comma list of keys and numbers; raises KeyError on an unknown entry."""
    if value.strip() == "all":
        return list(CRITERIA)
    by_number = {str(c.number): c for c in CRITERIA}
    chosen = []
    for item in (v.strip() for v in value.split(",") if v.strip()):
        criterion = CRITERIA_BY_KEY.get(item) or by_number.get(item)
        if criterion is None:
            raise KeyError(item)
        if criterion not in chosen:
            chosen.append(criterion)
    if not chosen:
        raise KeyError(value)
    return sorted(chosen, key=lambda c: c.number)


def run_suite(p, seed, shards):
    scale = p["tolerance_scale"]
    tables, assertions, files = [], [], {}
    report = {}
    for criterion in select_criteria(p["criteria"]):
        logger.info(f"acceptance {criterion.number} {criterion.key}: {criterion.title}")
        outcome = criterion.run(seed, shards, scale, p["quick"])
        tables += [t._replace(name=f"{criterion.key}__{t.name}") for t in outcome.tables]
        assertions += [a._replace(name=f"[{criterion.key}] {a.name}") for a in outcome.assertions]
        files.update({f"{criterion.key}__{name}": text for name, text in outcome.files.items()})
        report[criterion.key] = {
            "number": criterion.number,
            "title": criterion.title,
            "passed": outcome.passed,
            "detail": "; ".join(f"{a.name}: {a.detail}" for a in outcome.assertions if not a.passed),
        }
        if not outcome.passed:
            logger.error(f"acceptance criterion {criterion.key} failed")
    files["acceptance.json"] = json.dumps({
        "criteria": report,
        "passed": all(v["passed"] for v in report.values()),
        "tolerance_scale": scale,
        "seed": seed,
        "shards": shards,
    }, sort_keys=True, indent=2) + "\n"
    return Outcome(tables, assertions, files)
