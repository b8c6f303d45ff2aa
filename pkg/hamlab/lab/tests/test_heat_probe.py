import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from lab import heat_probe
from lab.errors import DimensionError, GridMismatchError, ResolutionError
from lab.heat_probe import GridFunction
from lab.modulus import Power


def sqrt_abs(x):
    return np.sqrt(np.minimum(np.abs(x), 1.0))


class GridFunctionTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            GridFunction(1, 128, 1.0, np.zeros(128))
        with self.assertRaises(DimensionError):
            GridFunction(3, 129, 1.0, np.zeros((129,) * 3))
        with self.assertRaises(ValueError):
            GridFunction(1, 129, 1.0, np.zeros(129), growth_tag="wild")

    def test_text_file_round_trip(self):
        f = GridFunction.from_function(np.cos, 1, 129, 1.5)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "f.txt"
            f.save(path)
            again = GridFunction.load(path)
        self.assertTrue(again.same_grid(f))
        np.testing.assert_array_equal(again.values, f.values)


class HeatApplyTests(SimpleTestCase):
    def setUp(self):
        self.cos = GridFunction.from_function(np.cos, 1, 1025, 3.0)
        self.inner = np.abs(self.cos.x) <= 1.0

    def test_cosine_is_an_eigenfunction(self):
        theta = 1.0 / 16
        out = heat_probe.heat_apply(self.cos, theta).values
        np.testing.assert_allclose(out[self.inner], math.exp(-theta / 2) * self.cos.values[self.inner], atol=1e-8)

    def test_theta_derivative(self):
        theta = 1.0 / 16
        out = heat_probe.heat_apply(self.cos, theta, 0, 1).values
        expected = -0.5 * math.exp(-theta / 2) * self.cos.values
        np.testing.assert_allclose(out[self.inner], expected[self.inner], atol=1e-7)

    def test_affine_functions_are_fixed(self):
        f = GridFunction.from_function(lambda x: 2.0 * x + 1.0, 1, 257, 2.0, "polynomial")
        np.testing.assert_allclose(heat_probe.heat_apply(f, 0.5).values, f.values, atol=1e-10)

    def test_semigroup_property(self):
        theta = 1.0 / 32
        twice = heat_probe.heat_apply(heat_probe.heat_apply(self.cos, theta), theta).values
        once = heat_probe.heat_apply(self.cos, 2 * theta).values
        np.testing.assert_allclose(twice[self.inner], once[self.inner], atol=1e-8)

    def test_resolution_guard(self):
        with self.assertRaises(ResolutionError):
            heat_probe.heat_apply(self.cos, 1e-5)
        with self.assertRaises(ValueError):
            heat_probe.heat_apply(self.cos, 2.0)

    def test_axis_operator_needs_2d(self):
        with self.assertRaises(DimensionError):
            heat_probe.axis_heat_apply(self.cos, 0.1, 1)


class SeminormTests(SimpleTestCase):
    def test_square_root_is_half_holder_with_unit_constant(self):
        f = GridFunction.from_function(sqrt_abs, 1, 1025, 3.0)
        self.assertAlmostEqual(heat_probe.seminorm(f, Power(0.5)), 1.0, places=9)

    def test_axis_seminorms(self):
        f = GridFunction.from_function(lambda a, b: sqrt_abs(a), 2, 129, 2.0)
        self.assertAlmostEqual(heat_probe.axis_seminorm(f, Power(0.5), 1), 1.0, places=9)
        self.assertEqual(heat_probe.axis_seminorm(f, Power(0.5), 2), 0.0)

    def test_2d_seminorm(self):
        f = GridFunction.from_function(lambda a, b: sqrt_abs(a), 2, 129, 2.0)
        self.assertAlmostEqual(heat_probe.seminorm(f, Power(0.5)), 1.0, places=9)


class ModulusEstimateTests(SimpleTestCase):
    def test_holder_function_is_bounded(self):
        f = GridFunction.from_function(sqrt_abs, 1, 1025, 3.0)
        est = heat_probe.modulus_estimate(f, Power(0.5))
        self.assertFalse(est.diverges)
        ratio = est.value / heat_probe.seminorm(f, Power(0.5))
        self.assertTrue(0.1 <= ratio <= 10.0)

    def test_sign_function_diverges(self):
        f = GridFunction.from_function(np.sign, 1, 1025, 3.0)
        self.assertTrue(heat_probe.modulus_estimate(f, Power(0.5)).diverges)


class LadderTests(SimpleTestCase):
    def test_commutator_ladder(self):
        f = GridFunction.from_function(sqrt_abs, 1, 1025, 3.0)
        g = GridFunction.from_function(np.cos, 1, 1025, 3.0)
        psi = Power(0.25)
        report = heat_probe.commutator_ladder(f, g, psi, psi, [2.0 ** -k for k in range(2, 9)])
        self.assertEqual(len(report.rows), 7)
        self.assertTrue(report.bounded)

    def test_commutator_grid_mismatch(self):
        f = GridFunction.from_function(np.cos, 1, 129, 3.0)
        g = GridFunction.from_function(np.cos, 1, 257, 3.0)
        with self.assertRaises(GridMismatchError):
            heat_probe.commutator(f, g, 0.1, Power(0.5))

    def test_moment_bound_is_exactly_scale_invariant_for_powers(self):
        report = heat_probe.moment_bound_ladder(Power(0.5), 1.0, [2.0 ** -k for k in range(2, 9)])
        self.assertLess(report.spread, 1.0 + 1e-6)
        # E|Z|^1.5 for a standard normal
        self.assertAlmostEqual(report.median, 2 ** 0.75 * math.gamma(1.25) / math.sqrt(math.pi), places=6)

    def test_gradient_ladder(self):
        f = GridFunction.from_function(sqrt_abs, 1, 1025, 3.0)
        rows = heat_probe.gradient_bound_ladder(f, Power(0.5), [2.0 ** -k for k in range(2, 9)], 1, 0)
        normalized = [r[2] for r in rows]
        self.assertLess(max(normalized) / min(normalized), 3.0)
        with self.assertRaises(ValueError):
            heat_probe.gradient_bound_ladder(f, Power(0.5), [0.1], 0, 0)
