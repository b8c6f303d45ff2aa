import math

import numpy as np
from django.test import SimpleTestCase

from lab import volterra
from lab.errors import NotDiniError
from lab.modulus import LogPower, Power


class ResolventTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.linear = volterra.resolvent(Power(1.0), 1.0, 4096)

    def test_constant_kernel_gives_exponential(self):
        # a_1 = 1 makes a(t) = exp(t)
        self.assertAlmostEqual(float(self.linear.resolvent[-1]), math.e, delta=1e-5)
        mid = self.linear.n_steps // 2 - 1
        self.assertAlmostEqual(float(self.linear.resolvent[mid]), math.exp(0.5), delta=1e-5)

    def test_renewal_residual_within_tolerance(self):
        self.assertLessEqual(volterra.renewal_residual(self.linear), volterra.renewal_tolerance(self.linear))
        self.assertEqual(volterra.renewal_residual(self.linear), self.linear.residual)

    def test_domination_constant(self):
        self.assertAlmostEqual(volterra.check_domination(self.linear), math.e, delta=1e-5)

    def test_rows(self):
        rows = self.linear.rows()
        self.assertEqual(len(rows), 4096)
        t, a1, a, ratio = rows[-1]
        self.assertAlmostEqual(t, 1.0)
        self.assertAlmostEqual(ratio, a / a1)

    def test_logpow_domination_stable_under_doubling(self):
        coarse = volterra.check_domination(volterra.resolvent(LogPower(2.0), 1.0, 1024))
        fine = volterra.check_domination(volterra.resolvent(LogPower(2.0), 1.0, 2048))
        self.assertTrue(math.isfinite(coarse))
        self.assertLess(abs(fine / coarse - 1.0), 0.1)

    def test_scaling_check_bounded(self):
        value = volterra.scaling_check(self.linear, 0.5)
        self.assertTrue(0.0 < value <= 1.0 + 1e-9)
        with self.assertRaises(ValueError):
            volterra.scaling_check(self.linear, 1.5)

    def test_not_dini(self):
        with self.assertRaises(NotDiniError):
            volterra.resolvent(LogPower(1.0), 1.0, 256)

    def test_too_few_steps(self):
        with self.assertRaises(ValueError):
            volterra.resolvent(Power(1.0), 1.0, 32)


class GronwallTests(SimpleTestCase):
    def test_constant_forcing(self):
        kg = volterra.resolvent(Power(1.0), 1.0, 512)
        nodes, out = volterra.gronwall_solve(lambda t: np.ones_like(t), Power(1.0), 0.0, 1.0, 512, kg=kg)
        self.assertEqual(out[0], 0.0)
        self.assertAlmostEqual(out[-1], volterra.check_domination(kg) * nodes[-1], places=9)

    def test_damping_lowers_the_envelope(self):
        kg = volterra.resolvent(Power(1.0), 1.0, 512)
        _, plain = volterra.gronwall_solve(lambda t: np.ones_like(t), Power(1.0), 0.0, 1.0, 512, kg=kg)
        _, damped = volterra.gronwall_solve(lambda t: np.ones_like(t), Power(1.0), 10.0, 1.0, 512, kg=kg)
        self.assertTrue(np.all(damped <= plain + 1e-15))
        self.assertLess(damped[-1], 0.2 * plain[-1])

    def test_negative_forcing_rejected(self):
        with self.assertRaises(ValueError):
            volterra.gronwall_solve(-np.ones(65), Power(1.0), 0.0, 1.0, 64)

    def test_exponential_damping_closed_form(self):
        kg = volterra.resolvent(Power(1.0), 1.0, 512)
        nodes, out = volterra.gronwall_solve(lambda t: np.ones_like(t), Power(1.0), 2.0, 1.0, 512, kg=kg)
        expected = volterra.check_domination(kg) * (1.0 - np.exp(-2.0 * nodes)) / 2.0
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_zero_forcing(self):
        _, out = volterra.gronwall_solve(np.zeros(65), Power(1.0), 2.0, 1.0, 64)
        self.assertFalse(np.any(out))
