import math

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate

from lab import modulus
from lab.errors import LabError, ModulusDomainError, ModulusParseError, ParameterError, UnboundedSupremumError
from lab.modulus import Bracket, ClassCGamma, LogPower, Power, Product, parse_modulus


class ParseModulusTests(SimpleTestCase):
    def test_round_trips_through_config(self):
        for text in ("logpow(2.0)", "pow(0.5)", "const(1.0)", "gamma2", "prod(pow(0.5), logpow(1.0))"):
            self.assertEqual(parse_modulus(text).config(), text)

    def test_fractions_are_accepted(self):
        self.assertAlmostEqual(parse_modulus("pow(1/3)").alpha, 1.0 / 3.0)

    def test_bracket_computes_its_linear_slope(self):
        psi = parse_modulus("bracket(1/3, logpow(2))")
        self.assertIsInstance(psi, Bracket)
        self.assertTrue(psi.c_alpha > 0)
        self.assertAlmostEqual(psi(2.0), 2.0 * psi.c_alpha)

    def test_malformed_input(self):
        for text in ("logpow(", "wat(1)", "pow(1) pow(1)", "pow(1;)"):
            with self.assertRaises(ModulusParseError):
                parse_modulus(text)

    def test_out_of_range_exponent(self):
        with self.assertRaises(ModulusDomainError):
            parse_modulus("pow(1.5)")


class EvaluateTests(SimpleTestCase):
    def test_nonpositive_t_rejected(self):
        with self.assertRaises(ModulusDomainError):
            modulus.evaluate(Power(0.5), 0.0)
        with self.assertRaises(ModulusDomainError):
            modulus.evaluate(Power(0.5), np.array([0.1, -1.0]))

    def test_logpow_values(self):
        self.assertAlmostEqual(modulus.evaluate(LogPower(2.0), 0.5), math.log(3.0) ** -2)

    def test_tiny_t_does_not_underflow(self):
        self.assertTrue(LogPower(2.0)(1e-300) > 0.0)

    def test_product(self):
        phi = Product(Power(0.5), LogPower(1.0))
        self.assertAlmostEqual(phi(0.25), 0.5 / math.log(5.0))


class DiniTests(SimpleTestCase):
    def test_power_one_integrates_to_one(self):
        result = modulus.dini_integral(Power(1.0))
        self.assertEqual(result.verdict, "converges")
        self.assertAlmostEqual(result.value, 1.0, places=6)

    def test_logpow_two_converges(self):
        result = modulus.dini_integral(LogPower(2.0))
        self.assertEqual(result.verdict, "converges")
        self.assertTrue(math.isfinite(result.value))

    def test_logpow_one_diverges(self):
        self.assertEqual(modulus.dini_integral(LogPower(1.0)).verdict, "diverges")

    def test_constant_diverges(self):
        self.assertEqual(modulus.dini_integral(parse_modulus("const(1)")).verdict, "diverges")

    def test_ladder_has_one_increment_per_rung(self):
        self.assertEqual(len(modulus.dini_integral(Power(0.5)).increments), modulus.DINI_LADDER_DEPTH)

    def test_logpow_just_above_one_converges(self):
        for beta in (1.02, 1.1, 1.15):
            result = modulus.dini_integral(LogPower(beta))
            self.assertEqual(result.verdict, "converges")
            self.assertTrue(math.isfinite(result.value))
            self.assertGreater(result.value, float(np.sum(result.increments)))

    def test_logpow_value_includes_the_tail(self):
        exact, _ = integrate.quad(lambda u: np.logaddexp(0.0, u) ** -2.0, 0.0, np.inf)
        self.assertAlmostEqual(modulus.dini_integral(LogPower(2.0)).value, exact, delta=1e-6)

    def test_products_and_class_c(self):
        self.assertEqual(modulus.dini_integral(Product(Power(0.5), LogPower(1.0))).verdict, "converges")
        self.assertEqual(modulus.dini_integral(Product(LogPower(0.5), LogPower(0.5))).verdict, "diverges")
        self.assertEqual(modulus.dini_integral(ClassCGamma(2)).verdict, "diverges")


class SlowVariationTests(SimpleTestCase):
    def test_logpow_is_slowly_varying(self):
        # at t = 2^-40 the lambda = 2 ratio is (40/39)^2
        self.assertAlmostEqual(modulus.slow_variation_defect(LogPower(2.0), [0.5, 2.0]), 0.05194, delta=1e-4)

    def test_power_is_not(self):
        self.assertGreater(modulus.slow_variation_defect(Power(0.5), [0.5, 2.0]), 0.2)

    def test_ladder_decreases_for_logpow(self):
        rows = modulus.slow_variation_ladder(LogPower(2.0), [2.0])
        self.assertLess(rows[-1][1], rows[0][1])

    def test_empty_lambdas(self):
        with self.assertRaises(ParameterError) as ctx:
            modulus.slow_variation_defect(LogPower(2.0), [])
        self.assertIsInstance(ctx.exception, LabError)


class BracketTests(SimpleTestCase):
    def test_power_bracket_slope_is_one(self):
        psi = modulus.bracket(0.5, Power(0.5))
        self.assertAlmostEqual(psi.c_alpha, 1.0, places=9)
        self.assertTrue(modulus.is_monotone(psi))

    def test_unbounded_supremum(self):
        with self.assertRaises(UnboundedSupremumError):
            modulus.linear_extension(_Growing())

    def test_property_suite_finite_for_logpow_bracket(self):
        psi = modulus.bracket(0.5, LogPower(2.0))
        report = modulus.property_suite(psi, 0.5, 0.1, modulus.default_property_grid(21))
        self.assertTrue(report.finite)
        self.assertEqual(report.violations, [])
        self.assertGreaterEqual(report.C_sub, 0.5)

    def test_bar_modulus_power_one(self):
        # t + t * log(1/t) + t for phi(s) = s
        t = 0.25
        self.assertAlmostEqual(modulus.bar_modulus(Power(1.0), t), 2 * t + t * math.log(1 / t), places=8)


class _Growing(modulus.ModulusFn):
    def at_log_scale(self, u):
        return 1.0 + np.asarray(u, dtype=float)

    def config(self):
        return "growing"


class ClassCTests(SimpleTestCase):
    def test_gamma_levels(self):
        for level in (1, 2, 3):
            gamma = ClassCGamma(level)
            self.assertTrue(gamma(0.5) > 0)
            self.assertTrue(gamma(1e-6) > gamma(1e-3))

    def test_derivative_matches_finite_difference(self):
        for level in (1, 2, 3):
            gamma = ClassCGamma(level)
            t, h = 0.01, 1e-7
            fd = (gamma(t + h) - gamma(t - h)) / (2 * h)
            self.assertAlmostEqual(float(gamma.derivative(t)) / fd, 1.0, places=4)

    def test_report_flags_divergence(self):
        report = modulus.class_c_report(1)
        self.assertTrue(report.diverges)
        partial = [v for _, v in report.partial_integrals]
        self.assertTrue(all(b > a for a, b in zip(partial, partial[1:])))

    def test_unknown_level(self):
        with self.assertRaises(ModulusParseError):
            ClassCGamma(4)
