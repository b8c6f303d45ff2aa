import math

import numpy as np
from django.test import SimpleTestCase

from lab import sde_lab, zvonkin
from lab.errors import HullError, TransformError
from lab.modulus import Power
from lab.zvonkin import TransformField


def small_field(amplitude=0.2):
    axis = np.linspace(-2.0, 2.0, 41)
    fn = lambda p: amplitude * np.stack([np.sin(p[:, 1]), np.cos(p[:, 0])], axis=1)

    def grad_fn(p):
        g = np.zeros((len(p), 2, 2))
        g[:, 0, 1] = amplitude * np.cos(p[:, 1])
        g[:, 1, 0] = -amplitude * np.sin(p[:, 0])
        return g

    return TransformField.from_function([axis, axis], fn, lam=10.0, grad_fn=grad_fn)


class TransformFieldTests(SimpleTestCase):
    def test_interpolation_is_exact_on_nodes(self):
        field = small_field()
        node = np.array([[0.5, -1.0]])
        np.testing.assert_allclose(field.evaluate(node)[0], [0.2 * math.sin(-1.0), 0.2 * math.cos(0.5)], atol=1e-12)

    def test_outside_hull(self):
        with self.assertRaises(HullError):
            small_field().evaluate(np.array([[3.0, 0.0]]))

    def test_text_round_trip(self):
        field = small_field()
        again = TransformField.from_text(field.to_text())
        np.testing.assert_array_equal(again.u, field.u)
        np.testing.assert_array_equal(again.grad, field.grad)
        self.assertEqual(again.lam, field.lam)


class TransformTests(SimpleTestCase):
    def test_inverse_round_trip(self):
        transform = zvonkin.build_transform(small_field())
        self.assertAlmostEqual(transform.contraction, 0.2, places=9)
        points = np.random.default_rng(0).uniform(-1.0, 1.0, (50, 2))
        back = transform.inverse(transform.forward(points))
        self.assertLess(float(np.max(np.abs(back - points))), 1e-9)

    def test_large_contraction_rejected(self):
        with self.assertRaises(TransformError):
            zvonkin.build_transform(small_field(0.6))

    def test_zero_field_leaves_coefficients_untouched(self):
        axis = np.linspace(-2.0, 2.0, 21)
        field = TransformField.from_function([axis, axis], lambda p: np.zeros_like(p), lam=5.0,
                                             grad_fn=lambda p: np.zeros((len(p), 2, 2)))
        coeffs = zvonkin.transformed_coeffs(sde_lab.preset("linear", sigma=1.5), zvonkin.build_transform(field))
        y = np.array([[0.3, -0.4], [-1.0, 1.2]])
        np.testing.assert_array_equal(coeffs.g(y), 0.0)
        np.testing.assert_allclose(coeffs.theta(y), np.broadcast_to([[0.0], [1.5]], (2, 2, 1)), atol=1e-15)

    def test_constant_field_gives_lambda_times_shift(self):
        axis = np.linspace(-2.0, 2.0, 21)
        shift = np.array([0.1, -0.2])
        field = TransformField.from_function([axis, axis], lambda p: np.broadcast_to(shift, p.shape), lam=5.0,
                                             grad_fn=lambda p: np.zeros((len(p), 2, 2)))
        coeffs = zvonkin.transformed_coeffs(sde_lab.preset("linear"), zvonkin.build_transform(field))
        y = np.array([[0.3, -0.4], [-1.0, 1.2]])
        np.testing.assert_allclose(coeffs.g(y), np.broadcast_to(5.0 * shift, (2, 2)), atol=1e-12)


class MonteCarloTests(SimpleTestCase):
    def setUp(self):
        self.model = sde_lab.preset("linear")
        self.lam = 4.0
        self.exact_slope = (1.0 - math.exp(-self.lam)) / self.lam

    def test_solve_u_for_linear_drift(self):
        axis = np.linspace(-1.0, 1.0, 3)
        field = zvonkin.solve_u(self.model, self.lam, 1.0, [axis, axis], h=1.0 / 64, N=400, seed=1)
        u1 = field.u[-1, :, 0]
        se = field.u_stderr[-1, :, 0]
        expected = field.points[:, 1] * self.exact_slope
        self.assertTrue(np.all(np.abs(u1 - expected) <= 4 * se + 1e-3))
        np.testing.assert_array_equal(field.u[-1, :, 1], 0.0)

    def test_gradient_is_deterministic_for_linear_drift(self):
        axis = np.linspace(-1.0, 1.0, 3)
        field = zvonkin.solve_u(self.model, self.lam, 1.0, [axis, axis], h=1.0 / 64, N=50, seed=1)
        field = zvonkin.grad_u(field, self.model)
        self.assertAlmostEqual(field.contraction, self.exact_slope, delta=1e-3)
        field = zvonkin.grad_u(field, self.model, method="jacobian_flow")
        self.assertAlmostEqual(field.contraction, self.exact_slope, delta=1e-3)

    def test_lambda_sweep_is_monotone(self):
        report = zvonkin.lambda_sweep(self.model, [1.0, 4.0, 16.0, 100.0], 1.0, [[0.0, 0.0]], h=1.0 / 64, N=50)
        self.assertTrue(report.monotone)
        self.assertEqual(report.threshold, 4.0)
        with self.assertRaises(ValueError):
            zvonkin.lambda_sweep(self.model, [1.0, 2.0, 3.0, 4.0], 1.0, [[0.0, 0.0]], h=1.0 / 64, N=50)


    def test_constant_source_closed_form(self):
        axis = np.linspace(-1.0, 1.0, 3)
        source = lambda t, x: np.full_like(x, 0.7)
        ladder = [0.0, 0.25, 0.5, 1.0]
        field = zvonkin.solve_u(self.model, self.lam, 1.0, [axis, axis], h=1.0 / 64, N=20, seed=2,
                                time_ladder=ladder, f=source)
        np.testing.assert_array_equal(field.u[0], 0.0)
        for k, tau in enumerate(ladder):
            expected = 0.7 * (1.0 - math.exp(-self.lam * tau)) / self.lam
            np.testing.assert_allclose(field.u[k], expected, atol=2e-4)

    def test_scattered_evaluation_matches_grid(self):
        axis = np.linspace(-1.0, 1.0, 3)
        field = zvonkin.solve_u(self.model, self.lam, 1.0, [axis, axis], h=1.0 / 64, N=50, seed=3)
        u, se = zvonkin.evaluate_u(self.model, self.lam, 1.0, field.points, h=1.0 / 64, N=50, seed=3)
        np.testing.assert_allclose(u, field.u[-1], rtol=0.0, atol=1e-14)
        np.testing.assert_allclose(se, field.u_stderr[-1], rtol=0.0, atol=1e-14)

    def test_scattered_evaluation_is_lipschitz_off_grid(self):
        scattered = lambda x: self.lam * zvonkin.evaluate_u(self.model, self.lam, 1.0, x, h=1.0 / 64, N=50, seed=3)[0]
        report = zvonkin.lipschitz_probe(scattered, (0.1, -0.3), (0.0, 1.0), [2.0 ** -k for k in range(2, 7)])
        self.assertAlmostEqual(report.slope, 0.0, places=6)
        self.assertAlmostEqual(report.rows[0][1], self.lam * self.exact_slope, delta=1e-3)

    def test_a_does_not_enter_the_simulated_paths(self):
        model = sde_lab.preset("example_1_1", c2=1.0)
        self.assertIsNotNone(model.a)
        self.assertIsNone(zvonkin.transport_model(model).a)
        axis = np.linspace(-0.5, 0.5, 3)
        with_a = zvonkin.solve_u(model, self.lam, 0.5, [axis, axis], h=1.0 / 64, N=20, seed=4)
        without_a = zvonkin.solve_u(zvonkin.transport_model(model), self.lam, 0.5, [axis, axis],
                                    h=1.0 / 64, N=20, seed=4)
        np.testing.assert_array_equal(with_a.u, without_a.u)


class EnvelopeAndLipschitzTests(SimpleTestCase):
    def test_envelope_slope(self):
        slope, values = zvonkin.envelope_slope(Power(1.0 / 3.0), np.logspace(0.0, 4.0, 9))
        self.assertAlmostEqual(slope, -1.0 / 6.0, delta=0.05)
        self.assertTrue(all(b < a for a, b in zip(values, values[1:])))

    def test_raw_holder_drift_is_not_lipschitz(self):
        report = zvonkin.lipschitz_probe(lambda x: np.abs(x[:, 0]) ** (2.0 / 3.0), (0.0, 0.0), (1.0, 0.0),
                                         [2.0 ** -k for k in range(10, 25)])
        self.assertAlmostEqual(report.slope, -1.0 / 3.0, delta=0.07)

    def test_smooth_function_has_flat_profile(self):
        report = zvonkin.lipschitz_probe(lambda x: 3.0 * x[:, 0] + x[:, 1], (0.2, 0.1), (1.0, 0.0),
                                         [2.0 ** -k for k in range(2, 8)])
        self.assertAlmostEqual(report.slope, 0.0, places=6)
        self.assertAlmostEqual(report.rows[0][1], 3.0, places=9)
