import numpy as np
from django.test import SimpleTestCase

from lab import sde_lab
from lab.errors import ModelParameterError, StepSizeError
from lab.sde_lab import BrownianDriver


class PresetTests(SimpleTestCase):
    def test_every_preset_builds(self):
        for name in sde_lab.PRESETS:
            model = sde_lab.preset(name)
            x = np.array([[0.3, -0.4]])
            self.assertEqual(model.drift(0.0, x).shape, (1, 2))
            self.assertEqual(model.jacobian(0.0, x).shape, (1, 2, 2))

    def test_unknown_preset_and_parameters(self):
        with self.assertRaises(ModelParameterError):
            sde_lab.preset("nope")
        with self.assertRaises(ModelParameterError):
            sde_lab.preset("linear", gamma=0.5)
        with self.assertRaises(ModelParameterError):
            sde_lab.preset("example_1_1", alpha=0.5)

    def test_finite_difference_jacobian_matches_analytic(self):
        model = sde_lab.preset("example_1_1", alpha=0.8, delta=0.1)
        x = np.array([[0.5, 0.2]])
        J = model.jacobian(0.0, x)[0]
        y = 0.5
        # d/dy of -1.8 y (y^2 + 0.01)^(-0.1)
        expected = -1.8 * ((y * y + 0.01) ** -0.1 - 0.2 * y * y * (y * y + 0.01) ** -1.1)
        self.assertAlmostEqual(J[1, 0], expected, places=6)
        self.assertAlmostEqual(J[0, 1], 1.0, places=8)

    def test_example_drift_vanishes_at_the_origin(self):
        model = sde_lab.preset("example_1_1", alpha=0.8)
        x = np.array([[0.0, 0.3], [0.5, 0.3]])
        drift = model.drift(0.0, x)
        np.testing.assert_array_equal(drift[0], [0.3, 0.0])
        self.assertAlmostEqual(drift[1, 1], -1.8 * 0.5 ** 0.8)
        np.testing.assert_array_equal(model.lyapunov.grad(x)[0], [0.0, 0.3])
        report = sde_lab.lyapunov_check(model, sde_lab.phase_grid(1, 1, 10.0, 21))
        self.assertTrue(report.finite)

    def test_path_from_the_origin_is_not_flagged(self):
        model = sde_lab.preset("example_1_1", alpha=0.8)
        driver = BrownianDriver(2, 1.0, 1.0 / 32, 20)
        path = sde_lab.integrate(model, np.zeros(2), 1.0 / 32, 1.0, driver)
        self.assertEqual(path.flag_rate, 0.0)
        self.assertTrue(np.all(np.isfinite(path.states)))

    def test_linear_path_only_for_linear_models(self):
        self.assertEqual(sde_lab.preset("linear", B=2.0).linear_path(1.0).end, 1.0)
        with self.assertRaises(ModelParameterError):
            sde_lab.preset("holder_drift").linear_path(1.0)


class DriverTests(SimpleTestCase):
    def test_coarse_increments_are_sums_of_fine_ones(self):
        driver = BrownianDriver(3, 1.0, 1.0 / 64, 10)
        fine = driver.increments(1.0 / 64)
        coarse = driver.increments(1.0 / 16)
        self.assertEqual(coarse.shape, (10, 16, 1))
        np.testing.assert_allclose(coarse[:, 0], fine[:, :4].sum(axis=1))

    def test_step_sizes(self):
        driver = BrownianDriver(3, 1.0, 1.0 / 64, 10)
        with self.assertRaises(StepSizeError):
            driver.increments(3.0 / 64)
        with self.assertRaises(StepSizeError):
            BrownianDriver(3, 1.0, 0.3, 10)


class IntegrateTests(SimpleTestCase):
    def test_linear_jacobian_is_the_propagator(self):
        model = sde_lab.preset("linear", B=2.0)
        driver = BrownianDriver(1, 1.0, 1.0 / 128, 50)
        path = sde_lab.integrate(model, np.array([0.5, 0.0]), 1.0 / 128, 1.0, driver, with_jacobian=True)
        np.testing.assert_allclose(path.jacobian[:, 0], np.broadcast_to(np.eye(2), (50, 2, 2)))
        np.testing.assert_allclose(path.jacobian[:, -1], np.broadcast_to([[1.0, 2.0], [0.0, 1.0]], (50, 2, 2)), atol=1e-12)

    def test_linear_terminal_mean(self):
        model = sde_lab.preset("linear")
        driver = BrownianDriver(2, 1.0, 1.0 / 32, 4000)
        terminal = sde_lab.integrate(model, np.array([0.5, 0.0]), 1.0 / 32, 1.0, driver).terminal
        se = terminal.std(axis=0, ddof=1) / np.sqrt(len(terminal))
        self.assertLess(abs(terminal[:, 0].mean() - 0.5), 4 * se[0])
        self.assertLess(abs(terminal[:, 1].mean()), 4 * se[1])

    def test_horizon_must_be_a_multiple_of_the_step(self):
        model = sde_lab.preset("linear")
        driver = BrownianDriver(2, 1.0, 1.0 / 32, 10)
        with self.assertRaises(StepSizeError):
            sde_lab.integrate(model, np.zeros(2), 1.0 / 32, 0.3, driver)


class DiagnosticTests(SimpleTestCase):
    def test_example_lyapunov_report(self):
        model = sde_lab.preset("example_1_1", alpha=1.0, c2=0.0)
        report = sde_lab.lyapunov_check(model, sde_lab.phase_grid(1, 1, 10.0, 21))
        self.assertTrue(report.finite)
        self.assertGreaterEqual(report.min_H, 1.0)
        self.assertLessEqual(report.hessian_ratio, 2.0)
        self.assertLessEqual(report.generator_ratio, 1.0)

    def test_moment_estimate(self):
        model = sde_lab.preset("example_1_1")
        full = sde_lab.moment_diag(model, np.array([0.5, 0.0]), 1.0, 0.25, N=500, seed=4)
        half = sde_lab.moment_diag(model, np.array([0.5, 0.0]), 1.0, 0.25, N=500, seed=4, cap=25.0)
        self.assertTrue(np.isfinite(full.estimate))
        self.assertEqual(full.cap_hit_rate, 0.0)
        self.assertLessEqual(half.estimate, full.estimate)
        with self.assertRaises(ModelParameterError):
            sde_lab.moment_diag(model, np.zeros(2), 1.0, 1.5, N=10)

    def test_stability_ladder(self):
        family = lambda k: sde_lab.preset("holder_drift", delta=2.0 ** -k)
        report = sde_lab.stability_experiment(family, np.zeros(2), 1.0, 0.02, N=300, k_list=range(1, 5), h=1.0 / 64)
        self.assertEqual(report.reference_k, 6)
        self.assertEqual([r[0] for r in report.rows], [1, 2, 3, 4])
        self.assertTrue(all(0.0 <= r[1] <= 1.0 for r in report.rows))
        self.assertTrue(report.monotone)

    def test_pathwise_gap_shrinks(self):
        model = sde_lab.preset("linear")
        driver = BrownianDriver(5, 1.0, 1.0 / 256, 200)
        report = sde_lab.pathwise_gap(model, np.array([0.5, 0.0]), 1.0, driver, [1 / 8, 1 / 16, 1 / 32, 1 / 64])
        self.assertTrue(report.decreasing)
        self.assertAlmostEqual(report.order, 1.0, delta=0.25)
