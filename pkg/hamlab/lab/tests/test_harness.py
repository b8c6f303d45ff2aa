import csv
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command
from django.test import TestCase, override_settings
from rest_framework import serializers

from lab import acceptance, harness
from lab.heat_probe import GridFunction
from lab.models import ExperimentRun


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def call(self, subcommand, out, *args, seed=7, shards=2):
        stdout = StringIO()
        call_command(subcommand, *args, '--seed', str(seed), '--shards', str(shards),
                     '--out', str(self.tmp / out), stdout=stdout)
        return stdout.getvalue()

    def read_csv(self, out, name):
        with (self.tmp / out / f"{name}.csv").open(newline="") as fh:
            return list(csv.reader(fh))


class ResolventCommandTests(CommandTestCase):
    def test_oracle_run_writes_artifacts(self):
        output = self.call('resolvent', 'res', '--phi', 'pow(1)', '--expect', '2.718281828459045')
        self.assertIn('PASS a(T) oracle', output)
        out = self.tmp / 'res'
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['subcommand'], 'resolvent')
        self.assertEqual(manifest['seed'], 7)
        # defaults are echoed explicitly
        self.assertEqual(manifest['params']['n_steps'], 4096)
        self.assertEqual(manifest['params']['phi'], 'pow(1.0)')
        rows = self.read_csv('res', 'resolvent')
        self.assertEqual(rows[0], ['t', 'a1', 'a', 'ratio'])
        self.assertEqual(len(rows), 4097)
        summary = (out / 'summary.txt').read_text()
        self.assertTrue(summary.rstrip().endswith('assertions passed'))
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'PASSED')

    def test_failed_assertion_exits_one(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('resolvent', 'bad', '--phi', 'pow(1)', '--expect', '3.0')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('FAIL a(T) oracle', (self.tmp / 'bad' / 'summary.txt').read_text())
        self.assertEqual(ExperimentRun.objects.get().status, 'FAILED')

    def test_non_dini_modulus_is_a_config_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('resolvent', 'notdini', '--phi', 'logpow(1)')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('NotDiniError', str(ctx.exception))
        self.assertFalse((self.tmp / 'notdini').exists())
        self.assertEqual(ExperimentRun.objects.get().status, 'ERROR')


class ValidationTests(CommandTestCase):
    def test_missing_required_key(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('linear', 'missing')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('probe', str(ctx.exception))
        self.assertFalse((self.tmp / 'missing').exists())

    def test_bad_value_names_the_key(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('heat', 'even', '--probe', 'semigroup', '--n', '1024')
        self.assertIn('n:', str(ctx.exception))
        self.assertFalse(ExperimentRun.objects.exists())

    def test_unknown_keys_rejected(self):
        config = harness.ExperimentConfig('modulus', 1, 1, {'bogus': '1'}, str(self.tmp / 'unknown'))
        with self.assertRaises(serializers.ValidationError) as ctx:
            harness.run(config)
        self.assertIn('bogus', ctx.exception.detail)
        self.assertFalse((self.tmp / 'unknown').exists())

    def test_unparseable_modulus(self):
        with self.assertRaises(CommandError):
            self.call('modulus', 'parse', '--phi', 'logpow(')

    def test_relative_out_resolves_under_output_root(self):
        with override_settings(LAB_OUTPUT_ROOT=self.tmp / 'root'):
            call_command('linear', '--probe', 'q_inverse', '--out', 'rel', stdout=StringIO())
        self.assertTrue((self.tmp / 'root' / 'rel' / 'q_inverse.csv').exists())


class SubcommandTests(CommandTestCase):
    def test_modulus(self):
        self.call('modulus', 'mod', '--phi', 'logpow(2)', '--expect', 'converges')
        summary = dict(self.read_csv('mod', 'modulus')[1:])
        self.assertEqual(summary['verdict'], 'converges')
        self.assertEqual(self.read_csv('mod', 'class_c')[0], ['k', 'criterion', 'partial_integral'])

    def test_linear_q_inverse(self):
        self.call('linear', 'q', '--probe', 'q_inverse')
        fit = self.read_csv('q', 'q_inverse_fit')
        self.assertEqual(fit[0], ['quantity', 'slope', 'ci_low', 'ci_high'])
        self.assertAlmostEqual(float(fit[1][1]), -3.0, delta=0.01)

    def test_linear_null_shift_is_deterministic(self):
        self.call('linear', 'a', '--probe', 'null_shift', '--trials', '1')
        self.call('linear', 'b', '--probe', 'null_shift', '--trials', '1')
        self.assertEqual((self.tmp / 'a' / 'null_shift.csv').read_bytes(),
                         (self.tmp / 'b' / 'null_shift.csv').read_bytes())

    def test_heat_semigroup(self):
        output = self.call('heat', 'heat', '--probe', 'semigroup', '--function', 'cos', '--n', '513')
        self.assertIn('PASS semigroup property', output)

    def test_heat_grid_file(self):
        path = self.tmp / 'grid.txt'
        GridFunction.from_function(lambda x: np.sqrt(np.minimum(np.abs(x), 1.0)), 1, 513, 3.0).save(path)
        self.call('heat', 'file', '--probe', 'modulus', '--grid_file', str(path))
        self.assertTrue((self.tmp / 'file' / 'heat_modulus.csv').exists())

    def test_sde_lyapunov(self):
        output = self.call('sde', 'lyap', '--preset', 'example_1_1', '--probe', 'lyapunov')
        self.assertIn('PASS hessian ratio <= 2', output)

    def test_sde_jacobian_linear(self):
        self.call('sde', 'jac', '--preset', 'linear', '--probe', 'jacobian', '--N', '200')
        rows = self.read_csv('jac', 'jacobian')
        self.assertEqual(len(rows), 5)

    def test_zvonkin_envelope(self):
        self.call('zvonkin', 'env', '--probe', 'envelope')
        fit = dict(self.read_csv('env', 'envelope_fit')[1:])
        self.assertAlmostEqual(float(fit['slope']), -1.0 / 6.0, delta=0.05)

    def test_zvonkin_transform_checks_between_nodes(self):
        try:
            self.call('zvonkin', 'tr', '--probe', 'transform', '--lam', '1000', '--N', '20', '--grid_n', '5')
        except CommandError as exc:
            self.assertEqual(exc.returncode, 1)
        summary = dict(self.read_csv('tr', 'transform_summary')[1:])
        self.assertLess(float(summary['g_grid_gap']), 1e-6)
        scales = [float(row[0]) for row in self.read_csv('tr', 'lipschitz_transformed')[1:]]
        self.assertEqual(len(scales), 8)
        self.assertAlmostEqual(max(scales), 0.5)
        self.assertAlmostEqual(min(scales), 0.5 / 128)


class AcceptanceCommandTests(CommandTestCase):
    def test_selected_criteria(self):
        self.call('acceptance', 'acc', '--criteria', 'q_inverse,13,null_shift', '--quick', 'true')
        report = json.loads((self.tmp / 'acc' / 'acceptance.json').read_text())
        self.assertEqual(sorted(report['criteria']), ['lyapunov', 'null_shift', 'q_inverse'])
        self.assertTrue(report['passed'])
        self.assertTrue((self.tmp / 'acc' / 'q_inverse__q_inverse.csv').exists())

    def test_tightened_tolerance_fails(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('acceptance', 'tight', '--criteria', '4', '--quick', 'true', '--tolerance_scale', '0.01')
        self.assertEqual(ctx.exception.returncode, 1)
        report = json.loads((self.tmp / 'tight' / 'acceptance.json').read_text())
        self.assertFalse(report['criteria']['scaling']['passed'])

    def test_unknown_criterion(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('acceptance', 'none', '--criteria', 'warp_drive')
        self.assertEqual(ctx.exception.returncode, 2)

    def test_determinism_repeats_monte_carlo_criteria(self):
        for key in ('bismut', 'lambda_sweep', 'stability'):
            self.assertIn(key, acceptance.DETERMINISM_KEYS)
        self.assertTrue(set(acceptance.DETERMINISM_KEYS) <= set(acceptance.CRITERIA_BY_KEY))
        sweep = acceptance.CRITERIA_BY_KEY['lambda_sweep']
        first, second = sweep.run(7, 2, 1.0, True), sweep.run(7, 2, 1.0, True)
        self.assertEqual(first.tables[0].name, 'lambda_sweep')
        self.assertEqual(first.tables[0].rows, second.tables[0].rows)
