"""Shared plumbing for the experiment subcommands.

``manage.py <subcommand> [--key value]... --seed N --out DIR``. The
``--key`` options are generated from the subcommand's parameter schema.
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from lab.errors import LabError
from lab.harness import ExperimentConfig, run
from lab.serializers import SCHEMAS

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
ASSERTION_FAILURE = 1


def format_errors(detail):
    if isinstance(detail, dict):
        return "; ".join(f"{key}: {format_errors(value)}" for key, value in detail.items())
    if isinstance(detail, list):
        return ", ".join(format_errors(v) for v in detail)
    return str(detail)


class LabCommand(BaseCommand):
    subcommand = None

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=None,
                            help=f"64-bit seed (default {settings.LAB_DEFAULT_SEED})")
        parser.add_argument('--shards', type=int, default=None,
                            help=f"RNG shards (default {settings.LAB_DEFAULT_SHARDS})")
        parser.add_argument('--out', required=True,
                            help="output directory; relative paths resolve under LAB_OUTPUT_ROOT")
        for name, field in SCHEMAS[self.subcommand]().fields.items():
            parser.add_argument(f'--{name}', dest=f'param_{name}', default=None,
                                help=field.help_text or f"schema field {name}")

    def handle(self, *args, **options):
        params = {
            key[len('param_'):]: value
            for key, value in options.items()
            if key.startswith('param_') and value is not None
        }
        config = ExperimentConfig(
            subcommand=self.subcommand,
            seed=settings.LAB_DEFAULT_SEED if options['seed'] is None else options['seed'],
            shards=settings.LAB_DEFAULT_SHARDS if options['shards'] is None else options['shards'],
            params=params,
            out_dir=options['out'],
        )
        try:
            result = run(config)
        except serializers.ValidationError as exc:
            raise CommandError(f"invalid parameters: {format_errors(exc.detail)}", returncode=CONFIG_ERROR)
        except LabError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=CONFIG_ERROR)

        for assertion in result.outcome.assertions:
            line = f"{'PASS' if assertion.passed else 'FAIL'} {assertion.name}"
            self.stdout.write(self.style.SUCCESS(line) if assertion.passed else self.style.ERROR(line))
        if result.exit_code:
            raise CommandError(f"{self.subcommand}: {result.run.summary} (artifacts in {result.out_dir})",
                               returncode=ASSERTION_FAILURE)
        self.stdout.write(self.style.SUCCESS(f"{self.subcommand}: {result.run.summary} -> {result.out_dir}"))
