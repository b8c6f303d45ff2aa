from ._base import LabCommand


class Command(LabCommand):
    subcommand = "heat"
    help = "Heat-semigroup checks on sampled functions (modulus estimator, commutator and moment ladders)."
