from ._base import LabCommand


class Command(LabCommand):
    subcommand = "sde"
    help = "Euler experiments on the degenerate SDE presets (Lyapunov, moments, pathwise gaps, Jacobian, law)."
