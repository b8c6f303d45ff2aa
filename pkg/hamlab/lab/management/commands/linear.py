from ._base import LabCommand


class Command(LabCommand):
    subcommand = "linear"
    help = "Gaussian checks of the linear degenerate flow (covariance, Bismut formula, scalings, identities)."
