from ._base import LabCommand


class Command(LabCommand):
    subcommand = "resolvent"
    help = "Resolvent of the Volterra kernel phi(t)/t with renewal and domination checks."
