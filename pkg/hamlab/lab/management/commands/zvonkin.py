from ._base import LabCommand


class Command(LabCommand):
    subcommand = "zvonkin"
    help = "Lambda sweep, envelope slope and the regularizing transform of the drift."
