from ._base import LabCommand


class Command(LabCommand):
    subcommand = "stability"
    help = "Exceedance ladder for the smooth regularizations of the Holder drift on shared drivers."
