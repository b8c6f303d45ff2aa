from ._base import LabCommand


class Command(LabCommand):
    subcommand = "modulus"
    help = "Dini classification, slow variation and bracket properties of a modulus of continuity."
