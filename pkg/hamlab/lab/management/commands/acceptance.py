from ._base import LabCommand


class Command(LabCommand):
    subcommand = "acceptance"
    help = "Run the pinned acceptance suite and write acceptance.json."
