"""
Command sets

All bench commands are grouped in a cmdset; the launcher builds one
subcommand per command in `BenchCmdSet`.

To create new commands, see `commands/command.py`.

"""

from .bench import CmdAudit, CmdReport, CmdRun, CmdSweep
from .command import CmdSet


class BenchCmdSet(CmdSet):
    """
    The `BenchCmdSet` holds the experiment verbs: run, sweep, audit and report.
    """

    key = "DefaultBench"

    def at_cmdset_creation(self):
        """
        Populates the cmdset
        """
        self.add(CmdRun())
        self.add(CmdSweep())
        self.add(CmdAudit())
        self.add(CmdReport())
