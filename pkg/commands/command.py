"""
Implements the base Command and CmdSet classes for the bench commands.

"""

import argparse
import sys


class Command:
    """
    Base command. This is on the form

        python -m commands <key> <args>

    The class docstring is the command's help: its first line is the summary
    shown in the verb list, the rest the full description. Subclasses declare
    their options in `add_arguments` and do the work in `func`, which returns
    the process exit code.

    """

    key = ""
    aliases = ()

    def __init__(self, stdout=None):
        self.opts = None
        self.stdout = stdout or sys.stdout

    @property
    def help_summary(self) -> str:
        doc = (self.__doc__ or "").strip()
        return doc.splitlines()[0] if doc else self.key

    def add_to(self, subparsers):
        parser = subparsers.add_parser(
            self.key,
            aliases=list(self.aliases),
            help=self.help_summary,
            description=self.__doc__,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        self.add_arguments(parser)
        return parser

    def add_arguments(self, parser: argparse.ArgumentParser):
        pass

    def parse(self):
        pass

    def func(self) -> int:
        return 0

    def msg(self, text: str):
        self.stdout.write(f"{text}\n")


class CmdSet:
    """
    A named group of commands, addressable by key or alias.

    """

    key = ""

    def __init__(self):
        self._commands = {}
        self.at_cmdset_creation()

    def at_cmdset_creation(self):
        """
        Populates the cmdset
        """
        pass

    def add(self, command: Command):
        for name in (command.key, *command.aliases):
            self._commands[name] = command

    def get(self, name: str) -> Command | None:
        return self._commands.get(name)

    def __iter__(self):
        seen = []
        for command in self._commands.values():
            if command not in seen:
                seen.append(command)
        return iter(seen)

    def __len__(self):
        return len(list(iter(self)))
