#!/usr/bin/env python

import argparse
import sys

from deep_elastic.commands import load_commands
from deep_elastic.display import Display
from deep_elastic.errors import DenError, UsageError
from deep_elastic.utils import show_traceback

DISPLAY = None

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class ArgumentParser(argparse.ArgumentParser):

    '''
    argparse exits with status 2 on bad arguments; we want UsageError instead
    '''

    def error(self, message):
        raise UsageError('%s\n%s' % (message, self.format_usage().rstrip()))


def build_parser(commands):
    parser = ArgumentParser(prog='deep-elastic', description='Instance-wise model selection on an elastic network')
    parser.add_argument(
        '-v', '--verbose',
        action='count',
        help='Increase verbosity level (overrides DEN_LOG)',
        default=0,
    )
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=ArgumentParser)
    for command in commands:
        sub = subparsers.add_parser(command.NAME, help=command.DESCR, description=command.DESCR)
        command.configure_parser(sub)
        sub.set_defaults(handler=command)
    return parser


def run_command(argv, environ=None):
    '''
    Run one subcommand and return its exit code: 0 success, 1 usage error,
    2 runtime or validation failure
    '''
    global DISPLAY

    DISPLAY = Display()
    DISPLAY.set_verbosity(0)
    DISPLAY.set_from_env(environ)

    try:
        commands = load_commands()
        parser = build_parser(commands)
    except Exception as e:
        show_traceback(DISPLAY.get_verbosity())
        DISPLAY.error('Failed to load commands: %s' % str(e))
        return EXIT_FAILURE

    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        DISPLAY.error(str(e))
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code or EXIT_OK

    if args.verbose:
        DISPLAY.set_verbosity(args.verbose)
    if args.command is None:
        DISPLAY.error('no command given\n%s' % parser.format_usage().rstrip())
        return EXIT_USAGE

    DISPLAY.vv('Running with args:')
    DISPLAY.vv()
    for arg in sorted(vars(args)):
        if arg == 'handler':
            continue
        DISPLAY.vv('%s: %s' % (arg, getattr(args, arg)))
    DISPLAY.vv()

    try:
        return args.handler.run(args)
    except UsageError as e:
        DISPLAY.error(str(e))
        return EXIT_USAGE
    except (DenError, OSError) as e:
        show_traceback(DISPLAY.get_verbosity())
        DISPLAY.error('%s failed: %s' % (args.command, str(e)))
        return EXIT_FAILURE


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == '__main__':
    main()
