import importlib
import pkgutil

from deep_elastic.display import Display
from deep_elastic.errors import UsageError
from deep_elastic.run_config import RunConfig, load_config
from deep_elastic.trainer import check_datasets
from deep_elastic.utils import dict_merge


class CommandBase(object):

    '''
    Base class for subcommands

    Subclasses live in their own module of this package, named after the
    command with '-' replaced by '_', and are exposed as `Command`.
    '''

    NAME = None
    DESCR = None

    def __init__(self):
        self._display = Display()

    def __lt__(self, other):
        return self.NAME < other.NAME

    def configure_parser(self, parser):
        pass

    def run(self, args):
        raise NotImplementedError


def load_commands():
    '''
    Find, import, and instantiate all commands
    '''
    display = Display()
    commands = []
    for finder, name, ispkg in pkgutil.iter_modules(__path__):
        mod = importlib.import_module('%s.%s' % (__name__, name))
        cls = getattr(mod, 'Command')
        # The command name is derived from the module name, so enforce it
        if cls.NAME != name.replace('_', '-'):
            raise Exception('name specified in Command class (%s) does not match module name (%s)' % (cls.NAME, name))
        display.vvvv('Loaded command %s' % cls.NAME)
        commands.append(cls())
    return sorted(commands)


def load_run(config_path, seed=None):
    '''
    (run config, datasets, estimator config) for a config file, with the
    run seed optionally overridden
    '''
    config = load_config(config_path)
    if seed is not None:
        config = RunConfig(dict_merge(config.to_dict(), {'seed': seed}), path=config.path)
    datasets = config.load_datasets()
    task_classes = dict((t, d.classes) for t, d in datasets['train'].items())
    estimator_config = config.estimator_config(task_classes)
    check_datasets(datasets, estimator_config)
    return config, datasets, estimator_config


def split_datasets(datasets, split):
    if split not in datasets or not datasets[split]:
        raise UsageError("no data for split '%s'" % split)
    return datasets[split]
