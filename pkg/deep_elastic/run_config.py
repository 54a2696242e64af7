'''
Run configuration: a JSON (or YAML) document describing the estimator,
selector, training schedule, data and output location

Every key is declared in SCHEMA as a ConfigField; values are type/range
checked, unknown keys are reported together, and defaults are filled in so
that to_dict() gives the complete configuration.
'''

import copy
import json
import os.path

import yaml

from deep_elastic.data import (SPLITS, SyntheticSpec, gen_synthetic_tasks, load_csv, load_idx, split_off)
from deep_elastic.display import Display
from deep_elastic.errors import ConfigError, ConfigParseError
from deep_elastic.estimator import BlockConfig, EstimatorConfig, TaskHead
from deep_elastic.selector import DEFAULT_HIDDEN_WIDTH
from deep_elastic.trainer import DTYPES, INITIAL_DISTRIBUTIONS, TrainConfig
from deep_elastic.utils import dict_merge, json_dump, yaml_load

DATA_SOURCES = ('synthetic', 'csv', 'idx')

YAML_EXTENSIONS = ('.yml', '.yaml')


class ConfigField(object):

    '''
    One key of the run config and the constraints on its value
    '''

    _name = None
    _config = None
    _parent = None

    BASE_CONFIG = {
        # Whether field is required
        'required': False,
        # Default value
        'default': None,
        # Field description
        'description': '',
        # Expected type for field
        'type': None,
        # Expected type for list items
        'subtype': None,
        # Numeric bounds (inclusive, unless exclusive_min is set)
        'min': None,
        'max': None,
        'exclusive_min': False,
        # Allowed values
        'choices': None,
        # Field definitions (for dicts and lists of dicts)
        'fields': None,
    }

    def __init__(self, name, config, parent=None):
        self._name = name
        self._parent = parent
        self._config = self.BASE_CONFIG.copy()
        if config is not None:
            for key in config.keys():
                if key not in self.BASE_CONFIG:
                    raise ConfigError('unknown schema attribute "%s:%s"' % (self.get_full_name(), key))
            self._config.update(copy.deepcopy(config))
        self.convert_fields()

    def __getattr__(self, key, default=None):
        return self._config.get(key, default)

    __getitem__ = __getattr__
    get = __getattr__

    def __str__(self):
        return '<ConfigField name=%s config=%s>' % (self.get_full_name(), self._config)

    __repr__ = __str__

    def convert_fields(self):
        '''
        Replace items in 'fields' dict with ConfigField objects
        '''
        if self._config['fields'] is not None:
            for k, v in self._config['fields'].items():
                self._config['fields'][k] = ConfigField(k, v, parent=self)

    def get_full_name(self):
        '''
        Dotted name from the root, used in error messages
        '''
        parts = []
        field = self
        while field is not None:
            if field._name:
                parts.append(field._name)
            field = field._parent
        return '.'.join(reversed(parts))

    def validate_check_type(self, value):
        if isinstance(value, list):
            return 'list'
        if isinstance(value, dict):
            return 'dict'
        if isinstance(value, bool):
            return 'bool'
        if isinstance(value, int):
            return 'int'
        if isinstance(value, float):
            return 'float'
        if isinstance(value, str):
            return 'str'
        raise ConfigError('unsupported type: %s' % type(value).__name__, key=self.get_full_name())

    def _check_value(self, value, field_type, name):
        value_type = self.validate_check_type(value)
        # An int satisfies a float
        if value_type != field_type and not (field_type == 'float' and value_type == 'int'):
            raise ConfigError("'%s' should be type %s, got %s" % (name, field_type, value_type), key=name)
        if field_type in ('int', 'float'):
            if self.min is not None:
                if self.exclusive_min and not value > self.min:
                    raise ConfigError("'%s' must be greater than %s, got %r" % (name, self.min, value), key=name)
                if not self.exclusive_min and not value >= self.min:
                    raise ConfigError("'%s' must be at least %s, got %r" % (name, self.min, value), key=name)
            if self.max is not None and not value <= self.max:
                raise ConfigError("'%s' must be at most %s, got %r" % (name, self.max, value), key=name)
        if self.choices is not None and value not in self.choices:
            raise ConfigError("'%s' must be one of %s, got %r" % (name, ', '.join(self.choices), value), key=name)

    def _validate_fields(self, value, name):
        unmatched = []
        for field_name, field in self.fields.items():
            if field.required and value.get(field_name, None) is None:
                raise ConfigError("required field '%s.%s' not defined" % (name, field_name) if name else
                                  "required field '%s' not defined" % field_name,
                                  key='%s.%s' % (name, field_name) if name else field_name)
        for k, v in value.items():
            sub_name = '%s.%s' % (name, k) if name else k
            if k in self.fields:
                unmatched.extend(self.fields[k].validate(v, sub_name))
            else:
                unmatched.append(sub_name)
        return unmatched

    def validate(self, value, name=None):
        '''
        Check `value` against this field and return the dotted names of any
        keys the schema doesn't know
        '''
        name = self.get_full_name() if name is None else name
        if value is None or self.type is None:
            return []
        self._check_value(value, self.type, name)
        if self.type == 'dict' and self.fields is not None:
            return self._validate_fields(value, name)
        unmatched = []
        if self.type == 'list' and self.subtype is not None:
            for idx, item in enumerate(value):
                item_name = '%s[%d]' % (name, idx)
                item_type = self.validate_check_type(item)
                if item_type != self.subtype and not (self.subtype == 'float' and item_type == 'int'):
                    raise ConfigError("'%s' should be type %s, got %s" % (item_name, self.subtype, item_type),
                                      key=item_name)
                if self.subtype == 'dict' and self.fields is not None:
                    unmatched.extend(self._validate_fields(item, item_name))
        return unmatched

    def apply_default(self, value):
        '''
        Fill in defaults, recursing into dicts and lists of dicts
        '''
        if value is None:
            value = copy.deepcopy(self.default)
        if value is None or self.fields is None:
            return value
        if self.type == 'dict':
            return dict((k, field.apply_default(value.get(k, None))) for k, field in self.fields.items())
        if self.type == 'list' and self.subtype == 'dict':
            return [dict((k, field.apply_default(item.get(k, None))) for k, field in self.fields.items())
                    for item in value]
        return value


def train_fields():
    defaults = TrainConfig.DEFAULTS
    return {
        'rho': {'type': 'float', 'min': 0, 'default': defaults['rho'],
                'description': 'Weight of the sparsity penalty rho * mean(density)^2'},
        'tau': {'type': 'float', 'min': 0, 'max': 1, 'default': defaults['tau'],
                'description': 'Probability of the full model in the stage-1 structure mixture'},
        'epsilon': {'type': 'float', 'min': 0, 'max': 1, 'default': defaults['epsilon'],
                    'description': 'Initial probability of replacing a selector draw with a uniform one'},
        'epsilon_decay': {'type': 'float', 'min': 0, 'max': 1, 'default': defaults['epsilon_decay'],
                          'description': 'Factor applied to epsilon at every new stage'},
        'sample_count': {'type': 'int', 'min': 1, 'default': defaults['sample_count'],
                         'description': 'Structures sampled per instance for the selector gradient'},
        'stages': {'type': 'int', 'min': 1, 'default': defaults['stages'],
                   'description': 'Number of estimator/selector alternations'},
        'epochs_per_phase': {'type': 'int', 'min': 1, 'default': defaults['epochs_per_phase'],
                             'description': 'Epoch cap of every phase'},
        'selector_epochs': {'type': 'int', 'min': 0,
                            'description': 'Epoch cap of selector phases (defaults to epochs_per_phase)'},
        'patience': {'type': 'int', 'min': 1, 'default': defaults['patience'],
                     'description': 'Epochs without improvement before a phase stops'},
        'min_improvement': {'type': 'float', 'min': 0, 'default': defaults['min_improvement'],
                            'description': 'Relative improvement of the validation objective that counts'},
        'batch_size': {'type': 'int', 'min': 1, 'default': defaults['batch_size']},
        'lr_est': {'type': 'float', 'min': 0, 'exclusive_min': True, 'default': defaults['lr_est'],
                   'description': 'Estimator learning rate (SGD with Nesterov momentum)'},
        'lr_sel': {'type': 'float', 'min': 0, 'exclusive_min': True, 'default': defaults['lr_sel'],
                   'description': 'Selector learning rate (Adam)'},
        'momentum': {'type': 'float', 'min': 0, 'max': 0.999999, 'default': defaults['momentum']},
        'lr_decay_factor': {'type': 'float', 'min': 1, 'exclusive_min': True, 'default': defaults['lr_decay_factor'],
                            'description': 'Learning rates are divided by this after every phase'},
        'baseline': {'type': 'float', 'description': 'Constant subtracted from rewards in the selector gradient'},
        'leave_one_out': {'type': 'bool', 'default': defaults['leave_one_out'],
                          'description': 'Centre each selector reward on the mean of the other samples of its example'},
        'initial_distribution': {'type': 'str', 'choices': list(INITIAL_DISTRIBUTIONS),
                                 'default': defaults['initial_distribution'],
                                 'description': 'Structure sampler of the first estimator phase'},
        'dtype': {'type': 'str', 'choices': sorted(DTYPES), 'default': defaults['dtype'],
                  'description': 'Floating point type of the parameters'},
    }


def synthetic_fields():
    defaults = SyntheticSpec.DEFAULTS
    return {
        'task_count': {'type': 'int', 'min': 1, 'default': defaults['task_count']},
        'classes': {'type': 'int', 'min': 2, 'default': defaults['classes']},
        'input_width': {'type': 'int', 'min': 1, 'default': defaults['input_width']},
        'clusters_per_class': {'type': 'int', 'min': 1, 'default': defaults['clusters_per_class']},
        'center_scale': {'type': 'float', 'min': 0, 'exclusive_min': True, 'default': defaults['center_scale']},
        'spread': {'type': 'float', 'min': 0, 'exclusive_min': True, 'default': defaults['spread']},
        'spread_jitter': {'type': 'float', 'min': 0, 'max': 0.999999, 'default': defaults['spread_jitter']},
        'rotation': {'type': 'float', 'default': defaults['rotation'],
                     'description': 'Rotation (radians) between consecutive tasks'},
        'shared_layout': {'type': 'bool', 'default': defaults['shared_layout'],
                          'description': 'Whether all tasks share the same cluster centers'},
        'coarse_factor': {'type': 'int', 'min': 0, 'default': defaults['coarse_factor'],
                          'description': 'If set, add a task with labels y // coarse_factor of task 0'},
        'samples': {'type': 'dict', 'default': {}, 'fields': dict(
            (split, {'type': 'int', 'min': 1, 'default': defaults['samples'][split]}) for split in SPLITS)},
        'seed': {'type': 'int', 'min': 0, 'default': defaults['seed']},
    }


SCHEMA = {
    'seed': {'type': 'int', 'min': 0, 'default': 0, 'description': 'Seed of every random choice in the run'},
    'estimator': {
        'type': 'dict',
        'required': True,
        'fields': {
            'h': {'type': 'int', 'min': 1, 'required': True, 'description': 'Levels per block'},
            'input_width': {'type': 'int', 'min': 1, 'required': True},
            'blocks': {
                'type': 'list',
                'subtype': 'dict',
                'required': True,
                'fields': {
                    'hidden': {'type': 'int', 'min': 1, 'required': True},
                    'groups': {'type': 'list', 'subtype': 'int',
                               'description': 'Hidden group sizes (defaults to an even split)'},
                    'residual': {'type': 'bool', 'default': True},
                    'output': {'type': 'int', 'min': 1, 'description': 'Defaults to the block input width'},
                },
            },
            'tasks': {
                'type': 'list',
                'subtype': 'dict',
                'description': 'Task heads (derived from the data when absent)',
                'fields': {
                    'id': {'type': 'int', 'min': 0, 'required': True},
                    'classes': {'type': 'int', 'min': 2, 'required': True},
                },
            },
        },
    },
    'selector': {
        'type': 'dict',
        'default': {},
        'fields': {
            'hidden': {'type': 'int', 'min': 1, 'default': DEFAULT_HIDDEN_WIDTH},
        },
    },
    'train': {
        'type': 'dict',
        'default': {},
        'fields': train_fields(),
    },
    'data': {
        'type': 'dict',
        'required': True,
        'description': 'Exactly one of synthetic, csv or idx',
        'fields': {
            'synthetic': {'type': 'dict', 'fields': synthetic_fields()},
            'csv': {
                'type': 'dict',
                'fields': dict((split, {'type': 'str', 'required': True}) for split in SPLITS),
            },
            'idx': {
                'type': 'dict',
                'fields': {
                    'train_images': {'type': 'str', 'required': True},
                    'train_labels': {'type': 'str', 'required': True},
                    'test_images': {'type': 'str', 'required': True},
                    'test_labels': {'type': 'str', 'required': True},
                    'val_fraction': {'type': 'float', 'min': 0, 'max': 1, 'exclusive_min': True, 'default': 0.1},
                    'task': {'type': 'int', 'min': 0, 'default': 0},
                    'classes': {'type': 'int', 'min': 2, 'default': 10},
                },
            },
        },
    },
    'output': {
        'type': 'dict',
        'default': {},
        'fields': {
            'dir': {'type': 'str', 'default': 'runs/default'},
        },
    },
}


def root_field():
    return ConfigField('', {'type': 'dict', 'fields': SCHEMA})


def _parse(path, text):
    if path.endswith(YAML_EXTENSIONS):
        try:
            return yaml_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise ConfigParseError('malformed YAML: %s' % (getattr(e, 'problem', None) or str(e)),
                                   line=mark.line + 1 if mark is not None else None, path=path)
    try:
        return json.loads(text)
    except ValueError as e:
        raise ConfigParseError('malformed JSON: %s' % getattr(e, 'msg', str(e)), line=getattr(e, 'lineno', None),
                               path=path)


def load_file(path, _seen=None):
    '''
    Parse one config file and merge in its includes; the including file
    wins over the files it includes
    '''
    path = os.path.realpath(path)
    seen = set(_seen or ())
    if path in seen:
        raise ConfigError('include loop through %s' % path)
    seen.add(path)
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError('cannot read config: %s' % e.strerror, path=path)
    data = _parse(path, text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError('config should be a JSON object', path=path)
    if 'include' in data:
        include_paths = data.pop('include')
        if not isinstance(include_paths, list):
            include_paths = [include_paths]
        merged = {}
        for include_path in include_paths:
            if not os.path.isabs(include_path):
                # Relative to the including file
                include_path = os.path.join(os.path.dirname(path), include_path)
            Display().v('Loading run config from included file %s' % include_path)
            merged = dict_merge(merged, load_file(include_path, seen))
        data = dict_merge(merged, data)
    return data


def even_groups(hidden, count):
    '''
    `count` group sizes adding up to `hidden`, the first ones one unit larger
    when it doesn't divide evenly
    '''
    base, extra = divmod(hidden, count)
    return [base + (1 if i < extra else 0) for i in range(count)]


class RunConfig(object):

    '''
    A validated, fully defaulted run configuration
    '''

    _path = None
    _config = None
    _display = None

    def __init__(self, data, path=None):
        self._display = Display()
        self._path = os.path.realpath(path) if path is not None else None
        if not isinstance(data, dict):
            raise ConfigError('config should be a JSON object', path=path)
        root = root_field()
        try:
            unmatched = root.validate(data)
            if unmatched:
                raise ConfigError('found the following unknown fields: %s' % ', '.join(sorted(unmatched)))
            self._config = root.apply_default(data)
            self._complete_blocks()
            self._validate_cross()
        except ConfigError as e:
            if path is not None and e.path is None:
                raise ConfigError(str(e), key=e.key, path=path)
            raise

    def __getattr__(self, key):
        '''Allows object-like access to top-level keys'''
        if self._config is not None and key in self._config:
            return self._config[key]
        raise AttributeError('No such attribute/key: %s' % key)

    def __getitem__(self, key):
        return self.__getattr__(key)

    def __setattr__(self, key, value):
        if key.startswith('_'):
            super(RunConfig, self).__setattr__(key, value)
        else:
            raise AttributeError('Config object is not directly writeable')

    def __contains__(self, key):
        return key in self._config

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    @property
    def path(self):
        return self._path

    def to_dict(self):
        return copy.deepcopy(self._config)

    def _complete_blocks(self):
        '''
        Fill in group partitions and output widths, chaining widths from
        estimator.input_width
        '''
        est = self._config['estimator']
        width = est['input_width']
        for idx, block in enumerate(est['blocks']):
            key = 'estimator.blocks[%d]' % idx
            group_count = est['h'] - 1 if block['residual'] else est['h']
            if group_count < 1:
                raise ConfigError('residual blocks need h >= 2', key=key)
            if block['groups'] is None:
                if block['hidden'] < group_count:
                    raise ConfigError('hidden width %d cannot be split into %d groups' % (
                        block['hidden'], group_count), key='%s.hidden' % key)
                block['groups'] = even_groups(block['hidden'], group_count)
            if block['output'] is None:
                block['output'] = width
            width = block['output']

    def _validate_cross(self):
        est = self._config['estimator']
        width = est['input_width']
        for idx, block in enumerate(est['blocks']):
            key = 'estimator.blocks[%d]' % idx
            group_count = est['h'] - 1 if block['residual'] else est['h']
            if len(block['groups']) != group_count:
                raise ConfigError('%s block needs %d groups for h=%d, got %d' % (
                    'residual' if block['residual'] else 'plain', group_count, est['h'], len(block['groups'])),
                    key='%s.groups' % key)
            if any(g < 1 for g in block['groups']) or sum(block['groups']) != block['hidden']:
                raise ConfigError('groups %s must be positive and add up to hidden width %d' % (
                    block['groups'], block['hidden']), key='%s.groups' % key)
            if block['residual'] and block['output'] != width:
                raise ConfigError('residual block must keep width %d, got output %d' % (width, block['output']),
                                  key='%s.output' % key)
            width = block['output']
        if est['tasks'] is not None:
            ids = [t['id'] for t in est['tasks']]
            if len(set(ids)) != len(ids):
                raise ConfigError('task ids must be unique, got %s' % ids, key='estimator.tasks')
        data = self._config['data']
        sources = [s for s in DATA_SOURCES if data[s] is not None]
        if len(sources) != 1:
            raise ConfigError('exactly one of %s must be given, got %s' % (
                ', '.join(DATA_SOURCES), ', '.join(sources) or 'none'), key='data')
        if sources[0] == 'synthetic':
            spec = self.synthetic_spec()
            if spec.input_width != est['input_width']:
                raise ConfigError('synthetic input_width %d differs from estimator.input_width %d' % (
                    spec.input_width, est['input_width']), key='data.synthetic.input_width')
            if est['tasks'] is not None:
                expected = spec.task_classes()
                given = dict((t['id'], t['classes']) for t in est['tasks'])
                if given != expected:
                    raise ConfigError('tasks %s do not match the synthetic suite %s' % (given, expected),
                                      key='estimator.tasks')
        self.train_config()
        if est['tasks'] is not None or sources[0] == 'synthetic':
            self.estimator_config()

    @property
    def data_source(self):
        return [s for s in DATA_SOURCES if self._config['data'][s] is not None][0]

    def synthetic_spec(self):
        return SyntheticSpec(**self._config['data']['synthetic'])

    def train_config(self):
        return TrainConfig(seed=self._config['seed'], **self._config['train'])

    def estimator_config(self, task_classes=None):
        '''
        EstimatorConfig; task heads come from estimator.tasks, else from
        `task_classes` ({task id: classes}), else from the synthetic spec
        '''
        est = self._config['estimator']
        if est['tasks'] is not None:
            task_classes = dict((t['id'], t['classes']) for t in est['tasks'])
        elif task_classes is None:
            if self.data_source != 'synthetic':
                raise ConfigError('estimator.tasks is needed before the data is loaded', key='estimator.tasks')
            task_classes = self.synthetic_spec().task_classes()
        blocks = []
        width = est['input_width']
        for block in est['blocks']:
            blocks.append(BlockConfig(width, block['hidden'], block['groups'], block['residual'], block['output']))
            width = block['output']
        tasks = [TaskHead(t, est['input_width'], task_classes[t]) for t in sorted(task_classes)]
        config = EstimatorConfig(blocks, tasks)
        if config.h != est['h']:
            raise ConfigError('blocks have %d levels but h is %d' % (config.h, est['h']), key='estimator.h')
        return config

    def _resolve(self, path):
        if self._path is None or os.path.isabs(path):
            return path
        return os.path.join(os.path.dirname(self._path), path)

    def load_datasets(self):
        '''
        {split: {task id: Dataset}} for train/val/test
        '''
        source = self.data_source
        data = self._config['data'][source]
        self._display.v('Loading %s data' % source)
        if source == 'synthetic':
            return gen_synthetic_tasks(self.synthetic_spec())
        if source == 'csv':
            known = self.known_task_classes()
            suite = {'train': load_csv(self._resolve(data['train']), known)}
            if known is None:
                known = dict((t, d.classes) for t, d in suite['train'].items())
            for split in ('val', 'test'):
                suite[split] = load_csv(self._resolve(data[split]), known)
            return suite
        task = data['task']
        classes = data['classes']
        known = self.known_task_classes()
        if known is not None and task in known:
            classes = known[task]
        full = load_idx(self._resolve(data['train_images']), self._resolve(data['train_labels']), task, classes)
        train, val = split_off(full, data['val_fraction'], self._config['seed'])
        test = load_idx(self._resolve(data['test_images']), self._resolve(data['test_labels']), task, classes)
        return {'train': {task: train}, 'val': {task: val}, 'test': {task: test}}

    def known_task_classes(self):
        tasks = self._config['estimator']['tasks']
        if tasks is None:
            return None
        return dict((t['id'], t['classes']) for t in tasks)

    def dump(self):
        return json_dump(self._config)


def load_config(path):
    '''
    Read, merge, validate and default a run config file
    '''
    Display().v('Loading run config from %s' % path)
    return RunConfig(load_file(path), path=path)
