'''
The elastic estimator: n blocks of two dense layers whose hidden units are
split into groups, plus one output head per task

A block at level l only uses the first g(l) hidden groups. Residual blocks
have an extra level 0 that uses no groups at all, which turns the block into
the identity.
'''

import numpy as np

from deep_elastic.errors import ConfigError, ShapeError, StructureError, TaskError
from deep_elastic.tensor import (ParamSet, add, add_bias, as_tensor, matmul, relu, reshape, take_cols,
                                 take_rows, transpose)


class BlockConfig(object):

    def __init__(self, input_width, hidden_width, group_sizes, residual=False, output_width=None):
        self.input_width = int(input_width)
        self.hidden_width = int(hidden_width)
        self.group_sizes = [int(g) for g in group_sizes]
        self.residual = bool(residual)
        self.output_width = int(output_width) if output_width is not None else self.input_width
        self.validate()

    def __repr__(self):
        return '<BlockConfig %d->%d->%d groups=%s residual=%s>' % (
            self.input_width, self.hidden_width, self.output_width, self.group_sizes, self.residual)

    def __eq__(self, other):
        return isinstance(other, BlockConfig) and self.to_dict() == other.to_dict()

    def validate(self):
        if self.input_width < 1 or self.hidden_width < 1 or self.output_width < 1:
            raise ConfigError('block widths must be positive: %r' % self)
        if not self.group_sizes or any(g < 1 for g in self.group_sizes):
            raise ConfigError('block groups must be a nonempty list of positive sizes: %r' % self)
        if sum(self.group_sizes) != self.hidden_width:
            raise ConfigError('block groups %s do not add up to hidden width %d' % (self.group_sizes, self.hidden_width))
        if self.residual and self.output_width != self.input_width:
            raise ConfigError('residual block must keep its width: %r' % self)

    @property
    def levels(self):
        return len(self.group_sizes) + (1 if self.residual else 0)

    def active_units(self, level):
        '''
        Hidden units used at `level` (a prefix of the groups)
        '''
        if not 0 <= level < self.levels:
            raise StructureError('level %d out of range [0, %d)' % (level, self.levels))
        group_count = level if self.residual else level + 1
        return int(sum(self.group_sizes[:group_count]))

    def grouped_params(self, units):
        '''
        Entries of W1[:w, :], b1[:w] and W2[:, :w]
        '''
        return units * (self.input_width + 1 + self.output_width)

    def to_dict(self):
        return {
            'input': self.input_width,
            'hidden': self.hidden_width,
            'groups': list(self.group_sizes),
            'residual': self.residual,
            'output': self.output_width,
        }


class TaskHead(object):

    def __init__(self, task_id, input_width, classes):
        self.task_id = int(task_id)
        self.input_width = int(input_width)
        self.classes = int(classes)

    def __repr__(self):
        return '<TaskHead task=%d input=%d classes=%d>' % (self.task_id, self.input_width, self.classes)

    def __eq__(self, other):
        return isinstance(other, TaskHead) and self.to_dict() == other.to_dict()

    def to_dict(self):
        return {'id': self.task_id, 'input': self.input_width, 'classes': self.classes}


class EstimatorConfig(object):

    # Every multiply-add counts as two operations
    FLOP_CONVENTION = 'multiply-add=2'

    def __init__(self, blocks, tasks):
        self.blocks = list(blocks)
        self.tasks = list(tasks)
        self.validate()

    def validate(self):
        if not self.blocks:
            raise ConfigError('estimator needs at least one block')
        if not self.tasks:
            raise ConfigError('estimator needs at least one task')
        levels = set(b.levels for b in self.blocks)
        if len(levels) != 1:
            raise ConfigError('all blocks must share the same number of levels, got %s' % sorted(levels))
        for i in range(1, len(self.blocks)):
            if self.blocks[i - 1].output_width != self.blocks[i].input_width:
                raise ConfigError('block %d outputs width %d but block %d expects %d' % (
                    i - 1, self.blocks[i - 1].output_width, i, self.blocks[i].input_width))
        seen = set()
        for task in self.tasks:
            if task.task_id in seen:
                raise ConfigError('task %d is defined twice' % task.task_id)
            seen.add(task.task_id)
            if task.classes < 2:
                raise ConfigError('task %d needs at least 2 classes, got %d' % (task.task_id, task.classes))
            if task.input_width != self.input_width:
                raise ConfigError('task %d input width %d differs from trunk input width %d' % (
                    task.task_id, task.input_width, self.input_width))

    @property
    def h(self):
        return self.blocks[0].levels

    @property
    def n(self):
        return len(self.blocks)

    @property
    def input_width(self):
        return self.blocks[0].input_width

    @property
    def output_width(self):
        return self.blocks[-1].output_width

    def task(self, task_id):
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise TaskError('unknown task id %r (known: %s)' % (task_id, [t.task_id for t in self.tasks]))

    def full_structure(self):
        return ModelStructure([self.h - 1] * self.n)

    def validate_structure(self, z):
        levels = z.levels if isinstance(z, ModelStructure) else tuple(z)
        if len(levels) != self.n:
            raise StructureError('structure has %d levels, estimator has %d blocks' % (len(levels), self.n))
        for i, level in enumerate(levels):
            if not 0 <= level < self.h:
                raise StructureError('level %d of block %d out of range [0, %d)' % (level, i, self.h))
        return levels

    def density_table(self):
        '''
        d[i][l] for every block and level
        '''
        return [[b.active_units(l) / float(b.hidden_width) for l in range(b.levels)] for b in self.blocks]

    def to_dict(self):
        return {
            'blocks': [b.to_dict() for b in self.blocks],
            'tasks': [t.to_dict() for t in self.tasks],
        }

    @classmethod
    def from_dict(cls, data):
        blocks = [BlockConfig(b['input'], b['hidden'], b['groups'], b['residual'], b['output']) for b in data['blocks']]
        tasks = [TaskHead(t['id'], t['input'], t['classes']) for t in data['tasks']]
        return cls(blocks, tasks)

    def __eq__(self, other):
        return isinstance(other, EstimatorConfig) and self.to_dict() == other.to_dict()


class ModelStructure(object):

    '''
    One level per block, z = (l_1, ..., l_n)
    '''

    __slots__ = ('levels', )

    def __init__(self, levels):
        self.levels = tuple(int(level) for level in levels)

    def __repr__(self):
        return '<ModelStructure %s>' % self.encode()

    def __eq__(self, other):
        return isinstance(other, ModelStructure) and self.levels == other.levels

    def __hash__(self):
        return hash(self.levels)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, idx):
        return self.levels[idx]

    def encode(self):
        '''
        Canonical string form, e.g. "2-0-1"
        '''
        return '-'.join(str(level) for level in self.levels)

    @classmethod
    def decode(cls, value):
        return cls(int(part) for part in value.split('-'))

    def dominates(self, other):
        return all(a >= b for a, b in zip(self.levels, other.levels))


class EstimatorParams(ParamSet):

    '''
    Weights of all blocks and task heads

    Names: block<i>.W1 (hidden x input), block<i>.b1, block<i>.W2 (output x
    hidden), block<i>.b2, head<t>.W (classes x trunk output), head<t>.b
    '''


def block_names(i):
    return ('block%d.W1' % i, 'block%d.b1' % i, 'block%d.W2' % i, 'block%d.b2' % i)


def head_names(task_id):
    return ('head%d.W' % task_id, 'head%d.b' % task_id)


def xavier(rng, fan_out, fan_in, dtype):
    '''
    Xavier/Glorot uniform weights of shape (fan_out, fan_in), variance 2/(fan_in+fan_out)
    '''
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def param_shapes(config):
    '''
    {name: shape} of every estimator parameter
    '''
    shapes = {}
    for i, block in enumerate(config.blocks):
        w1, b1, w2, b2 = block_names(i)
        shapes[w1] = (block.hidden_width, block.input_width)
        shapes[b1] = (block.hidden_width, )
        shapes[w2] = (block.output_width, block.hidden_width)
        shapes[b2] = (block.output_width, )
    for task in config.tasks:
        hw, hb = head_names(task.task_id)
        shapes[hw] = (task.classes, config.output_width)
        shapes[hb] = (task.classes, )
    return shapes


def build_estimator(config, seed, dtype=np.float64):
    '''
    Xavier-initialised parameters, deterministic per seed; biases start at zero
    '''
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = {}
    for i, block in enumerate(config.blocks):
        w1, b1, w2, b2 = block_names(i)
        arrays[w1] = xavier(rng, block.hidden_width, block.input_width, dtype)
        arrays[b1] = np.zeros(block.hidden_width, dtype=dtype)
        arrays[w2] = xavier(rng, block.output_width, block.hidden_width, dtype)
        arrays[b2] = np.zeros(block.output_width, dtype=dtype)
    for task in config.tasks:
        hw, hb = head_names(task.task_id)
        arrays[hw] = xavier(rng, task.classes, config.output_width, dtype)
        arrays[hb] = np.zeros(task.classes, dtype=dtype)
    return EstimatorParams(arrays)


def _as_rows(x, width):
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError('input does not match estimator input width %d' % width, x.shape)
    return x, single


def forward(params, config, x, z, t):
    '''
    Logits of the sub-model picked by z for task t

    x is one input vector or a (B, input) matrix of inputs; params may hold
    numpy arrays or tracked tensors.
    '''
    levels = config.validate_structure(z)
    task = config.task(t)
    h, single = _as_rows(x, config.input_width)
    for i, block in enumerate(config.blocks):
        units = block.active_units(levels[i])
        if units == 0:
            # Residual block at level 0 is the identity
            continue
        w1, b1, w2, b2 = [as_tensor(params[name]) for name in block_names(i)]
        hidden = relu(add_bias(matmul(h, transpose(take_rows(w1, units))), take_rows(b1, units)))
        out = add_bias(matmul(hidden, transpose(take_cols(w2, units))), b2)
        if block.residual:
            out = add(out, h)
        h = out
    hw, hb = [as_tensor(params[name]) for name in head_names(task.task_id)]
    logits = add_bias(matmul(h, transpose(hw)), hb)
    if single:
        logits = reshape(logits, (task.classes, ))
    return logits


def dense_forward(params, config, x, t):
    '''
    The unmasked backbone, with the same operation order as forward()
    '''
    task = config.task(t)
    h, single = _as_rows(x, config.input_width)
    for i, block in enumerate(config.blocks):
        w1, b1, w2, b2 = [as_tensor(params[name]) for name in block_names(i)]
        hidden = relu(add_bias(matmul(h, transpose(w1)), b1))
        out = add_bias(matmul(hidden, transpose(w2)), b2)
        if block.residual:
            out = add(out, h)
        h = out
    hw, hb = [as_tensor(params[name]) for name in head_names(task.task_id)]
    logits = add_bias(matmul(h, transpose(hw)), hb)
    if single:
        logits = reshape(logits, (task.classes, ))
    return logits


def forward_rows(params, config, x, structures, t):
    '''
    Logits for a batch where every row carries its own structure, no graph

    Inactive hidden units are zeroed with a mask instead of sliced away, so
    this matches forward() up to summation order.
    '''
    structures = np.asarray(structures, dtype=np.int64)
    x = np.atleast_2d(np.asarray(x))
    if structures.ndim != 2 or structures.shape != (x.shape[0], config.n):
        raise ShapeError('need one structure per input row', x.shape, structures.shape)
    for row in structures:
        config.validate_structure(row)
    task = config.task(t)
    h = x
    for i, block in enumerate(config.blocks):
        w1, b1, w2, b2 = [params[name] for name in block_names(i)]
        cumulative = np.array([block.active_units(level) for level in range(block.levels)])
        units = cumulative[structures[:, i]]
        mask = (np.arange(block.hidden_width)[None, :] < units[:, None]).astype(h.dtype)
        hidden = np.maximum(h @ w1.T + b1, 0) * mask
        out = hidden @ w2.T + b2 * (units > 0)[:, None]
        if block.residual:
            out = out + h
        h = out
    hw, hb = [params[name] for name in head_names(task.task_id)]
    return h @ hw.T + hb


def density(config, z):
    '''
    (per-block densities, their mean)
    '''
    levels = config.validate_structure(z)
    table = config.density_table()
    per_block = [table[i][level] for i, level in enumerate(levels)]
    return per_block, float(np.mean(per_block))


def head_param_count(config, t):
    task = config.task(t)
    return task.classes * config.output_width + task.classes


def param_count(config, z, t=None):
    '''
    Weights and biases touched by forward() under z, plus the task head

    Output biases count whenever their block is active, so a 4 -> 8 block
    with groups [4, 4] at level 0 gives 36 grouped entries plus 4 for b2,
    40 in all. With t=None the first task's head is used.
    '''
    levels = config.validate_structure(z)
    count = 0
    for block, level in zip(config.blocks, levels):
        units = block.active_units(level)
        count += block.grouped_params(units)
        if units > 0:
            count += block.output_width
    return count + head_param_count(config, config.tasks[0].task_id if t is None else t)


def total_param_count(config):
    '''
    Every entry of the dense network, all task heads included
    '''
    count = 0
    for block in config.blocks:
        count += block.grouped_params(block.hidden_width) + block.output_width
    for task in config.tasks:
        count += head_param_count(config, task.task_id)
    return count


def block_flops(block, units):
    if units == 0:
        return 0
    flops = 2 * units * block.input_width + units
    flops += 2 * block.output_width * units + block.output_width
    if block.residual:
        flops += block.output_width
    return flops


def flops_count(config, z, t=None):
    '''
    FLOPs of one forward pass under z (multiply-add = 2, plus bias and
    residual adds), head included
    '''
    levels = config.validate_structure(z)
    flops = sum(block_flops(block, block.active_units(level)) for block, level in zip(config.blocks, levels))
    task = config.task(config.tasks[0].task_id if t is None else t)
    return flops + 2 * task.classes * config.output_width + task.classes


def active_masks(params, config, structures, t):
    '''
    Boolean masks of the parameter entries used by any of the structures

    Feed these to optimizer_step() so that inactive groups and other tasks'
    heads stay exactly where they are.
    '''
    masks = {}
    used_units = [0] * config.n
    for z in structures:
        levels = config.validate_structure(z)
        for i, block in enumerate(config.blocks):
            used_units[i] = max(used_units[i], block.active_units(levels[i]))
    for i, block in enumerate(config.blocks):
        w1, b1, w2, b2 = block_names(i)
        units = used_units[i]
        mask_w1 = np.zeros(params[w1].shape, dtype=bool)
        mask_w1[:units] = True
        mask_b1 = np.zeros(params[b1].shape, dtype=bool)
        mask_b1[:units] = True
        mask_w2 = np.zeros(params[w2].shape, dtype=bool)
        mask_w2[:, :units] = True
        masks[w1] = mask_w1
        masks[b1] = mask_b1
        masks[w2] = mask_w2
        masks[b2] = np.full(params[b2].shape, units > 0)
    for task in config.tasks:
        for name in head_names(task.task_id):
            masks[name] = np.full(params[name].shape, task.task_id == t)
    return masks


def cost_tables(config):
    '''
    (density, params, flops) lookup arrays of shape (n, h), one row per block
    '''
    dens = np.zeros((config.n, config.h))
    counts = np.zeros((config.n, config.h), dtype=np.int64)
    flops = np.zeros((config.n, config.h), dtype=np.int64)
    for i, block in enumerate(config.blocks):
        for level in range(block.levels):
            units = block.active_units(level)
            dens[i, level] = units / float(block.hidden_width)
            counts[i, level] = block.grouped_params(units) + (block.output_width if units > 0 else 0)
            flops[i, level] = block_flops(block, units)
    return dens, counts, flops


def structure_costs(config, structures, t):
    '''
    Mean density, parameter count and FLOPs for every row of a (K, n) array
    of structures, matching density()/param_count()/flops_count()
    '''
    structures = np.asarray(structures, dtype=np.int64)
    task = config.task(t)
    dens, counts, flops = cost_tables(config)
    blocks = np.arange(config.n)
    head_flops = 2 * task.classes * config.output_width + task.classes
    return (
        np.mean(dens[blocks, structures], axis=-1),
        np.sum(counts[blocks, structures], axis=-1) + head_param_count(config, t),
        np.sum(flops[blocks, structures], axis=-1) + head_flops,
    )
