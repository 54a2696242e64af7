'''
Datasets: synthetic multi-task suites, IDX (MNIST-format) and CSV ingestion,
and deterministic batching
'''

import csv
import struct

import numpy as np

from deep_elastic.display import Display
from deep_elastic.errors import ConfigError, ContractError, DatasetFormatError, DatasetLengthError, LabelError

SPLITS = ('train', 'val', 'test')

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class TaskSample(object):

    __slots__ = ('x', 'y', 't')

    def __init__(self, x, y, t):
        self.x = x
        self.y = int(y)
        self.t = int(t)

    def __repr__(self):
        return '<TaskSample t=%d y=%d>' % (self.t, self.y)


class Dataset(object):

    '''
    Immutable set of (x, y) pairs for a single task
    '''

    def __init__(self, x, y, task, classes, name=None):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if x.ndim != 2:
            raise DatasetFormatError('inputs must be a (count, width) matrix, got shape %s' % (x.shape, ))
        if y.shape != (x.shape[0], ):
            raise DatasetLengthError('%d inputs but %d labels' % (x.shape[0], y.size))
        if not np.all(np.isfinite(x)):
            raise DatasetFormatError('inputs contain NaN/inf')
        if y.size and (y.min() < 0 or y.max() >= classes):
            raise LabelError('task %d labels must be in [0, %d)' % (task, classes))
        x.setflags(write=False)
        y.setflags(write=False)
        self.x = x
        self.y = y
        self.task = int(task)
        self.classes = int(classes)
        self.name = name

    def __len__(self):
        return self.x.shape[0]

    def __repr__(self):
        return '<Dataset %s task=%d count=%d width=%d classes=%d>' % (
            self.name, self.task, len(self), self.width, self.classes)

    @property
    def width(self):
        return self.x.shape[1]

    def sample(self, idx):
        return TaskSample(self.x[idx], self.y[idx], self.task)

    def samples(self):
        for idx in range(len(self)):
            yield self.sample(idx)

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.x[indices], self.y[indices], self.task, self.classes, name=name or self.name)


class Batch(object):

    '''
    A mini-batch from one task
    '''

    def __init__(self, x, y, task, indices=None):
        self.x = x
        self.y = y
        self.task = task
        self.indices = indices

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def of(cls, dataset):
        return cls(dataset.x, dataset.y, dataset.task, np.arange(len(dataset)))


class SyntheticSpec(object):

    '''
    Gaussian-cluster classification tasks that are related but distinct

    Every task draws its class clusters from a shared (or per-task) layout and
    then rotates the input space by task_index * rotation radians, one Givens
    rotation per coordinate pair. Each cluster gets its own spread, scaled by
    a factor in [1 - spread_jitter, 1 + spread_jitter], so some instances are
    much easier than others.
    '''

    DEFAULTS = {
        'task_count': 3,
        'classes': 4,
        'input_width': 16,
        'clusters_per_class': 2,
        'center_scale': 1.0,
        'spread': 0.5,
        'spread_jitter': 0.5,
        'rotation': 0.6,
        'shared_layout': True,
        'coarse_factor': 0,
        'samples': {'train': 1500, 'val': 300, 'test': 600},
        'seed': 0,
    }

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.DEFAULTS))
        if unknown:
            raise ConfigError('unknown synthetic spec keys: %s' % ', '.join(unknown))
        values = dict(self.DEFAULTS)
        values['samples'] = dict(self.DEFAULTS['samples'])
        for key, value in kwargs.items():
            if key == 'samples':
                values['samples'].update(value)
            else:
                values[key] = value
        for key, value in values.items():
            setattr(self, key, value)
        self.validate()

    def validate(self):
        for key in ('task_count', 'classes', 'input_width', 'clusters_per_class'):
            if int(getattr(self, key)) < 1:
                raise ConfigError('synthetic spec %s must be positive' % key, key=key)
        if self.classes < 2:
            raise ConfigError('synthetic spec classes must be at least 2', key='classes')
        if not self.spread > 0:
            raise ConfigError('synthetic spec spread must be positive', key='spread')
        if not 0 <= self.spread_jitter < 1:
            raise ConfigError('synthetic spec spread_jitter must be in [0, 1)', key='spread_jitter')
        if self.coarse_factor and (self.coarse_factor < 2 or self.coarse_classes < 2):
            raise ConfigError('coarse_factor must be at least 2 and leave at least 2 coarse classes', key='coarse_factor')
        for split in SPLITS:
            if int(self.samples.get(split, 0)) < 1:
                raise ConfigError('synthetic spec needs a positive sample count for %s' % split, key='samples.%s' % split)

    @property
    def coarse_classes(self):
        return -(-self.classes // self.coarse_factor) if self.coarse_factor else 0

    def task_classes(self):
        '''
        task id -> class count
        '''
        ret = dict((t, self.classes) for t in range(self.task_count))
        if self.coarse_factor:
            ret[self.task_count] = self.coarse_classes
        return ret

    def to_dict(self):
        ret = dict((key, getattr(self, key)) for key in self.DEFAULTS)
        ret['samples'] = dict(self.samples)
        return ret


def _layout(rng, spec):
    '''
    Cluster centers (classes, clusters, width) and spreads (classes, clusters)
    '''
    centers = spec.center_scale * rng.standard_normal((spec.classes, spec.clusters_per_class, spec.input_width))
    jitter = rng.uniform(1 - spec.spread_jitter, 1 + spec.spread_jitter, size=(spec.classes, spec.clusters_per_class))
    return centers, spec.spread * jitter


def rotation_matrix(width, angle):
    '''
    Rotate every coordinate pair (0,1), (2,3), ... by `angle`
    '''
    rot = np.eye(width)
    c, s = np.cos(angle), np.sin(angle)
    for j in range(0, width - 1, 2):
        rot[j, j] = c
        rot[j, j + 1] = -s
        rot[j + 1, j] = s
        rot[j + 1, j + 1] = c
    return rot


def gen_synthetic_tasks(spec):
    '''
    {split: {task id: Dataset}} for train/val/test, deterministic per seed
    '''
    display = Display()
    shared = _layout(np.random.default_rng([spec.seed, 0]), spec)
    suite = dict((split, {}) for split in SPLITS)
    for t in range(spec.task_count):
        centers, spreads = shared if spec.shared_layout else _layout(np.random.default_rng([spec.seed, 1, t]), spec)
        rot = rotation_matrix(spec.input_width, spec.rotation * t)
        for split_idx, split in enumerate(SPLITS):
            rng = np.random.default_rng([spec.seed, 2, t, split_idx])
            count = int(spec.samples[split])
            y = rng.permutation(np.arange(count) % spec.classes)
            k = rng.integers(0, spec.clusters_per_class, size=count)
            noise = rng.standard_normal((count, spec.input_width)) * spreads[y, k][:, None]
            x = (centers[y, k] + noise) @ rot.T
            suite[split][t] = Dataset(x, y, t, spec.classes, name='%s/task%d' % (split, t))
    if spec.coarse_factor:
        coarse = spec.task_count
        for split in SPLITS:
            fine = suite[split][0]
            suite[split][coarse] = Dataset(fine.x, fine.y // spec.coarse_factor, coarse, spec.coarse_classes,
                                           name='%s/task%d' % (split, coarse))
    display.vv('Generated synthetic suite: %d tasks, %s samples per split' % (len(suite['train']), spec.samples))
    return suite


def _read_idx(path, expected_magic, kind):
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < 4:
        raise DatasetLengthError('file too short to hold an IDX header', path=path)
    magic, = struct.unpack('>I', raw[:4])
    if magic != expected_magic:
        raise DatasetFormatError('bad IDX %s magic 0x%08x (expected 0x%08x)' % (kind, magic, expected_magic), path=path)
    ndim = magic & 0xff
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DatasetLengthError('truncated IDX header', path=path)
    dims = struct.unpack('>%dI' % ndim, raw[4:header_len])
    count = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) < count:
        raise DatasetLengthError('truncated IDX payload: expected %d bytes, found %d' % (count, len(payload)), path=path)
    return np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)


def load_idx(images_path, labels_path, task=0, classes=None):
    '''
    Read an IDX image/label file pair; pixels are scaled to [0, 1] and
    flattened row-major
    '''
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 'images')
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 'labels')
    if images.shape[0] != labels.shape[0]:
        raise DatasetLengthError('%d images but %d labels' % (images.shape[0], labels.shape[0]), path=labels_path)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if classes is None:
        classes = max(2, int(y.max()) + 1 if y.size else 2)
    Display().v('Loaded %d IDX samples from %s' % (len(y), images_path))
    return Dataset(x, y, task, classes, name=str(images_path))


def split_off(dataset, fraction, seed):
    '''
    Deterministically carve `fraction` of a dataset off as a validation set
    '''
    order = np.random.default_rng([seed, 3]).permutation(len(dataset))
    cut = int(round(len(dataset) * fraction))
    return dataset.subset(np.sort(order[cut:])), dataset.subset(np.sort(order[:cut]))


def load_csv(path, task_classes=None):
    '''
    {task id: Dataset} from a CSV with header x0..x{d-1},y,t
    '''
    rows = {}
    width = None
    with open(path, newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError('empty CSV file', path=path)
        width = len(header) - 2
        expected = ['x%d' % i for i in range(width)] + ['y', 't']
        if width < 1 or header != expected:
            raise DatasetFormatError('CSV header must be x0..x{d-1},y,t, got: %s' % ','.join(header), path=path)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 2:
                raise DatasetFormatError('line %d: expected %d fields, found %d' % (line_no, width + 2, len(row)), path=path)
            try:
                x = [float(v) for v in row[:width]]
                y = int(row[width])
                t = int(row[width + 1])
            except ValueError as e:
                raise DatasetFormatError('line %d: %s' % (line_no, str(e)), path=path)
            rows.setdefault(t, ([], []))
            rows[t][0].append(x)
            rows[t][1].append(y)
    ret = {}
    for t in sorted(rows):
        x, y = rows[t]
        if task_classes and t in task_classes:
            classes = task_classes[t]
        else:
            classes = max(2, max(y) + 1)
        ret[t] = Dataset(np.array(x).reshape(len(x), width), y, t, classes, name='%s/task%d' % (path, t))
    return ret


def write_csv(path, datasets):
    '''
    Write {task id: Dataset} in the format load_csv() reads
    '''
    datasets = [datasets[t] for t in sorted(datasets)]
    width = datasets[0].width
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['x%d' % i for i in range(width)] + ['y', 't'])
        for dataset in datasets:
            for sample in dataset.samples():
                writer.writerow([repr(float(v)) for v in sample.x] + [sample.y, sample.t])


def _batch_iter(dataset, batch_size, order):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(dataset.x[idx], dataset.y[idx], dataset.task, idx)


def batches(dataset, batch_size, seed, shuffle=True, epoch=0):
    '''
    Mini-batches over a dataset; the order depends only on (seed, epoch, task)
    and the final short batch is kept

    Arguments are checked when called, not on the first next().
    '''
    if batch_size < 1:
        raise ContractError('batch size must be at least 1, got %d' % batch_size)
    if len(dataset) == 0:
        raise ContractError('cannot batch an empty dataset')
    if shuffle:
        order = np.random.default_rng([seed, epoch, dataset.task]).permutation(len(dataset))
    else:
        order = np.arange(len(dataset))
    return _batch_iter(dataset, batch_size, order)


def interleave(datasets, batch_size, seed, shuffle=True, epoch=0):
    '''
    Round-robin over tasks (sorted by id), one batch per task per turn,
    until every task is exhausted
    '''
    live = [batches(datasets[t], batch_size, seed, shuffle=shuffle, epoch=epoch) for t in sorted(datasets)]
    while live:
        remaining = []
        for it in live:
            batch = next(it, None)
            if batch is None:
                continue
            remaining.append(it)
            yield batch
        live = remaining
