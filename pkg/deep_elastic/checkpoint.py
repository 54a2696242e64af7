'''
Binary checkpoints holding both networks

Layout (all integers little-endian):

    b'DENC'                 magic
    uint32                  version (1)
    uint64                  header length in bytes
    header                  UTF-8 JSON: tensors [{name, shape, offset}], selector dims, extras
    payload                 float32 values, tensor offsets in bytes from the payload start
'''

import json
import struct

import numpy as np

from deep_elastic.display import Display
from deep_elastic.errors import CheckpointFormatError, CheckpointLengthError, CompatibilityError
from deep_elastic.estimator import EstimatorParams, param_shapes
from deep_elastic.selector import SelectorParams
from deep_elastic.utils import json_line

MAGIC = b'DENC'
VERSION = 1
PREAMBLE = struct.Struct('<4sIQ')

ESTIMATOR_PREFIX = 'estimator/'
SELECTOR_PREFIX = 'selector/'

PAYLOAD_DTYPE = np.dtype('<f4')


class Checkpoint(object):

    def __init__(self, params_est, params_sel, header):
        self.params_est = params_est
        self.params_sel = params_sel
        self.header = header

    def __repr__(self):
        return '<Checkpoint tensors=%d selector=%s>' % (len(self.header['tensors']), self.params_sel.meta())

    @property
    def extra(self):
        return self.header.get('extra', {})

    def check_compatible(self, estimator_config):
        '''
        Raise CompatibilityError unless both networks fit `estimator_config`
        '''
        expected = param_shapes(estimator_config)
        missing = sorted(set(expected) - set(self.params_est))
        unexpected = sorted(set(self.params_est) - set(expected))
        if missing or unexpected:
            raise CompatibilityError('checkpoint estimator tensors differ from config: missing %s, unexpected %s' % (
                ', '.join(missing) or 'none', ', '.join(unexpected) or 'none'))
        for name, shape in sorted(expected.items()):
            if tuple(self.params_est[name].shape) != tuple(shape):
                raise CompatibilityError("tensor '%s' has shape %s, config expects %s" % (
                    name, tuple(self.params_est[name].shape), tuple(shape)))
        sel = self.params_sel
        if (sel.input_width, sel.h, sel.n) != (estimator_config.input_width, estimator_config.h, estimator_config.n):
            raise CompatibilityError('checkpoint selector is %d -> %dx%d, config expects %d -> %dx%d' % (
                sel.input_width, sel.h, sel.n, estimator_config.input_width, estimator_config.h, estimator_config.n))
        return self


def _tensors(prefix, params):
    for name in sorted(params):
        yield prefix + name, np.ascontiguousarray(params[name], dtype=PAYLOAD_DTYPE)


def save_checkpoint(path, params_est, params_sel, extra=None):
    '''
    Write both parameter sets; values are stored as float32
    '''
    tensors = []
    chunks = []
    offset = 0
    for prefix, params in ((ESTIMATOR_PREFIX, params_est), (SELECTOR_PREFIX, params_sel)):
        for name, arr in _tensors(prefix, params):
            tensors.append({'name': name, 'shape': list(arr.shape), 'offset': offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        'tensors': tensors,
        'payload_bytes': offset,
        'selector': params_sel.meta(),
        'extra': extra or {},
    }
    header_bytes = json_line(header).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
        f.write(header_bytes)
        for chunk in chunks:
            f.write(chunk)
    Display().v('Wrote checkpoint with %d tensors (%d payload bytes) to %s' % (len(tensors), offset, path))


def _parse_header(raw, path):
    if len(raw) < PREAMBLE.size:
        raise CheckpointLengthError('%s: file too short for a checkpoint preamble (%d bytes)' % (path, len(raw)))
    magic, version, header_len = PREAMBLE.unpack(raw[:PREAMBLE.size])
    if magic != MAGIC:
        raise CheckpointFormatError('%s: bad checkpoint magic %r (expected %r)' % (path, magic, MAGIC))
    if version != VERSION:
        raise CheckpointFormatError('%s: unsupported checkpoint version %d (expected %d)' % (path, version, VERSION))
    end = PREAMBLE.size + header_len
    if len(raw) < end:
        raise CheckpointLengthError('%s: truncated checkpoint header' % path)
    try:
        header = json.loads(raw[PREAMBLE.size:end].decode('utf-8'))
    except ValueError as e:
        raise CheckpointFormatError('%s: malformed checkpoint header: %s' % (path, str(e)))
    if not isinstance(header, dict) or not isinstance(header.get('tensors', None), list) \
            or not isinstance(header.get('selector', None), dict):
        raise CheckpointFormatError('%s: checkpoint header lacks tensors/selector' % path)
    return header, raw[end:]


def _check_layout(header, payload, path):
    '''
    Offsets must be in bounds and non-overlapping, names unique
    '''
    spans = []
    seen = set()
    for entry in header['tensors']:
        try:
            name = entry['name']
            shape = tuple(int(d) for d in entry['shape'])
            offset = int(entry['offset'])
        except (KeyError, TypeError, ValueError):
            raise CheckpointFormatError('%s: malformed tensor entry %r' % (path, entry))
        if name in seen:
            raise CheckpointFormatError("%s: tensor '%s' appears twice" % (path, name))
        seen.add(name)
        if not name.startswith((ESTIMATOR_PREFIX, SELECTOR_PREFIX)):
            raise CheckpointFormatError("%s: tensor '%s' belongs to neither network" % (path, name))
        nbytes = int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        if offset < 0:
            raise CheckpointFormatError("%s: tensor '%s' has negative offset" % (path, name))
        if offset + nbytes > len(payload):
            raise CheckpointLengthError("%s: truncated payload, tensor '%s' needs bytes %d..%d of %d" % (
                path, name, offset, offset + nbytes, len(payload)))
        spans.append((offset, offset + nbytes, name, shape))
    spans.sort()
    for prev, cur in zip(spans, spans[1:]):
        if cur[0] < prev[1]:
            raise CheckpointFormatError("%s: tensors '%s' and '%s' overlap" % (path, prev[2], cur[2]))
    expected = header.get('payload_bytes', None)
    if expected is not None and len(payload) < expected:
        raise CheckpointLengthError('%s: truncated payload, %d of %d bytes' % (path, len(payload), expected))
    return spans


def load_checkpoint(path, estimator_config=None):
    '''
    Read a checkpoint written by save_checkpoint()

    Nothing is returned unless the whole file checks out. With
    `estimator_config`, tensor names and shapes are also checked against it.
    '''
    with open(path, 'rb') as f:
        raw = f.read()
    header, payload = _parse_header(raw, path)
    spans = _check_layout(header, payload, path)
    est = {}
    sel = {}
    for start, end, name, shape in spans:
        values = np.frombuffer(payload[start:end], dtype=PAYLOAD_DTYPE).reshape(shape).astype(np.float32)
        if name.startswith(ESTIMATOR_PREFIX):
            est[name[len(ESTIMATOR_PREFIX):]] = values
        else:
            sel[name[len(SELECTOR_PREFIX):]] = values
    dims = header['selector']
    try:
        params_sel = SelectorParams(sel, dims['input'], dims['hidden'], dims['h'], dims['n'])
    except (KeyError, TypeError, ValueError):
        raise CheckpointFormatError('%s: malformed selector dimensions %r' % (path, dims))
    expected = {
        'W1': (params_sel.hidden_width, params_sel.input_width),
        'b1': (params_sel.hidden_width, ),
        'W2': (params_sel.h * params_sel.n, params_sel.hidden_width),
        'b2': (params_sel.h * params_sel.n, ),
    }
    if dict((k, v.shape) for k, v in sel.items()) != expected:
        raise CheckpointFormatError('%s: selector tensors %s do not match its dimensions %r' % (
            path, sorted(sel), dims))
    checkpoint = Checkpoint(EstimatorParams(est), params_sel, header)
    if estimator_config is not None:
        checkpoint.check_compatible(estimator_config)
    Display().v('Loaded checkpoint with %d tensors from %s' % (len(spans), path))
    return checkpoint
