'''
The selector: a small two-layer network mapping an instance to an h x n
matrix C whose columns are level distributions, one per estimator block
'''

import itertools

import numpy as np

from deep_elastic.errors import CapacityError, ShapeError, StructureError
from deep_elastic.estimator import ModelStructure, xavier
from deep_elastic.tensor import (ParamSet, add_bias, as_tensor, column_log_softmax, column_softmax, matmul, relu,
                                 reshape, transpose)

# Largest number of structures we are willing to enumerate
ENUMERATION_LIMIT = 4096

DEFAULT_HIDDEN_WIDTH = 64


class SelectorParams(ParamSet):

    '''
    W1 (hidden x input), b1, W2 (h*n x hidden), b2

    Output unit l*n + i holds the logit of level l in block i.
    '''

    def __init__(self, arrays, input_width, hidden_width, h, n):
        super(SelectorParams, self).__init__(arrays)
        self.input_width = int(input_width)
        self.hidden_width = int(hidden_width)
        self.h = int(h)
        self.n = int(n)

    def meta(self):
        return {'input': self.input_width, 'hidden': self.hidden_width, 'h': self.h, 'n': self.n}


def build_selector(input_width, hidden_width, h, n, seed, dtype=np.float64):
    '''
    Xavier-initialised selector, deterministic per seed
    '''
    if min(input_width, hidden_width, h, n) < 1:
        raise ShapeError('selector dimensions must be positive', (input_width, hidden_width, h, n))
    rng = np.random.default_rng(seed)
    arrays = {
        'W1': xavier(rng, hidden_width, input_width, dtype),
        'b1': np.zeros(hidden_width, dtype=dtype),
        'W2': xavier(rng, h * n, hidden_width, dtype),
        'b2': np.zeros(h * n, dtype=dtype),
    }
    return SelectorParams(arrays, input_width, hidden_width, h, n)


def zero_selector(input_width, hidden_width, h, n, dtype=np.float64):
    '''
    All-zero weights, which gives uniform columns for every input
    '''
    arrays = {
        'W1': np.zeros((hidden_width, input_width), dtype=dtype),
        'b1': np.zeros(hidden_width, dtype=dtype),
        'W2': np.zeros((h * n, hidden_width), dtype=dtype),
        'b2': np.zeros(h * n, dtype=dtype),
    }
    return SelectorParams(arrays, input_width, hidden_width, h, n)


def _logits(params, x, tensors=None):
    tensors = tensors if tensors is not None else params
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != params.input_width:
        raise ShapeError('input does not match selector input width %d' % params.input_width, x.shape)
    hidden = relu(add_bias(matmul(x, transpose(as_tensor(tensors['W1']))), as_tensor(tensors['b1'])))
    out = add_bias(matmul(hidden, transpose(as_tensor(tensors['W2']))), as_tensor(tensors['b2']))
    shape = (params.h, params.n) if single else (x.shape[0], params.h, params.n)
    return reshape(out, shape)


def distribute(params, x, tensors=None):
    '''
    C = column_softmax(logits) for one input (h, n) or a batch (B, h, n)

    Pass `tensors` (from params.tracked()) to differentiate through C.
    '''
    return column_softmax(_logits(params, x, tensors))


def log_distribute(params, x, tensors=None):
    '''
    log C, computed stably; this is what the score-function gradients use
    '''
    return column_log_softmax(_logits(params, x, tensors))


def model_probability(c, z):
    '''
    P(z; x) = prod_i C[l_i, i], accumulated in log space
    '''
    c = np.asarray(c.data if hasattr(c, 'data') else c, dtype=np.float64)
    levels = _check_structure(c, z)
    with np.errstate(divide='ignore'):
        return float(np.exp(np.sum(np.log(c[levels, np.arange(c.shape[1])]))))


def _check_structure(c, z):
    levels = np.asarray(z.levels if isinstance(z, ModelStructure) else z, dtype=np.int64)
    h, n = c.shape
    if levels.shape != (n, ):
        raise StructureError('structure has %d levels, distribution has %d columns' % (levels.size, n))
    if np.any(levels < 0) or np.any(levels >= h):
        raise StructureError('structure %s has levels outside [0, %d)' % (levels.tolist(), h))
    return levels


def _draw_levels(c, u):
    '''
    Invert the per-column CDFs of c (..., h, n) at uniforms u (..., n)
    '''
    cdf = np.cumsum(c, axis=-2)
    levels = np.sum(cdf <= u[..., None, :], axis=-2)
    return np.minimum(levels, c.shape[-2] - 1)


def sample_structure(c, rng):
    '''
    One independent categorical draw per column of C
    '''
    c = np.asarray(c.data if hasattr(c, 'data') else c, dtype=np.float64)
    return ModelStructure(_draw_levels(c, rng.random(c.shape[1])))


def sample_structures(c, rng, count=1):
    '''
    `count` draws for every distribution in a (B, h, n) batch, shape (B, count, n)

    Uses the same CDF inversion as sample_structure(), one uniform per
    (row, draw, block).
    '''
    c = np.asarray(c.data if hasattr(c, 'data') else c, dtype=np.float64)
    if c.ndim == 2:
        c = c[None]
    u = rng.random((c.shape[0], count, c.shape[2]))
    return _draw_levels(c[:, None, :, :], u)


def uniform_structure(h, n, rng):
    return ModelStructure(rng.integers(0, h, size=n))


def argmax_structure(c):
    '''
    Per-column most likely level; ties go to the lower (cheaper) level
    '''
    c = np.asarray(c.data if hasattr(c, 'data') else c)
    return ModelStructure(np.argmax(c, axis=0))


def argmax_structures(c):
    c = np.asarray(c.data if hasattr(c, 'data') else c)
    return np.argmax(c, axis=-2)


def enumerate_structures(h, n, limit=ENUMERATION_LIMIT):
    '''
    All h^n structures as a (h^n, n) array, in lexicographic order
    '''
    if h ** n > limit:
        raise CapacityError('%d^%d = %d structures exceeds the enumeration limit of %d' % (h, n, h ** n, limit))
    return np.array(list(itertools.product(range(h), repeat=n)), dtype=np.int64).reshape(h ** n, n)
