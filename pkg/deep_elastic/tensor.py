'''
Dense tensors with reverse-mode automatic differentiation

Every op below takes Tensor arguments and returns a new Tensor. When any
argument requires a gradient, the result remembers its parents and a local
backward rule, and backward() walks that graph once in reverse topological
order. Arrays are row-major numpy arrays; float64 is used by the gradient
oracles and tests, float32 is allowed for training.
'''

import numpy as np

from deep_elastic.errors import ContractError, LabelError, NumericError, ShapeError

# Relative error accepted when comparing backward() against finite_diff_grad()
GRAD_CHECK_TOLERANCE = {
    'float64': 1e-5,
    'float32': 1e-2,
}


class Tensor(object):

    '''
    A value in the computation graph

    Leaves are created directly (parameters, inputs). Interior nodes come out
    of the ops in this module and carry `_parents` plus a `_backward` rule that
    maps the node's gradient to one gradient per parent.
    '''

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        data = np.asarray(data, dtype=dtype)
        if data.dtype.kind != 'f':
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        # Leaf gradients start at zero so unreachable parameters report exactly zero
        self.grad = np.zeros_like(data) if requires_grad else None

    def __repr__(self):
        return '<Tensor name=%s shape=%s requires_grad=%s>' % (self.name, self.shape, self.requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)


def as_tensor(value):
    '''
    Wrap arrays/scalars as constant tensors, leave tensors alone
    '''
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_finite(data, op_name):
    if not np.all(np.isfinite(data)):
        raise NumericError('non-finite value produced', name=op_name)
    return data


def _make(data, parents, backward_fn, op_name):
    '''
    Build an op result and hook it into the graph when needed
    '''
    out = Tensor(_check_finite(data, op_name), name=op_name)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological_order(root):
    '''
    Nodes reachable from root (through gradient-requiring parents), parents
    before children
    '''
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    '''
    Accumulate d(root)/d(leaf) into the .grad of every reachable leaf

    Interior gradients are reset on each call; leaf gradients accumulate until
    zero_grad() is called.
    '''
    if root.data.size != 1:
        raise ContractError('backward() needs a scalar root, got shape %s' % (root.shape, ))
    if not root.requires_grad:
        return
    order = _topological_order(root)
    for node in order:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.data)
    if root.grad is None:
        root.grad = np.zeros_like(root.data)
    root.grad = root.grad + 1.0
    for node in reversed(order):
        if node.is_leaf:
            continue
        parent_grads = node._backward(node.grad)
        for parent, grad in zip(node._parents, parent_grads):
            if grad is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad = parent.grad + grad


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul inner dimensions differ', a.shape, b.shape)

    def _backward(grad):
        return (grad @ b.data.T, a.data.T @ grad)

    return _make(a.data @ b.data, (a, b), _backward, 'matmul')


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError('transpose needs a matrix', a.shape)
    return _make(a.data.T, (a, ), lambda grad: (grad.T, ), 'transpose')


def _same_shape(a, b, op_name):
    if a.shape != b.shape:
        raise ShapeError('%s operands differ in shape' % op_name, a.shape, b.shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, 'add')
    return _make(a.data + b.data, (a, b), lambda grad: (grad, grad), 'add')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, 'mul')

    def _backward(grad):
        return (grad * b.data, grad * a.data)

    return _make(a.data * b.data, (a, b), _backward, 'mul')


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)
    return _make(a.data * factor, (a, ), lambda grad: (grad * factor, ), 'scale')


def relu(a):
    a = as_tensor(a)

    def _backward(grad):
        return (grad * (a.data > 0), )

    return _make(np.maximum(a.data, 0), (a, ), _backward, 'relu')


ELEMENTWISE_OPS = {
    'relu': relu,
    'add': add,
    'mul': mul,
    'scale': scale,
}


def elementwise(op, *args):
    '''
    Dispatch one of the pointwise ops by name
    '''
    if op not in ELEMENTWISE_OPS:
        raise ContractError("unknown elementwise op '%s'" % op)
    return ELEMENTWISE_OPS[op](*args)


def add_bias(a, bias):
    '''
    Add a vector to every row of a matrix
    '''
    a, bias = as_tensor(a), as_tensor(bias)
    if a.ndim != 2 or bias.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise ShapeError('bias does not match matrix columns', a.shape, bias.shape)

    def _backward(grad):
        return (grad, grad.sum(axis=0))

    return _make(a.data + bias.data, (a, bias), _backward, 'add_bias')


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a, ), lambda grad: (grad * out_data, ), 'exp')


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a, ), lambda grad: (grad / a.data, ), 'log')


def total(a):
    '''
    Sum of all entries, as a scalar tensor
    '''
    a = as_tensor(a)
    return _make(np.sum(a.data), (a, ), lambda grad: (np.full_like(a.data, grad), ), 'total')


def mean(a):
    a = as_tensor(a)
    return scale(total(a), 1.0 / a.data.size)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError('cannot reshape', a.shape, shape)
    return _make(a.data.reshape(shape), (a, ), lambda grad: (grad.reshape(a.shape), ), 'reshape')


def take_rows(a, count):
    '''
    The first `count` rows of a matrix (or entries of a vector)
    '''
    a = as_tensor(a)
    if count < 0 or count > a.shape[0]:
        raise ShapeError('cannot take %d rows' % count, a.shape)

    def _backward(grad):
        full = np.zeros_like(a.data)
        full[:count] = grad
        return (full, )

    return _make(a.data[:count], (a, ), _backward, 'take_rows')


def take_cols(a, count):
    '''
    The first `count` columns of a matrix
    '''
    a = as_tensor(a)
    if a.ndim != 2 or count < 0 or count > a.shape[1]:
        raise ShapeError('cannot take %d columns' % count, a.shape)

    def _backward(grad):
        full = np.zeros_like(a.data)
        full[:, :count] = grad
        return (full, )

    return _make(a.data[:, :count], (a, ), _backward, 'take_cols')


def _log_softmax(data, axis):
    shifted = data - np.max(data, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_columns(data):
    '''
    Column softmax on plain arrays of shape (..., h, n)
    '''
    shifted = data - np.max(data, axis=-2, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-2, keepdims=True)


def column_softmax(logits):
    '''
    Softmax over the rows of every column (axis -2), so each column sums to 1
    '''
    logits = as_tensor(logits)
    if logits.ndim < 2:
        raise ShapeError('column_softmax needs at least 2 dimensions', logits.shape)
    _check_finite(logits.data, 'column_softmax input')
    probs = softmax_columns(logits.data)

    def _backward(grad):
        return (probs * (grad - np.sum(grad * probs, axis=-2, keepdims=True)), )

    return _make(probs, (logits, ), _backward, 'column_softmax')


def column_log_softmax(logits):
    '''
    log(column_softmax(logits)) without going through the probabilities
    '''
    logits = as_tensor(logits)
    if logits.ndim < 2:
        raise ShapeError('column_log_softmax needs at least 2 dimensions', logits.shape)
    _check_finite(logits.data, 'column_log_softmax input')
    out_data = _log_softmax(logits.data, axis=-2)
    probs = np.exp(out_data)

    def _backward(grad):
        return (grad - probs * np.sum(grad, axis=-2, keepdims=True), )

    return _make(out_data, (logits, ), _backward, 'column_log_softmax')


def level_onehot(structures, h):
    '''
    (K, h, n) indicator with [k, l, i] = 1 where structure k picks level l in block i
    '''
    structures = np.asarray(structures, dtype=np.int64)
    return (structures[:, None, :] == np.arange(h)[None, :, None]).astype(np.float64)


def gather_levels(log_c, structures):
    '''
    Sum of log_c[l_i, i] over blocks for every structure

    log_c is (h, n) or (B, h, n); structures is (K, n). The result is (K, ) or
    (B, K).
    '''
    log_c = as_tensor(log_c)
    structures = np.asarray(structures, dtype=np.int64)
    h, n = log_c.shape[-2:]
    if structures.ndim != 2 or structures.shape[1] != n:
        raise ShapeError('structures do not match distribution columns', structures.shape, log_c.shape)
    cols = np.arange(n)
    picked = log_c.data[..., structures, cols]
    onehot = level_onehot(structures, h)

    def _backward(grad):
        if log_c.ndim == 2:
            return (np.einsum('k,khn->hn', grad, onehot), )
        return (np.einsum('bk,khn->bhn', grad, onehot), )

    return _make(np.sum(picked, axis=-1), (log_c, ), _backward, 'gather_levels')


def cross_entropy_values(logits, labels):
    '''
    Per-row cross-entropy on plain arrays, no graph
    '''
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    _check_labels(labels, logits.shape[-1])
    log_probs = _log_softmax(logits, axis=-1)
    return -log_probs[np.arange(len(labels)), labels]


def _check_labels(labels, k):
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelError('label out of range [0, %d): %s' % (k, labels[(labels < 0) | (labels >= k)][:5].tolist()))


def cross_entropy(logits, labels):
    '''
    -log softmax(logits)[label]

    A vector of k logits with a single label gives that example's loss; a
    (B, k) matrix with B labels gives the mean over rows.
    '''
    logits = as_tensor(logits)
    single = logits.ndim == 1
    data = logits.data[None, :] if single else logits.data
    if data.ndim != 2:
        raise ShapeError('cross_entropy needs a vector or matrix of logits', logits.shape)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != data.shape[0]:
        raise ShapeError('label count differs from logit rows', data.shape, labels.shape)
    _check_labels(labels, data.shape[1])
    rows = np.arange(data.shape[0])
    log_probs = _log_softmax(data, axis=-1)
    loss = -np.mean(log_probs[rows, labels])

    def _backward(grad):
        local = np.exp(log_probs)
        local[rows, labels] -= 1.0
        local = local * (grad / data.shape[0])
        if single:
            local = local[0]
        return (local, )

    return _make(np.asarray(loss), (logits, ), _backward, 'cross_entropy')


def finite_diff_grad(f, params, step=1e-6):
    '''
    Central-difference gradient of a scalar function of named arrays

    `f` receives a dict shaped like `params` and must be deterministic.
    '''
    if step <= 0:
        raise ContractError('finite difference step must be positive')
    work = dict((name, np.array(value, dtype=np.float64)) for name, value in params.items())
    grads = {}
    for name, value in work.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        grad_flat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = f(work)
            flat[idx] = orig - step
            f_minus = f(work)
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError('function is not finite around coordinate %d' % idx, name=name)
            grad_flat[idx] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = grad
    return grads


def relative_error(a, b):
    '''
    max |a - b| / max(|a|, |b|, 1e-12), the measure used by the gradient checks
    '''
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)) if a.size else 0.0, np.max(np.abs(b)) if b.size else 0.0, 1e-12)
    return float(np.max(np.abs(a - b)) / denom) if a.size else 0.0


class ParamSet(dict):

    '''
    Ordered mapping of parameter names to numpy arrays

    Subclasses hang network metadata off attributes; copies keep it.
    '''

    def replace(self, arrays):
        '''
        Same metadata, new arrays
        '''
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        dict.update(new, arrays)
        return new

    def copy(self):
        return self.replace(dict((k, v.copy()) for k, v in self.items()))

    def tracked(self):
        '''
        Leaf tensors, one per parameter, ready for backward()
        '''
        return dict((k, Tensor(v, requires_grad=True, name=k)) for k, v in self.items())

    def count(self):
        return int(sum(v.size for v in self.values()))

    def astype(self, dtype):
        return self.replace(dict((k, v.astype(dtype)) for k, v in self.items()))


def gradients(tracked):
    '''
    Pull .grad arrays out of a dict of tracked leaves
    '''
    return dict((k, t.grad) for k, t in tracked.items())
