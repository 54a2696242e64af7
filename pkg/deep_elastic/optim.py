import numpy as np

from deep_elastic.errors import ContractError, NumericError, ShapeError

SGD = 'sgd'
ADAM = 'adam'
MODES = (SGD, ADAM)


class OptimizerState(object):

    '''
    Optimizer hyper-parameters plus per-parameter accumulators

    For SGD the accumulator is the momentum buffer; for Adam it is the pair of
    first/second moment estimates. States are treated as values: optimizer_step()
    returns a new state instead of touching this one.
    '''

    def __init__(self, mode, learning_rate, momentum=0.9, nesterov=True, beta1=0.9, beta2=0.999, eps=1e-8,
                 accumulators=None, step_count=0):
        if mode not in MODES:
            raise ContractError("unknown optimizer mode '%s'" % mode)
        if not learning_rate > 0:
            raise ContractError('learning rate must be positive, got %r' % learning_rate)
        for label, value in (('momentum', momentum), ('beta1', beta1), ('beta2', beta2)):
            if not 0 <= value < 1:
                raise ContractError('%s must be in [0, 1), got %r' % (label, value))
        self.mode = mode
        self.learning_rate = float(learning_rate)
        self.momentum = momentum
        self.nesterov = nesterov
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.accumulators = accumulators if accumulators is not None else {}
        self.step_count = step_count

    def __repr__(self):
        return '<OptimizerState mode=%s lr=%g steps=%d>' % (self.mode, self.learning_rate, self.step_count)

    def _clone(self, accumulators, step_count, learning_rate=None):
        return OptimizerState(
            self.mode, self.learning_rate if learning_rate is None else learning_rate,
            momentum=self.momentum, nesterov=self.nesterov, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            accumulators=accumulators, step_count=step_count,
        )

    def decayed(self, factor):
        '''
        Same state with the learning rate divided by `factor`
        '''
        return self.with_learning_rate(self.learning_rate / factor)

    def with_learning_rate(self, learning_rate):
        if not learning_rate > 0:
            raise ContractError('learning rate must be positive, got %r' % learning_rate)
        return self._clone(self.accumulators, self.step_count, learning_rate=learning_rate)


def sgd(learning_rate, momentum=0.9, nesterov=True):
    return OptimizerState(SGD, learning_rate, momentum=momentum, nesterov=nesterov)


def adam(learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
    return OptimizerState(ADAM, learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def _zeros_for(state, param):
    if state.mode == SGD:
        return (np.zeros_like(param), )
    return (np.zeros_like(param), np.zeros_like(param))


def optimizer_step(state, params, grads, masks=None):
    '''
    Apply one update and return (new_params, new_state)

    Parameters without a gradient are carried over untouched. Where `masks`
    holds a boolean array for a parameter, entries that are False keep both
    their value and their accumulators, so frozen parts of a network don't
    drift on stale momentum.
    '''
    masks = masks or {}
    step_count = state.step_count + 1
    new_params = {}
    new_acc = dict(state.accumulators)
    for name, param in params.items():
        grad = grads.get(name, None)
        if grad is None:
            new_params[name] = param
            continue
        if grad.shape != param.shape:
            raise ShapeError("gradient for '%s' does not match parameter" % name, param.shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NumericError('gradient contains NaN/inf', name=name)
        acc = state.accumulators.get(name, None) or _zeros_for(state, param)
        for a in acc:
            if a.shape != param.shape:
                raise ShapeError("accumulator for '%s' does not match parameter" % name, param.shape, a.shape)
        if state.mode == SGD:
            velocity = state.momentum * acc[0] + grad
            if state.nesterov:
                update = grad + state.momentum * velocity
            else:
                update = velocity
            new_value = param - state.learning_rate * update
            acc_new = (velocity, )
        else:
            m = state.beta1 * acc[0] + (1 - state.beta1) * grad
            v = state.beta2 * acc[1] + (1 - state.beta2) * grad * grad
            m_hat = m / (1 - state.beta1 ** step_count)
            v_hat = v / (1 - state.beta2 ** step_count)
            new_value = param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
            acc_new = (m, v)
        mask = masks.get(name, None)
        if mask is not None:
            new_value = np.where(mask, new_value, param)
            acc_new = tuple(np.where(mask, a_new, a_old) for a_new, a_old in zip(acc_new, acc))
        new_params[name] = new_value.astype(param.dtype, copy=False)
        new_acc[name] = tuple(a.astype(param.dtype, copy=False) for a in acc_new)
    return new_params, state._clone(new_acc, step_count)
