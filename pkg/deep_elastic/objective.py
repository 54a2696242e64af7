'''
Losses and gradients

The estimator minimises the cross-entropy of whichever sub-model it is
handed. The selector minimises the expected reward R(z) = loss + S(z) over
its own distribution; its gradient is estimated by sampling structures
(score-function estimator) or computed exactly by enumerating all h^n of
them.
'''

import numpy as np

from deep_elastic.data import Batch
from deep_elastic.errors import ContractError, NumericError
from deep_elastic.estimator import ModelStructure, active_masks, density, forward, forward_rows
from deep_elastic.optim import optimizer_step
from deep_elastic.selector import enumerate_structures, log_distribute, sample_structures
from deep_elastic.tensor import (add, backward, cross_entropy, cross_entropy_values, exp, gather_levels, gradients,
                                 level_onehot, mul, scale, total)


class RewardRecord(object):

    __slots__ = ('z', 'loss', 'sparsity', 'reward')

    def __init__(self, z, loss, sparsity):
        self.z = z
        self.loss = float(loss)
        self.sparsity = float(sparsity)
        self.reward = self.loss + self.sparsity

    def __repr__(self):
        return '<RewardRecord z=%s loss=%.6f sparsity=%.6f reward=%.6f>' % (
            self.z.encode(), self.loss, self.sparsity, self.reward)


class SampleSet(object):

    '''
    Structures drawn i.i.d. for one instance
    '''

    def __init__(self, structures):
        self.structures = [s if isinstance(s, ModelStructure) else ModelStructure(s) for s in structures]
        if not self.structures:
            raise ContractError('a sample set needs at least one structure')

    def __len__(self):
        return len(self.structures)

    def as_array(self):
        return np.array([s.levels for s in self.structures], dtype=np.int64)


def sparse_reg(densities, rho):
    '''
    S = rho * mean(densities)^2
    '''
    if rho < 0:
        raise ContractError('rho must be non-negative, got %r' % rho)
    return float(rho * np.mean(densities) ** 2)


def structure_penalties(config, structures, rho):
    '''
    S(z) for an array of structures (..., n), looked up from the density table
    '''
    structures = np.asarray(structures, dtype=np.int64)
    table = np.array(config.density_table())
    per_block = table[np.arange(config.n), structures]
    return rho * np.mean(per_block, axis=-1) ** 2


def reward(params_est, config, x, y, t, z, rho):
    '''
    R(z; x, y, t) for a single example
    '''
    logits = forward(params_est, config, x, z, t)
    loss = cross_entropy_values(logits.data, [y])[0]
    per_block, _ = density(config, z)
    return RewardRecord(z if isinstance(z, ModelStructure) else ModelStructure(z), loss, sparse_reg(per_block, rho))


def batch_rewards(params_est, config, batch, structures, rho):
    '''
    Rewards for structures of shape (B, K, n), one row of K per example

    Returns (rewards, losses), both (B, K). Rows are reduced in index order.
    '''
    structures = np.asarray(structures, dtype=np.int64)
    count, k, n = structures.shape
    x = np.repeat(batch.x, k, axis=0)
    y = np.repeat(batch.y, k)
    logits = forward_rows(params_est, config, x, structures.reshape(count * k, n), batch.task)
    losses = cross_entropy_values(logits, y).reshape(count, k)
    return losses + structure_penalties(config, structures, rho), losses


def _group_by_structure(structures):
    groups = {}
    order = []
    for idx, z in enumerate(structures):
        if z not in groups:
            groups[z] = []
            order.append(z)
        groups[z].append(idx)
    return [(z, np.array(groups[z])) for z in order]


def estimator_loss(params, config, batch, structures):
    '''
    Mean cross-entropy over the batch, each example under its own structure

    `structures` is one ModelStructure shared by the batch or a list with one
    per example. Examples sharing a structure go through forward() together.
    '''
    if isinstance(structures, ModelStructure):
        logits = forward(params, config, batch.x, structures, batch.task)
        return cross_entropy(logits, batch.y)
    structures = [s if isinstance(s, ModelStructure) else ModelStructure(s) for s in structures]
    if len(structures) != len(batch):
        raise ContractError('got %d structures for a batch of %d' % (len(structures), len(batch)))
    loss = None
    for z, idx in _group_by_structure(structures):
        logits = forward(params, config, batch.x[idx], z, batch.task)
        part = scale(cross_entropy(logits, batch.y[idx]), float(len(idx)) / len(batch))
        loss = part if loss is None else add(loss, part)
    return loss


def estimator_update(params_est, config, batch, structures, state):
    '''
    One optimizer step on the masked cross-entropy

    Returns (new_params, new_state, loss). S(z) does not depend on the
    estimator weights and is left out. Parameters outside every structure's
    active groups, and heads of other tasks, keep their exact values.
    '''
    tracked = params_est.tracked()
    loss = estimator_loss(tracked, config, batch, structures)
    if not np.isfinite(loss.data):
        raise NumericError('estimator loss is not finite')
    backward(loss)
    used = [structures] if isinstance(structures, ModelStructure) else structures
    masks = active_masks(params_est, config, used, batch.task)
    new_arrays, new_state = optimizer_step(state, params_est, gradients(tracked), masks=masks)
    return params_est.replace(new_arrays), new_state, float(loss.data)


def selector_gradient_estimate(params_sel, params_est, config, batch, sample_count, rho, rng, epsilon=0.0,
                               baseline=None, leave_one_out=False):
    '''
    Sampled estimate of the selector gradient

    For every example, draw |Z| structures from C = distribute(x) (or, with
    probability epsilon per draw, uniformly) and average
    (R(z) - baseline) / |Z| * grad log P(z; x) over the batch. R is a
    constant here; the gradient only flows through the column softmax.

    With leave_one_out, each draw is centred on the mean reward of the other
    |Z| - 1 draws of the same example, which keeps the estimate unbiased.

    Returns (gradients, structures, rewards).
    '''
    if sample_count < 1:
        raise ContractError('sample count must be at least 1, got %d' % sample_count)
    if leave_one_out and (sample_count < 2 or baseline is not None):
        raise ContractError('leave-one-out centring needs at least 2 samples and no constant baseline')
    tracked = params_sel.tracked()
    log_c = log_distribute(params_sel, batch.x, tracked)
    probs = np.exp(log_c.data)
    structures = sample_structures(probs, rng, sample_count)
    if epsilon > 0:
        explore = rng.random(structures.shape[:2]) < epsilon
        uniform = rng.integers(0, params_sel.h, size=structures.shape)
        structures = np.where(explore[..., None], uniform, structures)
    rewards, _ = batch_rewards(params_est, config, batch, structures, rho)
    if leave_one_out:
        centred = (rewards - rewards.mean(axis=1, keepdims=True)) * sample_count / (sample_count - 1)
    else:
        centred = rewards - (baseline if baseline is not None else 0.0)
    onehot = level_onehot(structures.reshape(-1, config.n), params_sel.h).reshape(
        len(batch), sample_count, params_sel.h, config.n)
    weights = np.einsum('bk,bkhn->bhn', centred / sample_count, onehot)
    surrogate = scale(total(mul(log_c, weights)), 1.0 / len(batch))
    backward(surrogate)
    return gradients(tracked), structures, rewards


def enumerated_objective(params_sel, params_est, config, batch, rho, tensors=None):
    '''
    J_s = mean over the batch of sum_z R(z) P(z; x), as a tensor

    Also returns the (B, h^n) reward table.
    '''
    structures = enumerate_structures(config.h, config.n)
    tiled = np.broadcast_to(structures, (len(batch), ) + structures.shape)
    rewards, _ = batch_rewards(params_est, config, batch, tiled, rho)
    log_c = log_distribute(params_sel, batch.x, tensors)
    probs = exp(gather_levels(log_c, structures))
    return scale(total(mul(probs, rewards)), 1.0 / len(batch)), rewards


def exact_selector_gradient(params_sel, params_est, config, batch, rho):
    '''
    Exact gradient of J_s by enumerating every structure (h^n <= 4096)
    '''
    tracked = params_sel.tracked()
    objective, _ = enumerated_objective(params_sel, params_est, config, batch, rho, tracked)
    backward(objective)
    return gradients(tracked)


def structure_score_terms(params_sel, params_est, config, x, y, t, structures, rho):
    '''
    R(z) * grad log P(z; x) for one example and each given structure

    Returns a (K, parameter count) matrix, columns following params_sel's
    order. Used to compute per-coordinate sampling statistics cheaply when
    the same structures recur many times.
    '''
    structures = np.asarray(structures, dtype=np.int64)
    batch = Batch(np.atleast_2d(x), np.atleast_1d(y), t)
    rewards, _ = batch_rewards(params_est, config, batch, structures[None], rho)
    tracked = params_sel.tracked()
    log_c = log_distribute(params_sel, batch.x, tracked)
    rows = []
    for k, z in enumerate(structures):
        for leaf in tracked.values():
            leaf.zero_grad()
        log_p = total(gather_levels(log_c, z[None]))
        backward(scale(log_p, rewards[0, k]))
        rows.append(flatten_grads(params_sel, gradients(tracked)))
    return np.array(rows)


def flatten_grads(params, grads):
    return np.concatenate([np.asarray(grads[name], dtype=np.float64).reshape(-1) for name in params])
