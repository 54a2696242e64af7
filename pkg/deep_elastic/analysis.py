'''
Post-hoc analytics on a trained selector: which structures it picks, how
likely each level is on average, which instances it treats alike, and what
the picked models cost
'''

import collections

import numpy as np

from deep_elastic.display import Display
from deep_elastic.errors import CompatibilityError, ContractError
from deep_elastic.estimator import ModelStructure, forward_rows, structure_costs
from deep_elastic.selector import argmax_structures, distribute, sample_structures
from deep_elastic.tensor import cross_entropy_values

HISTOGRAM_MODES = ('argmax', 'sample')
POLICIES = ('learned', 'random', 'full')


class ModelHistogram(object):

    '''
    Occurrence count per structure, keyed by the canonical "2-0-1" encoding
    '''

    def __init__(self, counts):
        self.counts = dict(counts)

    def __repr__(self):
        return '<ModelHistogram distinct=%d total=%d>' % (len(self.counts), self.total)

    def __len__(self):
        return len(self.counts)

    @property
    def total(self):
        return sum(self.counts.values())

    def most_common(self, k=None):
        '''
        (encoding, count) pairs, largest count first, ties by encoding
        '''
        ranked = sorted(self.counts.items(), key=lambda item: (-item[1], item[0]))
        return ranked if k is None else ranked[:k]

    def to_dict(self):
        return {
            'total': self.total,
            'distinct': len(self.counts),
            'counts': [{'structure': z, 'count': c} for z, c in self.most_common()],
        }


class LevelProbStats(object):

    '''
    M[l][i]: mean over a dataset of C_i(l; x)
    '''

    def __init__(self, mean, count):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.count = int(count)

    def __repr__(self):
        return '<LevelProbStats h=%d n=%d count=%d>' % (self.mean.shape + (self.count, ))

    def column_sums(self):
        return self.mean.sum(axis=0)

    def to_dict(self):
        return {'count': self.count, 'mean': self.mean.tolist()}


class CostReport(object):

    def __init__(self, mean_flops, mean_params, mean_density, count):
        self.mean_flops = float(mean_flops)
        self.mean_params = float(mean_params)
        self.mean_density = float(mean_density)
        self.count = int(count)

    def __repr__(self):
        return '<CostReport flops=%.1f params=%.1f density=%.4f>' % (
            self.mean_flops, self.mean_params, self.mean_density)

    def to_dict(self):
        return {
            'mean_flops': self.mean_flops,
            'mean_params': self.mean_params,
            'mean_density': self.mean_density,
            'count': self.count,
        }


def _check_compatible(params_sel, estimator_config):
    if (params_sel.h, params_sel.n) != (estimator_config.h, estimator_config.n):
        raise CompatibilityError('selector picks %d levels for %d blocks, estimator has %d levels and %d blocks' % (
            params_sel.h, params_sel.n, estimator_config.h, estimator_config.n))


def _distributions(params_sel, x):
    return distribute(params_sel, np.atleast_2d(x)).data


def model_histogram(params_sel, estimator_config, dataset, mode='argmax', seed=0):
    '''
    Count the structures picked for every instance of `dataset`, by per-column
    argmax (deployment) or by sampling with `seed`
    '''
    if mode not in HISTOGRAM_MODES:
        raise ContractError("unknown histogram mode '%s'" % mode)
    _check_compatible(params_sel, estimator_config)
    c = _distributions(params_sel, dataset.x)
    if mode == 'argmax':
        structures = argmax_structures(c)
    else:
        structures = sample_structures(c, np.random.default_rng([seed, dataset.task]), 1)[:, 0]
    counts = collections.Counter(ModelStructure(row).encode() for row in structures)
    return ModelHistogram(counts)


def mean_level_probability(params_sel, dataset):
    c = _distributions(params_sel, dataset.x)
    return LevelProbStats(np.mean(c, axis=0), c.shape[0])


def nearest_by_distribution(params_sel, query_x, dataset, k):
    '''
    The k instances whose selector output is closest (Euclidean, flattened C)
    to that of `query_x`, as (index, distance) pairs; ties go to the lower index
    '''
    if not 1 <= k <= len(dataset):
        raise ContractError('k must be in [1, %d], got %d' % (len(dataset), k))
    query = _distributions(params_sel, query_x)[0].reshape(-1)
    c = _distributions(params_sel, dataset.x).reshape(len(dataset), -1)
    distances = np.sqrt(np.sum((c - query) ** 2, axis=1))
    order = np.argsort(distances, kind='stable')[:k]
    return [(int(idx), float(distances[idx])) for idx in order]


def average_cost(params_sel, estimator_config, dataset):
    '''
    Mean FLOPs, parameter count and density of the argmax structures
    '''
    _check_compatible(params_sel, estimator_config)
    structures = argmax_structures(_distributions(params_sel, dataset.x))
    dens, counts, flops = structure_costs(estimator_config, structures, dataset.task)
    return CostReport(np.mean(flops), np.mean(counts), np.mean(dens), len(dataset))


class RandomSelector(object):

    '''
    An input-independent selector with q_i(l) proportional to
    exp(-beta * d_i(l))

    beta = 0 is uniform; larger beta favours cheaper levels. calibrate() finds
    the beta that gives a target expected mean density.
    '''

    def __init__(self, estimator_config, beta=0.0):
        self.estimator_config = estimator_config
        self.beta = float(beta)
        self._density = np.array(estimator_config.density_table(), dtype=np.float64)

    def __repr__(self):
        return '<RandomSelector beta=%g expected_density=%.4f>' % (self.beta, self.expected_density())

    def distribution(self):
        '''
        (h, n) matrix with the same layout as the learned selector's C
        '''
        logits = -self.beta * self._density
        logits -= logits.max(axis=1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=1, keepdims=True)
        return q.T

    def expected_density(self):
        q = self.distribution()
        return float(np.mean(np.sum(q * self._density.T, axis=0)))

    def sample_rows(self, x, rng):
        rows = np.atleast_2d(x).shape[0]
        c = np.broadcast_to(self.distribution(), (rows, ) + (self.estimator_config.h, self.estimator_config.n))
        return sample_structures(c, rng, 1)[:, 0]

    @classmethod
    def calibrate(cls, estimator_config, target_density, low=-60.0, high=60.0, iterations=200, tolerance=1e-9):
        '''
        Bisection on beta; the expected density falls as beta grows
        '''
        def density_at(beta):
            return cls(estimator_config, beta).expected_density()

        reachable = (density_at(high), density_at(low))
        if not reachable[0] <= target_density <= reachable[1]:
            Display().warn('target density %.4f outside reachable range [%.4f, %.4f], clipping' % (
                target_density, reachable[0], reachable[1]))
            target_density = min(max(target_density, reachable[0]), reachable[1])
        for _ in range(iterations):
            mid = 0.5 * (low + high)
            value = density_at(mid)
            if abs(value - target_density) <= tolerance:
                break
            if value > target_density:
                low = mid
            else:
                high = mid
        return cls(estimator_config, 0.5 * (low + high))


class EvaluationReport(object):

    '''
    Accuracy, loss and cost of one policy on one task
    '''

    def __init__(self, task, policy, accuracy, loss, cost):
        self.task = task
        self.policy = policy
        self.accuracy = float(accuracy)
        self.loss = float(loss)
        self.cost = cost

    def __repr__(self):
        return '<EvaluationReport task=%d policy=%s accuracy=%.4f>' % (self.task, self.policy, self.accuracy)

    def to_dict(self):
        data = {'task': self.task, 'policy': self.policy, 'accuracy': self.accuracy, 'loss': self.loss}
        data.update(self.cost.to_dict())
        return data


def policy_structures(policy, estimator_config, x, params_sel=None, random_selector=None, rng=None):
    '''
    One structure per row of x under `policy`:
    learned (selector argmax), random (RandomSelector draws) or full (z*)
    '''
    rows = np.atleast_2d(x).shape[0]
    if policy == 'learned':
        if params_sel is None:
            raise ContractError('the learned policy needs selector parameters')
        return argmax_structures(_distributions(params_sel, x))
    if policy == 'random':
        if random_selector is None or rng is None:
            raise ContractError('the random policy needs a RandomSelector and a random generator')
        return random_selector.sample_rows(x, rng)
    if policy == 'full':
        return np.full((rows, estimator_config.n), estimator_config.h - 1, dtype=np.int64)
    raise ContractError("unknown policy '%s' (known: %s)" % (policy, ', '.join(POLICIES)))


def evaluate(params_est, estimator_config, dataset, policy, params_sel=None, random_selector=None, seed=0):
    '''
    Run `dataset` through the estimator with structures chosen by `policy`
    '''
    rng = np.random.default_rng([seed, dataset.task])
    structures = policy_structures(policy, estimator_config, dataset.x, params_sel=params_sel,
                                   random_selector=random_selector, rng=rng)
    logits = forward_rows(params_est, estimator_config, dataset.x, structures, dataset.task)
    accuracy = np.mean(np.argmax(logits, axis=1) == dataset.y)
    loss = np.mean(cross_entropy_values(logits, dataset.y))
    dens, counts, flops = structure_costs(estimator_config, structures, dataset.task)
    cost = CostReport(np.mean(flops), np.mean(counts), np.mean(dens), len(dataset))
    return EvaluationReport(dataset.task, policy, accuracy, loss, cost)


def evaluate_suite(params_est, estimator_config, datasets, policy, params_sel=None, random_selector=None, seed=0):
    '''
    evaluate() for every task, in task order
    '''
    return [evaluate(params_est, estimator_config, datasets[t], policy, params_sel=params_sel,
                     random_selector=random_selector, seed=seed) for t in sorted(datasets)]


def matched_random_selector(params_sel, estimator_config, datasets):
    '''
    A RandomSelector calibrated to the learned selector's mean argmax density
    over all given datasets
    '''
    total = 0.0
    count = 0
    for t in sorted(datasets):
        cost = average_cost(params_sel, estimator_config, datasets[t])
        total += cost.mean_density * cost.count
        count += cost.count
    return RandomSelector.calibrate(estimator_config, total / count)
