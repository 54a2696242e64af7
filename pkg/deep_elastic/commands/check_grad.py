import numpy as np

from deep_elastic.commands import CommandBase
from deep_elastic.data import Batch
from deep_elastic.errors import UsageError
from deep_elastic.estimator import BlockConfig, EstimatorConfig, TaskHead, build_estimator
from deep_elastic.objective import exact_selector_gradient, flatten_grads, structure_score_terms
from deep_elastic.selector import build_selector, distribute, enumerate_structures, sample_structures

Z_THRESHOLD = 4.0


def toy_problem(h, n, seed, input_width=4, classes=3, selector_hidden=4, group_size=2):
    '''
    A small random estimator/selector pair and one labelled instance

    Blocks are residual whenever h allows it, so level 0 is the identity.
    '''
    residual = h >= 2
    group_count = h - 1 if residual else h
    blocks = [BlockConfig(input_width, group_size * group_count, [group_size] * group_count, residual, input_width)
              for _ in range(n)]
    config = EstimatorConfig(blocks, [TaskHead(0, input_width, classes)])
    params_est = build_estimator(config, [seed, 0])
    params_sel = build_selector(input_width, selector_hidden, h, n, [seed, 1])
    rng = np.random.default_rng([seed, 2])
    x = rng.standard_normal((1, input_width))
    y = rng.integers(0, classes, size=1)
    return config, params_est, params_sel, Batch(x, y, 0)


def structure_index(structures, h):
    '''
    Position of each structure in enumerate_structures() order
    '''
    structures = np.asarray(structures, dtype=np.int64)
    weights = h ** np.arange(structures.shape[-1] - 1, -1, -1)
    return structures @ weights


def coordinate_names(params):
    names = []
    for name in params:
        for idx in np.ndindex(*params[name].shape):
            names.append('%s[%s]' % (name, ','.join(str(i) for i in idx)))
    return names


def compare_gradients(h, n, samples, seed, rho=0.1):
    '''
    Sampled score-function gradient vs. the exact one for one toy instance

    Every structure's term R(z) * grad log P(z; x) is computed once and the
    sampled estimate is assembled from how often each structure was drawn,
    which gives the per-coordinate mean and standard error cheaply. Returns
    a dict with the z-scores, cosine similarity and both gradients.
    '''
    config, params_est, params_sel, batch = toy_problem(h, n, seed)
    structures = enumerate_structures(h, n)
    terms = structure_score_terms(params_sel, params_est, config, batch.x[0], batch.y[0], batch.task,
                                  structures, rho)
    c = distribute(params_sel, batch.x[0]).data
    draws = sample_structures(c, np.random.default_rng([seed, 3]), samples)[0]
    counts = np.bincount(structure_index(draws, h), minlength=len(structures)).astype(np.float64)
    mean = counts @ terms / samples
    second = counts @ (terms * terms) / samples
    stderr = np.sqrt(np.maximum(second - mean * mean, 0.0) / samples)
    exact = flatten_grads(params_sel, exact_selector_gradient(params_sel, params_est, config, batch, rho))
    diff = np.abs(mean - exact)
    z = np.zeros_like(diff)
    noisy = stderr > 0
    z[noisy] = diff[noisy] / stderr[noisy]
    # A coordinate with no sampling noise must match exactly
    z[~noisy & (diff > 1e-12 * (1 + np.abs(exact)))] = np.inf
    norms = np.linalg.norm(mean) * np.linalg.norm(exact)
    cosine = float(mean @ exact / norms) if norms > 0 else (1.0 if not np.any(diff) else 0.0)
    worst = int(np.argmax(z))
    return {
        'z': z,
        'max_z': float(z[worst]),
        'worst': coordinate_names(params_sel)[worst],
        'cosine': cosine,
        'sampled': mean,
        'exact': exact,
    }


class Command(CommandBase):

    NAME = 'check-grad'
    DESCR = 'Compare the sampled selector gradient against exact enumeration on a toy problem'

    def configure_parser(self, parser):
        parser.add_argument(
            '--h',
            type=int,
            required=True,
            help='Levels per block',
        )
        parser.add_argument(
            '--n',
            type=int,
            required=True,
            help='Number of blocks',
        )
        parser.add_argument(
            '--samples',
            type=int,
            required=True,
            help='Number of sampled structures',
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=0,
        )
        parser.add_argument(
            '--rho',
            type=float,
            default=0.1,
            help='Sparsity weight used in the rewards (default 0.1)',
        )

    def run(self, args):
        if args.h < 1 or args.n < 1 or args.samples < 1:
            raise UsageError('--h, --n and --samples must be positive')
        if args.rho < 0:
            raise UsageError('--rho must be non-negative')
        result = compare_gradients(args.h, args.n, args.samples, args.seed, rho=args.rho)
        self._display.vv('sampled: %s' % np.array2string(result['sampled'], precision=6))
        self._display.vv('exact:   %s' % np.array2string(result['exact'], precision=6))
        print('max_z %.4f at %s cosine %.6f samples %d coordinates %d' % (
            result['max_z'], result['worst'], result['cosine'], args.samples, len(result['z'])))
        return 0 if result['max_z'] < Z_THRESHOLD else 2
