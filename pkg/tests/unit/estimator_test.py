import itertools
import unittest

import numpy as np

from deep_elastic.errors import ConfigError, ShapeError, StructureError, TaskError
from deep_elastic.estimator import (BlockConfig, EstimatorConfig, EstimatorParams, ModelStructure, TaskHead,
                                    active_masks, build_estimator, dense_forward, density, flops_count, forward,
                                    forward_rows, param_count, param_shapes, structure_costs, total_param_count)
from deep_elastic.tensor import backward, cross_entropy, gradients


def residual_config(n=2, h=3, width=4, group=2, tasks=((0, 3), )):
    blocks = [BlockConfig(width, group * (h - 1), [group] * (h - 1), residual=True) for _ in range(n)]
    return EstimatorConfig(blocks, [TaskHead(t, width, k) for t, k in tasks])


def toy_config():
    '''
    input 1, hidden 2 in groups [1, 1], a two-class head reading the block output
    '''
    return EstimatorConfig([BlockConfig(1, 2, [1, 1], residual=False, output_width=1)], [TaskHead(0, 1, 2)])


def toy_params():
    return EstimatorParams({
        'block0.W1': np.array([[1.0], [1.0]]),
        'block0.b1': np.zeros(2),
        'block0.W2': np.array([[1.0, 1.0]]),
        'block0.b2': np.zeros(1),
        'head0.W': np.array([[1.0], [0.0]]),
        'head0.b': np.zeros(2),
    })


class TestConfig (unittest.TestCase):

    def test_levels(self):
        self.assertEqual(residual_config(h=3).h, 3)
        self.assertEqual(BlockConfig(4, 8, [4, 4], residual=False).levels, 2)

    def test_groups_must_add_up(self):
        with self.assertRaises(ConfigError):
            BlockConfig(4, 8, [4, 3])

    def test_residual_keeps_width(self):
        with self.assertRaises(ConfigError):
            BlockConfig(4, 8, [4, 4], residual=True, output_width=5)

    def test_width_chain(self):
        blocks = [BlockConfig(4, 8, [4, 4], output_width=6), BlockConfig(4, 8, [4, 4])]
        with self.assertRaises(ConfigError):
            EstimatorConfig(blocks, [TaskHead(0, 4, 2)])

    def test_uniform_levels(self):
        blocks = [BlockConfig(4, 8, [4, 4], residual=True), BlockConfig(4, 8, [4, 4], residual=False)]
        with self.assertRaises(ConfigError):
            EstimatorConfig(blocks, [TaskHead(0, 4, 2)])

    def test_round_trip(self):
        config = residual_config(tasks=((0, 3), (2, 5)))

        self.assertEqual(EstimatorConfig.from_dict(config.to_dict()), config)

    def test_unknown_task(self):
        with self.assertRaises(TaskError):
            residual_config().task(7)

    def test_structure_validation(self):
        config = residual_config(n=2, h=3)
        with self.assertRaises(StructureError):
            config.validate_structure((0, 3))
        with self.assertRaises(StructureError):
            config.validate_structure((0, 1, 2))


class TestModelStructure (unittest.TestCase):

    def test_encode(self):
        z = ModelStructure([2, 0, 1])

        self.assertEqual(z.encode(), '2-0-1')
        self.assertEqual(ModelStructure.decode('2-0-1'), z)

    def test_dominates(self):
        self.assertTrue(ModelStructure([2, 1]).dominates(ModelStructure([1, 1])))
        self.assertFalse(ModelStructure([2, 0]).dominates(ModelStructure([1, 1])))


class TestBuildEstimator (unittest.TestCase):

    def test_same_seed(self):
        config = residual_config()
        a = build_estimator(config, 5)
        b = build_estimator(config, 5)

        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seed(self):
        config = residual_config()
        a = build_estimator(config, 5)
        b = build_estimator(config, 6)

        self.assertTrue(any(np.any(a[name] != b[name]) for name in a))

    def test_xavier_variance(self):
        config = EstimatorConfig([BlockConfig(64, 64, [64])], [TaskHead(0, 64, 2)])
        values = np.concatenate([build_estimator(config, seed)['block0.W1'].ravel() for seed in range(10)])

        self.assertAlmostEqual(np.var(values) / (2.0 / 128), 1.0, delta=0.2)

    def test_shapes(self):
        config = residual_config(tasks=((0, 3), (1, 2)))
        params = build_estimator(config, 0)

        self.assertEqual(dict((k, v.shape) for k, v in params.items()), param_shapes(config))
        self.assertEqual(params.count(), total_param_count(config))


class TestForward (unittest.TestCase):

    def test_toy_levels(self):
        config = toy_config()
        params = toy_params()

        self.assertEqual(float(forward(params, config, np.array([2.0]), (0, ), 0).data[0]), 2.0)
        self.assertEqual(float(forward(params, config, np.array([2.0]), (1, ), 0).data[0]), 4.0)

    def test_full_matches_dense(self):
        config = residual_config(n=3)
        params = build_estimator(config, 1)
        x = np.random.default_rng(0).standard_normal((5, 4))

        np.testing.assert_array_equal(forward(params, config, x, config.full_structure(), 0).data,
                                      dense_forward(params, config, x, 0).data)

    def test_residual_level_zero_is_identity(self):
        blocks = [BlockConfig(4, 4, [2, 2], residual=True)]
        config = EstimatorConfig(blocks, [TaskHead(0, 4, 4)])
        params = build_estimator(config, 2)
        params['head0.W'] = np.eye(4)
        x = np.random.default_rng(1).standard_normal((3, 4))

        np.testing.assert_array_equal(forward(params, config, x, (0, ), 0).data, x)

    def test_output_shape_independent_of_structure(self):
        config = residual_config(n=2, h=3)
        params = build_estimator(config, 3)
        x = np.ones(4)

        for z in itertools.product(range(3), repeat=2):
            self.assertEqual(forward(params, config, x, z, 0).shape, (3, ))

    def test_bad_task(self):
        config = residual_config()
        with self.assertRaises(TaskError):
            forward(build_estimator(config, 0), config, np.ones(4), (0, 0), 9)

    def test_bad_width(self):
        config = residual_config()
        with self.assertRaises(ShapeError):
            forward(build_estimator(config, 0), config, np.ones(5), (0, 0), 0)

    def test_forward_rows_matches_forward(self):
        config = residual_config(n=2, h=3, tasks=((0, 3), (1, 2)))
        params = build_estimator(config, 4)
        x = np.random.default_rng(2).standard_normal((9, 4))
        structures = np.array(list(itertools.product(range(3), repeat=2)))
        rows = forward_rows(params, config, x, structures, 1)

        for idx, z in enumerate(structures):
            np.testing.assert_allclose(rows[idx], forward(params, config, x[idx], z, 1).data, rtol=1e-12, atol=1e-12)

    def test_masked_gradients_are_zero(self):
        config = residual_config(n=2, h=3, tasks=((0, 3), (1, 2)))
        params = build_estimator(config, 5)
        tracked = params.tracked()
        x = np.random.default_rng(3).standard_normal((4, 4))
        backward(cross_entropy(forward(tracked, config, x, (1, 0), 0), [0, 1, 2, 0]))
        grads = gradients(tracked)

        np.testing.assert_array_equal(grads['block0.W1'][2:], 0)
        np.testing.assert_array_equal(grads['block0.W2'][:, 2:], 0)
        for name in ('block1.W1', 'block1.b1', 'block1.W2', 'block1.b2', 'head1.W', 'head1.b'):
            np.testing.assert_array_equal(grads[name], 0)
        self.assertTrue(np.any(grads['block0.W1'][:2] != 0))


class TestCosts (unittest.TestCase):

    def test_density_full(self):
        config = residual_config(n=3)
        per_block, avg = density(config, config.full_structure())

        self.assertEqual(per_block, [1.0, 1.0, 1.0])
        self.assertEqual(avg, 1.0)

    def test_density_residual_zero(self):
        config = residual_config(n=3)

        self.assertEqual(density(config, (0, 0, 0)), ([0.0, 0.0, 0.0], 0.0))

    def test_density_half(self):
        config = EstimatorConfig([BlockConfig(4, 8, [4, 4], residual=False)], [TaskHead(0, 4, 2)])

        self.assertEqual(density(config, (0, ))[0], [0.5])

    def test_param_count_toy(self):
        config = EstimatorConfig([BlockConfig(4, 8, [4, 4], residual=False)], [TaskHead(0, 4, 2)])
        head = 2 * 4 + 2

        # 36 grouped entries plus the output bias of the active block
        self.assertEqual(param_count(config, (0, )), 36 + 4 + head)

    def test_param_count_full_is_dense(self):
        config = residual_config(n=2)

        self.assertEqual(param_count(config, config.full_structure()), total_param_count(config))

    def test_flops_full_block(self):
        plain = EstimatorConfig([BlockConfig(4, 8, [4, 4], residual=False)], [TaskHead(0, 4, 2)])
        residual = EstimatorConfig([BlockConfig(4, 8, [2, 2, 4], residual=True)], [TaskHead(0, 4, 2)])
        head = 2 * 2 * 4 + 2
        block = 2 * (8 * 4) + 8 + 2 * (4 * 8) + 4

        self.assertEqual(flops_count(plain, (1, )), block + head)
        self.assertEqual(flops_count(residual, (3, )), block + 4 + head)

    def test_flops_residual_zero(self):
        config = residual_config(n=2)
        task = config.tasks[0]
        head = 2 * task.classes * 4 + task.classes

        self.assertEqual(flops_count(config, (0, 0)), head)

    def test_monotone(self):
        config = residual_config(n=2, h=3)
        structures = [ModelStructure(z) for z in itertools.product(range(3), repeat=2)]
        for a in structures:
            for b in structures:
                if not a.dominates(b):
                    continue
                self.assertGreaterEqual(density(config, a)[1], density(config, b)[1])
                self.assertGreaterEqual(param_count(config, a), param_count(config, b))
                self.assertGreaterEqual(flops_count(config, a), flops_count(config, b))

    def test_density_table_shape(self):
        table = residual_config(n=2, h=3).density_table()

        for row in table:
            self.assertEqual(row[0], 0.0)
            self.assertEqual(row[-1], 1.0)
            self.assertEqual(row, sorted(row))

    def test_structure_costs_match(self):
        config = residual_config(n=2, h=3, tasks=((0, 3), (1, 5)))
        structures = np.array(list(itertools.product(range(3), repeat=2)))
        dens, counts, flops = structure_costs(config, structures, 1)

        for idx, z in enumerate(structures):
            self.assertAlmostEqual(dens[idx], density(config, z)[1])
            self.assertEqual(counts[idx], param_count(config, z, 1))
            self.assertEqual(flops[idx], flops_count(config, z, 1))


class TestActiveMasks (unittest.TestCase):

    def test_union_of_structures(self):
        config = residual_config(n=2, h=3, tasks=((0, 3), (1, 2)))
        params = build_estimator(config, 0)
        masks = active_masks(params, config, [(1, 0), (0, 0)], 1)

        self.assertEqual(int(masks['block0.W1'].sum()), 2 * 4)
        self.assertFalse(np.any(masks['block1.W1']))
        self.assertFalse(np.any(masks['block1.b2']))
        self.assertTrue(np.all(masks['block0.b2']))
        self.assertTrue(np.all(masks['head1.W']))
        self.assertFalse(np.any(masks['head0.W']))
