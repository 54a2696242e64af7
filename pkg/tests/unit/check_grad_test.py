import unittest

import numpy as np

from deep_elastic.commands.check_grad import (Z_THRESHOLD, compare_gradients, coordinate_names, structure_index,
                                              toy_problem)
from deep_elastic.selector import enumerate_structures


class TestToyProblem (unittest.TestCase):

    def test_shapes(self):
        config, params_est, params_sel, batch = toy_problem(3, 2, 0)

        self.assertEqual((config.h, config.n), (3, 2))
        self.assertEqual(params_sel.meta(), {'input': 4, 'hidden': 4, 'h': 3, 'n': 2})
        self.assertEqual(len(batch), 1)

    def test_structure_index(self):
        structures = enumerate_structures(3, 3)

        np.testing.assert_array_equal(structure_index(structures, 3), np.arange(27))

    def test_coordinate_names(self):
        _, _, params_sel, _ = toy_problem(2, 2, 0)
        names = coordinate_names(params_sel)

        self.assertEqual(len(names), params_sel.count())
        self.assertIn('W2[3,1]', names)


class TestCompareGradients (unittest.TestCase):

    def test_sampled_matches_exact(self):
        result = compare_gradients(2, 2, 100000, 7)

        self.assertLess(result['max_z'], Z_THRESHOLD)
        self.assertEqual(result['sampled'].shape, result['exact'].shape)

    def test_single_structure(self):
        result = compare_gradients(1, 2, 10, 0)

        self.assertEqual(result['max_z'], 0.0)
        np.testing.assert_array_equal(result['exact'], 0)
