import contextlib
import io
import json
import os
import tempfile
import unittest

from deep_elastic.__main__ import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, run_command
from deep_elastic.data import load_csv
from deep_elastic.display import Display
from deep_elastic.metrics import read_metrics

EXAMPLES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', '..', 'docs', 'examples')
TINY_CONFIG = os.path.join(EXAMPLES_DIR, 'tiny.json')


def run_quiet(argv, environ=None):
    '''
    (exit code, stdout) with stderr swallowed
    '''
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = run_command(argv, environ=environ or {})
    return code, out.getvalue()


class TestUsage (unittest.TestCase):

    def test_no_command(self):
        self.assertEqual(run_quiet([])[0], EXIT_USAGE)

    def test_unknown_flag(self):
        self.assertEqual(run_quiet(['train', '--config', TINY_CONFIG, '--bogus'])[0], EXIT_USAGE)

    def test_unknown_command(self):
        self.assertEqual(run_quiet(['fit'])[0], EXIT_USAGE)

    def test_missing_required(self):
        self.assertEqual(run_quiet(['eval', '--config', TINY_CONFIG])[0], EXIT_USAGE)

    def test_bad_values(self):
        self.assertEqual(run_quiet(['check-grad', '--h', '2', '--n', '2', '--samples', '0'])[0], EXIT_USAGE)

    def test_missing_config(self):
        self.assertEqual(run_quiet(['train', '--config', '/nonexistent/run.json'])[0], EXIT_FAILURE)

    def test_log_env(self):
        run_quiet([], environ={'DEN_LOG': 'debug'})

        self.assertEqual(Display().get_verbosity(), 3)
        Display().set_verbosity(0)


class TestCheckGrad (unittest.TestCase):

    def test_single_structure_is_exact(self):
        code, out = run_quiet(['check-grad', '--h', '1', '--n', '3', '--samples', '50'])

        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith('max_z 0.0000'))


class TestGenData (unittest.TestCase):

    def test_writes_splits(self):
        with tempfile.TemporaryDirectory() as tmp:
            spec = os.path.join(tmp, 'spec.yml')
            with open(spec, 'w') as f:
                f.write('task_count: 2\nclasses: 3\ninput_width: 5\nsamples:\n  train: 12\n  val: 6\n  test: 6\n')
            code, out = run_quiet(['gen-data', '--spec', spec, '--out', os.path.join(tmp, 'suite')])
            train = load_csv(os.path.join(tmp, 'suite', 'train.csv'))
            with open(os.path.join(tmp, 'suite', 'spec.json')) as f:
                written = json.load(f)

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(sorted(train), [0, 1])
        self.assertEqual(train[1].width, 5)
        self.assertEqual(written['samples'], {'train': 12, 'val': 6, 'test': 6})
        self.assertIn('train.csv', out)

    def test_unknown_spec_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            spec = os.path.join(tmp, 'spec.json')
            with open(spec, 'w') as f:
                f.write('{"tasks": 2}\n')
            code, _ = run_quiet(['gen-data', '--spec', spec, '--out', tmp])

        self.assertEqual(code, EXIT_FAILURE)


class TestTrainEvalAnalyze (unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.run_dir = os.path.join(cls._tmp.name, 'run')
        cls.checkpoint = os.path.join(cls.run_dir, 'checkpoint.denc')
        cls.train_result = run_quiet(['train', '--config', TINY_CONFIG, '--out', cls.run_dir])

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_train_outputs(self):
        code, out = self.train_result

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(read_metrics(os.path.join(self.run_dir, 'metrics.jsonl'))), 8)
        self.assertTrue(os.path.exists(self.checkpoint))
        with open(os.path.join(self.run_dir, 'config.json')) as f:
            self.assertEqual(json.load(f)['seed'], 3)
        self.assertIn('task 1 test accuracy', out)

    def test_train_deterministic(self):
        other = os.path.join(self._tmp.name, 'again')
        code, _ = run_quiet(['train', '--config', TINY_CONFIG, '--out', other])

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(read_metrics(os.path.join(other, 'metrics.jsonl')),
                         read_metrics(os.path.join(self.run_dir, 'metrics.jsonl')))
        with open(os.path.join(other, 'checkpoint.denc'), 'rb') as a, open(self.checkpoint, 'rb') as b:
            self.assertEqual(a.read(), b.read())

    def test_eval(self):
        result = os.path.join(self._tmp.name, 'eval.json')
        code, out = run_quiet(['eval', '--ckpt', self.checkpoint, '--config', TINY_CONFIG, '--json', result])
        with open(result) as f:
            data = json.load(f)

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(sorted(set(row['policy'] for row in data['rows'])), ['full', 'learned', 'random'])
        self.assertEqual(len(data['rows']), 6)
        for row in data['rows']:
            if row['policy'] == 'full':
                self.assertEqual(row['mean_density'], 1.0)
        self.assertIn('Evaluation on the test split', out)

    def test_eval_single_policy(self):
        code, out = run_quiet(['eval', '--ckpt', self.checkpoint, '--config', TINY_CONFIG, '--policy', 'full'])

        self.assertEqual(code, EXIT_OK)
        self.assertNotIn('learned', out)
        self.assertNotIn('random selector', out)

    def test_analyze(self):
        out_dir = os.path.join(self._tmp.name, 'analysis')
        code, out = run_quiet(['analyze', '--ckpt', self.checkpoint, '--config', TINY_CONFIG, '--out', out_dir,
                               '--top-k', '3', '--queries', '2'])
        with open(os.path.join(out_dir, 'histogram.json')) as f:
            histogram = json.load(f)
        with open(os.path.join(out_dir, 'retrieval.json')) as f:
            retrieval = json.load(f)

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(sorted(histogram['tasks']), ['0', '1'])
        self.assertEqual(histogram['tasks']['0']['total'], 30)
        self.assertEqual(len(retrieval['tasks']['1']), 2)
        self.assertEqual(len(retrieval['tasks']['1'][0]['neighbours']), 3)
        for name in ('level_probability.json', 'cost.json'):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))
        self.assertIn('mean level probabilities', out)

    def test_corrupt_checkpoint(self):
        broken = os.path.join(self._tmp.name, 'broken.denc')
        with open(self.checkpoint, 'rb') as f:
            raw = f.read()
        with open(broken, 'wb') as f:
            f.write(raw[:len(raw) // 2])

        self.assertEqual(run_quiet(['eval', '--ckpt', broken, '--config', TINY_CONFIG])[0], EXIT_FAILURE)
