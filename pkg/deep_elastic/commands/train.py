import os.path
import time

from deep_elastic.analysis import evaluate_suite
from deep_elastic.checkpoint import save_checkpoint
from deep_elastic.commands import CommandBase, load_run
from deep_elastic.metrics import MetricsWriter
from deep_elastic.trainer import run_training

CHECKPOINT_FILE = 'checkpoint.denc'
METRICS_FILE = 'metrics.jsonl'
CONFIG_FILE = 'config.json'


class Command(CommandBase):

    NAME = 'train'
    DESCR = 'Train the estimator and selector, writing a checkpoint and per-epoch metrics'

    def configure_parser(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='Path to run config (JSON or YAML)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Override the seed from the run config',
        )
        parser.add_argument(
            '--out',
            help='Output directory (defaults to output.dir from the run config)',
        )
        parser.add_argument(
            '--wall-time',
            action='store_true',
            default=False,
            help='Record wall_seconds in the metrics (makes them differ between runs)',
        )

    def run(self, args):
        config, datasets, estimator_config = load_run(args.config, args.seed)
        out_dir = args.out or config.output['dir']
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, CONFIG_FILE), 'w') as f:
            f.write(config.dump() + '\n')
        train_config = config.train_config()
        self._display.v('Training with %r' % train_config)
        with MetricsWriter(os.path.join(out_dir, METRICS_FILE)) as writer:
            result = run_training(
                train_config, datasets, estimator_config,
                selector_hidden=config.selector['hidden'],
                on_record=writer,
                clock=time.perf_counter if args.wall_time else None,
            )
        save_checkpoint(
            os.path.join(out_dir, CHECKPOINT_FILE), result.params_est, result.params_sel,
            extra={'estimator': estimator_config.to_dict(), 'seed': config.seed},
        )
        print('wrote %s (%d metrics records) to %s' % (CHECKPOINT_FILE, len(result.records), out_dir))
        if 'test' in datasets:
            for report in evaluate_suite(result.params_est, estimator_config, datasets['test'], 'learned',
                                         params_sel=result.params_sel):
                print('task %d test accuracy %.4f mean density %.4f' % (
                    report.task, report.accuracy, report.cost.mean_density))
        return 0
