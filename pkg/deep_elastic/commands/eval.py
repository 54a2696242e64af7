import os.path

from deep_elastic.analysis import POLICIES, evaluate_suite, matched_random_selector
from deep_elastic.checkpoint import load_checkpoint
from deep_elastic.commands import CommandBase, load_run, split_datasets
from deep_elastic.template import EVAL_REPORT, Template
from deep_elastic.utils import json_dump


class Command(CommandBase):

    NAME = 'eval'
    DESCR = 'Accuracy and average cost per task of a trained checkpoint'

    def configure_parser(self, parser):
        parser.add_argument(
            '--ckpt',
            required=True,
            help='Path to checkpoint written by train',
        )
        parser.add_argument(
            '--config',
            required=True,
            help='Path to run config',
        )
        parser.add_argument(
            '--split',
            default='test',
            choices=['train', 'val', 'test'],
            help="Data split to evaluate on (defaults to 'test')",
        )
        parser.add_argument(
            '--policy',
            action='append',
            choices=list(POLICIES),
            help='Structure policy, may be repeated (defaults to all of %s)' % ', '.join(POLICIES),
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=0,
            help='Seed for the random-selector policy',
        )
        parser.add_argument(
            '--json',
            help='Also write the results as JSON to this path',
        )

    def run(self, args):
        config, datasets, estimator_config = load_run(args.config)
        datasets = split_datasets(datasets, args.split)
        checkpoint = load_checkpoint(args.ckpt, estimator_config)
        policies = args.policy or list(POLICIES)
        random_selector = None
        if 'random' in policies:
            random_selector = matched_random_selector(checkpoint.params_sel, estimator_config, datasets)
            self._display.v('Random selector %r' % random_selector)
        rows = []
        for policy in policies:
            reports = evaluate_suite(checkpoint.params_est, estimator_config, datasets, policy,
                                     params_sel=checkpoint.params_sel, random_selector=random_selector,
                                     seed=args.seed)
            rows.extend(report.to_dict() for report in reports)
        result = {
            'split': args.split,
            'checkpoint': os.path.basename(args.ckpt),
            'rows': rows,
            'random_beta': random_selector.beta if random_selector is not None else None,
            'random_density': random_selector.expected_density() if random_selector is not None else None,
        }
        if args.json:
            with open(args.json, 'w') as f:
                f.write(json_dump(result) + '\n')
        print(Template().render_template(EVAL_REPORT, result), end='')
        return 0
