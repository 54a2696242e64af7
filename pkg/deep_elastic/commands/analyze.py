import os.path

import numpy as np

from deep_elastic.analysis import (HISTOGRAM_MODES, average_cost, mean_level_probability, model_histogram,
                                   nearest_by_distribution)
from deep_elastic.checkpoint import load_checkpoint
from deep_elastic.commands import CommandBase, load_run, split_datasets
from deep_elastic.errors import UsageError
from deep_elastic.template import ANALYZE_REPORT, Template
from deep_elastic.utils import json_dump

HISTOGRAM_FILE = 'histogram.json'
LEVEL_PROBABILITY_FILE = 'level_probability.json'
RETRIEVAL_FILE = 'retrieval.json'
COST_FILE = 'cost.json'


class Command(CommandBase):

    NAME = 'analyze'
    DESCR = 'Model histograms, mean level probabilities and nearest instances by selector output'

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
            '--out',
            required=True,
            help='Directory for the JSON data files',
        )
        parser.add_argument(
            '--top-k',
            type=int,
            default=5,
            help='Neighbours per query and structures shown in the report (default 5)',
        )
        parser.add_argument(
            '--queries',
            type=int,
            default=5,
            help='Retrieval queries per task, taken from the start of the split (default 5)',
        )
        parser.add_argument(
            '--split',
            default='test',
            choices=['train', 'val', 'test'],
        )
        parser.add_argument(
            '--mode',
            default='argmax',
            choices=list(HISTOGRAM_MODES),
            help='How structures are picked for the histogram (default argmax)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=0,
            help='Seed for --mode sample',
        )

    def retrieval(self, params_sel, dataset, queries, k):
        ret = []
        for idx in range(min(queries, len(dataset))):
            neighbours = nearest_by_distribution(params_sel, dataset.x[idx], dataset, min(k, len(dataset)))
            labels = [int(dataset.y[j]) for j, _ in neighbours]
            ret.append({
                'query': idx,
                'label': int(dataset.y[idx]),
                'neighbours': [{'index': j, 'distance': d, 'label': int(dataset.y[j])} for j, d in neighbours],
                'label_agreement': float(np.mean([label == dataset.y[idx] for label in labels])),
            })
        return ret

    def run(self, args):
        if args.top_k < 1 or args.queries < 0:
            raise UsageError('--top-k must be at least 1 and --queries non-negative')
        config, datasets, estimator_config = load_run(args.config)
        datasets = split_datasets(datasets, args.split)
        checkpoint = load_checkpoint(args.ckpt, estimator_config)
        params_sel = checkpoint.params_sel
        os.makedirs(args.out, exist_ok=True)
        histograms = {}
        levels = {}
        retrieval = {}
        costs = {}
        tasks = []
        for t in sorted(datasets):
            dataset = datasets[t]
            histogram = model_histogram(params_sel, estimator_config, dataset, mode=args.mode, seed=args.seed)
            stats = mean_level_probability(params_sel, dataset)
            cost = average_cost(params_sel, estimator_config, dataset)
            histograms[str(t)] = histogram.to_dict()
            levels[str(t)] = stats.to_dict()
            costs[str(t)] = cost.to_dict()
            retrieval[str(t)] = self.retrieval(params_sel, dataset, args.queries, args.top_k)
            tasks.append({
                'task': t,
                'count': len(dataset),
                'histogram': histograms[str(t)],
                'level_rows': [' '.join('%.3f' % v for v in row) for row in stats.mean],
                'cost': costs[str(t)],
            })
        for name, value in ((HISTOGRAM_FILE, histograms), (LEVEL_PROBABILITY_FILE, levels),
                            (RETRIEVAL_FILE, retrieval), (COST_FILE, costs)):
            with open(os.path.join(args.out, name), 'w') as f:
                f.write(json_dump({'split': args.split, 'mode': args.mode, 'tasks': value}) + '\n')
            self._display.v('Wrote %s' % os.path.join(args.out, name))
        report = Template().render_template(ANALYZE_REPORT, {
            'checkpoint': os.path.basename(args.ckpt),
            'split': args.split,
            'tasks': tasks,
            'top_k': args.top_k,
        })
        print(report, end='')
        return 0
