import os.path

from deep_elastic.commands import CommandBase
from deep_elastic.data import SPLITS, SyntheticSpec, gen_synthetic_tasks, write_csv
from deep_elastic.errors import ConfigError
from deep_elastic.run_config import ConfigField, load_file, synthetic_fields
from deep_elastic.utils import json_dump

SPEC_FILE = 'spec.json'


class Command(CommandBase):

    NAME = 'gen-data'
    DESCR = 'Generate a synthetic multi-task suite as train/val/test CSV files'

    def configure_parser(self, parser):
        parser.add_argument(
            '--spec',
            required=True,
            help='Path to a synthetic spec (JSON or YAML object with the data.synthetic keys)',
        )
        parser.add_argument(
            '--out',
            required=True,
            help='Output directory',
        )

    def run(self, args):
        data = load_file(args.spec)
        field = ConfigField('synthetic', {'type': 'dict', 'fields': synthetic_fields()})
        unmatched = field.validate(data)
        if unmatched:
            raise ConfigError('found the following unknown fields: %s' % ', '.join(sorted(unmatched)),
                              path=args.spec)
        spec = SyntheticSpec(**field.apply_default(data))
        suite = gen_synthetic_tasks(spec)
        os.makedirs(args.out, exist_ok=True)
        for split in SPLITS:
            path = os.path.join(args.out, '%s.csv' % split)
            write_csv(path, suite[split])
            print('wrote %s (%d tasks, %d rows)' % (path, len(suite[split]), sum(len(d) for d in suite[split].values())))
        with open(os.path.join(args.out, SPEC_FILE), 'w') as f:
            f.write(json_dump(spec.to_dict()) + '\n')
        return 0
