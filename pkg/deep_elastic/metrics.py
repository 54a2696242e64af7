'''
Line-delimited JSON metrics: one compact, key-sorted object per line
'''

import json

from deep_elastic.display import Display
from deep_elastic.utils import json_line


class MetricsWriter(object):

    '''
    Appends records to a metrics file as they are produced, so a run that
    dies halfway still leaves every finished epoch on disk
    '''

    def __init__(self, path):
        self._path = path
        self._file = open(path, 'w')
        self.count = 0

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __call__(self, record):
        self.write(record)

    def write(self, record):
        self._file.write(json_line(record) + '\n')
        self._file.flush()
        self.count += 1

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None
            Display().vv('Wrote %d metrics records to %s' % (self.count, self._path))


def write_metrics(records, path):
    with MetricsWriter(path) as writer:
        for record in records:
            writer.write(record)
    return writer.count


def read_metrics(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
