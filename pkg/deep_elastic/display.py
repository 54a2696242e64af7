import os
import sys

from deep_elastic.utils import Singleton

# Values accepted by the DEN_LOG environment variable
LOG_LEVELS = {
    'error': 0,
    'info': 1,
    'debug': 3,
}


class Display(object, metaclass=Singleton):

    '''
    Diagnostic output for the whole process

    Everything goes to stderr, so that stdout is left for command results
    '''

    _verbosity = 0

    def __init__(self, verbosity=None):
        if verbosity:
            self.set_verbosity(verbosity)

    def set_verbosity(self, verbosity):
        self._verbosity = verbosity

    def get_verbosity(self):
        return self._verbosity

    def set_from_env(self, environ=None):
        '''
        Pick the verbosity from DEN_LOG
        '''
        if environ is None:
            environ = os.environ
        value = environ.get('DEN_LOG', None)
        if value is None:
            return
        value = value.strip().lower()
        if value not in LOG_LEVELS:
            self.set_verbosity(0)
            self.warn("unknown DEN_LOG value '%s', using 'error'" % value, verbosity_level=0)
            return
        self.set_verbosity(LOG_LEVELS[value])

    def display(self, msg='', verbosity_level=0):
        if self._verbosity >= verbosity_level:
            sys.stderr.write('%s\n' % msg)
            sys.stderr.flush()

    def error(self, msg=''):
        self.display(msg='[ERROR]: %s' % msg, verbosity_level=0)

    def warn(self, msg='', verbosity_level=1, **kwargs):
        self.display(msg='[WARNING]: %s' % msg, verbosity_level=verbosity_level, **kwargs)

    def v(self, msg=''):
        self.display(msg, 1)

    def vv(self, msg=''):
        self.display(msg, 2)

    def vvv(self, msg=''):
        self.display(msg, 3)

    def vvvv(self, msg=''):
        self.display(msg, 4)
