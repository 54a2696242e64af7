class DenError(Exception):

    '''
    Base class for all errors raised by this package
    '''


class ShapeError(DenError):

    '''
    Exception wrapper class used when tensor shapes don't line up
    '''

    def __init__(self, msg, *shapes):
        if shapes:
            msg = '%s (shapes: %s)' % (msg, ', '.join([str(tuple(s)) for s in shapes]))
        super(ShapeError, self).__init__(msg)
        self.shapes = shapes


class NumericError(DenError):

    '''
    Exception wrapper class used for NaN/inf values
    '''

    def __init__(self, msg, name=None):
        if name:
            msg = '%s: %s' % (name, msg)
        super(NumericError, self).__init__(msg)
        self.name = name


class ContractError(DenError):

    '''
    Exception wrapper class used when a caller breaks an operation's preconditions
    '''


class LabelError(DenError, IndexError):

    '''
    Exception wrapper class used for class labels outside of [0, k)
    '''


class TaskError(DenError):

    '''
    Exception wrapper class used for unknown task IDs
    '''


class StructureError(DenError):

    '''
    Exception wrapper class used for invalid model structures
    '''


class CapacityError(DenError):

    '''
    Exception wrapper class used when an enumeration would be too large
    '''


class ConfigError(DenError):

    '''
    Exception wrapper class used when loading or validating the run config
    '''

    def __init__(self, msg, key=None, line=None, path=None):
        if line:
            msg = 'line %d: %s' % (line, msg)
        if path:
            msg = '%s: %s' % (path, msg)
        super(ConfigError, self).__init__(msg)
        self.key = key
        self.path = path
        self.line = line


class ConfigParseError(ConfigError):

    '''
    Exception wrapper class used for malformed JSON/YAML config files
    '''


class DatasetFormatError(DenError):

    '''
    Exception wrapper class used by the dataset loaders for malformed files
    '''

    def __init__(self, msg, path=None):
        if path:
            msg = '%s: %s' % (path, msg)
        super(DatasetFormatError, self).__init__(msg)
        self.path = path


class DatasetLengthError(DatasetFormatError):

    '''
    Exception wrapper class used for truncated payloads and count mismatches
    '''


class CheckpointFormatError(DenError):

    '''
    Exception wrapper class used for bad checkpoint magic/version/header
    '''


class CheckpointLengthError(CheckpointFormatError):

    '''
    Exception wrapper class used for truncated checkpoints
    '''


class CompatibilityError(DenError):

    '''
    Exception wrapper class used when a checkpoint doesn't match the run config
    '''


class UsageError(DenError):

    '''
    Exception wrapper class used for command-line usage errors
    '''


class TemplateUndefinedError(DenError):

    '''
    Exception wrapper class used for undefined var errors when templating
    '''
