class FWMergeError(Exception):
    """
    Base class of every error raised by fw_merging.
    """


class ConfigError(FWMergeError):
    """ Invalid configuration value, flag or document. """


class SchemaError(FWMergeError):
    """ Parameter sets or checkpoints whose layer names/shapes disagree. """


class NumericsError(FWMergeError):
    """ Non-finite values produced by arithmetic, a loss or a gradient. """


class FormatError(FWMergeError):
    """ Malformed FWCK checkpoint file. """


class EmptyPoolError(FWMergeError):
    """ Operation requiring at least one checkpoint received none. """


class DimensionError(FWMergeError):
    """ Empty or zero-sized vector where a non-empty one is required. """


class SimplexError(FWMergeError):
    """ Merging coefficients violating the simplex invariants. """
