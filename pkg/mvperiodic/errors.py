"""
Exceptions and warnings raised by :mod:`mvperiodic`.

Argument and precondition failures subclass :class:`ValueError` so that
callers which only know about the builtin exception still catch them.
"""

__all__ = [
    'MvPeriodicError',
    'DomainError',
    'MissingStats',
    'EmptyEnsemble',
    'NotContractive',
    'NoAdmissibleK2',
    'WrongRegime',
    'SizeMismatch',
    'DimensionError',
    'CapExceeded',
    'NonPositiveValue',
    'GridNotAligned',
    'ValidationError',
    'ParseError',
    'DivergenceDetected',
    'AssumptionWarning',
]


class MvPeriodicError(Exception):
    """ Base class for all errors raised by this package """


class DomainError(MvPeriodicError, ValueError):
    """ An argument lies outside the domain of a function """


class MissingStats(MvPeriodicError, ValueError):
    """ The measure statistics supplied do not cover the scenario's needs """


class EmptyEnsemble(MvPeriodicError, ValueError):
    pass


class NotContractive(MvPeriodicError, ValueError):
    """ The scenario does not satisfy the contraction hypothesis of a run """


class NoAdmissibleK2(MvPeriodicError, ValueError):
    pass


class WrongRegime(MvPeriodicError, ValueError):
    """ The operation is not defined for the scenario's dissipativity regime """


class SizeMismatch(MvPeriodicError, ValueError):
    pass


class DimensionError(MvPeriodicError, ValueError):
    pass


class CapExceeded(MvPeriodicError, ValueError):
    """ The exact assignment solver refuses inputs above its size cap """


class NonPositiveValue(MvPeriodicError, ValueError):
    pass


class GridNotAligned(MvPeriodicError, ValueError):
    """ The time step does not divide the scenario period into whole steps """


class ValidationError(MvPeriodicError, ValueError):
    pass


class ParseError(MvPeriodicError, ValueError):
    """ A configuration file could not be read.

    Attributes
    ----------
    line : int or None
        1-based line number of the offending entry, when known.
    """
    def __init__(self, message, line=None):
        if line is not None:
            message = '{} (line {})'.format(message, line)
        super().__init__(message)
        self.line = line


class DivergenceDetected(MvPeriodicError, ArithmeticError):
    """ A particle left the finite guard box during integration.

    Attributes
    ----------
    step : int
        absolute grid step at which the state was produced
    particle : int
        index of the first offending particle
    """
    def __init__(self, step, particle, value):
        super().__init__(
            'particle {} diverged at step {} (|x| = {!r})'.format(particle, step, value))
        self.step = step
        self.particle = particle
        self.value = value


class AssumptionWarning(UserWarning):
    """ A randomized spot-check of a structural assumption found violations """
