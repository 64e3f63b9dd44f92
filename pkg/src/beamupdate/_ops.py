"""Operation counting for the complexity benchmarks.

Kernels report the number of complex multiply-accumulate operations they
perform (derived from the operand shapes at call time) through
:func:`tally`. Counting is off unless an :class:`OpCounter` is active.
"""
from contextvars import ContextVar

_active = ContextVar("beamupdate_op_counter", default=None)


class OpCounter:
    """Context manager accumulating tallied operations.

    >>> with OpCounter() as ops:
    ...     tally(10)
    >>> ops.count
    10
    """

    def __init__(self):
        self.count = 0
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        return False


def tally(n):
    counter = _active.get()
    if counter is not None:
        counter.count += int(n)
