"""Arithmetic-operation accounting for the convolution kernels.

The binary convolution path must be able to demonstrate that its inner
accumulation performs no multiplications at all and that exactly one scale
multiplication happens per output element.  Kernels report their operation
counts here; ``count_operations`` collects them for the enclosed block.
"""

from contextlib import contextmanager
from dataclasses import dataclass

_active: list["OpCounter"] = []


@dataclass
class OpCounter:
    """Counts of conceptual arithmetic ops performed by conv kernels."""

    inner_multiplies: int = 0
    inner_additions: int = 0
    scale_multiplies: int = 0


@contextmanager
def count_operations():
    """Collect kernel operation counts for everything run inside the block."""
    counter = OpCounter()
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)


def record_ops(*, inner_multiplies: int = 0, inner_additions: int = 0,
               scale_multiplies: int = 0) -> None:
    for counter in _active:
        counter.inner_multiplies += inner_multiplies
        counter.inner_additions += inner_additions
        counter.scale_multiplies += scale_multiplies
