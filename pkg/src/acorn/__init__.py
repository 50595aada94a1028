"""Safety-aware chunked behavior cloning on a planar arm.

Subpackages: ``sim`` (environment, expert, noise injector), ``data``
(demonstrations, reference lookup, batching), ``nn`` (dense nets with
exact gradients), ``policy`` (CVAE-style chunk policy), ``loss``
(composite objective), ``metrics`` (safety evaluation), ``cli``
(reproduction pipeline).
"""

__version__ = "0.1.0"
