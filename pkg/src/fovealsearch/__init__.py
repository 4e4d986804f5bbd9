"""Goal-directed visual search in foveated images.

Recurrent scanpath prediction over a discretized image grid, per-fixation
target detection, a dual-task variant sharing state between both, plus
foveation, beam-search decoding, and a gaze-metric evaluation suite.
"""

from fovealsearch.tensor import Tensor, Tape, NumericError, set_default_dtype, using_dtype

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "NumericError",
    "set_default_dtype",
    "using_dtype",
    "__version__",
]
