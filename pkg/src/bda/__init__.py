"""Two-stage building damage assessment from pre/post-disaster image pairs.

A small numpy autodiff engine drives a U-Net building segmenter and a
shared-weight two-branch damage classifier with multi-scale image fusion
and cross-directional attention. Convolution kernels run under numba when
available (``BDA_NUMBA=0`` selects the pure-numpy path).
"""

__version__ = "0.1.0"
