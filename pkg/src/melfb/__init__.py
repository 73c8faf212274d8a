"""Mel spectrograms, adaptive filter banks that approximate them, and the
error analysis relating the two; plus small CNN building blocks for the
resulting feature maps.
"""

from .filterbank import (Approximation, FilterBank, FilterChannel,
                         FixedWidthHann, NaiveBoxcar, VariableWidthHann,
                         design_audio_bank, design_filters, fb_features,
                         gaussian_bank, gaussian_design, stft_features,
                         variant_features)
from .mel import (MelFilterSet, build_triangles, default_filters,
                  log_compress, mel_scale_centers, mel_spectrogram)
from .spreading import (GaborMultiplier, empirical_error_per_bin,
                        stride_sweep, theorem1_bound, theorem1_bounds)
from .tfcore import Lattice, Signal, hann, spectrogram, stft

__version__ = "0.1.0"
