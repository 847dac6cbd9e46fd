"""Kernel backend selection.

The compiled extension (eegdaq._native) is preferred when present; the pure
numpy/Python implementations are the fallback and the reference. Setting
EEGDAQ_KERNELS=pure forces the fallback regardless, which the benchmark and
the backend-equivalence tests use.
"""

import os

from . import pure
from .pure import (  # noqa: F401
    DIM_ADC,
    DIM_PLOT,
    DIM_SAVE,
    DIM_TRANS,
    FS_CODES,
    NS_PER_HOUR,
    STATE_SLOTS,
    stream_key,
)

if os.environ.get("EEGDAQ_KERNELS", "").lower() == "pure":
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from eegdaq import _native as _impl

        BACKEND = "native"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

gauss_counter = _impl.gauss_counter
square_batch = _impl.square_batch
encode_batch = _impl.encode_batch
translate_batch = _impl.translate_batch
drdy_times_us = _impl.drdy_times_us
des_advance = _impl.des_advance
soak_values = _impl.soak_values

# Vectorized numpy is already machine code for these; no compiled mirror.
sine_batch = pure.sine_batch
