"""Software EEG acquisition stack.

A register-accurate emulation of an 8-channel, 24-bit ADC daisy chain, the
firmware-style acquisition engine that drives it, a length-prefixed JSON
stream protocol, a recorder service with storage and time synchronization,
and the evaluation math (noise, ENOB, CMRR, band power, delay/loss).
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
