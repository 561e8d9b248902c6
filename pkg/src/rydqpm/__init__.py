"""Dipole-dipole population transfer and QPM field-jump sequences in Rydberg gases."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InvalidInputError,
    LinearizationRangeWarning,
    NotApplicableError,
    NumericalError,
    OutOfRegimeError,
)
from .pair import AtomPair, Channel, channel_coupling, generalized_rabi, pair_eigensystem  # noqa: E402
from .twolevel import (  # noqa: E402
    PulseSequence,
    TransferMatrix2,
    propagator,
    qpm_approx_transfer,
    qpm_sequence,
    sequence_propagator,
    transfer_probability,
)
from .units import CONSTANTS, Density, PhysicalConstants  # noqa: E402

__all__ = [
    "__version__",
    "AtomPair",
    "CONSTANTS",
    "Channel",
    "Density",
    "InvalidInputError",
    "LinearizationRangeWarning",
    "NotApplicableError",
    "NumericalError",
    "OutOfRegimeError",
    "PhysicalConstants",
    "PulseSequence",
    "TransferMatrix2",
    "channel_coupling",
    "generalized_rabi",
    "pair_eigensystem",
    "propagator",
    "qpm_approx_transfer",
    "qpm_sequence",
    "sequence_propagator",
    "transfer_probability",
]
