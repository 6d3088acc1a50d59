"""Scaled Cayley unitary recurrent network (scuRNN) in numpy."""

from .cayley import (
    CayleyCache,
    SkewHermitianParam,
    UnitaryDiag,
    build_unitary,
    grad_A,
    grad_theta,
    init_A,
    init_theta,
    unitarity_error,
)
from .rnn import ScuRnnParams, backward, forward, init_params

__version__ = "0.1.0"
