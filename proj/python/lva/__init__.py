"""Closed-form adaptation of pretrained networks to a shifted target domain.

Arrays are float64 numpy matrices with one sample per row.
"""

from ._lva import (
    ArgumentError,
    DataError,
    LvaError,
    Mlp,
    ParseError,
    ShapeError,
    TrainingError,
    UnsupportedModelError,
    align,
    gen_blur_pairs,
    gen_signal,
    least_squares,
    lva_one_layer,
    lva_two_layer,
    make_mlp,
    mse_loss,
    pretrain,
    spectral_norm,
    verify_generalization_bound,
    verify_transfer_bound,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "1.0.0"
