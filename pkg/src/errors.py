"""
Exception hierarchy shared by all subpackages.

The CLI maps these onto exit codes; library code only raises.
"""


class MixSupError(Exception):
    """Base exception for mixed-supervision framework errors."""
    pass


class TensorError(MixSupError, ValueError):
    """Shape, axis or dimension error in a tensor operation."""
    pass


class NonFiniteError(MixSupError, ArithmeticError):
    """A loss or gradient contains NaN or infinite values."""
    pass


class ModelConfigError(MixSupError, ValueError):
    """Inconsistent network configuration."""
    pass


class CheckpointError(MixSupError):
    """Malformed or incompatible checkpoint container."""
    pass


class LossError(MixSupError, ValueError):
    """Invalid loss inputs (labels, masks, weights)."""
    pass


class SamplingError(MixSupError):
    """Dataset pools cannot satisfy the requested batch composition."""
    pass


class DataError(MixSupError):
    """Invalid data: volumes, blobs, manifests or fold plans."""
    pass


class EvaluationError(MixSupError):
    """Evaluation inputs are missing or inconsistent."""
    pass
