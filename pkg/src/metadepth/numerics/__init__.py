from metadepth.numerics.gradcheck import finite_diff_grad, relative_error
from metadepth.numerics.network import (
    DESK_SPEC,
    REFERENCE_SPEC,
    Network,
    NetworkSpec,
    backward,
    build_network,
    forward,
    l2_loss,
)
from metadepth.numerics.optim import AdamWState, adamw_step, sgd_step
from metadepth.numerics.params import ParamVector, Segment
from metadepth.numerics.tensor import Tensor, get_dtype, precision, precision_name, set_precision

__all__ = [
    "AdamWState",
    "DESK_SPEC",
    "Network",
    "NetworkSpec",
    "REFERENCE_SPEC",
    "ParamVector",
    "Segment",
    "Tensor",
    "adamw_step",
    "backward",
    "build_network",
    "finite_diff_grad",
    "forward",
    "get_dtype",
    "l2_loss",
    "precision",
    "precision_name",
    "relative_error",
    "set_precision",
    "sgd_step",
]
