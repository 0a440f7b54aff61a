from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import (
    EMBED_ROWS,
    GRUParams,
    embed_interp,
    embed_interp_sum,
    embed_round,
    gru_cell,
    gru_sequence,
    gru_step_numpy,
    levinson_layer,
    mu_compand_layer,
    predict_layer,
)
from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    affine,
    as_tensor,
    clip,
    concat,
    detach,
    div,
    exp,
    getitem,
    interp_pick,
    log,
    matmul,
    mean,
    mul,
    pick,
    repeat,
    reshape,
    sigmoid,
    softmax,
    square,
    sub,
    tanh,
    tsum,
)

__all__ = [
    "EMBED_ROWS",
    "GRUParams",
    "GradCheckReport",
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "affine",
    "as_tensor",
    "clip",
    "concat",
    "detach",
    "div",
    "embed_interp",
    "embed_interp_sum",
    "embed_round",
    "exp",
    "getitem",
    "grad_check",
    "gru_cell",
    "gru_sequence",
    "gru_step_numpy",
    "interp_pick",
    "levinson_layer",
    "log",
    "matmul",
    "mean",
    "mu_compand_layer",
    "mul",
    "pick",
    "predict_layer",
    "relative_error",
    "repeat",
    "reshape",
    "sigmoid",
    "softmax",
    "square",
    "sub",
    "tanh",
    "tsum",
]
