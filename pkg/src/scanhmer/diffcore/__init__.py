from .tensor import (
    LOG_CLAMP,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    avgpool,
    backward,
    concat,
    conv1d,
    conv2d,
    dropout,
    embedding,
    exp,
    get_default_dtype,
    index,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    precision,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    tmax,
    transpose,
    tsum,
)
from .gradcheck import GradCheckReport, grad_check
from . import checkpoint
