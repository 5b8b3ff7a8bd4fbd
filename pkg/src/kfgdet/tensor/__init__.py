"""Dense tensors with reverse-mode autodiff."""
from . import kernels
from .gradcheck import grad_check
from .ops import (
    activation,
    add,
    atan,
    avg_pool2d,
    batch_norm,
    bce_with_logits,
    channel_bias,
    clamp,
    concat,
    concat_channels,
    conv2d,
    conv_output_size,
    detach,
    div,
    exp,
    getitem,
    global_avg_pool,
    group_norm,
    linear,
    log,
    log_softmax,
    max_pool2d,
    maximum,
    mean,
    minimum,
    mix_kernels,
    mix_responses,
    mul,
    neg,
    pool2d,
    pow_scalar,
    reshape,
    scale_by,
    sigmoid,
    silu,
    softmax,
    split_channels,
    sqrt,
    sub,
    sum,
    transpose,
    upsample_nearest,
)
from .tensor import (
    Function,
    Node,
    Parameter,
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_finite_checks,
)


def backward(loss):
    """Functional form of :meth:`Tensor.backward`."""
    loss.backward()
