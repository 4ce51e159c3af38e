from .autodiff import (
    BatchNormState,
    DimensionError,
    Tape,
    Tensor,
    VocabularyError,
    as_tensor,
    add,
    batch_norm_1d,
    bias_add,
    concat,
    cross_entropy_loss,
    embedding_lookup,
    exp,
    getitem,
    layer_norm,
    linear,
    log,
    log_softmax,
    masked_fill,
    matmul,
    mean,
    mean_over_axis,
    mul,
    pad,
    relu,
    reshape,
    softmax,
    sqrt,
    sub,
    sum_,
    swapaxes,
    temporal_conv1d,
    transpose,
)
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .optim import (
    AdamState,
    LrSchedule,
    TrainingDivergenceError,
    adam_step,
    clip_by_global_norm,
    global_norm,
    lr_at,
)
from .rng import make_rng
from .spectral import FftLengthError, fft, hann, ifft, stft
