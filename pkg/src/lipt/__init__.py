"""NumPy inference engine for the LIPT super-resolution network."""
from .attention import NVSMWeights, WindowMSAWeights, nvsm_sa, window_self_attention
from .errors import ConfigError, FormatError, LIPTError, MaskError, ShapeError
from .hrm import (
    HRMWeights,
    RepConvWeights,
    SobelBranch,
    fuse_repconv,
    hrm_forward,
    isotropic_sobel,
    repconv_forward,
)
from .masks import (
    Mask,
    WindowGrid,
    beta,
    coverage_map,
    dense_mask,
    global_stride_mask,
    mask_from_assignment,
    selection_indices,
    sparse_mask,
)
from .model import (
    PRESETS,
    LIPTConfig,
    LIPTWeights,
    build,
    charbonnier_loss,
    count_params_and_macs,
    forward,
    fuse_model,
    l1_loss,
)
from .tensor import ConvWeights, conv2d

__version__ = "0.1.0"
