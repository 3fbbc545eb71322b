"""From-scratch CNN toolkit for two-class chest X-ray classification."""

from .data import (
    AugmentParams,
    AugmentRanges,
    DatasetManifest,
    SampleRecord,
    augment_sample,
    balance_by_augmentation,
    load_grayscale,
    normalize_unit,
    preprocess_image,
    resize_bilinear,
    scan_data_root,
    split_dataset,
)
from .layers import LayerDescriptor, LayerState, Mode
from .models import (
    ARCHITECTURES,
    ArchitectureSpec,
    Network,
    build_cnn1,
    build_cnn3,
    build_cnn4,
    build_network,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamState, adam_step, cross_entropy, gradient_check, softmax_xent_grad
from .rng import derive_rng
from .tensor import Shape4, Tensor, conv2d_grads, conv2d_valid, matmul, maxpool2x2, maxpool2x2_backward
from .training import (
    Metrics,
    TrainingHistory,
    TrainingSchedule,
    confusion_and_scores,
    evaluate,
    export_history_csv,
    load_history_csv,
    render_curves_svg,
    train,
)

__version__ = "0.1.0"
