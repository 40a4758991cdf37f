"""Self-supervised shadow removal with mask-conditioned cycle training."""

from .data import (
    MaskBank,
    Sample,
    ShadowDataset,
    UnpairedSampler,
    binarize_difference,
    load_dataset,
    load_image,
    load_mask,
    make_synthetic_fixture,
    save_image,
    save_mask,
    write_fixture,
)
from .engine import (
    CycleState,
    Networks,
    ReplayBuffer,
    TrainConfig,
    Trainer,
    build_networks,
    forward_step,
    lr_schedule,
    make_identity_checkpoint,
    reconstruction_step,
)
from .errors import (
    ConfigurationError,
    ContractViolationError,
    CorruptionError,
    DataError,
    IncompatibilityError,
    InvalidInputError,
    NumericError,
    ShadowCycleError,
    UndefinedRegionError,
    UsageError,
)
from .losses import (
    ConvFeatureExtractor,
    IdentityExtractor,
    LossWeights,
    VggExtractor,
    color_loss,
    content_loss,
    gan_loss_discriminator,
    gan_loss_generator,
    gram_matrix,
    mask_loss,
    perceptual_loss,
    pixel_loss,
    soft_shadow_mask,
    style_loss,
    total_loss_paired,
    total_loss_unpaired,
)
from .metrics import (
    Deshadower,
    PerceptualScorer,
    error_heatmap,
    evaluate_dataset,
    lab_to_rgb,
    psnr,
    rgb_to_lab,
    rmse,
)
from .nets import (
    IdentityGenerator,
    PatchDiscriminator,
    UNetGenerator,
    build_discriminator,
    build_generator,
    generator_layer_table,
    init_weights,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "MaskBank",
    "Sample",
    "ShadowDataset",
    "UnpairedSampler",
    "binarize_difference",
    "load_dataset",
    "load_image",
    "load_mask",
    "make_synthetic_fixture",
    "save_image",
    "save_mask",
    "write_fixture",
    # engine
    "CycleState",
    "Networks",
    "ReplayBuffer",
    "TrainConfig",
    "Trainer",
    "build_networks",
    "forward_step",
    "lr_schedule",
    "make_identity_checkpoint",
    "reconstruction_step",
    # errors
    "ConfigurationError",
    "ContractViolationError",
    "CorruptionError",
    "DataError",
    "IncompatibilityError",
    "InvalidInputError",
    "NumericError",
    "ShadowCycleError",
    "UndefinedRegionError",
    "UsageError",
    # losses
    "ConvFeatureExtractor",
    "IdentityExtractor",
    "LossWeights",
    "VggExtractor",
    "color_loss",
    "content_loss",
    "gan_loss_discriminator",
    "gan_loss_generator",
    "gram_matrix",
    "mask_loss",
    "perceptual_loss",
    "pixel_loss",
    "soft_shadow_mask",
    "style_loss",
    "total_loss_paired",
    "total_loss_unpaired",
    # metrics
    "Deshadower",
    "PerceptualScorer",
    "error_heatmap",
    "evaluate_dataset",
    "lab_to_rgb",
    "psnr",
    "rgb_to_lab",
    "rmse",
    # nets
    "IdentityGenerator",
    "PatchDiscriminator",
    "UNetGenerator",
    "build_discriminator",
    "build_generator",
    "generator_layer_table",
    "init_weights",
]
