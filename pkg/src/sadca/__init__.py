"""Semantic-augmented dynamic contrastive attack on dual-encoder retrieval."""

from .attack import (
    AttackConfig,
    AttackResult,
    TraceEntry,
    image_attack_inner,
    momentum_update,
    pgd_baseline,
    project_clip,
    sadca_attack,
    text_attack_step,
)
from .augment import (
    AugmentationOp,
    CropSpec,
    apply_augmentation,
    augment_image_local,
    augment_text_mixed,
    crop_resize,
    sample_crop_resize,
)
from .data import (
    Dataset,
    PairedSample,
    TokenSeq,
    Vocabulary,
    load_image_png,
    load_manifest,
    save_image_png,
)
from .encoders import (
    EncoderParams,
    encode_image,
    encode_images,
    encode_text,
    encode_texts,
    image_loss_gradient,
    init_toy_encoders,
)
from .errors import (
    ConfigurationError,
    InputError,
    ManifestError,
    NumericalError,
    SadcaError,
    UndefinedMetricError,
)
from .evaluation import (
    RetrievalIndex,
    RetrievalReport,
    asr_at_k,
    attack_dataset,
    build_index,
    evaluate_attack,
    transfer_matrix,
)
from .losses import (
    LossBreakdown,
    contrastive_image_loss,
    contrastive_text_loss,
    cosine,
    dynamic_image_loss,
    dynamic_text_loss,
    view_averaged_loss,
)
from .sampling import (
    STRATEGIES,
    NegativeBank,
    align_positive_image,
    build_negative_bank,
)
from .toydata import make_toy_dataset, toy_lexicon, toy_vocabulary, write_toy_workspace

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
