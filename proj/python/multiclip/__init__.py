from ._core import (
    Error,
    bleu,
    box_iou,
    cider,
    contrastive_loss,
    cosine_alignment_loss,
    em_at_1,
    embed_scene,
    generate_dataset,
    load_scenes,
    normalize_config,
    render_views,
    rouge_l,
)

__all__ = [
    "Error",
    "bleu",
    "box_iou",
    "cider",
    "contrastive_loss",
    "cosine_alignment_loss",
    "em_at_1",
    "embed_scene",
    "generate_dataset",
    "load_scenes",
    "normalize_config",
    "render_views",
    "rouge_l",
]
