"""Knowledge-grounded caption curation and desk-scale contrastive training."""

from ._core import (  # noqa: F401
    ModelParams,
    TaxonRecord,
    WorldModel,
    alignment_metric,
    analytic_cross_covariance,
    cosine_scores,
    coverage_report,
    cross_covariance,
    dual_loss,
    embed_for_eval,
    format_ratio_percent,
    gradients,
    infonce,
    make_params,
    make_world,
    mean_ap_at_k,
    parse_taxonomy,
    rank_key,
    read_embeddings,
    recall_at_k,
    render_caption_prompt,
    render_extraction_prompt,
    render_verification_prompt,
    sample_world,
    top1_accuracy,
    trait_energy_ratio,
    uniformity_metric,
    unit_normalize,
    validate_caption,
    write_embeddings,
)

__version__ = "0.1.0"
