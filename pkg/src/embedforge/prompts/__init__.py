from .factory import (
    HardnessTier,
    PromptParams,
    hardness_score,
    hardness_tier,
    load_config,
    load_template,
    render_prompt,
    sample_params,
    tier_for_score,
)

__all__ = [
    "HardnessTier",
    "PromptParams",
    "hardness_score",
    "hardness_tier",
    "load_config",
    "load_template",
    "render_prompt",
    "sample_params",
    "tier_for_score",
]
