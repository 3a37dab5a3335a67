"""Composable discrete generation: weighted product-of-experts over categorical
distributions, masked and autoregressive samplers, enumerable toy worlds with
exact oracles, and a patch vector-quantization codec."""

from .compose import (
    DEFAULT_LOGP_FLOOR,
    DEFAULT_TEMPERATURE,
    ComposeConfig,
    LogProbVector,
    apply_temperature,
    compose,
    compose_logits,
    normalize,
    normalize_logits,
)
from .errors import (
    AllMassZero,
    DimensionMismatch,
    EmptyIntersection,
    InvalidTable,
    MaskComposeError,
    NonPositiveTemperature,
    ShapeMismatch,
    StateSpaceTooLarge,
    TokenOutOfRange,
    TooFewPatches,
    ValidationError,
)
from .sampler import (
    MASK,
    MODE_AUTOREGRESSIVE,
    MODE_MASKED,
    ORDER_MAX_CONFIDENCE,
    ORDER_RANDOM,
    ConditionalModel,
    MaskedState,
    RunStats,
    SamplerSchedule,
    count_evaluations,
    run_to_completion,
    schedule_for,
)
from .worlds import (
    STATE_SPACE_CAP,
    ConditionSpec,
    ExactConditionalModel,
    FactorizedWorld,
    Posterior,
    SceneSpec,
    SceneWorld,
    WorldJoint,
    attribute_present,
    build_factorized_world,
    build_random_factorized_world,
    build_scene_world,
    cell_table,
    cond_key,
    enumerate_posterior,
    exact_conditional_model,
    object_at_cell,
    relation,
    render_tokens_to_image,
)
from .countmodel import CountModel, fit_count_model
from .codec import (
    Codebook,
    decode,
    encode,
    learn_codebook,
    learn_codebook_from_images,
    quantize_patch,
    read_ppm,
    roundtrip_mse,
    write_ppm,
)
from .container import (
    load_codebook,
    load_count_model,
    load_world,
    save_codebook,
    save_count_model,
    save_world,
)
from .evalharness import (
    EvalReport,
    fidelity_tv,
    run_bench,
    run_error_eval,
    run_negation_eval,
    run_ood_eval,
    tv_proxy,
)

__version__ = "0.1.0"

__all__ = [
    "AllMassZero",
    "Codebook",
    "ComposeConfig",
    "ConditionSpec",
    "ConditionalModel",
    "CountModel",
    "DEFAULT_LOGP_FLOOR",
    "DEFAULT_TEMPERATURE",
    "DimensionMismatch",
    "EmptyIntersection",
    "EvalReport",
    "ExactConditionalModel",
    "FactorizedWorld",
    "InvalidTable",
    "LogProbVector",
    "MASK",
    "MODE_AUTOREGRESSIVE",
    "MODE_MASKED",
    "MaskComposeError",
    "MaskedState",
    "NonPositiveTemperature",
    "ORDER_MAX_CONFIDENCE",
    "ORDER_RANDOM",
    "Posterior",
    "RunStats",
    "STATE_SPACE_CAP",
    "SamplerSchedule",
    "SceneSpec",
    "SceneWorld",
    "ShapeMismatch",
    "StateSpaceTooLarge",
    "TokenOutOfRange",
    "TooFewPatches",
    "ValidationError",
    "WorldJoint",
    "apply_temperature",
    "attribute_present",
    "build_factorized_world",
    "build_random_factorized_world",
    "build_scene_world",
    "cell_table",
    "compose",
    "compose_logits",
    "cond_key",
    "count_evaluations",
    "decode",
    "encode",
    "enumerate_posterior",
    "exact_conditional_model",
    "fidelity_tv",
    "fit_count_model",
    "learn_codebook",
    "learn_codebook_from_images",
    "load_codebook",
    "load_count_model",
    "load_world",
    "normalize",
    "normalize_logits",
    "object_at_cell",
    "quantize_patch",
    "read_ppm",
    "relation",
    "render_tokens_to_image",
    "roundtrip_mse",
    "run_bench",
    "run_error_eval",
    "run_negation_eval",
    "run_ood_eval",
    "run_to_completion",
    "save_codebook",
    "save_count_model",
    "save_world",
    "schedule_for",
    "tv_proxy",
    "write_ppm",
    "__version__",
]
