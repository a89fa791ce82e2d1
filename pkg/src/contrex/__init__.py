"""Continual relation extraction with task-specific prompt pools, prefix-tuned
attention with a verifiable mixture-of-experts dual view, and Gaussian latent
replay."""

from .attention import (
    EncoderOutput,
    EncoderParams,
    Prompt,
    encode_prompted,
    encode_query,
    init_encoder,
    moe_view_forward,
    msa_forward,
    params_checksum,
    prefix_moe_view_forward,
    prefix_msa_forward,
)
from .config import RunConfig, load_config, save_config, write_default_config
from .datasets import (
    StreamConfig,
    TaskData,
    TaskStream,
    TokenSequence,
    export_jsonl,
    generate_stream,
    ingest_fewrel_json,
)
from .harness import (
    ContinualState,
    StageReport,
    evaluate,
    infer,
    run_ablation,
    run_stream,
    train_task,
)
from .heads import (
    ClassifierHead,
    RelationTaskMap,
    classify_relation,
    expand_head,
    new_head,
    predict_task,
    train_relation_classifier,
    train_task_predictor,
)
from .numeric import (
    RngState,
    cosine_distance,
    cross_entropy,
    finite_diff_grad,
    softmax,
    top_k_indices,
)
from .prompt_pool import PromptPool, Selection, pool_loss, select, train_pool
from .replay import (
    LatentGaussian,
    LatentGaussianStore,
    LatentMixture,
    fit_gaussian,
    fit_mixture,
    sample,
)

__version__ = "0.1.0"
