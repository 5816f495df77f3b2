"""Class-imbalanced few-shot classification over frozen embeddings.

A numpy library (plus a small CLI) covering the full pipeline: EMB1
embedding tables and line-JSON metadata, inverse-frequency weighted
sampling, feature-level mixup, linear / image+text fusion / multi-objective
heads trained with Adam and GradNorm, top-k evaluation and report emission,
and a hierarchical three-round zero-shot protocol over a pluggable
completion client.
"""

from .augment import MixupBatch, MixupConfig, mix_batch, mixup_loss, sample_lambda
from .dataio import (
    EmbeddingTable,
    LabelSpace,
    ObservationRecord,
    SyntheticSpec,
    TaxonomyTree,
    align_records,
    build_label_space,
    build_taxonomy,
    generate_eval_split,
    generate_synthetic,
    read_embedding_csv,
    read_embedding_table,
    read_metadata,
    read_metadata_extras,
    write_embedding_table,
    write_metadata,
)
from .experiments import (
    AblationResult,
    REFERENCE_TOP5,
    default_alpha_grid,
    run_ablation,
    sweep_alpha,
    tail_class_topk,
    write_ablation_csv,
    write_alpha_sweep_csv,
)
from .metrics import (
    ClassAccuracy,
    PredictionSet,
    emit_submission,
    per_class_topk,
    read_submission,
    topk_accuracy,
    write_class_freq_csv,
)
from .model import (
    FusionHead,
    LinearHead,
    MultiHead,
    backward_fusion,
    backward_linear,
    backward_multi,
    binary_cross_entropy,
    forward_fusion,
    forward_linear,
    forward_multi,
    init_fusion_head,
    init_linear_head,
    init_multi_head,
    load_checkpoint,
    mixup_cross_entropy,
    save_checkpoint,
    softmax_cross_entropy,
)
from .optim import (
    AdamState,
    DataBundle,
    GradNormState,
    TrainConfig,
    TrainLog,
    TrainResult,
    adam_step,
    evaluate_checkpoint,
    gradnorm_step,
    make_bundle,
    predict,
    train,
    write_trainlog_csv,
    write_trainlog_jsonl,
)
from .rng import stream_rng
from .sampling import (
    BatchPlan,
    SampleWeights,
    compute_sample_weights,
    draw_epoch,
    draw_unweighted_epoch,
)
from .zeroshot import (
    CompletionClient,
    FixtureTransport,
    HttpTransport,
    ObservationQuery,
    ProtocolConfig,
    RankedCandidate,
    RetryPolicy,
    RoundRequest,
    RoundResponse,
    ScriptedClient,
    UsageLedger,
    ZeroShotResult,
    build_prompt,
    classify_observation,
    dump_fixture,
    group_test_observations,
    normalized_similarity,
    record_usage,
    run_zeroshot,
    species_frequencies,
    validate_response,
    write_ledger_csv,
    write_zeroshot_submission,
)

__version__ = "0.1.0"
