"""noisescope: cluster-conditional annotation-noise estimation and repair.

Estimates how annotation reliability varies across feature-space
clusters without any ground truth, statistically tests for that
variation, and uses the estimated reliability tensor to gate
pseudo-label expansion and iterative label correction around a
from-scratch GCN trained with early-learning regularization.
"""

from .annotate import (
    Annotation,
    AnnotationSet,
    LlmAnnotator,
    PlantedNoiseModel,
    SimulatedAnnotator,
    class_conditional_noise,
    cluster_conditional_noise,
    global_noise,
    llm_annotate,
    load_annotations,
    majority_label,
    parse_answer,
    probe_split,
    save_annotations,
    simulate_annotations,
)
from .cluster import (
    ClusterModel,
    PurityReport,
    choose_embedding,
    kmeans,
    load_clusters,
    purity,
    save_clusters,
)
from .config import AnnotateSettings, Settings, load_config
from .diagnose import (
    DiagnosticReport,
    anova_f,
    chi2_sf,
    diagnose,
    f_sf,
    fisher_combine,
    load_diagnostic,
    null_control,
    per_cluster_accuracy,
    save_diagnostic,
)
from .errors import (
    AnnotationError,
    ArgumentError,
    ConfigError,
    FormatError,
    IoError,
    NoNeighborEvidence,
    NoisescopeError,
    TrainingDiverged,
)
from .gcn import (
    ElrState,
    GcnModel,
    TrainConfig,
    forward,
    load_model,
    loss_and_grad,
    predict,
    save_model,
    train,
)
from .graphio import (
    Graph,
    NormalizedAdjacency,
    load_embeddings,
    load_graph,
    load_labels,
    normalize_adjacency,
    save_embeddings,
    save_graph,
)
from .noise import (
    AgreementBiasReport,
    TransitionTensor,
    agreement,
    agreement_bias_report,
    agreement_records,
    collapse_to_global,
    estimate_tc,
    load_tensor,
    neighbor_set,
    save_tensor,
)
from .pipeline import (
    EvalContext,
    GateConfig,
    IlcConfig,
    LabelPool,
    RunConfig,
    RunReport,
    correct,
    evaluate,
    expand,
    expansion_threshold,
    load_report,
    oracle_tensor,
    run_cane,
    save_report,
    select_alpha,
)
from .rng import derive_seed, rng_for
from .seeds import SeedPlan, budget_schedule, load_plan, save_plan, select_seeds
from .synth import (
    SynthSpec,
    default_noise_grid,
    edge_homophily,
    generate,
    load_planted,
    mixture_rows,
    save_planted,
)

__version__ = "0.1.0"
