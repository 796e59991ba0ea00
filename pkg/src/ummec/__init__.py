"""Transductive few-shot classification on pre-extracted features.

Pipeline: L2-normalize episode features onto the unit sphere, refine the
embeddings by minimizing decentralized-covariance losses (prototype
uniformity + classification) mixed with an adaptively weighted local
alignment term, then classify queries with a variational Sinkhorn optimal
transport classifier that iteratively refines class centers.
"""

from .decov import (
    DecovMatrix,
    DistanceMatrices,
    decov_rows,
    distance_matrices,
    double_center,
    elementwise_sqrt,
    pairwise_sq_dists,
)
from .episodes import (
    BlobSpec,
    Episode,
    FeatureSet,
    gaussian_blobs,
    load_features,
    sample_episode,
    save_features,
)
from .exceptions import (
    DegenerateCaseWarning,
    DegenerateClassError,
    DimensionMismatchError,
    DivergedError,
    FeatureFileError,
    InvalidEpisodeError,
    InvalidInputError,
    InvalidRequestError,
    InvalidStateError,
    MalformedHeaderError,
    NumericalUnderflowError,
    TruncatedPayloadError,
    UmmecError,
    UnknownMagicError,
)
from .gradcheck import finite_difference_gradient, gradient_check_suite
from .harness import RunConfig, RunResult, dump_embeddings, run_episode, run_eval
from .losses import (
    LossGradient,
    LossParams,
    LossValue,
    Prototypes,
    adaptive_weights,
    classification_loss,
    global_loss,
    local_loss,
    pairwise_similarity,
    prototypes,
    psi,
    total_loss,
    total_loss_and_gradient,
    total_loss_gradient,
    uniformity_loss,
)
from .optimizer import EmbeddingState, OptimConfig, init_embeddings, optimize_episode
from .sinkhorn import (
    ClassCenters,
    SinkhornConfig,
    TransportPlan,
    classify_by_plan,
    classify_queries,
    cost_matrix,
    init_centers,
    sinkhorn_plan,
    transport_objective,
    update_centers,
    variational_sinkhorn,
)

__version__ = "0.1.0"
