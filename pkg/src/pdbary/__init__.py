"""Progressive Wasserstein barycenters and clustering of persistence diagrams."""

__version__ = "0.1.0"

from .diagram import (
    DiagramPoint,
    MetricParams,
    PairType,
    PersistenceDiagram,
    augment,
    diagonal_projection,
    lifted_distance,
    pointwise_distance,
    read_diagram,
    read_manifest,
    threshold_by_persistence,
    write_diagram,
    write_manifest,
)
from .assignment import (
    AssignmentResult,
    auction_until_converged,
    munkres_assignment,
    single_round_with_prices,
)
from .barycenter import (
    BarycenterConfig,
    frechet_energy,
    progressive_barycenter,
    reference_barycenter,
)
from .clustering import (
    ClusteringConfig,
    cluster_diagrams,
    kmeans_plus_plus_init,
)
from .fields import (
    EnsembleSpec,
    GaussianPattern,
    ScalarField,
    extremum_diagram,
    generate_ensemble,
    pointwise_mean,
)
