"""fedleak: how much do federated-learning topologies leak?

Simulates centralized and decentralized gradient sharing, with and
without secure aggregation, and quantifies what a passive adversary
learns about honest nodes' gradients -- via closed-form Gaussian mutual
information, a kNN estimator, and a toy gradient-inversion attack.
"""

__version__ = "0.1.0"

from .attack import (
    AttackResult,
    LinearSoftmaxModel,
    ToyImage,
    ToyModel,
    attack_experiment,
    exact_input_from_gradient,
    invert_gradient,
    make_blob_dataset,
    ssim,
    toy_gradient,
)
from .infotheory import (
    MIEstimate,
    SampleMatrix,
    analytic_mi_cfl_sa,
    analytic_mi_dfl_sa,
    gaussian_entropy,
    knn_cmi,
    knn_mi,
)
from .leakage import (
    ExperimentConfig,
    LeakageReport,
    Proposition1Verdict,
    draw_gradient_samples,
    estimate_mode_leakage,
    run_experiment,
    verify_proposition1,
)
from .protocol import (
    ALL_MODES,
    GradientVector,
    Mode,
    ModelState,
    Observation,
    extract_observation,
    fedsgd_round,
    gossip_round,
    run_protocol,
    stack_gradients,
)
from .topology import (
    Graph,
    WeightMatrix,
    generate_graph,
    graph_density,
    metropolis_weights,
    read_edge_list,
    validate_weight_matrix,
    write_edge_list,
)
