"""Ergodically driven compositions of random bistochastic quantum channels."""
from .algebra import (
    AlgebraSubspace,
    Subspace,
    algebra_closure,
    conditional_expectation,
    grassmann_distance,
    intersect,
    is_abelian,
    multiplicative_domain,
    peripheral_algebra,
    verify_algebra,
)
from .channels import (
    Channel,
    adjoint,
    completely_depolarizing,
    compose,
    dephasing,
    from_kraus,
    identity_channel,
    pinching,
    random_mixed_unitary,
    unitary_channel,
    validate_bcp,
)
from .cocycle import (
    CocycleRun,
    RunOptions,
    esp_check,
    kuperberg_records,
    lyapunov_kappa,
    lyapunov_spectrum,
    run,
    stabilized_domain,
    verify_met_structure,
)
from .drivers import (
    ChannelFamily,
    MarkovGraph,
    cyclic_algorithm_graph,
    iid_driver,
    markov_driver,
    periodic_driver,
    stationary_distribution,
)
from .entanglement import (
    asymptotic_eb_report,
    choi,
    eb_distance_upper,
    eb_sufficient_ball,
    first_eb_time,
    is_eb_qubit,
    is_ppt,
)

__version__ = "0.1.0"
