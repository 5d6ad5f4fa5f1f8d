"""Probabilistic nearest-neighbor queries over uncertain trajectory databases.

Objects are modeled as time-inhomogeneous Markov chains conditioned on
sparse certain observations. The package answers always-nearest (pann),
sometime-nearest (penn), and continuous (pcnn) queries exactly or by
Monte-Carlo sampling from adapted a-posteriori models, with rectangle-index
pruning and a synthetic workload generator.
"""

from .adaptation import AdaptationCache, AdaptedModel, adapt, posterior_distribution
from .datagen import GenConfig, gen_database
from .errors import (
    ConsistencyError,
    GenerationError,
    LoadError,
    ModelError,
    ParameterError,
    SpanError,
    TooLargeError,
    UstError,
)
from .exact import pann, pann_pair, pann_query, pcnn_object, pcnn_query
from .index import USTIndex, build as build_index, reachable_states
from .io import load_database, parse_times, write_database
from .model import (
    MarkovModel,
    Observation,
    Query,
    StateSpace,
    TimeDomain,
    Trajectory,
    TrajectoryDatabase,
    UncertainObject,
    a_priori_distribution,
    propagate,
    validate,
)
from .oracle import enumerate_paths, oracle_pann, oracle_pcnn, oracle_penn
from .sampling import (
    EstimatorReport,
    estimate,
    hoeffding_samples,
    sample_trajectory,
    sample_world,
)

__version__ = "0.1.0"
