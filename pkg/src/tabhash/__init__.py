"""Tabulation hashing, moment/tail envelopes for hash-based sums, and experiments."""

from .bounds import (BoundConstants, DEFAULT_CONSTANTS, bennett_tail, bound_fully_random,
                     bound_mixed, bound_simple, envelope, envelope_case, envelope_sup,
                     inflation_mixed, inflation_simple, markov_tail, mixed_tail,
                     poisson_central_pnorm)
from .moments import (MomentReport, MomentRequest, exact_moments, monte_carlo_moments,
                      sum_of_squares_statistic, symmetrization_check)
from .tabulation import (MixedSignFunction, MixedTabHash, PositionCharSet, SchemeParams,
                         SignFunction, SimpleTabHash, TabulationTable,
                         enumerate_table_fillings, pack_key, parse_scheme, unpack_key)
from .values import (QueryValueFunction, ValueFunction, ValueStats, compute_stats,
                     hash_sum, make_collision_query, make_dense, make_single_bin,
                     make_sparse, make_threshold, query_hash_sum)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
