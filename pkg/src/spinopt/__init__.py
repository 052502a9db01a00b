"""Geographic spine optimization and exact accounting for differentially
private hierarchical histogram release."""

from .allocation import Allocation, AllocationInvalidError, PURE, ZCDP
from .bypass import (
    RootOrLeafError,
    UnequalChildGammaError,
    blended_parent_variance,
    bypass_parent,
    bypass_rule,
    bypassed_parent_variance,
    pareto_pass,
    should_bypass,
)
from .matmech import (
    DimensionMismatchError,
    Factor,
    GramInverse,
    QueryGroup,
    SingularError,
    StrategyParts,
    VarianceReport,
    Workload,
    gram_inverse,
    identity,
    ols_estimate,
    ones_row,
    parse_query_group,
    realize_query_group,
    strategy_parts,
    variance_diagonals,
)
from .osed import (
    MembershipMissingError,
    OsedTable,
    OseSet,
    TooLargeError,
    brute_force_osed,
    osed_all,
    osed_reduced,
    osed_table,
)
from .privacy import (
    ConvergenceError,
    DeltaBound,
    MechanismRun,
    NoiseSpec,
    PrivacyAudit,
    audit_pure,
    audit_zcdp,
    run_mechanism,
    sample,
    zcdp_to_approx_dp,
)
from .regroup import (
    LevelConventionError,
    OptConfig,
    initialize_tract_groups,
    lex_leq,
    optimize_tract_groups,
    redefine_block_groups,
)
from .spine import (
    CycleOrForestError,
    EmptyGeounitError,
    Geounit,
    GeounitId,
    LevelMatrix,
    LevelSkipError,
    NotSiblingsError,
    Spine,
    SpineError,
    build_spine,
    combine_siblings,
    fanout,
    level_matrix,
)

__version__ = "0.1.0"
