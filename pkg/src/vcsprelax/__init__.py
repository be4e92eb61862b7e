"""Exact relaxation analysis for valued constraint satisfaction.

Linear relaxations are solved over the rationals (no floating point on
that path); the Gram-matrix semidefinite relaxations are solved in
binary64 and every numeric answer travels with its residuals.
"""

from .algebra import (
    BwcReport,
    CoreReport,
    FractionalOperation,
    Operation,
    bwc_report,
    check_fractional_polymorphism,
    compute_core,
    find_fractional_polymorphism,
    find_wnu_in_supp,
    is_language_polymorphism,
    is_polymorphism,
    kill_operations,
    order_statistic,
    projection,
    supp_membership,
)
from .equations import (
    AbelianGroup,
    EquationLanguage,
    GapReport,
    build_equation_language,
    equation_form,
    gap_search,
    linear_satisfiable,
    make_group,
    random_kxor,
    random_regular_graph,
    tseitin,
)
from .errors import ArityError, CapExceeded, NonConvergence, ParseError, VcspError
from .fileformat import (
    parse_gadget,
    parse_instance,
    parse_language,
    parse_operation,
    serialize_gadget,
    serialize_instance,
    serialize_language,
    serialize_operation,
)
from .lasserre import (
    GramSolution,
    LasModel,
    NumericallyInfeasible,
    build_las,
    sdp_opt,
    solve_sdp,
    verify_L7,
)
from .model import (
    ConstraintLanguage,
    ValuedConstraint,
    VCSPInstance,
    WeightedRelation,
    brute_force_opt,
    feas_of,
    opt_of,
)
from .reductions import (
    Gadget,
    Interpretation,
    ReductionReport,
    ReductionTrace,
    apply_interpretation,
    express,
    oracle_value_identity,
    reduce_equality,
    reduce_expressibility,
    reduce_feas,
    reduce_opt,
    transport_solution,
    verify_reduction,
)
from .sherali_adams import (
    SaCheck,
    SaModel,
    SaSolution,
    build_sa,
    lp_opt,
    sa_tight_level,
    solve_lp_exact,
    verify_sa,
)
from .values import INF, ZERO, ExtValue, format_value, parse_value

__version__ = "0.1.0"

__all__ = [
    "AbelianGroup",
    "ArityError",
    "BwcReport",
    "CapExceeded",
    "ConstraintLanguage",
    "CoreReport",
    "EquationLanguage",
    "ExtValue",
    "FractionalOperation",
    "Gadget",
    "GapReport",
    "GramSolution",
    "INF",
    "Interpretation",
    "LasModel",
    "NonConvergence",
    "NumericallyInfeasible",
    "Operation",
    "ParseError",
    "ReductionReport",
    "ReductionTrace",
    "SaCheck",
    "SaModel",
    "SaSolution",
    "VCSPInstance",
    "ValuedConstraint",
    "VcspError",
    "WeightedRelation",
    "ZERO",
    "apply_interpretation",
    "brute_force_opt",
    "build_equation_language",
    "build_las",
    "build_sa",
    "bwc_report",
    "check_fractional_polymorphism",
    "compute_core",
    "equation_form",
    "express",
    "feas_of",
    "find_fractional_polymorphism",
    "find_wnu_in_supp",
    "format_value",
    "gap_search",
    "is_language_polymorphism",
    "is_polymorphism",
    "kill_operations",
    "linear_satisfiable",
    "lp_opt",
    "make_group",
    "opt_of",
    "oracle_value_identity",
    "order_statistic",
    "parse_gadget",
    "parse_instance",
    "parse_language",
    "parse_operation",
    "parse_value",
    "projection",
    "random_kxor",
    "random_regular_graph",
    "reduce_equality",
    "reduce_expressibility",
    "reduce_feas",
    "reduce_opt",
    "sa_tight_level",
    "sdp_opt",
    "serialize_gadget",
    "serialize_instance",
    "serialize_language",
    "serialize_operation",
    "solve_lp_exact",
    "solve_sdp",
    "supp_membership",
    "transport_solution",
    "tseitin",
    "verify_L7",
    "verify_reduction",
    "verify_sa",
]
