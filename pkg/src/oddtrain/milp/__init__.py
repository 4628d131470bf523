from .model import BINARY, CONTINUOUS, EQ, GE, LE, Constraint, LinExpr, MilpModel, Variable
from .formulation import (
    MULTIVARIATE, UNIVARIATE, FairnessPack, FormulationError, ModelConfig, VarIndex,
    add_fairness, add_parsimony, add_stability, add_symmetry_breaking, build_model,
    count_sample_binaries, encode_diagram, fairness_expressions, fix_tree_topology,
    parse_var_name, set_cutoff, var_name,
)
from .writers import emit_lp, emit_mps, write_model
