from .counters import CATEGORIES, FlopCounter
from .costs import theoretical_costs
from .kernels import axpy, dot, spmv
from .multifrontal import (DimensionError, Factorization, SingularMatrixError, Symbolic,
                           lu_factorize, symbolic_analysis)
from .ordering import Ordering, TreeNode, natural_order, nested_dissection_order

__all__ = [
    "CATEGORIES", "FlopCounter", "theoretical_costs", "axpy", "dot", "spmv",
    "DimensionError", "Factorization", "SingularMatrixError", "Symbolic", "lu_factorize",
    "symbolic_analysis", "Ordering", "TreeNode", "natural_order", "nested_dissection_order",
]
