"""First-order classical field theories: forms on jet and momentum charts,
projector field equations and the constraint algorithm."""
from .bundles import BundleChart, HamiltonianData, LagrangianTheory, SectionSample
from .connections import ConnectionCoeffs, ConstraintSet, Formalism
from .constraints import run_algorithm, transport_and_compare
from .estimators import ConstraintAlgorithm, LegendreTransformer, ProjectorSolver
from .expr import parse_expr, print_expr
from .forms import ExteriorForm, Layer, Projector, VectorField, exterior_d, wedge
from .theories import BUILTINS, load_theory

__all__ = ["BundleChart", "HamiltonianData", "LagrangianTheory", "SectionSample", "ConnectionCoeffs",
           "ConstraintSet", "Formalism", "run_algorithm", "transport_and_compare", "ConstraintAlgorithm",
           "LegendreTransformer", "ProjectorSolver", "parse_expr", "print_expr", "ExteriorForm", "Layer",
           "Projector", "VectorField", "exterior_d", "wedge", "BUILTINS", "load_theory"]
