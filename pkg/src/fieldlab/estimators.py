"""scikit-learn style wrappers.

"Fitting" here means running the symbolic setup and the constraint
algorithm once for a theory; nothing is learned from data. Points passed to
``predict``/``transform`` are rows of chart coordinates.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bundles import LagrangianTheory, Leg_map, leg_map
from .connections import ConnectionCoeffs, Formalism
from .constraints import SOLVE_TOL, classify_points, formalism_setup, run_algorithm
from .expr import compile_exprs
from .forms import Layer
from .theories import load_theory

__all__ = ["ConstraintAlgorithm", "ProjectorSolver", "LegendreTransformer", "resolve_theory",
           "check_points"]


def resolve_theory(theory) -> LagrangianTheory:
    if isinstance(theory, LagrangianTheory):
        return theory
    if isinstance(theory, str):
        return load_theory(theory)
    raise TypeError(f"expected a theory or a theory name, got {type(theory).__name__}")


def check_points(X, layer: Layer) -> np.ndarray:
    """2-D float array with one column per coordinate of ``layer``."""
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != layer.dim:
        raise ValueError(f"X has {X.shape[1]} columns, the {layer.name} chart has {layer.dim}")
    return X


class ConstraintAlgorithm(BaseEstimator):
    """Final constraint set of one formalism.

    ``fit`` runs the algorithm; ``predict`` tells membership in the final
    set and ``transform`` returns the gradient-scaled constraint residuals.
    """

    def __init__(self, formalism="unified", max_steps=4, samples=256, seed=0, tol=SOLVE_TOL):
        self.formalism = formalism
        self.max_steps = max_steps
        self.samples = samples
        self.seed = seed
        self.tol = tol

    def fit(self, theory, y=None):
        th = resolve_theory(theory)
        Formalism(self.formalism)
        self.theory_ = th
        self.trace_ = run_algorithm(self.formalism, th, self.max_steps, self.samples, self.seed, self.tol)
        self.setup_ = formalism_setup(self.formalism, th)
        last = self.trace_.final_step if self.trace_.stabilized else self.trace_.steps[-1].r
        self.constraints_ = self.trace_.constraint_set(last)
        self.stabilized_ = self.trace_.stabilized
        self.final_step_ = self.trace_.final_step
        self.n_features_in_ = self.setup_.layer.dim
        self.feature_names_in_ = np.array(self.setup_.layer.names, dtype=object)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "constraints_")
        X = check_points(X, self.setup_.layer)
        return self.constraints_.contains(X).astype(int)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "constraints_")
        X = check_points(X, self.setup_.layer)
        if not len(self.constraints_):
            return np.zeros((len(X), 0))
        return self.constraints_.scaled_residuals(X).T

    def fit_transform(self, theory, X):
        return self.fit(theory).transform(X)


class ProjectorSolver(BaseEstimator):
    """Pointwise minimum-norm projector solve tangent to a given constraint set.

    ``predict`` returns 1 where the system is solvable and ``transform`` the
    unknowns (rows of ``labels_`` order).
    """

    def __init__(self, formalism="lagrangian", tol=SOLVE_TOL):
        self.formalism = formalism
        self.tol = tol

    def fit(self, theory, y=None, constraints=None):
        th = resolve_theory(theory)
        self.setup_ = formalism_setup(self.formalism, th)
        self.known_ = constraints if constraints is not None else self.setup_.base
        self.labels_ = list(self.setup_.template.unknowns)
        self.n_features_in_ = self.setup_.layer.dim
        return self

    def _solve(self, X):
        check_is_fitted(self, "setup_")
        X = check_points(X, self.setup_.layer)
        return classify_points(self.setup_, X, self.known_, self.tol)

    def predict(self, X) -> np.ndarray:
        return self._solve(X)[0].astype(int)

    def transform(self, X) -> np.ndarray:
        return self._solve(X)[3]

    def coefficients(self, x) -> ConnectionCoeffs:
        sol = self.transform(np.atleast_2d(x))[0]
        return ConnectionCoeffs.from_vector(self.setup_.formalism, self.setup_.layer, self.labels_, sol)


class LegendreTransformer(TransformerMixin, BaseEstimator):
    """Jet points to momenta: ``kind="Leg"`` lands in Z*, ``kind="leg"`` in the extended space."""

    def __init__(self, theory=None, kind="Leg"):
        self.theory = theory
        self.kind = kind

    def fit(self, X=None, y=None):
        if self.kind not in ("Leg", "leg"):
            raise ValueError(f"kind must be 'Leg' or 'leg', got {self.kind!r}")
        th = resolve_theory(self.theory)
        c = th.chart
        self.target_ = c.Zstar if self.kind == "Leg" else c.Lam
        images = Leg_map(th) if self.kind == "Leg" else leg_map(th)
        self._fn = compile_exprs(images, c.Z.symbols)
        self.source_ = c.Z
        self.n_features_in_ = c.Z.dim
        if X is not None:
            check_points(X, c.Z)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "target_")
        X = check_points(X, self.source_)
        return self._fn(X).T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "target_")
        return np.array(self.target_.names, dtype=object)
