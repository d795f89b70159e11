"""Built-in pathways and parameter sets.

``cyclic3`` is the three-metabolite cycle with ten reactions, ``irreversible2``
the two-metabolite model with one internal edge and ``reversible2`` the same with
a return edge. The ``FIGURES`` table holds the parameter sets used for the
reproduction runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr

import numpy as np

from .compiler import ScaledModel
from .graph import PathwayGraph, build_graph


def cyclic3(fluxes=None) -> PathwayGraph:
    edges = [
        ("f1", "labeled_in", None, "X1"),
        ("f2", "unlabeled_in", None, "X1"),
        ("f3", "exit", "X1", None),
        ("f4", "internal", "X1", "X2"),
        ("f5", "unlabeled_in", None, "X2"),
        ("f6", "exit", "X2", None),
        ("f7", "internal", "X2", "X3"),
        ("f8", "unlabeled_in", None, "X3"),
        ("f9", "exit", "X3", None),
        ("f10", "internal", "X3", "X1"),
    ]
    g = build_graph(["X1", "X2", "X3"], edges)
    return g if fluxes is None else g.with_fluxes(fluxes)


def irreversible2(fluxes=None) -> PathwayGraph:
    edges = [
        ("f1", "labeled_in", None, "X1"),
        ("f2", "unlabeled_in", None, "X1"),
        ("f3", "exit", "X1", None),
        ("f4", "internal", "X1", "X2"),
        ("f5", "unlabeled_in", None, "X2"),
        ("f6", "exit", "X2", None),
    ]
    g = build_graph(["X1", "X2"], edges)
    return g if fluxes is None else g.with_fluxes(fluxes)


def reversible2(fluxes=None) -> PathwayGraph:
    edges = [
        ("f1", "labeled_in", None, "X1"),
        ("f2", "unlabeled_in", None, "X1"),
        ("f3", "exit", "X1", None),
        ("f4", "internal", "X1", "X2"),
        ("f5", "unlabeled_in", None, "X2"),
        ("f-4", "internal", "X2", "X1"),
        ("f6", "exit", "X2", None),
    ]
    g = build_graph(["X1", "X2"], edges)
    return g if fluxes is None else g.with_fluxes(fluxes)


def _exact(v) -> Fr:
    # floats are taken at their shortest repr, so 0.4 means 2/5
    return Fr(repr(v)) if isinstance(v, float) else Fr(v)


def irreversible2_fluxes(alpha1, alpha2, F1=1, F2=1) -> dict:
    """Balanced fluxes for the irreversible model with the given proportions."""
    alpha1, alpha2, F1, F2 = map(_exact, (alpha1, alpha2, F1, F2))
    f4 = (1 - alpha2) * F2
    return {"f1": (1 - alpha1) * F1, "f2": alpha1 * F1, "f3": F1 - f4, "f4": f4,
            "f5": alpha2 * F2, "f6": F2}


def reversible2_fluxes(alpha1, beta12, alpha2, F1=1, F2=1) -> dict:
    """Balanced fluxes for the reversible model with the given proportions."""
    alpha1, beta12, alpha2, F1, F2 = map(_exact, (alpha1, beta12, alpha2, F1, F2))
    back = beta12 * F1
    f4 = (1 - alpha2) * F2
    return {"f1": (1 - alpha1 - beta12) * F1, "f2": alpha1 * F1, "f3": F1 - f4, "f4": f4,
            "f5": alpha2 * F2, "f-4": back, "f6": F2 - back}


def irreversible2_model(k1, k2, alpha1, alpha2) -> ScaledModel:
    B = np.array([[0.0, 0.0], [1 - float(alpha2), 0.0]])
    return ScaledModel(("X1", "X2"), B, [float(alpha1), float(alpha2)], {0},
                       [float(k1), float(k2)])


def reversible2_model(k1, k2, alpha1, beta12, alpha2) -> ScaledModel:
    B = np.array([[0.0, float(beta12)], [1 - float(alpha2), 0.0]])
    return ScaledModel(("X1", "X2"), B, [float(alpha1), float(alpha2)], {0},
                       [float(k1), float(k2)])


@dataclass(frozen=True)
class FigureFixture:
    """A reproduction target: pathway, true parameters and the parameters to report."""

    name: str
    title: str
    pathway: str  # "irreversible2" | "reversible2"
    truth: dict  # free-parameter name -> Fraction
    reported: tuple[str, ...]

    def graph(self) -> PathwayGraph:
        return {"irreversible2": irreversible2, "reversible2": reversible2}[self.pathway]()

    def model(self) -> ScaledModel:
        t = {k: float(v) for k, v in self.truth.items()}
        if self.pathway == "irreversible2":
            return irreversible2_model(t["k1"], t["k2"], t["alpha1"], t["alpha2"])
        return reversible2_model(t["k1"], t["k2"], t["alpha1"], t["beta1_2"], t["alpha2"])


FIGURES = {
    "fig4": FigureFixture(
        "fig4", "irreversible two-metabolite model, similar turnover rates", "irreversible2",
        {"k1": Fr(7, 20), "alpha1": Fr(1, 4), "k2": Fr(3, 10), "alpha2": Fr(2, 5)},
        ("alpha1", "alpha2")),
    "fig6": FigureFixture(
        "fig6", "reversible two-metabolite model, similar turnover rates", "reversible2",
        {"k1": Fr(7, 20), "alpha1": Fr(3, 10), "beta1_2": Fr(3, 20), "k2": Fr(3, 10),
         "alpha2": Fr(1, 4)},
        ("alpha1", "beta1_2", "alpha2")),
    "fig8": FigureFixture(
        "fig8", "reversible two-metabolite model, fast X1 (fast-slow)", "reversible2",
        {"k1": Fr(1), "alpha1": Fr(1, 4), "beta1_2": Fr(3, 20), "k2": Fr(1, 25),
         "alpha2": Fr(3, 10)},
        ("k1", "k2")),
    "fig10": FigureFixture(
        "fig10", "reversible two-metabolite model, fast X2 (slow-fast)", "reversible2",
        {"k1": Fr(1, 25), "alpha1": Fr(1, 4), "beta1_2": Fr(3, 20), "k2": Fr(1),
         "alpha2": Fr(3, 10)},
        ("k1", "k2")),
}

NOISE_LEVELS = (0.025, 0.05, 0.10)
TIMEPOINT_COUNTS = (3, 5, 10)
