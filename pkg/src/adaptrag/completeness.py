"""Information completeness scoring and retrieval routing."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import ConfigError, EmptyLabels
from .labels import UnitLabel


@dataclass(frozen=True)
class CompletenessWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.alpha >= self.beta >= self.gamma >= 0):
            raise ConfigError(
                f"weights must satisfy alpha > 0 and alpha >= beta >= gamma >= 0, got {self}"
            )


@dataclass(frozen=True)
class RoutingThresholds:
    theta1: float = 0.6
    theta2: float = 0.2

    def __post_init__(self) -> None:
        if not (0 <= self.theta2 < self.theta1 <= 1):
            raise ConfigError(f"thresholds must satisfy 0 <= theta2 < theta1 <= 1, got {self}")


class RoutingDecision(str, Enum):
    DIRECT = "Direct"
    RETRIEVE = "Retrieve"
    RETRIEVE_WITH_WARNING = "RetrieveWithWarning"

    @property
    def retrieves(self) -> bool:
        return self is not RoutingDecision.DIRECT


# Larger rank = more retrieval.
ROUTE_RANK = {
    RoutingDecision.DIRECT: 0,
    RoutingDecision.RETRIEVE: 1,
    RoutingDecision.RETRIEVE_WITH_WARNING: 2,
}


@dataclass(frozen=True)
class CompletenessReport:
    counts: tuple[int, int, int]
    n: int
    i_norm: float
    decision: RoutingDecision


def label_counts(labels: Sequence[UnitLabel]) -> tuple[int, int, int]:
    c = Counter(UnitLabel(label) for label in labels)
    return c[UnitLabel.A], c[UnitLabel.B], c[UnitLabel.C]


def compute_completeness(labels: Sequence[UnitLabel], weights: CompletenessWeights = CompletenessWeights()) -> float:
    """Weighted label mass normalised by the all-A maximum ``alpha * n``."""
    if not labels:
        raise EmptyLabels("completeness is undefined for an empty label list")
    n_a, n_b, n_c = label_counts(labels)
    n = n_a + n_b + n_c
    return (weights.alpha * n_a + weights.beta * n_b + weights.gamma * n_c) / (weights.alpha * n)


def route(i_norm: float, thresholds: RoutingThresholds = RoutingThresholds()) -> RoutingDecision:
    """Strictly above theta1 goes direct; [theta2, theta1] retrieves; below theta2 also warns."""
    if i_norm > thresholds.theta1:
        return RoutingDecision.DIRECT
    if i_norm >= thresholds.theta2:
        return RoutingDecision.RETRIEVE
    return RoutingDecision.RETRIEVE_WITH_WARNING


def assess(
    labels: Sequence[UnitLabel],
    weights: CompletenessWeights = CompletenessWeights(),
    thresholds: RoutingThresholds = RoutingThresholds(),
) -> CompletenessReport:
    i_norm = compute_completeness(labels, weights)
    counts = label_counts(labels)
    return CompletenessReport(counts=counts, n=sum(counts), i_norm=i_norm, decision=route(i_norm, thresholds))
