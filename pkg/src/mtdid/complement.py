"""Complementary effects: ATT(g, t, 4) - ATT(g, t, 2).

The triple difference measures what the second reform adds on top of the
first. It is only defined for cohorts estimated under both masks; cohorts
present in just one of them are excluded and reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .aggregate import AggregateResult, aggregate_event_study, aggregate_overall
from .attgt import AttGtEstimate
from .errors import EmptyAggregationError, PairingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ComplementEstimate:
    g: int
    t: int
    delta: float
    joint: AttGtEstimate
    singular: AttGtEstimate

    @property
    def estimate(self) -> float:
        return self.delta

    @property
    def contributions(self):
        """Signed input contributions: joint with +1, singular with -1."""
        return ((1.0, self.joint.contributions), (-1.0, self.singular.contributions))

    def reevaluate(self, cluster_weights=None) -> float:
        return sum(sign * c.reevaluate(cluster_weights) for sign, c in self.contributions)


def complementary_att_gt(est4: AttGtEstimate, est2: AttGtEstimate) -> ComplementEstimate:
    if est4.d != 4 or est2.d != 2:
        raise PairingError(f"expected d=4 and d=2 inputs, got d={est4.d} and d={est2.d}")
    if (est4.g, est4.t) != (est2.g, est2.t):
        raise PairingError(f"cells differ: ({est4.g}, {est4.t}) vs ({est2.g}, {est2.t})")
    return ComplementEstimate(est4.g, est4.t, est4.estimate - est2.estimate, est4, est2)


@dataclass(frozen=True)
class ComplementSet:
    deltas: list[ComplementEstimate]
    excluded_joint: tuple[int, ...]
    excluded_singular: tuple[int, ...]


def pair_complementary(joint: Sequence[AttGtEstimate], singular: Sequence[AttGtEstimate]) -> ComplementSet:
    """Match d=4 and d=2 cells by (g, t) over the cohorts both contain."""
    by_cell = {(e.g, e.t): e for e in singular}
    g4 = {e.g for e in joint}
    g2 = {e.g for e in singular}
    shared = g4 & g2
    deltas = [complementary_att_gt(e, by_cell[(e.g, e.t)])
              for e in joint if e.g in shared and (e.g, e.t) in by_cell]
    only4, only2 = tuple(sorted(g4 - shared)), tuple(sorted(g2 - shared))
    if only4 or only2:
        logger.info("complementary effects exclude %d joint-only and %d singular-only cohorts",
                    len(only4), len(only2))
    return ComplementSet(deltas, only4, only2)


def aggregate_complementary(deltas: Sequence[ComplementEstimate], group_sizes: Mapping[int, float],
                            within_cohort_first: bool = False) -> AggregateResult:
    """Overall complementary effect, weighted by the joint-treated cohort sizes."""
    if not deltas:
        raise EmptyAggregationError("no overlapping cohorts between d=4 and d=2")
    return aggregate_overall(deltas, group_sizes, within_cohort_first)


def aggregate_complementary_event_study(deltas: Sequence[ComplementEstimate],
                                        group_sizes: Mapping[int, float],
                                        e_range: Sequence[int] | None = None) -> list[AggregateResult]:
    if not deltas:
        raise EmptyAggregationError("no overlapping cohorts between d=4 and d=2")
    return aggregate_event_study(deltas, group_sizes, e_range)
