"""Main-memory cost function over annotated plan trees.

Node costs depend only on operator kind and cardinalities:

* sequential scan: ``tau * |R|`` over the full base table (selections do not
  reduce the number of tuples a scan must touch),
* index scan: 0 (all index expense is charged at the nested-loop join),
* hash join: ``|build| + |output|``,
* index nested-loop join: ``lambda * |outer| * max(|output| / |outer|, 1)``,
  defined as 0 for an empty outer.

The cost of a subtree is the sum of its node costs.
"""
from __future__ import annotations

from dataclasses import dataclass

SS = "SS"
IS = "IS"
HJ = "HJ"
NLJ = "NLJ"


@dataclass(frozen=True)
class CostParams:
    tau: float = 0.2
    lam: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lam < 1:
            raise ValueError("lambda must be at least 1")


def cost_node(kind: str, cards: tuple, params: CostParams = CostParams()) -> float:
    """Cost of a single operator given its cardinalities.

    ``cards`` is ``(|R|,)`` for SS, ``()`` for IS, ``(|build|, |out|)`` for
    HJ, and ``(|outer|, |out|)`` for NLJ.
    """
    if any(c < 0 for c in cards):
        raise ValueError(f"negative cardinality in {cards!r}")
    if kind == SS:
        (rows,) = cards
        return params.tau * rows
    if kind == IS:
        return 0.0
    if kind == HJ:
        build, out = cards
        return float(build + out)
    if kind == NLJ:
        outer, out = cards
        if outer == 0:
            return 0.0
        return params.lam * outer * max(out / outer, 1.0)
    raise ValueError(f"unknown operator kind {kind!r}")


def cost_plan(annotated) -> float:
    """Total plan cost: the root's cumulative annotation."""
    return annotated.cost_of(annotated.plan)
