"""Hausdorff edit distance: a quadratic-time GED lower bound.

Every node is charged its cheapest local match in the other graph (or its
deletion/insertion).  Substitutions are charged half on each side and
node-local edge terms are halved, since every edge edit touches two nodes.
The edge term of a substitution is the degree difference, the minimum number
of incident edge edits.
"""

from __future__ import annotations

import math

import numpy as np

from ..graph import LabeledGraph
from .core import LOWER, GedResult


def hed_value(g1: LabeledGraph, g2: LabeledGraph) -> float:
    d1 = np.asarray(g1.degrees, dtype=np.float64)
    d2 = np.asarray(g2.degrees, dtype=np.float64)
    l1 = np.asarray(g1.labels, dtype=object)
    l2 = np.asarray(g2.labels, dtype=object)
    sub = ((l1[:, None] != l2[None, :]).astype(np.float64) + np.abs(d1[:, None] - d2[None, :]) / 2.0) / 2.0
    delete = 1.0 + d1 / 2.0
    insert = 1.0 + d2 / 2.0
    side1 = np.minimum(sub.min(axis=1), delete).sum()
    side2 = np.minimum(sub.min(axis=0), insert).sum()
    return float(side1 + side2)


def hed_lower(g1: LabeledGraph, g2: LabeledGraph) -> GedResult:
    value = max(hed_value(g1, g2), abs(g1.n - g2.n), 0.0)
    # GED is integral, so rounding the bound up keeps it a lower bound
    return GedResult(int(math.ceil(value - 1e-9)), LOWER, "hed")
