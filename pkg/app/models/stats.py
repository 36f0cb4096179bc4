"""
Statistics models - repeated-measures designs, test results and analysis plans
"""
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import StatsInputError

Df = Union[None, float, Tuple[float, float]]


@dataclass
class RepeatedMeasures:
    """
    Complete within-subject design

    data has one row per subject and one column per cell; with two factors
    the cells run over the second factor fastest.
    """

    data: np.ndarray
    factors: List[Tuple[str, List[str]]]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise StatsInputError("repeated measures need a subjects x cells matrix")
        if not 1 <= len(self.factors) <= 2:
            raise StatsInputError("one or two within-subject factors are supported")
        if math.prod(len(levels) for _, levels in self.factors) != self.data.shape[1]:
            raise StatsInputError("cell count does not match the factor levels",
                                  cells=self.data.shape[1])
        if not np.all(np.isfinite(self.data)):
            raise StatsInputError("design is incomplete (missing or non-finite cells)")
        if self.n_subjects < 2:
            raise StatsInputError("at least two subjects are required", subjects=self.n_subjects)

    @classmethod
    def one_way(cls, data: np.ndarray, name: str, levels: Sequence[str]) -> "RepeatedMeasures":
        return cls(data, [(name, list(levels))])

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(levels) for _, levels in self.factors)

    @property
    def cube(self) -> np.ndarray:
        """Data reshaped to (subjects, levels of factor 1[, levels of factor 2])"""
        return self.data.reshape((self.n_subjects,) + self.shape)

    def factor_index(self, factor: Union[int, str]) -> int:
        if isinstance(factor, int):
            return factor
        for i, (name, _) in enumerate(self.factors):
            if name == factor:
                return i
        raise StatsInputError(f"unknown factor '{factor}'")

    def cell_labels(self) -> List[str]:
        return [" x ".join(combo) for combo in itertools.product(*(levels for _, levels in self.factors))]


@dataclass
class TestResult:
    """One hypothesis test"""

    __test__ = False

    test_name: str
    statistic: float
    df: Df
    p: float
    label: str = ""
    p_adjusted: Optional[float] = None
    note: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")

    def decision(self, alpha: float = 0.05) -> str:
        p = self.p_adjusted if self.p_adjusted is not None else self.p
        return "reject" if p < alpha else "retain"

    def to_dict(self, alpha: float = 0.05) -> Dict[str, Any]:
        df = list(self.df) if isinstance(self.df, tuple) else self.df
        statistic = self.statistic if np.isfinite(self.statistic) else ("inf" if self.statistic > 0 else "-inf")
        return {
            "test_name": self.test_name,
            "label": self.label,
            "statistic": statistic,
            "df": df,
            "p_raw": self.p,
            "p_adjusted": self.p_adjusted,
            "decision": self.decision(alpha),
            "note": self.note,
        }


@dataclass
class AnalysisPlan:
    """Assumption checks, the chosen branch and its tests"""

    parametric: bool
    normality: List[TestResult] = field(default_factory=list)
    sphericity: List[TestResult] = field(default_factory=list)
    omnibus: List[TestResult] = field(default_factory=list)
    post_hoc: List[TestResult] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    alpha: float = 0.05

    @property
    def branch(self) -> str:
        return "parametric" if self.parametric else "nonparametric"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "branch": self.branch,
            "alpha": self.alpha,
            "normality": [r.to_dict(self.alpha) for r in self.normality],
            "sphericity": [r.to_dict(self.alpha) for r in self.sphericity],
            "omnibus": [r.to_dict(self.alpha) for r in self.omnibus],
            "post_hoc": [r.to_dict(self.alpha) for r in self.post_hoc],
            "notes": list(self.notes),
        }
