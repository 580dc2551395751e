"""Core containers shared across estimators, simulators and the harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

Array = np.ndarray


@dataclass
class Dataset:
    """Observational sample: covariates, binary treatment, outcome.

    ``mu0``/``mu1``/``tau`` hold ground-truth surfaces when the data is
    simulated; ``pi`` records a known constant propensity for randomized
    designs (used by meta-learners that can skip propensity fitting).
    """

    X: Array
    w: Array
    y: Array
    mu0: Optional[Array] = None
    mu1: Optional[Array] = None
    tau: Optional[Array] = None
    pi: Optional[Union[float, Array]] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n = self.X.shape[0]
        if len(self.w) != n or len(self.y) != n:
            raise ValueError("X, w, y must have the same number of rows")
        if not np.all(np.isin(self.w, (0.0, 1.0))):
            raise ValueError("treatment vector must be binary")
        for name in ("mu0", "mu1", "tau"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.float64).reshape(-1)
                if len(value) != n:
                    raise ValueError(f"{name} must align with X rows")
                setattr(self, name, value)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def arm(self, w: int) -> "Dataset":
        """Rows of one treatment arm, ground truth carried along."""
        mask = self.w == w
        return Dataset(
            X=self.X[mask],
            w=self.w[mask],
            y=self.y[mask],
            mu0=self.mu0[mask] if self.mu0 is not None else None,
            mu1=self.mu1[mask] if self.mu1 is not None else None,
            tau=self.tau[mask] if self.tau is not None else None,
            pi=self.pi,
        )


@dataclass
class PredictionTriple:
    """Potential-outcome and effect predictions on a query matrix.

    ``mu0``/``mu1`` are None for learners that only model the effect
    (propensity-weighted and residual-on-residual learners).
    """

    mu0: Optional[Array]
    mu1: Optional[Array]
    tau: Array

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64).reshape(-1)
        for name in ("mu0", "mu1"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.float64).reshape(-1)
                if len(value) != len(self.tau):
                    raise ValueError(f"{name} must align with tau")
                setattr(self, name, value)
