"""Synthetic conditional data distributions used by the experiments."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .flowcore import GaussianTask


@dataclass(frozen=True)
class CompositionalTask:
    """Isotropic Gaussian components on a grid, one per attribute combination.

    Attribute ``a`` moves the component along data axis ``a``; value ``k`` of
    ``V`` sits at ``spacing * (k - (V - 1) / 2)``. Condition ids enumerate the
    combinations in lexicographic order. Ids listed in ``holdout`` are never
    drawn by :meth:`sample_batch` (training) but stay valid everywhere else,
    so a model can be scored on combinations it never saw.
    """

    n_attributes: int = 2
    values_per_attribute: int = 2
    spacing: float = 2.0
    std: float = 0.3
    data_dim: int = 2
    holdout: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "holdout", tuple(sorted(int(h) for h in self.holdout)))
        if self.n_attributes > self.data_dim:
            raise ValueError("each attribute needs its own data axis: n_attributes <= data_dim")
        if self.values_per_attribute < 1 or self.n_attributes < 1:
            raise ValueError("need at least one attribute with at least one value")
        if self.std <= 0 or self.spacing <= 0:
            raise ValueError("std and spacing must be positive")
        for h in self.holdout:
            self.check_condition(h)
        if len(set(self.holdout)) >= self.n_conditions:
            raise ValueError("holdout leaves no condition to train on")

    @property
    def conditions(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.values_per_attribute), repeat=self.n_attributes))

    @property
    def n_conditions(self) -> int:
        return self.values_per_attribute ** self.n_attributes

    @property
    def means(self) -> np.ndarray:
        centre = (self.values_per_attribute - 1) / 2.0
        out = np.zeros((self.n_conditions, self.data_dim))
        for i, combo in enumerate(self.conditions):
            out[i, : self.n_attributes] = self.spacing * (np.asarray(combo) - centre)
        return out

    def check_condition(self, cond: int) -> int:
        if not (0 <= int(cond) < self.n_conditions) or int(cond) != cond:
            raise KeyError(f"unknown condition id {cond!r}; valid ids are 0..{self.n_conditions - 1}")
        return int(cond)

    def sample_condition(self, rng: nc.Rng, cond: int, n: int) -> np.ndarray:
        mean = self.means[self.check_condition(cond)]
        return mean + self.std * rng.standard_normal((n, self.data_dim))

    @property
    def train_conditions(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_conditions), self.holdout)

    def sample_batch(self, rng: nc.Rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Training batch: condition ids uniform over the non-held-out combinations."""
        ids = self.train_conditions
        cond = ids[rng.integers(0, len(ids), size=n)]
        x = self.means[cond] + self.std * rng.standard_normal((n, self.data_dim))
        return x, cond


@dataclass(frozen=True)
class UnconditionalGaussian:
    """A :class:`GaussianTask` behind the conditional-task interface (one condition, id 0)."""

    task: GaussianTask

    @property
    def data_dim(self) -> int:
        return self.task.dim

    @property
    def n_conditions(self) -> int:
        return 1

    @property
    def conditions(self) -> list[tuple[int, ...]]:
        return [()]

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.task.mean)[None, :]

    def check_condition(self, cond: int) -> int:
        if cond != 0:
            raise KeyError(f"unknown condition id {cond!r}; the gaussian task only has id 0")
        return 0

    def sample_condition(self, rng: nc.Rng, cond: int, n: int) -> np.ndarray:
        self.check_condition(cond)
        return self.task.sample(rng, n)

    def sample_batch(self, rng: nc.Rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        return self.task.sample(rng, n), np.zeros(n, dtype=np.int64)
