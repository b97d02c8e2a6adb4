"""Synthetic grouped linear data: Gaussian covariates, group-specific coefficients.

Each group draws ``X_k ~ N(0, I)`` and ``y_k = X_k beta_k + eps_k`` with
``eps_k ~ N(0, sigma_k^2)`` and no intercept. Small groups share the large
groups' coefficients except for a run of "unshared" entries placed at the end
of the informative block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import GroupedDataset

LARGE, SMALL = "large", "small"


@dataclass(frozen=True)
class GroupSpec:
    label: str
    size: int
    noise_sd: float
    coef: Tuple[float, ...]
    role: str = LARGE


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the simulation; ``build_scenario`` turns them into concrete groups."""

    n_small: int = 100
    n_large: int = 300
    noise_small: float = 1.0
    noise_large: float = 1.0
    num_covariates: int = 30
    num_uninformative: int = 20
    default_coef: float = 1.0
    num_unshared: int = 3
    unshared_value: float = 3.0
    num_large_groups: int = 1
    num_small_groups: int = 1
    test_size: int = 1000


@dataclass(frozen=True)
class SimulationScenario:
    num_covariates: int
    groups: Tuple[GroupSpec, ...]
    test_size: int = 1000
    seed: int = 0
    params: Optional[ScenarioParams] = None

    def __post_init__(self):
        if self.test_size < 1:
            raise ValueError("test_size must be >= 1")
        for g in self.groups:
            if len(g.coef) != self.num_covariates:
                raise ValueError(f"group {g.label!r} has {len(g.coef)} coefficients, "
                                 f"expected {self.num_covariates}")
            if g.size < 1:
                raise ValueError(f"group {g.label!r} must have at least one sample")
            if g.noise_sd < 0:
                raise ValueError(f"group {g.label!r} has negative noise_sd")

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(g.label for g in self.groups)

    def labels_with_role(self, role: str) -> Tuple[str, ...]:
        return tuple(g.label for g in self.groups if g.role == role)


def _labels(prefix: str, count: int) -> List[str]:
    return [prefix if i == 0 else f"{prefix}{i + 1}" for i in range(count)]


def build_scenario(params: ScenarioParams, seed: int = 0) -> SimulationScenario:
    m = params.num_covariates
    informative = m - params.num_uninformative
    if informative < 0:
        raise ValueError("more uninformative coefficients than covariates")
    if params.num_unshared > informative:
        raise ValueError(f"{params.num_unshared} unshared coefficients but only "
                         f"{informative} informative ones")
    if params.num_large_groups < 1:
        raise ValueError("at least one large group is required")
    large = np.zeros(m)
    large[:informative] = params.default_coef
    small = large.copy()
    if params.num_unshared:
        small[informative - params.num_unshared:informative] = params.unshared_value
    groups = [GroupSpec(lbl, params.n_large, params.noise_large, tuple(large), LARGE)
              for lbl in _labels(LARGE, params.num_large_groups)]
    groups += [GroupSpec(lbl, params.n_small, params.noise_small, tuple(small), SMALL)
               for lbl in _labels(SMALL, params.num_small_groups)]
    return SimulationScenario(m, tuple(groups), params.test_size, seed, params)


def base_case(seed: int = 0) -> SimulationScenario:
    """n=300/100, m=30, 20 zero coefficients, three small-group coefficients equal to 3."""
    return build_scenario(ScenarioParams(), seed)


def replication_seed(root_seed: int, scenario_index: int, replication: int) -> np.random.SeedSequence:
    """Independent stream for replication ``r`` of scenario ``s``."""
    return np.random.SeedSequence(root_seed, spawn_key=(scenario_index, replication))


def generate(scenario: SimulationScenario,
             seed: Union[int, np.random.SeedSequence, None] = None) -> Tuple[GroupedDataset, GroupedDataset]:
    """Draw (train, test); train has ``size`` rows per group, test ``test_size``."""
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    m = scenario.num_covariates
    parts = {"train": ([], [], []), "test": ([], [], [])}
    for g in scenario.groups:
        beta = np.asarray(g.coef, dtype=float)
        for split, n in (("train", g.size), ("test", scenario.test_size)):
            X = rng.standard_normal((n, m))
            y = X @ beta + g.noise_sd * rng.standard_normal(n)
            parts[split][0].append(X)
            parts[split][1].append(y)
            parts[split][2].extend([g.label] * n)
    names = [f"x{j + 1}" for j in range(m)]
    out = []
    for split in ("train", "test"):
        X, y, lab = parts[split]
        out.append(GroupedDataset.build(np.vstack(X), np.concatenate(y), lab, names,
                                        group_ids=scenario.labels))
    return out[0], out[1]


AXES: Dict[str, str] = {
    "small-group-size": "n_small",
    "large-group-size": "n_large",
    "small-group-noise": "noise_small",
    "unshared-value": "unshared_value",
    "num-unshared": "num_unshared",
    "num-uninformative": "num_uninformative",
    "num-large-groups": "num_large_groups",
    "num-small-groups": "num_small_groups",
}

DEFAULT_VALUES: Dict[str, Tuple[float, ...]] = {
    "small-group-size": (25, 50, 100, 200, 400),
    "large-group-size": (100, 300, 1000, 3000),
    "small-group-noise": (0.25, 0.5, 1.0, 2.0, 4.0),
    "unshared-value": (1, 2, 3, 5, 8),
    "num-unshared": (0, 2, 3, 5, 10),
    "num-uninformative": (0, 10, 20, 27),
    "num-large-groups": (1, 2, 3, 5),
    "num-small-groups": (1, 2, 3, 5),
}


def sweep_scenarios(axis: str, values: Optional[Sequence[float]] = None,
                    base: Optional[ScenarioParams] = None) -> List[SimulationScenario]:
    """One scenario per value, each differing from the base case only along ``axis``."""
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    base = base or ScenarioParams()
    field = AXES[axis]
    values = DEFAULT_VALUES[axis] if values is None else values
    kind = type(getattr(base, field))
    return [build_scenario(replace(base, **{field: kind(v)})) for v in values]

