"""Core types for stochastic generalized Nash games with affine coupling.

A game has N agents. Agent i chooses a local strategy x_i inside a box
Omega_i in R^n and pays an expected cost whose partial gradient is only
available through noisy samples. Strategies are tied together by a single
affine constraint shared by all agents,

    g(x) = sum_i (A_i x_i - b_i) <= 0   componentwise, in R^m.

Strategy profiles are stored as (N, n) arrays throughout the package.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np


class GameValidationError(ValueError):
    """Raised when a game description is structurally unusable."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {v : lower <= v <= upper}, +/-inf entries allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.shape != up.shape or lo.ndim != 1:
            raise GameValidationError(
                f"box bounds must be 1-d arrays of equal length, got {lo.shape} and {up.shape}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def midpoint(self) -> np.ndarray:
        """Center of the box; along unbounded axes, 1.0 past the finite end."""
        lo, up = self.lower, self.upper
        with np.errstate(invalid="ignore"):
            mid = np.where(
                np.isfinite(lo) & np.isfinite(up),
                0.5 * (lo + up),
                np.where(np.isfinite(lo), lo + 1.0, np.where(np.isfinite(up), up - 1.0, 0.0)),
            )
        return mid


def project_box(v: np.ndarray, box: Box) -> np.ndarray:
    """Euclidean projection of v onto the box (componentwise clip)."""
    v = np.asarray(v, dtype=float)
    if v.shape != box.lower.shape:
        raise ValueError(f"cannot project shape {v.shape} onto box of dim {box.dim}")
    return np.clip(v, box.lower, box.upper)


def project_nonneg(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(v, dtype=float), 0.0)


@dataclass(frozen=True)
class CouplingConstraint:
    """Separable affine coupling g(x) = sum_i (A_i x_i - b_i) <= 0.

    Parameters
    ----------
    A : ndarray, shape (N, m, n)
        Per-agent constraint matrices.
    b : ndarray, shape (N, m)
        Per-agent offsets; sum_i b_i is the joint right-hand side.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 3 or b.ndim != 2 or A.shape[:2] != b.shape:
            raise GameValidationError(
                f"coupling needs A of shape (N, m, n) and b of shape (N, m), got {A.shape}, {b.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def num_agents(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def local_value(self, i: int, x_i: np.ndarray) -> np.ndarray:
        """Agent i's share A_i x_i - b_i of the coupling."""
        return self.A[i] @ np.asarray(x_i, dtype=float) - self.b[i]


def coupling_value(coupling: CouplingConstraint, x: np.ndarray) -> np.ndarray:
    """Evaluate g(x) = sum_i (A_i x_i - b_i) for a profile x of shape (N, n)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (coupling.num_agents, coupling.A.shape[2]):
        raise ValueError(
            f"profile shape {x.shape} does not match coupling ({coupling.num_agents} agents, "
            f"local dim {coupling.A.shape[2]})"
        )
    # einsum over agents: sum_i A[i] @ x[i] - sum_i b[i]
    return np.einsum("imn,in->m", coupling.A, x) - coupling.b.sum(axis=0)


class GradientOracle(ABC):
    """Sampled partial-gradient oracle for the agents' expected costs.

    Implementations must be deterministic functions of (i, x, sample): the
    same inputs give the same gradient. Randomness enters only through
    `draw`, which consumes an externally owned generator.
    """

    @abstractmethod
    def draw(self, rng: np.random.Generator) -> Any:
        """Draw one sample of the game's uncertainty."""

    @abstractmethod
    def gradient(self, i: int, x: np.ndarray, sample: Any) -> np.ndarray:
        """Partial gradient of agent i's sampled cost at profile x, shape (n,)."""

    def freeze_batch(self, samples: Sequence[Any]) -> Any:
        """Pack a sample sequence for repeated batch_gradient calls.

        The default keeps the sequence as-is; subclasses may return a
        vector-friendly container. batch_gradient accepts either form.
        """
        return tuple(samples)

    def batch_gradient(self, i: int, x: np.ndarray, samples: Any) -> np.ndarray:
        """Mean of `gradient` over a batch of samples (a sequence or a frozen batch)."""
        if len(samples) == 0:
            raise ValueError("batch_gradient needs at least one sample")
        acc = np.zeros_like(np.asarray(x, dtype=float)[i])
        for s in samples:
            acc += self.gradient(i, x, s)
        return acc / len(samples)


@dataclass
class GameSpec:
    """Full description of one game instance.

    Attributes
    ----------
    local_sets : list of Box
        Strategy box of each agent; all boxes share one dimension n.
    coupling : CouplingConstraint
        Shared affine constraint, m rows.
    oracle : GradientOracle
        Sampled gradients of the expected costs.
    """

    local_sets: List[Box]
    coupling: CouplingConstraint
    oracle: GradientOracle

    @property
    def num_agents(self) -> int:
        return len(self.local_sets)

    @property
    def dim_local(self) -> int:
        return self.local_sets[0].dim

    @property
    def dim_coupling(self) -> int:
        return self.coupling.dim

    def project_profile(self, x: np.ndarray) -> np.ndarray:
        """Project each row of an (N, n) profile onto its agent's box."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i, box in enumerate(self.local_sets):
            out[i] = project_box(x[i], box)
        return out


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: List[ValidationCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(ValidationCheck(name, bool(passed), detail))

    def lines(self) -> List[str]:
        return [
            f"[{'ok' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
            for c in self.checks
        ]


def validate_game(game: GameSpec) -> ValidationReport:
    """Structural checks on a game: shapes, nonempty boxes, an interior point.

    The interior-point check looks for a profile with g strictly negative,
    first at the box midpoints, then at the componentwise lower corners.
    All checks run; nothing raises.
    """
    rep = ValidationReport()
    n_agents = game.num_agents
    rep.add("agents", n_agents >= 1, f"N={n_agents}")

    dims = {box.dim for box in game.local_sets}
    rep.add("uniform local dimension", len(dims) == 1, f"dims={sorted(dims)}")

    empty = [i for i, box in enumerate(game.local_sets) if box.is_empty()]
    rep.add("nonempty boxes", not empty, f"empty boxes at agents {empty}" if empty else "")

    c = game.coupling
    shape_ok = (
        c.num_agents == n_agents
        and len(dims) == 1
        and c.A.shape[2] == next(iter(dims))
    )
    rep.add(
        "coupling shape",
        shape_ok,
        f"A {c.A.shape}, b {c.b.shape} vs N={n_agents}, n={sorted(dims)}",
    )

    if shape_ok and not empty:
        mid = np.stack([box.midpoint() for box in game.local_sets])
        g_mid = coupling_value(c, mid)
        if np.all(g_mid < 0):
            rep.add("strictly feasible point", True, "box midpoints")
        else:
            low = np.stack([box.lower for box in game.local_sets])
            if np.all(np.isfinite(low)):
                g_low = coupling_value(c, low)
                rep.add(
                    "strictly feasible point",
                    bool(np.all(g_low < 0)),
                    "lower corners" if np.all(g_low < 0) else
                    f"max g = {max(g_mid.max(), g_low.max()):.3g} at midpoints/lower corners",
                )
            else:
                rep.add(
                    "strictly feasible point",
                    False,
                    f"max g(midpoints) = {g_mid.max():.3g}, lower corners unbounded",
                )
    return rep
