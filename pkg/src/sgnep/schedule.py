"""Vanishing step sizes and Tikhonov weights.

Steps follow alpha_i^k = (k + eta_i)^(-a) per agent and the regularization
eps_j^k = (k + zeta_j)^(-b) per stacked coordinate j = 1..T with
T = N*n + 2*N*m (strategies, auxiliaries, duals). The exponents must
satisfy a, b in (0, 1), a + b < 1 and a > b: steps vanish faster than the
regularization, which itself vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np


def validate_schedule(a: float, b: float) -> bool:
    """True iff a, b in (0,1), a + b < 1 and a > b."""
    return 0.0 < a < 1.0 and 0.0 < b < 1.0 and a + b < 1.0 and a > b


def step_size(k: int, eta: float, a: float) -> float:
    """(k + eta)^(-a) for k >= 0, eta > 0, a in (0, 1)."""
    if not 0.0 < a < 1.0:
        raise ValueError(f"exponent a={a} must lie in (0, 1)")
    if not eta > 0:
        raise ValueError(f"offset eta={eta} must be positive")
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return float((k + eta) ** (-a))


def _per_agent(value: Union[float, Sequence[float]], n_agents: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,):
        arr = np.full(n_agents, arr[0])
    if arr.shape != (n_agents,):
        raise ValueError(f"{name} must be a scalar or one value per agent")
    if np.any(arr <= 0):
        raise ValueError(f"{name} entries must be positive")
    return arr


@dataclass(frozen=True)
class StepSchedule:
    """Frozen step-size law for one run.

    Offsets are realized once (at construction) and never resampled, so a
    schedule pins down every alpha_i^k and eps_j^k deterministically.
    """

    a: float
    b: float
    eta: np.ndarray     # (N,) per-agent step offsets
    zeta: np.ndarray    # (T,) per-coordinate regularization offsets
    gamma: np.ndarray   # (N,) strategy-block weights
    nu: np.ndarray      # (N,) auxiliary-block weights
    tau: np.ndarray     # (N,) dual-block weights
    dim_local: int
    dim_coupling: int

    @property
    def num_agents(self) -> int:
        return self.eta.shape[0]

    @property
    def total_dim(self) -> int:
        n_agents = self.num_agents
        return n_agents * self.dim_local + 2 * n_agents * self.dim_coupling

    def alpha(self, k: int) -> np.ndarray:
        """Per-agent step sizes at iteration k, shape (N,)."""
        return (k + self.eta) ** (-self.a)

    def eps(self, k: int) -> np.ndarray:
        """Per-coordinate regularization weights at iteration k, shape (T,)."""
        return (k + self.zeta) ** (-self.b)

    def eps_blocks(self, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """eps at k reshaped into the (N,n) strategy, (N,m) auxiliary and (N,m) dual blocks."""
        N, n, m = self.num_agents, self.dim_local, self.dim_coupling
        e = self.eps(k)
        return (
            e[: N * n].reshape(N, n),
            e[N * n: N * (n + m)].reshape(N, m),
            e[N * (n + m):].reshape(N, m),
        )

    def eps_min(self, k: int) -> float:
        return float((k + self.zeta.max()) ** (-self.b))

    @staticmethod
    def build(
        a: float,
        b: float,
        num_agents: int,
        dim_local: int,
        dim_coupling: int,
        *,
        eta: Optional[float] = None,
        eta_interval: Tuple[float, float] = (1.0, 100.0),
        zeta: Optional[float] = None,
        zeta_interval: Tuple[float, float] = (1.0, 100.0),
        rng: Optional[np.random.Generator] = None,
        common_eta: bool = False,
        gamma: Union[float, Sequence[float]] = 1.0,
        nu: Union[float, Sequence[float]] = 1.0,
        tau: Union[float, Sequence[float]] = 1.0,
    ) -> "StepSchedule":
        """Realize a schedule, sampling offsets from intervals unless fixed.

        `eta` (or `zeta`) fixes the offset for all agents (coordinates);
        otherwise offsets are drawn uniformly from the interval, one per
        agent (coordinate), or a single shared draw when `common_eta` is
        set. Sampling consumes `rng`, required only when something is
        actually sampled.
        """
        if not validate_schedule(a, b):
            raise ValueError(
                f"step exponents (a={a}, b={b}) violate the schedule rules: "
                "need a, b in (0,1), a + b < 1, a > b"
            )
        T = num_agents * dim_local + 2 * num_agents * dim_coupling

        def draw(lo: float, hi: float, size) -> np.ndarray:
            if not 0 < lo < hi:
                raise ValueError(f"offset interval [{lo}, {hi}] must satisfy 0 < low < high")
            if rng is None:
                raise ValueError("sampling offsets from an interval requires an rng")
            return rng.uniform(lo, hi, size=size)

        if eta is not None:
            if not eta > 0:
                raise ValueError("fixed eta must be positive")
            etas = np.full(num_agents, float(eta))
        elif common_eta:
            etas = np.full(num_agents, draw(*eta_interval, size=None))
        else:
            etas = draw(*eta_interval, size=num_agents)

        if zeta is not None:
            if not zeta > 0:
                raise ValueError("fixed zeta must be positive")
            zetas = np.full(T, float(zeta))
        else:
            zetas = draw(*zeta_interval, size=T)

        return StepSchedule(
            a=float(a),
            b=float(b),
            eta=etas,
            zeta=zetas,
            gamma=_per_agent(gamma, num_agents, "gamma"),
            nu=_per_agent(nu, num_agents, "nu"),
            tau=_per_agent(tau, num_agents, "tau"),
            dim_local=dim_local,
            dim_coupling=dim_coupling,
        )
