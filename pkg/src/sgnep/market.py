"""Competing ride-hailing platforms setting per-area prices under demand uncertainty.

N firms serve a set of areas. In each area h, firm i posts a price p_{i,h};
riders split across firms by relative price attractiveness, and a registered
driver accepts work only if the wage (a fixed commission beta times the
price) beats a random private opportunity cost, uniform on
[w_low, w_high_{i,h}]. Each firm maximizes expected profit; the package-wide
convention is minimization, so the cost is minus the profit. A per-area cap
on the average posted price couples the firms.

Prices are the only decision variables; wages are tied to them through the
commission, which keeps every quantity here a function of the price profile.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .game import Box, CouplingConstraint, GameSpec, GradientOracle


class MarketError(ValueError):
    pass


@dataclass(frozen=True)
class MarketParams:
    """Market instance: firms, areas, and every sampled parameter draw.

    Attributes
    ----------
    p_bar : float
        Maximum service price ($); demand vanishes for an isolated firm
        posting p_bar.
    caps : ndarray, shape (n_areas,)
        Per-area cap on the average posted price ($).
    beta : float
        Commission ratio; a driver serving at price p earns beta * p.
    w_low : float
        Wage floor ($): below it no driver ever works.
    w_high : ndarray, shape (N, n_areas)
        Per-(firm, area) upper end of the driver opportunity-cost range ($).
    theta : ndarray, shape (N,)
        Substitutability of each firm's service, in [0, 1].
    C : ndarray, shape (n_areas,)
        Mean rider mass per area.
    K : ndarray, shape (N, n_areas)
        Registered drivers per firm and area.
    noise_sigma : float
        Relative half-width of the rider-mass uncertainty, in [0, 1).
    """

    p_bar: float
    caps: np.ndarray
    beta: float
    w_low: float
    w_high: np.ndarray
    theta: np.ndarray
    C: np.ndarray
    K: np.ndarray
    noise_sigma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "caps", np.atleast_1d(np.asarray(self.caps, dtype=float)))
        object.__setattr__(self, "w_high", np.atleast_2d(np.asarray(self.w_high, dtype=float)))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "C", np.atleast_1d(np.asarray(self.C, dtype=float)))
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))

    @property
    def num_firms(self) -> int:
        return self.K.shape[0]

    @property
    def num_areas(self) -> int:
        return self.K.shape[1]

    def with_uniform_theta(self, theta: float) -> "MarketParams":
        """Copy with theta_i = theta for every firm (used by the theta study)."""
        return replace(self, theta=np.full(self.num_firms, float(theta)))

    def problems(self) -> List[str]:
        """All violated parameter constraints, empty if the instance is usable."""
        out = []
        N, n = self.K.shape
        if self.w_high.shape != (N, n):
            out.append(f"w_high shape {self.w_high.shape} != (N, areas) = {(N, n)}")
        if self.theta.shape != (N,):
            out.append(f"theta shape {self.theta.shape} != ({N},)")
        if self.C.shape != (n,) or self.caps.shape != (n,):
            out.append(f"C/caps must have one entry per area ({n})")
            return out
        if not self.p_bar > float(self.caps.max()):
            out.append(f"p_bar={self.p_bar} must exceed every area cap (max {self.caps.max()})")
        if not self.w_low > 0:
            out.append("w_low must be positive")
        if np.any(self.w_high <= self.w_low):
            out.append("every w_high must exceed w_low")
        if not self.beta > 0:
            out.append("beta must be positive")
        if np.any((self.theta < 0) | (self.theta > 1)):
            out.append("theta entries must lie in [0, 1]")
        if np.any(self.C <= 0) or np.any(self.K <= 0):
            out.append("rider masses C and driver counts K must be positive")
        if not (0 <= self.noise_sigma < 1):
            out.append("noise_sigma must lie in [0, 1) so rider masses stay positive")
        return out

    @staticmethod
    def table2(seed: int = 0, num_firms: int = 5, num_areas: int = 10,
               noise_sigma: float = 0.1) -> "MarketParams":
        """Standard benchmark instance; uniform entries realized from `seed`.

        p_bar=35, beta=0.9, w_low=12; caps ~ U(0.65, 0.95)*p_bar per area,
        theta_i ~ U(0.6, 1), C_h ~ U(5, 12)*1e3, K_{i,h} ~ U(0.5, 3)*1e3,
        w_high_{i,h} ~ U(20, 30).
        """
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        p_bar = 35.0
        return MarketParams(
            p_bar=p_bar,
            caps=rng.uniform(0.65 * p_bar, 0.95 * p_bar, size=num_areas),
            beta=0.9,
            w_low=12.0,
            w_high=rng.uniform(20.0, 30.0, size=(num_firms, num_areas)),
            theta=rng.uniform(0.6, 1.0, size=num_firms),
            C=rng.uniform(5e3, 12e3, size=num_areas),
            K=rng.uniform(0.5e3, 3e3, size=(num_firms, num_areas)),
            noise_sigma=noise_sigma,
        )


@dataclass(frozen=True)
class MarketSample:
    """One realization of the uncertain rider mass, as riders per registered driver.

    c[h] = C_h(xi) / sum_j K_{j,h}.
    """

    c: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if np.any(c <= 0):
            raise MarketError("sample rider fractions must be positive")
        object.__setattr__(self, "c", c)


def sample_uncertainty(rng: np.random.Generator, params: MarketParams) -> MarketSample:
    """Draw c_h = (C_h / sum_j K_{j,h}) * (1 + noise_sigma * u), u ~ U[-1, 1] per area."""
    base = params.C / params.K.sum(axis=0)
    u = rng.uniform(-1.0, 1.0, size=params.num_areas)
    return MarketSample(c=base * (1.0 + params.noise_sigma * u))


def mean_sample(params: MarketParams) -> MarketSample:
    """The noise-free sample c_h = C_h / sum_j K_{j,h}."""
    return MarketSample(c=params.C / params.K.sum(axis=0))


def _substitution(i: int, h: int, prices: np.ndarray, params: MarketParams) -> float:
    # theta_i / (N-1) * sum of competitor prices in area h
    N = params.num_firms
    if N == 1:
        if params.theta[i] > 0:
            raise MarketError("theta > 0 is undefined for a single firm (division by N-1)")
        return 0.0
    others = prices[:, h].sum() - prices[i, h]
    return params.theta[i] / (N - 1) * others


def demand(i: int, h: int, prices: np.ndarray, c_h: float, params: MarketParams) -> float:
    """Riders requesting firm i in area h at the given price profile.

    (c_h K_{i,h} / p_bar) * (p_bar - p_{i,h} + theta_i/(N-1) * sum_{j!=i} p_{j,h}).
    May go negative for own prices above p_bar plus the substitution term;
    returned as-is.
    """
    prices = np.asarray(prices, dtype=float)
    bracket = params.p_bar - prices[i, h] + _substitution(i, h, prices, params)
    return float(c_h * params.K[i, h] / params.p_bar * bracket)


def participation_prob(p: float, i: int, h: int, params: MarketParams) -> float:
    """Probability that a driver of firm i in area h accepts wage beta * p.

    Affine in p on beta*p in [w_low, w_high_{i,h}]; clamped to [0, 1] outside
    that range with a RuntimeWarning (reachable only on unprojected probes).
    """
    w = params.beta * p
    q = (w - params.w_low) / (params.w_high[i, h] - params.w_low)
    if q < 0.0 or q > 1.0:
        warnings.warn(
            f"participation probability clamped for wage {w:.4g} outside "
            f"[{params.w_low}, {params.w_high[i, h]}]",
            RuntimeWarning,
            stacklevel=2,
        )
        return float(min(max(q, 0.0), 1.0))
    return float(q)


def effective_demand(i: int, h: int, prices: np.ndarray, c_h: float,
                     params: MarketParams) -> float:
    """Paying riders: demand discounted by driver participation."""
    prices = np.asarray(prices, dtype=float)
    return demand(i, h, prices, c_h, params) * participation_prob(prices[i, h], i, h, params)


def drivers_serving(i: int, h: int, p: float, params: MarketParams) -> float:
    """Drivers of firm i active in area h at own price p."""
    return float(params.K[i, h]) * participation_prob(p, i, h, params)


def _raw_q(p: np.ndarray, w_high_row: np.ndarray, params: MarketParams) -> np.ndarray:
    # unclamped affine participation; cost and gradient use the algebraic form
    return (params.beta * p - params.w_low) / (w_high_row - params.w_low)


def _demand_row(i: int, prices: np.ndarray, c: np.ndarray, params: MarketParams) -> np.ndarray:
    # demand of firm i in every area, vectorized over areas; c has shape (n,)
    # or (M, n) for a batch of samples
    N = params.num_firms
    p_own = prices[i]
    if N == 1:
        if params.theta[i] > 0:
            raise MarketError("theta > 0 is undefined for a single firm (division by N-1)")
        sub = 0.0
    else:
        sub = params.theta[i] / (N - 1) * (prices.sum(axis=0) - p_own)
    bracket = params.p_bar - p_own + sub
    return c * params.K[i] / params.p_bar * bracket


def sampled_cost(i: int, prices: np.ndarray, sample: MarketSample,
                 params: MarketParams) -> float:
    """Firm i's sampled cost (minus profit) at the full price profile.

    cost = -sum_h q(p_{i,h}) * p_{i,h} * (d_{i,h}(xi) - beta * K_{i,h})
    with q the affine participation factor, evaluated unclamped so the
    function stays a polynomial in the prices (finite differences and
    convexity probes rely on this).
    """
    prices = np.asarray(prices, dtype=float)
    d = _demand_row(i, prices, sample.c, params)
    q = _raw_q(prices[i], params.w_high[i], params)
    return float(-(q * prices[i] * (d - params.beta * params.K[i])).sum())


def sampled_cost_gradient(i: int, prices: np.ndarray, sample: MarketSample,
                          params: MarketParams) -> np.ndarray:
    """Partial gradient of firm i's sampled cost with respect to its own prices.

    Per area the cost term is -q(p) p (d(p) - beta K), cubic in the own
    price, so the derivative is the quadratic

        -[ q'(p) p (d - beta K) + q(p) (d - beta K) + q(p) p d'(p) ]

    with q'(p) = beta / (w_high - w_low) and d'(p) = -c_h K / p_bar.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.shape != (params.num_firms, params.num_areas):
        raise MarketError(
            f"price profile shape {prices.shape} != {(params.num_firms, params.num_areas)}"
        )
    if sample.c.shape[-1] != params.num_areas:
        raise MarketError("sample has wrong number of areas")
    p = prices[i]
    d = _demand_row(i, prices, sample.c, params)
    margin = d - params.beta * params.K[i]
    q = _raw_q(p, params.w_high[i], params)
    dq = params.beta / (params.w_high[i] - params.w_low)
    dd = -sample.c * params.K[i] / params.p_bar
    return -(dq * p * margin + q * margin + q * p * dd)


class MarketOracle(GradientOracle):
    """Sampled-gradient oracle of the market game."""

    def __init__(self, params: MarketParams):
        bad = params.problems()
        if bad:
            raise MarketError("; ".join(bad))
        self.params = params

    def draw(self, rng: np.random.Generator) -> MarketSample:
        return sample_uncertainty(rng, self.params)

    def gradient(self, i: int, x: np.ndarray, sample: MarketSample) -> np.ndarray:
        return sampled_cost_gradient(i, np.asarray(x, dtype=float), sample, self.params)

    def freeze_batch(self, samples: Sequence[MarketSample]) -> MarketSample:
        # a single MarketSample with an (M, n) stack of rider fractions
        return MarketSample(c=np.stack([s.c for s in samples]))

    def batch_gradient(self, i: int, x: np.ndarray, samples) -> np.ndarray:
        # one vectorized pass over the whole batch; the per-area formula
        # broadcasts over a (M, n) stack of sampled rider fractions
        if isinstance(samples, MarketSample):
            c = np.atleast_2d(samples.c)
        else:
            c = np.stack([s.c for s in samples])
        x = np.asarray(x, dtype=float)
        p = x[i]
        d = _demand_row(i, x, c, self.params)
        margin = d - self.params.beta * self.params.K[i]
        q = _raw_q(p, self.params.w_high[i], self.params)
        dq = self.params.beta / (self.params.w_high[i] - self.params.w_low)
        dd = -c * self.params.K[i] / self.params.p_bar
        grads = -(dq * p * margin + q * margin + q * p * dd)
        return grads.mean(axis=0)


def build_game(params: Union[MarketParams, str], seed: Optional[int] = None) -> GameSpec:
    """Assemble the GameSpec of a market instance.

    `params` is a MarketParams, or the preset name "table2" realized from
    `seed`. Boxes are [max(0, w_low/beta), w_high_{i,h}/beta] per firm and
    area (prices at which the implied wage spans the opportunity-cost
    range); the coupling says the average posted price per area stays below
    the cap, split evenly: A_i = I/N, b_i = caps/N.
    """
    if isinstance(params, str):
        if params != "table2":
            raise MarketError(f"unknown market preset {params!r}")
        params = MarketParams.table2(seed=0 if seed is None else seed)
    bad = params.problems()
    if bad:
        raise MarketError("; ".join(bad))
    N, n = params.num_firms, params.num_areas
    lower = max(0.0, params.w_low / params.beta)
    boxes = [
        Box(lower=np.full(n, lower), upper=params.w_high[i] / params.beta)
        for i in range(N)
    ]
    eye = np.eye(n) / N
    coupling = CouplingConstraint(
        A=np.broadcast_to(eye, (N, n, n)).copy(),
        b=np.broadcast_to(params.caps / N, (N, n)).copy(),
    )
    return GameSpec(local_sets=boxes, coupling=coupling, oracle=MarketOracle(params))


@dataclass
class RealizedOutcomes:
    """Monte-Carlo summary of a posted equilibrium against realized driver choices.

    One realization draws every driver's opportunity cost; a firm's drivers
    in an area either all serve (cost below the offered wage) or none do.
    Realized profit uses the realized driver pool; expected profit uses the
    participation probability. Satisfaction is served capacity over rider
    mass.
    """

    profit_ratio_mean: np.ndarray      # (N,) mean over realizations of realized/expected
    profit_ratio_stderr: np.ndarray    # (N,)
    satisfaction_mean: np.ndarray      # (areas,) mean over realizations of sum_i k/C
    satisfaction_stderr: np.ndarray    # (areas,)
    participation_freq: np.ndarray     # (N, areas) fraction of accepted draws
    expected_profit: np.ndarray        # (N,)
    realizations: int
    saa_samples: int


def realized_outcomes(x_star: np.ndarray, realizations: int, seed: int,
                      params: MarketParams, saa_samples: int = 1000) -> RealizedOutcomes:
    """Evaluate an equilibrium profile under realized driver participation.

    For each of `realizations` draws, opportunity costs delta_{i,h} ~
    U(w_low, w_high_{i,h}) decide all-or-nothing participation
    k_{i,h} = K_{i,h} * 1[delta <= beta p*]. Expectations over the rider
    mass use `saa_samples` fresh samples, independent of the participation
    draws.
    """
    x = np.asarray(x_star, dtype=float)
    N, n = params.num_firms, params.num_areas
    if x.shape != (N, n):
        raise MarketError(f"profile shape {x.shape} != {(N, n)}")
    if realizations < 1:
        raise MarketError("need at least one realization")

    delta_seq, saa_seq = np.random.SeedSequence(seed).spawn(2)
    delta_rng = np.random.default_rng(delta_seq)
    saa_rng = np.random.default_rng(saa_seq)

    # mean demand per (firm, area) over the SAA samples of the rider mass
    c_batch = np.stack(
        [sample_uncertainty(saa_rng, params).c for _ in range(saa_samples)]
    )  # (M, n)
    mean_demand = np.stack(
        [_demand_row(i, x, c_batch, params).mean(axis=0) for i in range(N)]
    )  # (N, n)

    wage = params.beta * x
    q = (wage - params.w_low) / (params.w_high - params.w_low)
    q = np.clip(q, 0.0, 1.0)

    delta = delta_rng.uniform(
        params.w_low, np.broadcast_to(params.w_high, (realizations, N, n))
    )
    accept = delta <= wage  # (K, N, n) all-or-nothing participation

    per_area_term = x * (mean_demand - params.beta * params.K)  # (N, n)
    realized_profit = (accept * per_area_term).sum(axis=2)      # (K, N)
    expected_profit = (q * per_area_term).sum(axis=1)           # (N,)

    # expected profit ~ 0 means nothing is at stake; report ratio 0 rather
    # than dividing by noise
    safe = np.abs(expected_profit) > 1e-12
    ratios = np.zeros((realizations, N))
    ratios[:, safe] = realized_profit[:, safe] / expected_profit[safe]

    served = (accept * params.K).sum(axis=1)   # (K, n) drivers serving per area
    satisfaction = served / params.C           # (K, n)

    sqrt_k = np.sqrt(realizations)
    return RealizedOutcomes(
        profit_ratio_mean=ratios.mean(axis=0),
        profit_ratio_stderr=ratios.std(axis=0, ddof=1) / sqrt_k if realizations > 1
        else np.zeros(N),
        satisfaction_mean=satisfaction.mean(axis=0),
        satisfaction_stderr=satisfaction.std(axis=0, ddof=1) / sqrt_k if realizations > 1
        else np.zeros(n),
        participation_freq=accept.mean(axis=0),
        expected_profit=expected_profit,
        realizations=realizations,
        saa_samples=saa_samples,
    )
