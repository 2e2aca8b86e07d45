"""Ground-truth machinery the distributed solver is checked against.

Everything here is centralized and deliberately algorithm-independent of
the distributed iteration: a frozen sample-average pseudogradient, an
extragradient solver for reference equilibria, an exhaustive grid verifier
for tiny instances, and a monotonicity/Lipschitz probe.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, asdict
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .game import GameSpec, project_box, project_nonneg, validate_game


def _frozen_batches(game: GameSpec, M: int, seed: int) -> list:
    """Per-agent frozen batches of M samples, drawn once from independent streams."""
    if M < 1:
        raise ValueError("sample count must be at least 1")
    streams = np.random.SeedSequence(seed).spawn(game.num_agents)
    return [
        game.oracle.freeze_batch([game.oracle.draw(rng) for _ in range(M)])
        for rng in (np.random.default_rng(s) for s in streams)
    ]


def saa_gradient(game: GameSpec, x: np.ndarray, M: int, seed: int) -> np.ndarray:
    """M-sample average pseudogradient at profile x, shape (N, n).

    Block i is the mean of M sampled partial gradients; the per-agent
    sample streams derive from `seed`, so equal seeds give bit-equal
    results.
    """
    x = np.asarray(x, dtype=float)
    batches = _frozen_batches(game, M, seed)
    return np.stack([
        game.oracle.batch_gradient(i, x, batches[i]) for i in range(game.num_agents)
    ])


def saa_operator(game: GameSpec, M: int, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """Deterministic callable x -> Fbar_M(x) with sample batches frozen once.

    Uses the same stream layout as `saa_gradient`, so the returned operator
    evaluates to saa_gradient(game, x, M, seed) at every x.
    """
    batches = _frozen_batches(game, M, seed)

    def f_bar(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([
            game.oracle.batch_gradient(i, x, batches[i]) for i in range(game.num_agents)
        ])

    return f_bar


@dataclass
class Certificate:
    natural_residual: float
    samples: int
    iterations: int
    converged: bool
    feasibility_violation: float
    complementarity: float


@dataclass
class ReferenceSolution:
    """Centrally computed equilibrium: profile, shared dual, and certificate."""

    x_star: np.ndarray
    lambda_star: np.ndarray
    certificate: Certificate

    def to_json(self) -> str:
        payload = {
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "certificate": asdict(self.certificate),
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "ReferenceSolution":
        payload = json.loads(text)
        return ReferenceSolution(
            x_star=np.asarray(payload["x_star"], dtype=float),
            lambda_star=np.asarray(payload["lambda_star"], dtype=float),
            certificate=Certificate(**payload["certificate"]),
        )


def _kkt_forward(game: GameSpec, f_bar, x: np.ndarray,
                 lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # stacked operator [Fbar(x) + A_i^T lam ; -g(x)]
    fx = f_bar(x) + np.einsum("imn,m->in", game.coupling.A, lam)
    g = np.einsum("imn,in->m", game.coupling.A, x) - game.coupling.b.sum(axis=0)
    return fx, -g


def _kkt_project(game: GameSpec, x: np.ndarray, lam: np.ndarray):
    xp = np.stack([project_box(x[i], game.local_sets[i]) for i in range(game.num_agents)])
    return xp, project_nonneg(lam)


def _kkt_residual(game: GameSpec, f_bar, x: np.ndarray, lam: np.ndarray) -> float:
    fx, fl = _kkt_forward(game, f_bar, x, lam)
    xp, lp = _kkt_project(game, x - fx, lam - fl)
    return float(np.sqrt(np.linalg.norm(x - xp) ** 2 + np.linalg.norm(lam - lp) ** 2))


def _project_coupling(game: GameSpec, x: np.ndarray, tol: float = 1e-12,
                      max_iter: int = 100000) -> np.ndarray:
    """Euclidean-style projection of a profile onto boxes + coupling.

    Projected dual ascent on the coupling rows: x(mu) clips
    x - A_i^T mu into the boxes and mu climbs the violation. Returns x
    unchanged when already feasible.
    """
    g0 = np.einsum("imn,in->m", game.coupling.A, x) - game.coupling.b.sum(axis=0)
    if np.all(g0 <= tol):
        return x
    norm_a = sum(float(np.linalg.norm(game.coupling.A[i], 2)) ** 2
                 for i in range(game.num_agents))
    step = 1.0 / max(norm_a, 1e-12)
    mu = np.zeros(game.dim_coupling)
    xm = x
    for _ in range(max_iter):
        shift = np.einsum("imn,m->in", game.coupling.A, mu)
        xm = np.stack([
            project_box(x[i] - shift[i], game.local_sets[i])
            for i in range(game.num_agents)
        ])
        g = np.einsum("imn,in->m", game.coupling.A, xm) - game.coupling.b.sum(axis=0)
        if np.max(g) <= tol and np.min(g[mu > 0], initial=0.0) > -1e-6:
            break
        mu = project_nonneg(mu + step * g)
    return xm


def _kkt_step_sizes(game: GameSpec, f_bar, seed: int = 0) -> tuple[float, float]:
    """Blockwise extragradient steps (s_x, s_lam) from probed constants.

    The price block uses 1/(2 Lhat) with Lhat an inflated two-point
    Lipschitz ratio of Fbar over the boxes. The dual block is scaled up
    until the cross terms sqrt(s_x s_lam) ||A|| hit their stability
    budget; without the rescaling the dual coordinates of a capacity
    game move orders of magnitude slower than the prices.
    """
    rep = monotonicity_probe(f_bar, game.local_sets, trials=64, seed=seed)
    l_hat = 1.25 * max(rep.max_lipschitz_ratio, 1e-12)
    s_x = 1.0 / (2.0 * l_hat)
    a_flat = np.concatenate([game.coupling.A[i] for i in range(game.num_agents)], axis=1)
    a_norm = float(np.linalg.norm(a_flat, 2))
    if a_norm > 0.0:
        s_lam = min(1.0 / (16.0 * s_x * a_norm ** 2), 1e4 * s_x)
    else:
        s_lam = s_x
    return s_x, max(s_lam, s_x)


def solve_reference(game: GameSpec, M: int, seed: int, tol: float = 1e-6,
                    max_iterations: int = 200000) -> ReferenceSolution:
    """Centralized equilibrium of the M-sample average game.

    Extragradient (two projected half-steps per iteration) on the stacked
    operator [Fbar_M(x) + A^T lam; -g(x)] over boxes x nonnegative duals
    until the stacked natural residual drops below `tol`. Prices and
    duals take separate constant steps sized from probed constants (no
    tuning knobs); both halve when the residual stalls. The final profile
    is nudged onto the coupling set if it sits slightly outside, and the
    certificate is recomputed at the returned pair; a budget overrun
    returns converged=False with the last residual.
    """
    report = validate_game(game)
    if not report.ok:
        raise ValueError("invalid game: " + "; ".join(report.lines()))
    f_bar = saa_operator(game, M, seed)
    x = np.stack([box.midpoint() for box in game.local_sets])
    lam = np.zeros(game.dim_coupling)

    s_x, s_lam = _kkt_step_sizes(game, f_bar)
    check_every = 50
    stall_window = 40
    iterations = 0
    residual = np.inf
    best = np.inf
    checks_since_best = 0
    while iterations < max_iterations:
        for _ in range(iterations, max_iterations):
            fx, fl = _kkt_forward(game, f_bar, x, lam)
            yx, yl = _kkt_project(game, x - s_x * fx, lam - s_lam * fl)
            fyx, fyl = _kkt_forward(game, f_bar, yx, yl)
            x, lam = _kkt_project(game, x - s_x * fyx, lam - s_lam * fyl)
            iterations += 1
            if iterations % check_every == 0:
                r = _kkt_residual(game, f_bar, x, lam)
                if r <= tol:
                    break
                if r < 0.9 * best:
                    best = r
                    checks_since_best = 0
                else:
                    checks_since_best += 1
                    if checks_since_best >= stall_window:
                        # constants were probed optimistically; back off
                        s_x *= 0.5
                        s_lam *= 0.5
                        checks_since_best = 0
        # nudge onto the coupling set and certify at the returned pair;
        # re-enter the loop if the nudge pushed the residual back above tol
        x = _project_coupling(game, x)
        residual = _kkt_residual(game, f_bar, x, lam)
        if residual <= tol or iterations >= max_iterations:
            break

    g = np.einsum("imn,in->m", game.coupling.A, x) - game.coupling.b.sum(axis=0)
    cert = Certificate(
        natural_residual=float(residual),
        samples=M,
        iterations=iterations,
        converged=bool(residual <= tol),
        feasibility_violation=float(np.maximum(g, 0.0).max(initial=0.0)),
        complementarity=float(abs(lam @ g)),
    )
    return ReferenceSolution(x_star=x, lambda_star=lam, certificate=cert)


@dataclass
class MonotonicityReport:
    """Empirical two-point bounds on an operator over a box domain.

    min_monotone_ratio: min over trials of <F(x)-F(y), x-y> / ||x-y||^2.
    max_lipschitz_ratio: max over trials of ||F(x)-F(y)|| / ||x-y||.
    violations: trials with monotone ratio below -1e-8.
    """

    min_monotone_ratio: float
    max_lipschitz_ratio: float
    violations: int
    trials: int

    @property
    def monotone(self) -> bool:
        return self.violations == 0


def monotonicity_probe(F: Callable[[np.ndarray], np.ndarray],
                       boxes: Sequence, trials: int = 200,
                       seed: int = 0) -> MonotonicityReport:
    """Probe <F(x)-F(y), x-y> on random point pairs inside the boxes."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lows = np.stack([np.asarray(b.lower, dtype=float) for b in boxes])
    ups = np.stack([np.asarray(b.upper, dtype=float) for b in boxes])
    min_ratio = np.inf
    max_lip = 0.0
    violations = 0
    for _ in range(trials):
        x = rng.uniform(lows, ups)
        y = rng.uniform(lows, ups)
        dx = (x - y).ravel()
        nrm2 = float(dx @ dx)
        if nrm2 < 1e-20:
            continue
        df = (np.asarray(F(x)) - np.asarray(F(y))).ravel()
        ratio = float(df @ dx) / nrm2
        min_ratio = min(min_ratio, ratio)
        max_lip = max(max_lip, float(np.linalg.norm(df)) / np.sqrt(nrm2))
        if ratio < -1e-8:
            violations += 1
    return MonotonicityReport(
        min_monotone_ratio=float(min_ratio),
        max_lipschitz_ratio=float(max_lip),
        violations=violations,
        trials=trials,
    )


@dataclass
class BruteForceResult:
    x_star: Optional[np.ndarray]
    gap: float              # min over feasible directions of <F(x*), v - x*>
    tol_grid: float
    message: str = ""

    @property
    def found(self) -> bool:
        return self.x_star is not None


def _polytope_vertices(lows: np.ndarray, ups: np.ndarray, A_rows: np.ndarray,
                       b_rhs: np.ndarray) -> np.ndarray:
    """Vertices of {l <= v <= u, A v <= b} by active-set enumeration (tiny dims)."""
    d = lows.size
    eye = np.eye(d)
    # rows: v_j <= u_j, -v_j <= -l_j, then coupling rows
    mats = np.vstack([eye, -eye, A_rows])
    rhs = np.concatenate([ups, -lows, b_rhs])
    verts = []
    for combo in itertools.combinations(range(mats.shape[0]), d):
        sub = mats[list(combo)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, rhs[list(combo)])
        if np.all(mats @ v <= rhs + 1e-9):
            verts.append(v)
    if not verts:
        return np.empty((0, d))
    verts = np.unique(np.round(np.stack(verts), 12), axis=0)
    return verts


def brute_force_vi(game: GameSpec, grid_step: float,
                   tol_grid: Optional[float] = None) -> BruteForceResult:
    """Exhaustive equilibrium search on tiny deterministic instances.

    Scans all feasible grid points x and scores each by the worst-case
    directional value min_v <F(x), v - x> over the feasible set (exact:
    linear in v, so minimized at a polytope vertex). Returns the best
    point; it only counts as an equilibrium when that minimum is above
    -tol_grid, which defaults to 10 * grid_step * (empirical Lipschitz
    bound).
    """
    N, n = game.num_agents, game.dim_local
    d = N * n
    if d > 3:
        raise ValueError(f"brute force only supports N*n <= 3, got {d}")
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")

    # the oracle must be deterministic: two independent draws must agree
    probe = np.stack([b.midpoint() for b in game.local_sets])
    s1 = game.oracle.draw(np.random.default_rng(0))
    s2 = game.oracle.draw(np.random.default_rng(1))
    g1 = np.stack([game.oracle.gradient(i, probe, s1) for i in range(N)])
    g2 = np.stack([game.oracle.gradient(i, probe, s2) for i in range(N)])
    if not np.allclose(g1, g2, rtol=0, atol=1e-12):
        raise ValueError("brute_force_vi requires a deterministic oracle")
    sample = s1

    def F(profile: np.ndarray) -> np.ndarray:
        return np.stack([game.oracle.gradient(i, profile, sample) for i in range(N)])

    lows = np.concatenate([b.lower for b in game.local_sets])
    ups = np.concatenate([b.upper for b in game.local_sets])
    if not (np.all(np.isfinite(lows)) and np.all(np.isfinite(ups))):
        raise ValueError("brute force needs bounded boxes")

    if tol_grid is None:
        rep = monotonicity_probe(F, game.local_sets, trials=200, seed=0)
        tol_grid = 10.0 * grid_step * max(rep.max_lipschitz_ratio, 1.0)

    axes = []
    for lo, up in zip(lows, ups):
        count = int(np.floor((up - lo) / grid_step + 1e-9))
        pts = lo + grid_step * np.arange(count + 1)
        if up - pts[-1] > 1e-12:
            pts = np.append(pts, up)
        axes.append(pts)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    # coupling rows over the stacked variable
    A_flat = np.concatenate([game.coupling.A[i] for i in range(N)], axis=1)  # (m, d)
    b_rhs = game.coupling.b.sum(axis=0)
    feas = mesh[(mesh @ A_flat.T <= b_rhs + 1e-9).all(axis=1)]
    if feas.shape[0] == 0:
        return BruteForceResult(None, -np.inf, tol_grid, "empty feasible grid")

    verts = _polytope_vertices(lows, ups, A_flat, b_rhs)
    if verts.shape[0] == 0:
        return BruteForceResult(None, -np.inf, tol_grid, "empty feasible polytope")

    F_all = np.stack([F(p.reshape(N, n)).ravel() for p in feas])
    # gap_p = min_v <F_p, v> - <F_p, x_p>
    gaps = (F_all @ verts.T).min(axis=1) - np.einsum("pd,pd->p", F_all, feas)
    best = int(np.argmax(gaps))
    if gaps[best] < -tol_grid:
        return BruteForceResult(None, float(gaps[best]), tol_grid,
                                "no VI point at this resolution")
    return BruteForceResult(feas[best].reshape(N, n), float(gaps[best]), tol_grid)
