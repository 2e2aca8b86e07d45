"""Distributed Tikhonov-regularized forward-backward iteration.

Each round, every agent draws one sample of the uncertainty, takes a
projected gradient step on its strategy, and nudges its local dual and an
auxiliary consensus variable using only neighbor values from the multiplier
graph. A vanishing Tikhonov term eps^k * u keeps every round well
conditioned while its bias dies out; steps alpha^k vanish faster than
eps^k.

Two interchangeable formulations are implemented and kept in lockstep: the
per-agent update (`agent_update`, the deployable message-passing form) and
the stacked resolvent step (`compact_step`), used as a structural
cross-check of the splitting algebra.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .game import GameSpec, project_box, project_nonneg, validate_game
from .graph import MultiplierGraph, is_connected
from .schedule import StepSchedule, validate_schedule

Z_UPDATE_TERMS = ("lambda_disagreement", "z_disagreement")


class NumericalFailure(RuntimeError):
    """Non-finite state or divergence; carries the iteration index."""

    def __init__(self, message: str, iteration: int, record: Optional["RunRecord"] = None):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
        self.record = record


@dataclass(frozen=True)
class AgentState:
    """One agent's local variables: strategy x, auxiliary z, dual lam."""

    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray


@dataclass
class StopRule:
    """Stopping and logging policy for `run`.

    The run ends at `max_iterations`, or earlier once consensus residual,
    coupling violation, and the sampled natural residual are all below
    their tolerances (checked on logged rows, never before
    `min_iterations`). Residual tolerances assume the natural-residual
    noise floor at `natural_res_samples` averaging samples sits below
    `natural_res_tol`.
    """

    max_iterations: int
    consensus_tol: float = 1e-3
    feasibility_tol: float = 1e-3
    natural_res_tol: float = 1e-2
    natural_res_samples: int = 200
    min_iterations: int = 1000
    log_interval: int = 100
    divergence_threshold: float = 1e12


RUN_COLUMNS = ("k", "alpha", "eps_min", "consensus_res", "feas_res", "nat_res", "ref_dist")


@dataclass
class RunRecord:
    """Logged residual rows plus the final states of one run.

    `rows` has one entry per logged iteration with the columns of
    RUN_COLUMNS; `meta` records the seed, the generator name, and the
    subsampled estimate of the cumulative squared stochastic gradient
    error sum_k alpha_k^2 ||Fhat - Fbar||^2 (reported, never enforced).
    """

    rows: np.ndarray
    final_states: List[AgentState]
    iterations: int
    stop_reason: str
    meta: Dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, RUN_COLUMNS.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUN_COLUMNS)
            for row in self.rows:
                writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _lam_stack(states: Sequence[AgentState]) -> np.ndarray:
    return np.stack([s.lam for s in states])


def _z_stack(states: Sequence[AgentState]) -> np.ndarray:
    return np.stack([s.z for s in states])


def profile_of(states: Sequence[AgentState]) -> np.ndarray:
    """The (N, n) price/strategy profile of a state list."""
    return np.stack([s.x for s in states])


def stack_states(states: Sequence[AgentState]) -> np.ndarray:
    """Stacked vector u = col(all x, all z, all lam)."""
    return np.concatenate(
        [profile_of(states).ravel(), _z_stack(states).ravel(), _lam_stack(states).ravel()]
    )


def unstack_states(u: np.ndarray, num_agents: int, dim_local: int,
                   dim_coupling: int) -> List[AgentState]:
    N, n, m = num_agents, dim_local, dim_coupling
    x = u[: N * n].reshape(N, n)
    z = u[N * n: N * (n + m)].reshape(N, m)
    lam = u[N * (n + m):].reshape(N, m)
    return [AgentState(x=x[i].copy(), z=z[i].copy(), lam=lam[i].copy()) for i in range(N)]


def agent_update(
    i: int,
    states: Sequence[AgentState],
    sampled_grad: np.ndarray,
    game: GameSpec,
    graph: MultiplierGraph,
    schedule: StepSchedule,
    k: int,
    z_update_term: str = "lambda_disagreement",
) -> AgentState:
    """One agent's round-k update from round-k neighbor values.

    x  <- proj_box( x - alpha*gamma*(Fhat_i + A_i^T lam_i + eps_x * x) )
    z  <- z - alpha*nu*( sum_j w_ij (lam_i - lam_j) + eps_z * z )
    lam <- proj_+( lam + alpha*tau*( g_i(x) - eps_l * lam
                                     + sum_j w_ij ((z_i - z_j) - (lam_i - lam_j)) ) )

    The z line's forward term follows the per-agent algorithm (weighted
    dual disagreement); `z_update_term="z_disagreement"` runs the variant
    that uses auxiliary disagreement instead. Only the agent's own blocks
    of the per-coordinate regularization are used, so the update stays
    local.
    """
    if z_update_term not in Z_UPDATE_TERMS:
        raise ValueError(f"z_update_term must be one of {Z_UPDATE_TERMS}")
    s = states[i]
    grad = np.asarray(sampled_grad, dtype=float)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(s.x))
            and np.all(np.isfinite(s.z)) and np.all(np.isfinite(s.lam))):
        raise NumericalFailure("non-finite agent state or gradient", k)

    alpha = float(schedule.alpha(k)[i])
    eps_x, eps_z, eps_l = (blk[i] for blk in schedule.eps_blocks(k))

    w_row = graph.weights[i]
    deg = w_row.sum()
    lam_all = _lam_stack(states)
    z_all = _z_stack(states)
    lam_dis = deg * s.lam - w_row @ lam_all
    z_dis = deg * s.z - w_row @ z_all

    A_i = game.coupling.A[i]
    x_new = project_box(
        s.x - alpha * schedule.gamma[i] * (grad + A_i.T @ s.lam + eps_x * s.x),
        game.local_sets[i],
    )
    z_forward = lam_dis if z_update_term == "lambda_disagreement" else z_dis
    z_new = s.z - alpha * schedule.nu[i] * (z_forward + eps_z * s.z)
    g_i = game.coupling.local_value(i, s.x)
    lam_new = project_nonneg(
        s.lam + alpha * schedule.tau[i] * (g_i - eps_l * s.lam + z_dis - lam_dis)
    )
    return AgentState(x=x_new, z=z_new, lam=lam_new)


def compact_step(
    u: np.ndarray,
    sampled_grads: Sequence[np.ndarray],
    game: GameSpec,
    graph: MultiplierGraph,
    schedule: StepSchedule,
    k: int,
    z_update_term: str = "lambda_disagreement",
) -> np.ndarray:
    """One step of the stacked resolvent form.

    u+ = R( u - S_k (A(u) + eps^k u) ) where A stacks the sampled
    pseudogradient plus coupling rows, S_k is the diagonal of
    alpha_i^k * (gamma, nu, tau) blocks, and the resolvent R of the
    normal-cone part reduces to blockwise projections (boxes on x,
    identity on z, nonnegative orthant on lam).
    """
    if z_update_term not in Z_UPDATE_TERMS:
        raise ValueError(f"z_update_term must be one of {Z_UPDATE_TERMS}")
    u = np.asarray(u, dtype=float)
    N, n, m = game.num_agents, game.dim_local, game.dim_coupling
    if u.shape != (N * n + 2 * N * m,):
        raise ValueError(f"stacked state has length {u.shape}, expected {N * n + 2 * N * m}")
    if not np.all(np.isfinite(u)):
        raise NumericalFailure("non-finite stacked state", k)

    X = u[: N * n].reshape(N, n)
    Z = u[N * n: N * (n + m)].reshape(N, m)
    Lam = u[N * (n + m):].reshape(N, m)
    grads = np.stack([np.asarray(g, dtype=float) for g in sampled_grads])
    if not np.all(np.isfinite(grads)):
        raise NumericalFailure("non-finite sampled gradient", k)

    deg = graph.weights.sum(axis=1)
    lam_dis = deg[:, None] * Lam - graph.weights @ Lam
    z_dis = deg[:, None] * Z - graph.weights @ Z
    G = np.einsum("imn,in->im", game.coupling.A, X) - game.coupling.b

    x_row = grads + np.einsum("imn,im->in", game.coupling.A, Lam)
    z_row = lam_dis if z_update_term == "lambda_disagreement" else z_dis
    lam_row = lam_dis - G - z_dis

    alpha = schedule.alpha(k)
    eps_x, eps_z, eps_l = schedule.eps_blocks(k)

    x_half = X - (alpha * schedule.gamma)[:, None] * (x_row + eps_x * X)
    z_new = Z - (alpha * schedule.nu)[:, None] * (z_row + eps_z * Z)
    lam_half = Lam - (alpha * schedule.tau)[:, None] * (lam_row + eps_l * Lam)

    x_new = np.stack([project_box(x_half[i], game.local_sets[i]) for i in range(N)])
    lam_new = project_nonneg(lam_half)
    return np.concatenate([x_new.ravel(), z_new.ravel(), lam_new.ravel()])


def residuals(
    states: Sequence[AgentState],
    game: GameSpec,
    M: int,
    rng: np.random.Generator,
    reference: Optional[np.ndarray] = None,
) -> Dict[str, float]:
    """Consensus, feasibility, and sampled natural residual of a state.

    consensus_res: max over coordinates of the dual spread across agents.
    feas_res: infinity norm of the positive part of g(x).
    nat_res: || x - proj_box(x - Fbar_M(x) - A^T mean-dual) ||_2 with Fbar_M
    the M-sample average pseudogradient (fresh draws from `rng`).
    ref_dist: relative distance ||x - x*|| / ||x*|| when a reference profile
    is given, else NaN.
    """
    if M < 1:
        raise ValueError("natural residual needs at least one sample")
    X = profile_of(states)
    Lam = _lam_stack(states)
    consensus = float((Lam.max(axis=0) - Lam.min(axis=0)).max()) if len(states) > 1 else 0.0
    g = np.einsum("imn,in->m", game.coupling.A, X) - game.coupling.b.sum(axis=0)
    feas = float(np.maximum(g, 0.0).max()) if g.size else 0.0

    batch = game.oracle.freeze_batch([game.oracle.draw(rng) for _ in range(M)])
    lam_bar = Lam.mean(axis=0)
    forward = np.stack([
        game.oracle.batch_gradient(i, X, batch) + game.coupling.A[i].T @ lam_bar
        for i in range(game.num_agents)
    ])
    proj = np.stack([
        project_box(X[i] - forward[i], game.local_sets[i]) for i in range(game.num_agents)
    ])
    nat = float(np.linalg.norm(X - proj))

    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        ref_dist = float(np.linalg.norm(X - ref) / np.linalg.norm(ref))
    else:
        ref_dist = float("nan")
    return {"consensus_res": consensus, "feas_res": feas, "nat_res": nat,
            "ref_dist": ref_dist}


class TikhonovSolver:
    """Driver object holding the game, graph, schedule, and RNG streams.

    The master seed splits into one stream per agent (round samples), one
    for schedule offsets (consumed by the config layer when it builds the
    schedule), and one for residual estimation. Rounds are synchronous:
    all updates read round-k state only, so per-round agent order cannot
    change results.
    """

    GENERATOR = "PCG64"

    def __init__(
        self,
        game: GameSpec,
        graph: MultiplierGraph,
        schedule: StepSchedule,
        seed: int,
        z_update_term: str = "lambda_disagreement",
        initial_states: Optional[Sequence[AgentState]] = None,
    ):
        report = validate_game(game)
        if not report.ok:
            raise ValueError("invalid game: " + "; ".join(report.lines()))
        if not is_connected(graph):
            raise ValueError("multiplier graph must be connected")
        if not validate_schedule(schedule.a, schedule.b):
            raise ValueError("invalid step schedule exponents")
        if graph.num_nodes != game.num_agents:
            raise ValueError("graph size does not match the number of agents")
        if (schedule.num_agents != game.num_agents
                or schedule.dim_local != game.dim_local
                or schedule.dim_coupling != game.dim_coupling):
            raise ValueError("schedule dimensions do not match the game")
        if z_update_term not in Z_UPDATE_TERMS:
            raise ValueError(f"z_update_term must be one of {Z_UPDATE_TERMS}")

        self.game = game
        self.graph = graph
        self.schedule = schedule
        self.seed = int(seed)
        self.z_update_term = z_update_term

        streams = np.random.SeedSequence(self.seed).spawn(game.num_agents + 2)
        self.agent_rngs = [np.random.default_rng(s) for s in streams[: game.num_agents]]
        self.offsets_rng = np.random.default_rng(streams[game.num_agents])
        self.residual_rng = np.random.default_rng(streams[game.num_agents + 1])

        if initial_states is None:
            m = game.dim_coupling
            initial_states = [
                AgentState(x=box.midpoint(), z=np.zeros(m), lam=np.zeros(m))
                for box in game.local_sets
            ]
        self.states: List[AgentState] = list(initial_states)
        self.k = 0
        self._noise_sum = 0.0

    def draw_samples(self) -> List[Any]:
        """One fresh i.i.d. sample per agent from the per-agent streams."""
        return [self.game.oracle.draw(rng) for rng in self.agent_rngs]

    def sampled_gradients(self, samples: Sequence[Any]) -> List[np.ndarray]:
        X = profile_of(self.states)
        return [
            self.game.oracle.gradient(i, X, samples[i])
            for i in range(self.game.num_agents)
        ]

    def round(self, samples: Optional[Sequence[Any]] = None,
              grads: Optional[Sequence[np.ndarray]] = None) -> None:
        """Advance one synchronous round; draws samples unless provided."""
        if samples is None:
            samples = self.draw_samples()
        if grads is None:
            grads = self.sampled_gradients(samples)
        self.states = [
            agent_update(i, self.states, grads[i], self.game, self.graph,
                         self.schedule, self.k, self.z_update_term)
            for i in range(self.game.num_agents)
        ]
        self.k += 1

    def _check_divergence(self, threshold: float, record_rows) -> None:
        sup = max(
            float(np.max(np.abs(np.concatenate([s.x, s.z, s.lam]))))
            for s in self.states
        )
        if not np.isfinite(sup) or sup > threshold:
            rec = self._record(record_rows, "diverged")
            raise NumericalFailure(f"state norm {sup:.3e} beyond {threshold:.1e}",
                                   self.k, record=rec)

    def _record(self, rows, reason: str) -> "RunRecord":
        arr = np.array(rows, dtype=float) if rows else np.empty((0, len(RUN_COLUMNS)))
        return RunRecord(
            rows=arr,
            final_states=list(self.states),
            iterations=self.k,
            stop_reason=reason,
            meta={
                "seed": self.seed,
                "generator": self.GENERATOR,
                "noise_sq_partial_sum": self._noise_sum,
                "z_update_term": self.z_update_term,
            },
        )

    def run(
        self,
        stop: StopRule,
        reference: Optional[np.ndarray] = None,
        monitor_noise: bool = True,
    ) -> RunRecord:
        """Iterate rounds until the StopRule fires; returns the RunRecord.

        Residuals are computed every `log_interval`-th iteration (and at
        the last one); the row's alpha and eps_min are the schedule
        evaluated at the row's iteration index. `monitor_noise` samples
        the stochastic gradient error against an M-sample average at
        logged iterations and accumulates
        log_interval * alpha^2 * ||error||^2 as a crude integral estimate.
        """
        self._noise_sum = 0.0
        rows: List[List[float]] = []
        reason = "max_iterations"
        while self.k < stop.max_iterations:
            samples = self.draw_samples()
            grads = self.sampled_gradients(samples)
            logged = (self.k + 1) % stop.log_interval == 0 or (self.k + 1) == stop.max_iterations
            if monitor_noise and logged:
                X = profile_of(self.states)
                batch = self.game.oracle.freeze_batch(
                    [self.game.oracle.draw(self.residual_rng)
                     for _ in range(stop.natural_res_samples)]
                )
                err = np.concatenate([
                    grads[i] - self.game.oracle.batch_gradient(i, X, batch)
                    for i in range(self.game.num_agents)
                ])
                alpha_min = float(self.schedule.alpha(self.k).min())
                self._noise_sum += stop.log_interval * alpha_min ** 2 * float(err @ err)
            self.round(samples=samples, grads=grads)
            self._check_divergence(stop.divergence_threshold, rows)
            if logged:
                res = residuals(self.states, self.game, stop.natural_res_samples,
                                self.residual_rng, reference)
                rows.append([
                    float(self.k),
                    float(self.schedule.alpha(self.k).min()),
                    self.schedule.eps_min(self.k),
                    res["consensus_res"],
                    res["feas_res"],
                    res["nat_res"],
                    res["ref_dist"],
                ])
                if (self.k >= stop.min_iterations
                        and res["consensus_res"] <= stop.consensus_tol
                        and res["feas_res"] <= stop.feasibility_tol
                        and res["nat_res"] <= stop.natural_res_tol):
                    reason = "tolerance"
                    break
        return self._record(rows, reason)


def run(
    game: GameSpec,
    graph: MultiplierGraph,
    schedule: StepSchedule,
    seed: int,
    stop: StopRule,
    reference: Optional[np.ndarray] = None,
    z_update_term: str = "lambda_disagreement",
    initial_states: Optional[Sequence[AgentState]] = None,
    monitor_noise: bool = True,
) -> RunRecord:
    """Run the distributed iteration from a fresh solver; see TikhonovSolver.run."""
    solver = TikhonovSolver(game, graph, schedule, seed,
                            z_update_term=z_update_term,
                            initial_states=initial_states)
    return solver.run(stop, reference=reference, monitor_noise=monitor_noise)
