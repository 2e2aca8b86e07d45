"""Experiment pipelines: config ingestion, convergence sweeps, market studies.

A JSON config fully determines every artifact byte: stochastic market
entries and schedule offsets are realized once at load time from the
config seed and frozen into the echo, and every worker seed derives from
the master seed through fixed spawn keys, so results do not depend on
job count or scheduling order.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import ReferenceSolution, solve_reference
from .game import GameSpec, validate_game
from .graph import MultiplierGraph, is_connected
from .market import MarketParams, build_game, realized_outcomes
from .schedule import StepSchedule, validate_schedule
from .solver import RUN_COLUMNS, NumericalFailure, RunRecord, StopRule, TikhonovSolver

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SweepArtifact",
    "StudyArtifact",
    "load_config",
    "resolve_config",
    "run_convergence_sweep",
    "run_market_study",
    "run_single",
    "compute_reference",
    "emit_plot_data",
    "load_artifact",
    "DEFAULT_THETA_GRID",
]

DEFAULT_THETA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

# spawn keys fixing how every derived seed hangs off the master seed
_REF_KEY = 1
_SWEEP_RUN_KEY = 2
_SCHEDULE_KEY = 3
_STUDY_REF_KEY = 4
_OUTCOME_KEY = 5
_SOLVE_KEY = 6

_GRAPH_KINDS = ("ring", "complete", "star")
_SWEEP_AXES = ("none", "a", "eta", "theta")

_DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "out": "runs",
    "graph": "ring",
    "market": {
        "preset": "table2",
        "seed": None,          # falls back to the master seed
        "num_firms": 5,
        "num_areas": 10,
        "noise_sigma": 0.1,
    },
    "schedule": {
        "a": 0.7,
        "b": 0.2,
        "eta": None,           # None: sample per agent from eta_interval
        "eta_interval": [1.0, 100.0],
        "zeta": None,          # None: sample per coordinate from zeta_interval
        "zeta_interval": [1.0, 100.0],
        "gamma": 1.0,
        "nu": 1.0,
        "tau": 1.0,
    },
    "solver": {
        "max_iterations": 200000,
        "consensus_tol": 1e-3,
        "feasibility_tol": 1e-3,
        "natural_res_tol": 1e-2,
        "natural_res_samples": 200,
        "min_iterations": 1000,
        "log_interval": 100,
        "z_update_term": "lambda_disagreement",
    },
    "reference": {
        "samples": 1000,
        "tol": 1e-6,
        "max_iterations": 200000,
    },
    "study": {
        "realizations": 1000,
        "saa_samples": 1000,
    },
    "sweep": {
        "axis": "none",
        "values": [],
        "replications": 10,
    },
}

_MARKET_EXPLICIT_KEYS = ("p_bar", "caps", "beta", "w_low", "w_high", "theta",
                         "C", "K", "noise_sigma")


class ConfigError(ValueError):
    """Config rejected; `errors` lists every problem found, not just the first."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _derived_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved experiment description.

    `resolved` holds plain JSON-compatible values only (lists, numbers,
    strings), including every sampled market entry and schedule offset,
    so it round-trips through the echo and across process boundaries.
    `defaulted` names each field that was filled from defaults.
    """

    resolved: Dict[str, Any]
    defaulted: Tuple[str, ...] = ()
    source: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.resolved["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.resolved["out"])

    def echo(self) -> Dict[str, Any]:
        """The artifact-embedded view: resolved values plus defaulted-field list."""
        return {"resolved": self.resolved, "defaulted": list(self.defaulted)}

    def market_params(self) -> MarketParams:
        mk = self.resolved["market"]
        return MarketParams(
            p_bar=float(mk["p_bar"]),
            caps=np.asarray(mk["caps"], dtype=float),
            beta=float(mk["beta"]),
            w_low=float(mk["w_low"]),
            w_high=np.asarray(mk["w_high"], dtype=float),
            theta=np.asarray(mk["theta"], dtype=float),
            C=np.asarray(mk["C"], dtype=float),
            K=np.asarray(mk["K"], dtype=float),
            noise_sigma=float(mk["noise_sigma"]),
        )

    def build_game(self, params: Optional[MarketParams] = None) -> GameSpec:
        return build_game(params if params is not None else self.market_params())

    def build_graph(self) -> MultiplierGraph:
        kind = self.resolved["graph"]
        n = len(self.resolved["market"]["theta"])
        return getattr(MultiplierGraph, kind)(n)

    def build_schedule(self, a: Optional[float] = None,
                       eta: Optional[float] = None) -> StepSchedule:
        """Schedule from the frozen offsets; `a` or `eta` override sweep axes."""
        sc = self.resolved["schedule"]
        n_agents = len(self.resolved["market"]["theta"])
        eta_arr = (np.full(n_agents, float(eta)) if eta is not None
                   else np.asarray(sc["eta"], dtype=float))
        return StepSchedule(
            a=float(a if a is not None else sc["a"]),
            b=float(sc["b"]),
            eta=eta_arr,
            zeta=np.asarray(sc["zeta"], dtype=float),
            gamma=np.full(n_agents, float(sc["gamma"])),
            nu=np.full(n_agents, float(sc["nu"])),
            tau=np.full(n_agents, float(sc["tau"])),
            dim_local=len(self.resolved["market"]["caps"]),
            dim_coupling=len(self.resolved["market"]["caps"]),
        )

    def stop_rule(self) -> StopRule:
        sv = self.resolved["solver"]
        return StopRule(
            max_iterations=sv["max_iterations"],
            consensus_tol=sv["consensus_tol"],
            feasibility_tol=sv["feasibility_tol"],
            natural_res_tol=sv["natural_res_tol"],
            natural_res_samples=sv["natural_res_samples"],
            min_iterations=sv["min_iterations"],
            log_interval=sv["log_interval"],
        )


def _merge_section(name: str, raw: Dict[str, Any], defaults: Dict[str, Any],
                   defaulted: List[str], errors: List[str]) -> Dict[str, Any]:
    out = {}
    for key, default in defaults.items():
        if key in raw:
            out[key] = raw[key]
        else:
            out[key] = default
            defaulted.append(f"{name}.{key}")
    for key in raw:
        if key not in defaults:
            errors.append(f"{name}: unknown key {key!r}")
    return out


def _check_positive_int(section: str, cfg: Dict[str, Any], key: str,
                        errors: List[str]) -> None:
    v = cfg.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        errors.append(f"{section}.{key}: expected integer >= 1, got {v!r}")


def _check_positive(section: str, cfg: Dict[str, Any], key: str,
                    errors: List[str]) -> None:
    v = cfg.get(key)
    if not _is_number(v) or v <= 0:
        errors.append(f"{section}.{key}: expected a number > 0, got {v!r}")


def _resolve_market(raw: Any, master_seed: int, defaulted: List[str],
                    errors: List[str]) -> Optional[Dict[str, Any]]:
    errs: List[str] = []
    if raw is None:
        raw = {}
        defaulted.append("market")
    if not isinstance(raw, dict):
        errors.append(f"market: expected an object, got {type(raw).__name__}")
        return None
    explicit = [k for k in _MARKET_EXPLICIT_KEYS if k != "noise_sigma" and k in raw]
    if explicit and "preset" in raw:
        errors.append("market: give either a preset or explicit entries, not both")
        return None
    if explicit:
        missing = [k for k in _MARKET_EXPLICIT_KEYS
                   if k not in raw and k != "noise_sigma"]
        if missing:
            errors.append(f"market: explicit form is missing {missing}")
            return None
        for key in raw:
            if key not in _MARKET_EXPLICIT_KEYS:
                errs.append(f"market: unknown key {key!r}")
        mk = {k: raw[k] for k in _MARKET_EXPLICIT_KEYS if k in raw}
        if "noise_sigma" not in mk:
            mk["noise_sigma"] = _DEFAULTS["market"]["noise_sigma"]
            defaulted.append("market.noise_sigma")
        try:
            params = MarketParams(
                p_bar=float(mk["p_bar"]),
                caps=np.asarray(mk["caps"], dtype=float),
                beta=float(mk["beta"]),
                w_low=float(mk["w_low"]),
                w_high=np.asarray(mk["w_high"], dtype=float),
                theta=np.asarray(mk["theta"], dtype=float),
                C=np.asarray(mk["C"], dtype=float),
                K=np.asarray(mk["K"], dtype=float),
                noise_sigma=float(mk["noise_sigma"]),
            )
        except (TypeError, ValueError) as exc:
            errors.extend(errs + [f"market: {exc}"])
            return None
    else:
        sect = _merge_section("market", raw, _DEFAULTS["market"], defaulted, errs)
        if sect["preset"] != "table2":
            errors.extend(errs + [f"market.preset: unknown preset {sect['preset']!r}"])
            return None
        if sect["seed"] is None:
            sect["seed"] = master_seed
        _check_positive_int("market", sect, "num_firms", errs)
        _check_positive_int("market", sect, "num_areas", errs)
        if errs:
            errors.extend(errs)
            return None
        params = MarketParams.table2(seed=sect["seed"],
                                     num_firms=sect["num_firms"],
                                     num_areas=sect["num_areas"],
                                     noise_sigma=sect["noise_sigma"])
    problems = params.problems()
    if errs or problems:
        errors.extend(errs)
        errors.extend(f"market: {p}" for p in problems)
        return None
    resolved = {
        "p_bar": float(params.p_bar),
        "caps": params.caps.tolist(),
        "beta": params.beta,
        "w_low": params.w_low,
        "w_high": params.w_high.tolist(),
        "theta": params.theta.tolist(),
        "C": params.C.tolist(),
        "K": params.K.tolist(),
        "noise_sigma": params.noise_sigma,
    }
    if not explicit:
        resolved["preset"] = "table2"
        resolved["preset_seed"] = sect["seed"]
    return resolved


def _resolve_schedule(raw: Any, n_agents: int, total_dim: int,
                      master_seed: int, defaulted: List[str],
                      errors: List[str]) -> Optional[Dict[str, Any]]:
    errs: List[str] = []
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"schedule: expected an object, got {type(raw).__name__}")
        return None
    sc = _merge_section("schedule", raw, _DEFAULTS["schedule"], defaulted, errs)
    for key in ("a", "b"):
        if not _is_number(sc[key]):
            errors.extend(errs + [f"schedule.{key}: expected a number, "
                                  f"got {sc[key]!r}"])
            return None
    if not validate_schedule(sc["a"], sc["b"]):
        errs.append(
            "schedule: decay exponents must satisfy 0 < b < a and a + b < 1, "
            f"got a={sc['a']}, b={sc['b']}")
    for key in ("gamma", "nu", "tau"):
        _check_positive("schedule", sc, key, errs)
    rng = np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(_SCHEDULE_KEY,)))

    def offsets(key: str, count: int) -> Optional[List[float]]:
        fixed = sc[key]
        interval = sc[f"{key}_interval"]
        if (not isinstance(interval, (list, tuple)) or len(interval) != 2
                or not all(_is_number(v) for v in interval)
                or not 0 < interval[0] <= interval[1]):
            errs.append(f"schedule.{key}_interval: expected [lo, hi] with "
                        f"0 < lo <= hi, got {interval!r}")
            return None
        if fixed is None:
            return rng.uniform(interval[0], interval[1], count).tolist()
        if _is_number(fixed):
            if fixed <= 0:
                errs.append(f"schedule.{key}: offset must be > 0, got {fixed!r}")
                return None
            return [float(fixed)] * count
        if isinstance(fixed, list) and len(fixed) == count \
                and all(_is_number(v) and v > 0 for v in fixed):
            return [float(v) for v in fixed]
        errs.append(f"schedule.{key}: expected null, a positive number, or "
                    f"a list of {count} positive numbers")
        return None

    # fixed draw order: all eta_i first, then all zeta_j
    eta = offsets("eta", n_agents)
    zeta = offsets("zeta", total_dim)
    if eta is None or zeta is None or errs:
        errors.extend(errs)
        return None
    return {"a": sc["a"], "b": sc["b"], "eta": eta, "zeta": zeta,
            "eta_interval": list(sc["eta_interval"]),
            "zeta_interval": list(sc["zeta_interval"]),
            "gamma": sc["gamma"], "nu": sc["nu"], "tau": sc["tau"]}


def resolve_config(raw: Dict[str, Any], seed_override: Optional[int] = None,
                   out_override: Optional[str] = None) -> ExperimentConfig:
    """Fill defaults, realize all sampled entries, and validate exhaustively.

    Raises ConfigError listing every violation found. `seed_override` and
    `out_override` replace the config's seed/out before resolution, so an
    override reseeds the market draw and schedule offsets too.
    """
    if not isinstance(raw, dict):
        raise ConfigError([f"top level: expected an object, got {type(raw).__name__}"])
    errors: List[str] = []
    defaulted: List[str] = []
    known_top = set(_DEFAULTS)
    for key in raw:
        if key not in known_top:
            errors.append(f"top level: unknown key {key!r}")

    seed = raw.get("seed", None)
    if seed_override is not None:
        seed = seed_override
    elif seed is None:
        seed = _DEFAULTS["seed"]
        defaulted.append("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(f"seed: expected integer >= 0, got {seed!r}")
        raise ConfigError(errors)

    out = raw.get("out", None)
    if out_override is not None:
        out = out_override
    elif out is None:
        out = _DEFAULTS["out"]
        defaulted.append("out")
    if not isinstance(out, str) or not out:
        errors.append(f"out: expected a non-empty path string, got {out!r}")

    graph = raw.get("graph", None)
    if graph is None:
        graph = _DEFAULTS["graph"]
        defaulted.append("graph")
    if graph not in _GRAPH_KINDS:
        errors.append(f"graph: expected one of {list(_GRAPH_KINDS)}, got {graph!r}")

    market = _resolve_market(raw.get("market"), seed, defaulted, errors)

    def section(name: str) -> Dict[str, Any]:
        sect = raw.get(name)
        if sect is None:
            return {}
        if not isinstance(sect, dict):
            errors.append(f"{name}: expected an object, got {type(sect).__name__}")
            return {}
        return sect

    solver = _merge_section("solver", section("solver"),
                            _DEFAULTS["solver"], defaulted, errors)
    for key in ("max_iterations", "natural_res_samples", "min_iterations",
                "log_interval"):
        _check_positive_int("solver", solver, key, errors)
    for key in ("consensus_tol", "feasibility_tol", "natural_res_tol"):
        _check_positive("solver", solver, key, errors)
    if isinstance(solver["max_iterations"], int) \
            and isinstance(solver["min_iterations"], int) \
            and solver["min_iterations"] > solver["max_iterations"]:
        errors.append("solver: min_iterations exceeds max_iterations")
    if solver["z_update_term"] not in ("lambda_disagreement", "z_disagreement"):
        errors.append("solver.z_update_term: expected 'lambda_disagreement' or "
                      f"'z_disagreement', got {solver['z_update_term']!r}")

    reference = _merge_section("reference", section("reference"),
                               _DEFAULTS["reference"], defaulted, errors)
    _check_positive_int("reference", reference, "samples", errors)
    _check_positive_int("reference", reference, "max_iterations", errors)
    _check_positive("reference", reference, "tol", errors)

    study = _merge_section("study", section("study"),
                           _DEFAULTS["study"], defaulted, errors)
    _check_positive_int("study", study, "realizations", errors)
    _check_positive_int("study", study, "saa_samples", errors)

    sweep = _merge_section("sweep", section("sweep"),
                           _DEFAULTS["sweep"], defaulted, errors)
    axis = sweep["axis"]
    if axis not in _SWEEP_AXES:
        errors.append(f"sweep.axis: expected one of {list(_SWEEP_AXES)}, got {axis!r}")
    values = sweep["values"]
    if not isinstance(values, list) or not all(_is_number(v) for v in values):
        errors.append(f"sweep.values: expected a list of numbers, got {values!r}")
    elif axis != "none":
        if not values:
            errors.append(f"sweep.values: must be nonempty for axis {axis!r}")
        elif axis == "a":
            b_conf = section("schedule").get("b", _DEFAULTS["schedule"]["b"])
            bad = [v for v in values
                   if not _is_number(b_conf) or not validate_schedule(v, b_conf)]
            if bad:
                errors.append(f"sweep.values: exponents {bad} break "
                              "0 < b < a and a + b < 1 against the configured b")
        elif axis == "eta" and any(v <= 0 for v in values):
            errors.append("sweep.values: step offsets must be > 0")
        elif axis == "theta" and any(not 0 <= v <= 1 for v in values):
            errors.append("sweep.values: substitutability values must lie in [0, 1]")
    _check_positive_int("sweep", sweep, "replications", errors)

    schedule = None
    if market is not None:
        n_agents = len(market["theta"])
        n_local = len(market["caps"])
        n_coupling = len(market["caps"])
        total_dim = n_agents * n_local + 2 * n_agents * n_coupling
        schedule = _resolve_schedule(raw.get("schedule"), n_agents,
                                     total_dim, seed, defaulted, errors)
    if errors or market is None or schedule is None:
        raise ConfigError(errors if errors else ["config resolution failed"])

    resolved = {"seed": seed, "out": out, "graph": graph, "market": market,
                "schedule": schedule, "solver": solver, "reference": reference,
                "study": study, "sweep": {"axis": axis, "values": list(values),
                                          "replications": sweep["replications"]}}
    cfg = ExperimentConfig(resolved=resolved, defaulted=tuple(defaulted))

    # structural checks on the built objects; collect everything found
    report = validate_game(cfg.build_game())
    if not report.ok:
        errors.extend(line for line in report.lines() if line.startswith("[FAIL]"))
    if not is_connected(cfg.build_graph()):
        errors.append(f"graph: {graph!r} is not connected for this agent count")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, seed_override: Optional[int] = None,
                out_override: Optional[str] = None) -> ExperimentConfig:
    """Parse a JSON config file; see `resolve_config` for semantics.

    Parse failures carry file, line, and column. An absent file is a
    ConfigError too, so the CLI reports it uniformly.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError([f"{p}: no such config file"])
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            [f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc
    cfg = resolve_config(raw, seed_override=seed_override,
                         out_override=out_override)
    return ExperimentConfig(resolved=cfg.resolved, defaulted=cfg.defaulted,
                            source=str(p))


# ---------------------------------------------------------------------------
# pipeline operations


@dataclass(frozen=True)
class SweepArtifact:
    """Aggregated convergence curves for one sweep axis.

    curves[i] belongs to values[i] and holds equal-length lists k, mean,
    lo, hi (mean and min/max envelope of the relative reference distance
    across completing replications). Diverged replications are excluded
    from the curves and listed in `divergences`.
    """

    axis: str
    values: List[float]
    replications: int
    curves: List[Dict[str, List[float]]]
    finals: List[Dict[str, Any]]
    divergences: List[Dict[str, Any]]
    config_echo: Dict[str, Any]
    kind: str = "sweep"

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "axis": self.axis, "values": self.values,
            "replications": self.replications, "curves": self.curves,
            "finals": self.finals, "divergences": self.divergences,
            "config_echo": self.config_echo}, sort_keys=True, indent=2)


@dataclass(frozen=True)
class StudyArtifact:
    """Per-theta equilibrium outcomes for the market study.

    profit rows: (theta, firm_id, mean_ratio, stderr); satisfaction rows:
    (theta, area_id, mean_satisfaction, stderr). Solves that failed to
    certify are listed in `flagged` and contribute no rows.
    """

    theta_values: List[float]
    profit: List[List[float]]
    satisfaction: List[List[float]]
    equilibria: List[Dict[str, Any]]
    flagged: List[Dict[str, Any]]
    config_echo: Dict[str, Any]
    kind: str = "study"

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "theta_values": self.theta_values,
            "profit": self.profit, "satisfaction": self.satisfaction,
            "equilibria": self.equilibria, "flagged": self.flagged,
            "config_echo": self.config_echo}, sort_keys=True, indent=2)


def compute_reference(config: ExperimentConfig,
                      params: Optional[MarketParams] = None,
                      seed_key: Tuple[int, ...] = (_REF_KEY,)) -> ReferenceSolution:
    """Centralized solution for the configured market (or a theta variant)."""
    rf = config.resolved["reference"]
    game = config.build_game(params)
    return solve_reference(game, M=rf["samples"],
                           seed=_derived_seed(config.seed, *seed_key),
                           tol=rf["tol"], max_iterations=rf["max_iterations"])


def run_single(config: ExperimentConfig,
               reference: Optional[ReferenceSolution] = None) -> RunRecord:
    """One distributed run under the configured schedule and budget."""
    solver = TikhonovSolver(
        config.build_game(), config.build_graph(), config.build_schedule(),
        seed=_derived_seed(config.seed, _SOLVE_KEY),
        z_update_term=config.resolved["solver"]["z_update_term"])
    ref = reference.x_star if reference is not None else None
    return solver.run(config.stop_rule(), reference=ref)


def _sweep_task(payload: Dict[str, Any]) -> Dict[str, Any]:
    """One replication of one sweep value; returns plain JSON-able rows."""
    config = ExperimentConfig(resolved=payload["resolved"])
    axis, value = payload["axis"], payload["value"]
    schedule = config.build_schedule(a=value if axis == "a" else None,
                                     eta=value if axis == "eta" else None)
    seed = _derived_seed(config.seed, _SWEEP_RUN_KEY,
                         payload["value_index"], payload["replication"])
    solver = TikhonovSolver(
        config.build_game(), config.build_graph(), schedule, seed=seed,
        z_update_term=config.resolved["solver"]["z_update_term"])
    reference = np.asarray(payload["x_star"], dtype=float)
    out = {"value_index": payload["value_index"],
           "replication": payload["replication"]}
    try:
        record = solver.run(config.stop_rule(), reference=reference)
    except NumericalFailure as exc:
        rows = exc.record.rows.tolist() if exc.record is not None else []
        out.update(diverged=True, message=str(exc), iteration=exc.iteration,
                   rows=rows, stop_reason="diverged")
        return out
    out.update(diverged=False, rows=record.rows.tolist(),
               iteration=record.iterations, stop_reason=record.stop_reason)
    return out


def _run_tasks(worker, payloads: List[Dict[str, Any]], jobs: int) -> List[Dict[str, Any]]:
    if jobs <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


def run_convergence_sweep(config: ExperimentConfig, jobs: int = 1,
                          reference: Optional[ReferenceSolution] = None) -> SweepArtifact:
    """Replicated distributed runs across the configured sweep axis.

    Runs R replications per value with seeds derived from (value index,
    replication), aggregates the logged relative reference distance into
    mean and min/max envelope curves on the shared logging grid, and
    records diverged replications without aborting the sweep.
    """
    axis = config.resolved["sweep"]["axis"]
    if axis not in ("a", "eta"):
        raise ConfigError([f"sweep.axis: convergence sweep needs 'a' or 'eta', "
                           f"got {axis!r}"])
    values = [float(v) for v in config.resolved["sweep"]["values"]]
    reps = config.resolved["sweep"]["replications"]
    if reference is None:
        reference = compute_reference(config)
    payloads = [{"resolved": config.resolved, "axis": axis, "value": v,
                 "value_index": vi, "replication": r,
                 "x_star": reference.x_star.tolist()}
                for vi, v in enumerate(values) for r in range(reps)]
    results = _run_tasks(_sweep_task, payloads, jobs)
    by_key = {(res["value_index"], res["replication"]): res for res in results}

    ref_col = RUN_COLUMNS.index("ref_dist")
    k_col = RUN_COLUMNS.index("k")
    curves: List[Dict[str, List[float]]] = []
    finals: List[Dict[str, Any]] = []
    divergences: List[Dict[str, Any]] = []
    for vi, value in enumerate(values):
        completed = []
        for r in range(reps):
            res = by_key[(vi, r)]
            rows = np.asarray(res["rows"], dtype=float).reshape(-1, len(RUN_COLUMNS))
            if res["diverged"]:
                divergences.append({"value": value, "replication": r,
                                    "iteration": res["iteration"],
                                    "message": res["message"]})
                continue
            completed.append(rows)
            last = rows[-1]
            finals.append({"value": value, "replication": r,
                           "iterations": res["iteration"],
                           "stop_reason": res["stop_reason"],
                           "consensus_res": last[RUN_COLUMNS.index("consensus_res")],
                           "feas_res": last[RUN_COLUMNS.index("feas_res")],
                           "nat_res": last[RUN_COLUMNS.index("nat_res")],
                           "ref_dist": last[ref_col]})
        if completed:
            # identical budgets and log grids across replications
            ks = completed[0][:, k_col]
            dists = np.stack([rows[:, ref_col] for rows in completed])
            curves.append({"k": ks.tolist(),
                           "mean": dists.mean(axis=0).tolist(),
                           "lo": dists.min(axis=0).tolist(),
                           "hi": dists.max(axis=0).tolist()})
        else:
            curves.append({"k": [], "mean": [], "lo": [], "hi": []})
    return SweepArtifact(axis=axis, values=values, replications=reps,
                         curves=curves, finals=finals, divergences=divergences,
                         config_echo=config.echo())


def _study_task(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Equilibrium plus realized outcomes for one theta value."""
    config = ExperimentConfig(resolved=payload["resolved"])
    ti, theta = payload["theta_index"], payload["theta"]
    params = config.market_params().with_uniform_theta(theta)
    out: Dict[str, Any] = {"theta_index": ti, "theta": theta}
    try:
        ref = compute_reference(config, params=params,
                                seed_key=(_STUDY_REF_KEY, ti))
    except (ValueError, NumericalFailure) as exc:
        out.update(failed=True, message=str(exc))
        return out
    if not ref.certificate.converged:
        out.update(failed=True,
                   message=("reference residual "
                            f"{ref.certificate.natural_residual:.3e} above "
                            "tolerance"))
        return out
    st = config.resolved["study"]
    outcomes = realized_outcomes(
        ref.x_star, realizations=st["realizations"],
        seed=_derived_seed(config.seed, _OUTCOME_KEY, ti),
        params=params, saa_samples=st["saa_samples"])
    out.update(
        failed=False,
        x_star=ref.x_star.tolist(),
        lambda_star=ref.lambda_star.tolist(),
        residual=ref.certificate.natural_residual,
        profit_mean=outcomes.profit_ratio_mean.tolist(),
        profit_stderr=outcomes.profit_ratio_stderr.tolist(),
        satisfaction_mean=outcomes.satisfaction_mean.tolist(),
        satisfaction_stderr=outcomes.satisfaction_stderr.tolist())
    return out


def run_market_study(config: ExperimentConfig, jobs: int = 1) -> StudyArtifact:
    """Equilibrium outcomes across a substitutability grid.

    Each theta is applied uniformly to all firms; the equilibrium comes
    from the certified centralized solver and is then evaluated under
    the configured number of participation realizations. A theta whose
    solve fails is flagged and skipped, not fatal.
    """
    if config.resolved["sweep"]["axis"] == "theta":
        thetas = [float(v) for v in config.resolved["sweep"]["values"]]
    else:
        thetas = list(DEFAULT_THETA_GRID)
    payloads = [{"resolved": config.resolved, "theta_index": ti, "theta": t}
                for ti, t in enumerate(thetas)]
    results = _run_tasks(_study_task, payloads, jobs)
    results.sort(key=lambda res: res["theta_index"])

    profit: List[List[float]] = []
    satisfaction: List[List[float]] = []
    equilibria: List[Dict[str, Any]] = []
    flagged: List[Dict[str, Any]] = []
    for res in results:
        theta = res["theta"]
        if res["failed"]:
            flagged.append({"theta": theta, "message": res["message"]})
            continue
        equilibria.append({"theta": theta, "x_star": res["x_star"],
                           "lambda_star": res["lambda_star"],
                           "residual": res["residual"]})
        for i, (mean, err) in enumerate(zip(res["profit_mean"],
                                            res["profit_stderr"])):
            profit.append([theta, float(i), mean, err])
        for h, (mean, err) in enumerate(zip(res["satisfaction_mean"],
                                            res["satisfaction_stderr"])):
            satisfaction.append([theta, float(h), mean, err])
    return StudyArtifact(theta_values=thetas, profit=profit,
                         satisfaction=satisfaction, equilibria=equilibria,
                         flagged=flagged, config_echo=config.echo())


# ---------------------------------------------------------------------------
# artifact files


def _write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]],
                 delim: str) -> Path:
    lines = [delim.join(header)]
    for row in rows:
        lines.append(delim.join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_plot_data(artifact, out_dir) -> List[Path]:
    """Write tab-separated plot data for a sweep or study artifact.

    One header line then numeric rows; identical artifacts produce
    byte-identical files. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    if isinstance(artifact, SweepArtifact):
        rows = []
        for value, curve in zip(artifact.values, artifact.curves):
            for k, mean, lo, hi in zip(curve["k"], curve["mean"],
                                       curve["lo"], curve["hi"]):
                rows.append([value, k, mean, lo, hi])
        written.append(_write_table(
            out / f"sweep_{artifact.axis}.tsv",
            (artifact.axis, "k", "mean_ref_dist", "min_ref_dist", "max_ref_dist"),
            rows, "\t"))
    elif isinstance(artifact, StudyArtifact):
        written.append(_write_table(
            out / "profit_ratio.tsv",
            ("theta", "firm_id", "mean_ratio", "stderr"),
            artifact.profit, "\t"))
        written.append(_write_table(
            out / "satisfaction.tsv",
            ("theta", "area_id", "mean_satisfaction", "stderr"),
            artifact.satisfaction, "\t"))
    else:
        raise TypeError(f"cannot emit plot data for {type(artifact).__name__}")
    return written


def write_sweep_csvs(artifact: SweepArtifact, out_dir) -> List[Path]:
    """One comma-separated curve file per sweep value."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for value, curve in zip(artifact.values, artifact.curves):
        rows = list(zip(curve["k"], curve["mean"], curve["lo"], curve["hi"]))
        written.append(_write_table(
            out / f"value_{value!r}.csv",
            ("k", "mean_ref_dist", "min_ref_dist", "max_ref_dist"), rows, ","))
    return written


def load_artifact(path):
    """Rehydrate a sweep or study artifact from its JSON file."""
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind")
    if kind == "sweep":
        return SweepArtifact(axis=doc["axis"], values=doc["values"],
                             replications=doc["replications"],
                             curves=doc["curves"], finals=doc["finals"],
                             divergences=doc["divergences"],
                             config_echo=doc["config_echo"])
    if kind == "study":
        return StudyArtifact(theta_values=doc["theta_values"],
                             profit=doc["profit"],
                             satisfaction=doc["satisfaction"],
                             equilibria=doc["equilibria"],
                             flagged=doc["flagged"],
                             config_echo=doc["config_echo"])
    raise ValueError(f"{path}: unknown artifact kind {kind!r}")
