"""K-sweep experiments: baselines, sweeps, Pareto sets and case ensembles."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from feedersim.control import ControlConfig, apply_control, resolve_config
from feedersim.model import Feeder, ValidationError, build_topology, case_spec, populate_loads_and_pv
from feedersim.powerflow import DivergenceError, losses, max_voltage_deviation, solve

DEFAULT_K_MIN = -5.0
DEFAULT_K_MAX = 10.0
DEFAULT_STEPS = 301
DEFAULT_N_SEEDS = 20
GOLDEN_TOPOLOGY_SEED = 0
GOLDEN_LOAD_SEED = 0  # ensemble members use load seeds GOLDEN_LOAD_SEED + i

# Published per-case figures: baseline delta_v, baseline losses (W), lowest relative losses.
REFERENCE = {
    1: {"delta_v0": 0.059, "L0_w": 7840.0, "min_rel_losses": 0.93},
    2: {"delta_v0": 0.014, "L0_w": 330.0, "min_rel_losses": 0.67},
    3: {"delta_v0": 0.048, "L0_w": 4660.0, "min_rel_losses": 0.86},
    4: {"delta_v0": 0.014, "L0_w": 1890.0, "min_rel_losses": 0.94},
}
BASELINE_REL_TOL = 0.20
MIN_REL_LOSSES_ABS_TOL = 0.05

SWEEP_CSV_HEADER = "k,losses_w,rel_losses,delta_v,pareto"


def evaluate(feeder: Feeder, cfg: ControlConfig, model: str = "linear") -> tuple[float, float]:
    """Losses (W) and max per-unit voltage deviation under ``cfg``."""
    sol = solve(feeder, apply_control(feeder, cfg), model)
    return losses(sol, feeder), max_voltage_deviation(sol)


@dataclass(frozen=True)
class SweepPoint:
    K: float
    losses: float
    rel_losses: float
    delta_v: float
    valid: bool = True
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    case: str  # "1".."4" or "custom"
    topology_seed: int | None
    load_seed: int | str | None
    coeff_mode: str
    L0: float
    delta_v0: float
    points: tuple[SweepPoint, ...]
    pareto: tuple[int, ...]

    @property
    def feeder_id(self) -> str:
        return f"case={self.case};seeds={self.topology_seed},{self.load_seed}"

    @property
    def k(self) -> np.ndarray:
        return np.array([p.K for p in self.points])

    def _valid_argmin(self, attr: str) -> int:
        vals = np.array([getattr(p, attr) if p.valid else np.inf for p in self.points])
        if not np.any(np.isfinite(vals)):
            raise ValueError("sweep has no valid points")
        return int(np.argmin(vals))

    @property
    def best_loss_point(self) -> SweepPoint:
        return self.points[self._valid_argmin("rel_losses")]

    @property
    def best_voltage_point(self) -> SweepPoint:
        return self.points[self._valid_argmin("delta_v")]


def _relative(loss: float, base: float) -> float:
    if base == 0:
        return 1.0 if loss == 0 else math.inf
    return loss / base


def pareto_front(points) -> list[int]:
    """Indices of points not dominated in the (rel_losses, delta_v) plane.

    Minimization in both coordinates.  Points flagged invalid never enter the
    front.  Sorts by the first objective and sweeps the running minimum of the
    second; ties on the first objective are handled group-wise so that equal
    points do not knock each other out.  Result is ordered by K.
    """
    pts = [(i, p) for i, p in enumerate(points) if getattr(p, "valid", True)]
    if not pts:
        return []
    pts.sort(key=lambda ip: (ip[1].rel_losses, ip[1].delta_v))
    front = []
    best_before = math.inf  # min delta_v among strictly smaller rel_losses
    g = 0
    while g < len(pts):
        h = g
        while h < len(pts) and pts[h][1].rel_losses == pts[g][1].rel_losses:
            h += 1
        group_min = pts[g][1].delta_v
        for i, p in pts[g:h]:
            if not (best_before <= p.delta_v or group_min < p.delta_v):
                front.append(i)
        best_before = min(best_before, group_min)
        g = h
    return sorted(front, key=lambda i: (points[i].K, i))


def k_grid(k_min: float, k_max: float, steps: int) -> np.ndarray:
    if steps < 2:
        raise ValidationError("steps must be at least 2")
    if not k_min < k_max:
        raise ValidationError("k_min must be below k_max")
    # rounding keeps grid values like 0.3 readable in CSV output
    return np.round(np.linspace(k_min, k_max, steps), 12)


def sweep_grid(
    feeder: Feeder,
    ks,
    cfg_base: ControlConfig | None = None,
    model: str = "linear",
    case: str = "custom",
) -> SweepResult:
    """Baseline once, then the hybrid law at each K in ``ks``."""
    cfg_base = cfg_base or ControlConfig()
    L0, dv0 = evaluate(feeder, cfg_base.replace(scheme="none"), model)
    cfg = resolve_config(feeder, cfg_base.replace(scheme="hybrid"))
    points = []
    for K in ks:
        K = float(K)
        try:
            loss, dv = evaluate(feeder, cfg.replace(K=K), model)
        except DivergenceError as exc:
            points.append(SweepPoint(K, math.nan, math.nan, math.nan, valid=False, error=str(exc)))
            continue
        points.append(SweepPoint(K, loss, _relative(loss, L0), dv))
    return SweepResult(
        case=case,
        topology_seed=feeder.topology_seed,
        load_seed=feeder.load_seed,
        coeff_mode=cfg.coeff_mode,
        L0=L0,
        delta_v0=dv0,
        points=tuple(points),
        pareto=tuple(pareto_front(points)),
    )


def sweep_k(
    feeder: Feeder,
    k_min: float = DEFAULT_K_MIN,
    k_max: float = DEFAULT_K_MAX,
    steps: int = DEFAULT_STEPS,
    cfg_base: ControlConfig | None = None,
    model: str = "linear",
    case: str = "custom",
) -> SweepResult:
    return sweep_grid(feeder, k_grid(k_min, k_max, steps), cfg_base, model, case)


def refine_sweep(
    feeder: Feeder,
    coarse: SweepResult,
    cfg_base: ControlConfig | None = None,
    factor: int = 10,
    model: str = "linear",
) -> SweepResult:
    """Re-sweep around the coarse loss minimum at ``factor`` times the resolution."""
    return sweep_grid(feeder, refine_grid(coarse, factor), cfg_base, model, coarse.case)


def refine_grid(coarse: SweepResult, factor: int = 10) -> np.ndarray:
    """K values spanning one coarse step either side of the coarse loss minimum."""
    ks = coarse.k
    step = float(ks[1] - ks[0])
    center = coarse.best_loss_point.K
    return np.round(np.linspace(center - step, center + step, 2 * factor + 1), 12)


def aggregate_sweeps(results: list[SweepResult]) -> SweepResult:
    """Ensemble-mean sweep over realizations sharing one K grid.

    Means are taken over valid points only; a K where every member failed
    stays invalid.
    """
    if not results:
        raise ValueError("nothing to aggregate")
    ks = results[0].k
    for r in results[1:]:
        if not np.array_equal(r.k, ks):
            raise ValueError("sweeps use different K grids")
    points = []
    for i, K in enumerate(ks):
        members = [r.points[i] for r in results if r.points[i].valid]
        if not members:
            points.append(SweepPoint(float(K), math.nan, math.nan, math.nan, valid=False, error="no valid member"))
            continue
        points.append(
            SweepPoint(
                float(K),
                float(np.mean([p.losses for p in members])),
                float(np.mean([p.rel_losses for p in members])),
                float(np.mean([p.delta_v for p in members])),
            )
        )
    load_seeds = [r.load_seed for r in results]
    return SweepResult(
        case=results[0].case,
        topology_seed=results[0].topology_seed,
        load_seed=f"{load_seeds[0]}..{load_seeds[-1]}" if len(load_seeds) > 1 else load_seeds[0],
        coeff_mode=results[0].coeff_mode,
        L0=float(np.mean([r.L0 for r in results])),
        delta_v0=float(np.mean([r.delta_v0 for r in results])),
        points=tuple(points),
        pareto=tuple(pareto_front(points)),
    )


def pareto_k_span(result: SweepResult) -> float:
    ks = [result.points[i].K for i in result.pareto]
    return max(ks) - min(ks) if ks else 0.0


@dataclass(frozen=True)
class CaseStats:
    """Ensemble summary for one case and one coefficient mode.

    ``mean_*``/``std_*`` are over per-realization quantities (std is the
    sample standard deviation, ``None`` for a single realization).
    ``curve_*`` fields are read off the ensemble-mean sweep curve.
    """

    case_id: int
    coeff_mode: str
    model: str
    n_seeds: int
    topology_seed: int
    load_seeds: list[int]
    steps: int
    k_min: float
    k_max: float
    mean_L0: float
    std_L0: float | None
    mean_delta_v0: float
    std_delta_v0: float | None
    mean_min_rel_losses: float
    std_min_rel_losses: float | None
    mean_min_delta_v: float
    std_min_delta_v: float | None
    mean_argmin_k_losses: float
    std_argmin_k_losses: float | None
    mean_argmin_k_delta_v: float
    std_argmin_k_delta_v: float | None
    curve_min_rel_losses: float
    curve_argmin_k_losses: float
    curve_min_delta_v: float
    curve_argmin_k_delta_v: float
    curve_pareto_k: list[float] = field(default_factory=list)

    @property
    def std_defined(self) -> bool:
        return self.n_seeds > 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["std_defined"] = self.std_defined
        return d


def _mean_std(values) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else None
    return float(np.mean(arr)), std


def run_case_sweeps(
    case_id: int,
    n_seeds: int = DEFAULT_N_SEEDS,
    steps: int = DEFAULT_STEPS,
    coeff_mode: str = "paper_literal",
    topology_seed: int = GOLDEN_TOPOLOGY_SEED,
    load_seed: int = GOLDEN_LOAD_SEED,
    k_min: float = DEFAULT_K_MIN,
    k_max: float = DEFAULT_K_MAX,
    model: str = "linear",
) -> list[SweepResult]:
    """One fixed topology, ``n_seeds`` load/PV draws (load seeds ``load_seed + i``), one sweep each."""
    if n_seeds < 1:
        raise ValidationError("n_seeds must be at least 1")
    topology = build_topology(case_spec(case_id, topology_seed=topology_seed))
    cfg = ControlConfig(scheme="hybrid", coeff_mode=coeff_mode)
    results = []
    for i in range(n_seeds):
        spec = case_spec(case_id, topology_seed=topology_seed, load_seed=load_seed + i)
        feeder = populate_loads_and_pv(topology, spec)
        results.append(sweep_k(feeder, k_min, k_max, steps, cfg, model, case=str(case_id)))
    return results


def case_stats(case_id: int, sweeps: list[SweepResult], model: str = "linear") -> CaseStats:
    agg = aggregate_sweeps(sweeps)
    best_l = [s.best_loss_point for s in sweeps]
    best_v = [s.best_voltage_point for s in sweeps]
    L0 = _mean_std([s.L0 for s in sweeps])
    dv0 = _mean_std([s.delta_v0 for s in sweeps])
    min_rel = _mean_std([p.rel_losses for p in best_l])
    min_dv = _mean_std([p.delta_v for p in best_v])
    k_l = _mean_std([p.K for p in best_l])
    k_v = _mean_std([p.K for p in best_v])
    ks = sweeps[0].k
    return CaseStats(
        case_id=case_id,
        coeff_mode=sweeps[0].coeff_mode,
        model=model,
        n_seeds=len(sweeps),
        topology_seed=sweeps[0].topology_seed,
        load_seeds=[s.load_seed for s in sweeps],
        steps=len(ks),
        k_min=float(ks[0]),
        k_max=float(ks[-1]),
        mean_L0=L0[0],
        std_L0=L0[1],
        mean_delta_v0=dv0[0],
        std_delta_v0=dv0[1],
        mean_min_rel_losses=min_rel[0],
        std_min_rel_losses=min_rel[1],
        mean_min_delta_v=min_dv[0],
        std_min_delta_v=min_dv[1],
        mean_argmin_k_losses=k_l[0],
        std_argmin_k_losses=k_l[1],
        mean_argmin_k_delta_v=k_v[0],
        std_argmin_k_delta_v=k_v[1],
        curve_min_rel_losses=agg.best_loss_point.rel_losses,
        curve_argmin_k_losses=agg.best_loss_point.K,
        curve_min_delta_v=agg.best_voltage_point.delta_v,
        curve_argmin_k_delta_v=agg.best_voltage_point.K,
        curve_pareto_k=[agg.points[i].K for i in agg.pareto],
    )


def run_case(case_id: int, n_seeds: int = DEFAULT_N_SEEDS, steps: int = DEFAULT_STEPS, **kwargs) -> CaseStats:
    sweeps = run_case_sweeps(case_id, n_seeds=n_seeds, steps=steps, **kwargs)
    return case_stats(case_id, sweeps, model=kwargs.get("model", "linear"))


def check_case(stats: CaseStats) -> list[tuple[str, bool, str]]:
    """Compare ensemble means with the published figures for the case.

    Returns ``(name, ok, detail)`` rows: baseline delta_v and losses within
    a relative 20%, lowest mean relative losses within 0.05 absolute.
    """
    ref = REFERENCE[stats.case_id]
    rows = []
    for name, got, want in (("delta_v0", stats.mean_delta_v0, ref["delta_v0"]), ("L0_w", stats.mean_L0, ref["L0_w"])):
        ok = abs(got - want) <= BASELINE_REL_TOL * want
        rows.append((name, ok, f"mean {got:.6g} vs {want:g} (+/-{BASELINE_REL_TOL:.0%})"))
    got = stats.curve_min_rel_losses
    want = ref["min_rel_losses"]
    ok = abs(got - want) <= MIN_REL_LOSSES_ABS_TOL
    rows.append(("min_rel_losses", ok, f"{got:.4f} vs {want} (+/-{MIN_REL_LOSSES_ABS_TOL})"))
    return rows


# --- export --------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_sweep_csv(result: SweepResult) -> str:
    out = io.StringIO()
    out.write(f"# L0_w={_fmt(result.L0)}\n")
    out.write(f"# delta_v0={_fmt(result.delta_v0)}\n")
    out.write(f"# seeds={result.topology_seed},{result.load_seed}\n")
    out.write(f"# case={result.case}\n")
    out.write(f"# coeff_mode={result.coeff_mode}\n")
    out.write(SWEEP_CSV_HEADER + "\n")
    front = set(result.pareto)
    for i, p in enumerate(result.points):
        if p.valid:
            out.write(f"{_fmt(p.K)},{_fmt(p.losses)},{_fmt(p.rel_losses)},{_fmt(p.delta_v)},{int(i in front)}\n")
        else:
            out.write(f"{_fmt(p.K)},invalid,invalid,invalid,0\n")
    return out.getvalue()


def dumps_case_stats(stats: CaseStats, checks: list[tuple[str, bool, str]] | None = None) -> str:
    doc = stats.to_dict()
    if checks is not None:
        doc["checks"] = {name: {"ok": ok, "detail": detail} for name, ok, detail in checks}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
