"""Command-line front end: ``generate``, ``solve``, ``sweep`` and ``case``.

Every option can also come from a flat JSON config (``--config``) whose keys
are the snake_case field names (``case_id``, ``topology_seed``, ``k``,
``coeff_mode``, ...).  Flags override the file.

Exit codes: 0 success, 1 invalid input or I/O failure, 2 solver divergence,
3 case results outside the acceptance tolerances.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from feedersim import experiment
from feedersim.control import COEFF_MODES, SCHEMES, ControlConfig, apply_control
from feedersim.model import (
    ScenarioSpec,
    ValidationError,
    build_topology,
    case_spec,
    generate,
    populate_loads_and_pv,
    read_feeder,
    write_feeder,
)
from feedersim.powerflow import DivergenceError, losses, max_voltage_deviation, solve, worst_voltage_node, write_solution

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_DIVERGED = 2
EXIT_TOLERANCE = 3

SCENARIO_FIELDS = tuple(f.name for f in dataclasses.fields(ScenarioSpec) if f.name not in ("topology_seed", "load_seed"))
INT_SCENARIO_FIELDS = {"node_count"}


@dataclass
class RunConfig:
    case_id: int | None = None
    scenario: dict | None = None  # custom ScenarioSpec fields, exclusive with case_id
    topology_seed: int = experiment.GOLDEN_TOPOLOGY_SEED
    load_seed: int = experiment.GOLDEN_LOAD_SEED
    scheme: str = "none"
    k: float = 1.0
    coeff_mode: str = "paper_literal"
    epsilon: float = 0.05
    k_min: float = experiment.DEFAULT_K_MIN
    k_max: float = experiment.DEFAULT_K_MAX
    steps: int = experiment.DEFAULT_STEPS
    refine: bool = False
    model: str = "linear"
    n_seeds: int = experiment.DEFAULT_N_SEEDS
    output_dir: str = "."
    format: str = "structured"  # case summary only; sweeps are always CSV

    def scenario_spec(self, load_seed: int | None = None) -> ScenarioSpec:
        if self.case_id is None and self.scenario is None:
            raise ValidationError("no scenario: give --case or the custom scenario fields")
        load_seed = self.load_seed if load_seed is None else load_seed
        if self.case_id is not None:
            return case_spec(self.case_id, topology_seed=self.topology_seed, load_seed=load_seed)
        return ScenarioSpec(**self.scenario, topology_seed=self.topology_seed, load_seed=load_seed)

    @property
    def case_tag(self) -> str:
        return "custom" if self.case_id is None else str(self.case_id)

    def control(self) -> ControlConfig:
        return ControlConfig(scheme=self.scheme, K=self.k, coeff_mode=self.coeff_mode, epsilon=self.epsilon)


RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)} - {"scenario"}


def build_run_config(file_values: dict, flag_values: dict, need_scenario: bool = True) -> RunConfig:
    """Merge config-file values with command-line flags (flags win) and validate."""
    unknown = set(file_values) - RUN_FIELDS - set(SCENARIO_FIELDS)
    if unknown:
        raise ValidationError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})

    scenario = {k: merged.pop(k) for k in SCENARIO_FIELDS if k in merged}
    if merged.get("case_id") is not None and scenario:
        raise ValidationError("give either case_id or custom scenario fields, not both")
    if merged.get("case_id") is None and (need_scenario or scenario):
        missing = [k for k in SCENARIO_FIELDS if k not in scenario]
        if missing:
            raise ValidationError(f"no case_id given and scenario field(s) missing: {', '.join(missing)}")
        for k in SCENARIO_FIELDS:
            scenario[k] = int(scenario[k]) if k in INT_SCENARIO_FIELDS else float(scenario[k])
        merged["scenario"] = scenario
    cfg = RunConfig(**{k: v for k, v in merged.items() if k in RUN_FIELDS or k == "scenario"})

    if cfg.case_id is not None and cfg.case_id not in (1, 2, 3, 4):
        raise ValidationError("case must be 1..4")
    if cfg.scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}")
    if cfg.coeff_mode not in COEFF_MODES:
        raise ValidationError(f"coeff_mode must be one of {COEFF_MODES}")
    if cfg.model not in ("linear", "nonlinear"):
        raise ValidationError("model must be linear or nonlinear")
    if cfg.format not in ("csv", "structured"):
        raise ValidationError("format must be csv or structured")
    if cfg.n_seeds < 1:
        raise ValidationError("n_seeds must be at least 1")
    if cfg.case_id is not None or cfg.scenario is not None:
        cfg.scenario_spec().validate()
    return cfg


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors; exit code 2 is reserved for divergence
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--config", type=Path, help="flat JSON config file")
    g.add_argument("--case", dest="case_id", type=int, help="prototype case 1..4")
    g.add_argument("--topology-seed", type=int)
    g.add_argument("--load-seed", type=int)
    for name in SCENARIO_FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=int if name in INT_SCENARIO_FIELDS else float)
    c = p.add_argument_group("control")
    c.add_argument("--scheme", choices=SCHEMES)
    c.add_argument("--k", type=float, help="hybrid weight K")
    c.add_argument("--coeff-mode", choices=COEFF_MODES)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--model", choices=("linear", "nonlinear"))
    o = p.add_argument_group("output")
    o.add_argument("--output-dir")
    o.add_argument("--format", choices=("csv", "structured"))


def _add_sweep_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--refine", action="store_true", default=None, help="add a 10x finer pass around the loss minimum")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="feedersim", description="Radial feeder PV reactive-power control experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random prototype feeder")
    _add_common(p)
    p.add_argument("--out", type=Path, help="feeder file (default OUTPUT_DIR/feeder.csv)")

    p = sub.add_parser("solve", help="apply a control law and solve a feeder file")
    p.add_argument("feeder", type=Path)
    _add_common(p)
    p.add_argument("--out", type=Path, help="solution file (default OUTPUT_DIR/solution.csv)")

    p = sub.add_parser("sweep", help="sweep the hybrid weight K")
    _add_common(p)
    _add_sweep_options(p)
    p.add_argument("--dump-solutions", action="store_true", help="write the solution at every K (first realization)")
    p.add_argument("--validate-nonlinear", action="store_true", help="re-check key points with the DistFlow solver")

    p = sub.add_parser("case", help="ensemble statistics for one prototype case")
    _add_common(p)
    _add_sweep_options(p)
    return parser


_NON_CONFIG_ARGS = {"command", "config", "out", "feeder", "dump_solutions", "validate_nonlinear"}


def _load_config(args: argparse.Namespace) -> RunConfig:
    file_values = {}
    if args.config is not None:
        try:
            file_values = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ValidationError("config file must hold a flat JSON object")
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_ARGS}
    return build_run_config(file_values, flags, need_scenario=args.command != "solve")


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_generate(args, cfg: RunConfig) -> int:
    feeder = generate(cfg.scenario_spec())
    out = args.out or _out_dir(cfg) / "feeder.csv"
    write_feeder(feeder, out)
    print(f"wrote {out}")
    print(f"nodes={feeder.n} total_load_w={float(np.sum(feeder.p_c)):.1f} "
          f"total_pv_w={float(np.sum(feeder.p_g)):.1f} pv_nodes={feeder.pv_count}")
    return EXIT_OK


def cmd_solve(args, cfg: RunConfig) -> int:
    feeder = read_feeder(args.feeder)
    inj = apply_control(feeder, cfg.control())
    sol = solve(feeder, inj, cfg.model)
    out = args.out or _out_dir(cfg) / "solution.csv"
    write_solution(sol, out)
    dv = max_voltage_deviation(sol)
    flag = " VIOLATION" if dv >= cfg.epsilon else ""
    print(f"wrote {out}")
    print(f"model={sol.model_tag} iterations={sol.iterations} residual={sol.residual:.3e}")
    print(f"losses_w={losses(sol, feeder)!r}")
    print(f"delta_v={dv!r} worst_node={worst_voltage_node(sol)} epsilon={cfg.epsilon}{flag}")
    return EXIT_OK


def _realizations(cfg: RunConfig):
    topology = build_topology(cfg.scenario_spec())
    for i in range(cfg.n_seeds):
        yield populate_loads_and_pv(topology, cfg.scenario_spec(load_seed=cfg.load_seed + i))


def cmd_sweep(args, cfg: RunConfig) -> int:
    out_dir = _out_dir(cfg)
    base = cfg.control().replace(scheme="hybrid")
    feeders = list(_realizations(cfg))
    results = [
        experiment.sweep_k(f, cfg.k_min, cfg.k_max, cfg.steps, base, cfg.model, case=cfg.case_tag) for f in feeders
    ]
    if len(results) == 1:
        summary, name = results[0], "sweep.csv"
        (out_dir / name).write_text(experiment.dumps_sweep_csv(summary))
    else:
        for r in results:
            (out_dir / f"sweep_seed{r.load_seed}.csv").write_text(experiment.dumps_sweep_csv(r))
        summary, name = experiment.aggregate_sweeps(results), "sweep_aggregate.csv"
        (out_dir / name).write_text(experiment.dumps_sweep_csv(summary))
    print(f"wrote {out_dir / name}")
    _report(summary)

    if cfg.refine:
        fine_k = experiment.refine_grid(summary)
        fine = [experiment.sweep_grid(f, fine_k, base, cfg.model, case=cfg.case_tag) for f in feeders]
        fine_summary = fine[0] if len(fine) == 1 else experiment.aggregate_sweeps(fine)
        fine_name = name.replace(".csv", "_refined.csv")
        (out_dir / fine_name).write_text(experiment.dumps_sweep_csv(fine_summary))
        print(f"wrote {out_dir / fine_name}")
        _report(fine_summary)

    if args.dump_solutions:
        _dump_solutions(feeders[0], results[0], base, cfg, out_dir / "solutions")
    if args.validate_nonlinear:
        _validate_nonlinear(feeders[0], results[0], base)
    return EXIT_OK


def _report(result: experiment.SweepResult) -> None:
    bl, bv = result.best_loss_point, result.best_voltage_point
    print(f"L0_w={result.L0:.6g} delta_v0={result.delta_v0:.6g}")
    print(f"min rel_losses={bl.rel_losses:.6g} at K={bl.K:g}")
    print(f"min delta_v={bv.delta_v:.6g} at K={bv.K:g}")
    print(f"pareto K: {', '.join(f'{result.points[i].K:g}' for i in result.pareto)}")


def _dump_solutions(feeder, result, base: ControlConfig, cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in result.points:
        try:
            sol = solve(feeder, apply_control(feeder, base.replace(K=p.K)), cfg.model)
        except DivergenceError:
            continue
        write_solution(sol, out_dir / f"k_{p.K:+.6f}.csv")


def _validate_nonlinear(feeder, result, base: ControlConfig) -> None:
    checks = [("baseline", base.replace(scheme="none")),
              ("best_loss", base.replace(K=result.best_loss_point.K)),
              ("best_voltage", base.replace(K=result.best_voltage_point.K))]
    for label, cfg in checks:
        lin = experiment.evaluate(feeder, cfg, "linear")
        nl = experiment.evaluate(feeder, cfg, "nonlinear")
        print(f"{label}: linear losses={lin[0]:.6g} dv={lin[1]:.6g} | nonlinear losses={nl[0]:.6g} dv={nl[1]:.6g}")


def cmd_case(args, cfg: RunConfig) -> int:
    if cfg.case_id is None:
        raise ValidationError("case requires --case")
    sweeps = experiment.run_case_sweeps(
        cfg.case_id,
        n_seeds=cfg.n_seeds,
        steps=cfg.steps,
        coeff_mode=cfg.coeff_mode,
        topology_seed=cfg.topology_seed,
        load_seed=cfg.load_seed,
        k_min=cfg.k_min,
        k_max=cfg.k_max,
        model=cfg.model,
    )
    stats = experiment.case_stats(cfg.case_id, sweeps, model=cfg.model)
    checks = experiment.check_case(stats)
    out_dir = _out_dir(cfg)
    stem = f"case{cfg.case_id}_{cfg.coeff_mode}"
    agg = experiment.aggregate_sweeps(sweeps)
    (out_dir / f"{stem}_aggregate.csv").write_text(experiment.dumps_sweep_csv(agg))
    if cfg.format == "structured":
        summary_path = out_dir / f"{stem}_summary.json"
        summary_path.write_text(experiment.dumps_case_stats(stats, checks))
    else:
        summary_path = out_dir / f"{stem}_summary.csv"
        summary_path.write_text(_stats_csv(stats, checks))
    print(f"wrote {summary_path}")
    if not stats.std_defined:
        print("single realization: standard deviations undefined")
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_TOLERANCE


def _stats_csv(stats, checks) -> str:
    lines = ["key,value"]
    for key, value in sorted(stats.to_dict().items()):
        if isinstance(value, list):
            value = " ".join(repr(v) for v in value)
        lines.append(f"{key},{'undefined' if value is None else value!r}")
    for name, ok, _ in checks:
        lines.append(f"check_{name},{ok}")
    return "\n".join(lines) + "\n"


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "sweep": cmd_sweep, "case": cmd_case}


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"error: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
