from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedersim.control import ControlConfig, apply_control
from feedersim.experiment import (
    SWEEP_CSV_HEADER,
    SweepPoint,
    aggregate_sweeps,
    case_stats,
    check_case,
    dumps_case_stats,
    dumps_sweep_csv,
    evaluate,
    k_grid,
    pareto_front,
    refine_sweep,
    run_case,
    run_case_sweeps,
    sweep_k,
)
from feedersim.model import Feeder, LineSegment, NodeState, ValidationError, case_spec, generate
from feedersim.powerflow import losses, max_voltage_deviation, solve_lindistflow


def pt(a: float, b: float, K: float = 0.0) -> SweepPoint:
    return SweepPoint(K=K, losses=a, rel_losses=a, delta_v=b)


def brute_force_front(points) -> list[int]:
    keep = []
    for i, p in enumerate(points):
        dominated = any(
            q.rel_losses <= p.rel_losses
            and q.delta_v <= p.delta_v
            and (q.rel_losses < p.rel_losses or q.delta_v < p.delta_v)
            for j, q in enumerate(points)
            if j != i
        )
        if not dominated:
            keep.append(i)
    return keep


class TestPareto:
    def test_single(self):
        assert pareto_front([pt(0.9, 0.02)]) == [0]

    def test_trade_off(self):
        assert pareto_front([pt(0.9, 0.02, 0), pt(0.8, 0.03, 1)]) == [0, 1]

    def test_domination(self):
        assert pareto_front([pt(0.9, 0.02, 0), pt(0.8, 0.02, 1)]) == [1]

    def test_duplicates_both_kept(self):
        assert pareto_front([pt(0.5, 0.5, 0), pt(0.5, 0.5, 1)]) == [0, 1]

    def test_invalid_points_excluded(self):
        bad = SweepPoint(K=1.0, losses=math.nan, rel_losses=math.nan, delta_v=math.nan, valid=False)
        assert pareto_front([pt(0.9, 0.02, 0), bad]) == [0]

    def test_ordered_by_k(self):
        pts = [pt(0.7, 0.05, 3.0), pt(0.9, 0.01, -1.0), pt(0.8, 0.03, 1.0)]
        assert pareto_front(pts) == [1, 2, 0]

    @settings(max_examples=500)
    @given(
        st.lists(
            st.tuples(st.integers(0, 6), st.integers(0, 6)),
            min_size=1,
            max_size=20,
        )
    )
    def test_matches_brute_force(self, coords):
        points = [pt(a / 6, b / 6, K=float(i)) for i, (a, b) in enumerate(coords)]
        assert pareto_front(points) == brute_force_front(points)


class TestEvaluate:
    def test_matches_direct_composition(self):
        f = generate(case_spec(2))
        cfg = ControlConfig(scheme="hybrid", K=1.0)
        sol = solve_lindistflow(f, apply_control(f, cfg))
        assert evaluate(f, cfg) == (losses(sol, f), max_voltage_deviation(sol))

    def test_zero_feeder(self):
        f = Feeder.from_parts(7200.0, [LineSegment(0.25, 0.0825, 0.095)] * 3, [NodeState()] * 3)
        assert evaluate(f, ControlConfig(scheme="hybrid", K=4.0)) == (0.0, 0.0)

    def test_nonlinear_model(self):
        f = generate(case_spec(3))
        lin = evaluate(f, ControlConfig(scheme="none"), "linear")
        nl = evaluate(f, ControlConfig(scheme="none"), "nonlinear")
        assert nl[0] == pytest.approx(lin[0], rel=0.1)
        assert nl[1] == pytest.approx(lin[1], abs=5e-3)

    def test_unknown_model(self):
        with pytest.raises(ValidationError):
            evaluate(generate(case_spec(1)), ControlConfig(scheme="none"), "dc")


class TestSweep:
    def test_two_step_endpoints(self):
        f = generate(case_spec(1))
        res = sweep_k(f, 0.0, 1.0, 2)
        fv = evaluate(f, ControlConfig(scheme="voltage"))
        fl = evaluate(f, ControlConfig(scheme="loss"))
        assert [p.K for p in res.points] == [0.0, 1.0]
        assert (res.points[0].losses, res.points[0].delta_v) == fv
        assert (res.points[1].losses, res.points[1].delta_v) == fl

    def test_baseline_consistency(self):
        f = generate(case_spec(4))
        res = sweep_k(f, steps=31)
        assert (res.L0, res.delta_v0) == evaluate(f, ControlConfig(scheme="none"))
        for p in res.points:
            assert p.rel_losses == p.losses / res.L0
            assert p.delta_v >= 0

    def test_grid(self):
        ks = k_grid(-5, 10, 301)
        assert ks[0] == -5.0 and ks[-1] == 10.0 and len(ks) == 301
        assert np.allclose(np.diff(ks), 0.05)
        assert 0.3 in ks

    @pytest.mark.parametrize("args", [(-5, 10, 1), (1.0, 1.0, 5), (2.0, 1.0, 5)])
    def test_grid_rejects(self, args):
        with pytest.raises(ValidationError):
            k_grid(*args)

    def test_zero_capability_reduces_to_baseline(self):
        f = generate(case_spec(3))
        f = f.replace(p_g=np.zeros(f.n), s=np.zeros(f.n))
        res = sweep_k(f, steps=16)
        for p in res.points:
            assert (p.losses, p.delta_v, p.rel_losses) == (res.L0, res.delta_v0, 1.0)

    def test_pareto_subset_valid(self):
        res = sweep_k(generate(case_spec(2)), steps=61)
        assert list(res.pareto) == brute_force_front(res.points)

    def test_refine(self):
        f = generate(case_spec(4))
        coarse = sweep_k(f, steps=301)
        fine = refine_sweep(f, coarse)
        ks = fine.k
        assert len(ks) == 21
        assert ks[0] == pytest.approx(coarse.best_loss_point.K - 0.05)
        assert ks[-1] == pytest.approx(coarse.best_loss_point.K + 0.05)
        assert fine.best_loss_point.rel_losses <= coarse.best_loss_point.rel_losses


class TestInvalidPoints:
    def test_invalid_marker_in_csv(self, monkeypatch):
        import feedersim.experiment as exp
        from feedersim.powerflow import DivergenceError

        real = exp.evaluate

        def flaky(feeder, cfg, model="linear"):
            if cfg.scheme == "hybrid" and cfg.K == 0.5:
                raise DivergenceError("forced", residual=1.0, iterations=3)
            return real(feeder, cfg, model)

        monkeypatch.setattr(exp, "evaluate", flaky)
        res = exp.sweep_k(generate(case_spec(1)), 0.0, 1.0, 3)
        assert [p.valid for p in res.points] == [True, False, True]
        assert "forced" in res.points[1].error
        assert 1 not in res.pareto
        assert "0.5,invalid,invalid,invalid,0" in dumps_sweep_csv(res)


class TestEnsemble:
    def test_single_seed_std_undefined(self):
        stats = run_case(2, n_seeds=1, steps=31)
        assert stats.n_seeds == 1 and not stats.std_defined
        assert stats.std_L0 is None and stats.std_delta_v0 is None

    def test_load_seeds_consecutive_and_topology_shared(self):
        sweeps = run_case_sweeps(3, n_seeds=3, steps=11, topology_seed=4, load_seed=10)
        assert [s.load_seed for s in sweeps] == [10, 11, 12]
        assert {s.topology_seed for s in sweeps} == {4}

    def test_aggregate_is_mean(self):
        sweeps = run_case_sweeps(1, n_seeds=3, steps=11)
        agg = aggregate_sweeps(sweeps)
        for i, p in enumerate(agg.points):
            assert p.rel_losses == pytest.approx(np.mean([s.points[i].rel_losses for s in sweeps]))
            assert p.delta_v == pytest.approx(np.mean([s.points[i].delta_v for s in sweeps]))
        assert agg.load_seed == "0..2"

    def test_stats_fields(self):
        sweeps = run_case_sweeps(4, n_seeds=4, steps=31)
        stats = case_stats(4, sweeps)
        assert stats.mean_L0 == pytest.approx(np.mean([s.L0 for s in sweeps]))
        assert stats.std_L0 == pytest.approx(np.std([s.L0 for s in sweeps], ddof=1))
        assert stats.mean_min_rel_losses <= 1.0
        assert stats.k_min == -5.0 and stats.k_max == 10.0 and stats.steps == 31

    def test_check_case_shape(self):
        rows = check_case(run_case(1, n_seeds=2, steps=11))
        assert [r[0] for r in rows] == ["delta_v0", "L0_w", "min_rel_losses"]

    def test_deterministic_serialization(self):
        a = dumps_case_stats(run_case(2, n_seeds=3, steps=31))
        b = dumps_case_stats(run_case(2, n_seeds=3, steps=31))
        assert a == b
        assert json.loads(a)["case_id"] == 2


class TestCsv:
    def test_layout(self):
        res = sweep_k(generate(case_spec(2, topology_seed=1, load_seed=5)), 0.0, 1.0, 3)
        lines = dumps_sweep_csv(res).splitlines()
        assert lines[0].startswith("# L0_w=")
        assert lines[1].startswith("# delta_v0=")
        assert lines[2] == "# seeds=1,5"
        assert lines[3] == "# case=custom"
        assert lines[4] == "# coeff_mode=paper_literal"
        assert lines[5] == SWEEP_CSV_HEADER
        assert len(lines) == 9
        k, loss, rel, dv, par = lines[6].split(",")
        assert float(k) == 0.0 and float(rel) == float(loss) / res.L0 and par in ("0", "1")
