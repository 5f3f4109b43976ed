"""LinDistFlow and DistFlow solvers for single-chain radial feeders.

Flow arrays ``P``/``Q`` are indexed by line: ``P[j]`` is the real power
leaving node ``j`` toward node ``j + 1``.  Voltages ``V`` are indexed by
node ``0..n`` with ``V[0]`` pinned to the substation voltage.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from feedersim.model import Feeder, ValidationError

SOLUTION_FORMAT_VERSION = "feedersim-solution v1"
SOLUTION_COLUMNS = ("node_index", "V_volts", "P_watts_outgoing", "Q_var_outgoing")

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100


class DivergenceError(RuntimeError):
    """The DistFlow sweep failed to converge (e.g. near voltage collapse)."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class Injection:
    """Controlled reactive generation ``q_g`` (VAr), one entry per node."""

    q_g: np.ndarray

    def __post_init__(self) -> None:
        q = np.array(self.q_g, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q_g", q)

    @classmethod
    def zeros(cls, n: int) -> Injection:
        return cls(np.zeros(n))

    def check(self, feeder: Feeder) -> None:
        if self.q_g.shape != (feeder.n,):
            raise ValidationError(f"injection has {self.q_g.size} entries for a {feeder.n}-node feeder")
        q_max = np.sqrt(feeder.s**2 - feeder.p_g**2)
        # allow a few ulps for setpoints computed from the same bound
        slack = 1e-9 * np.maximum(q_max, 1.0)
        bad = np.abs(self.q_g) > q_max + slack
        if np.any(bad):
            j = int(np.argmax(bad))
            raise ValidationError(
                f"|q_g| exceeds inverter capability at node {j + 1}: {self.q_g[j]} vs {q_max[j]}"
            )


@dataclass(frozen=True, eq=False)
class FlowSolution:
    P: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    model_tag: str
    iterations: int = 0
    residual: float = 0.0

    @property
    def v0(self) -> float:
        return float(self.V[0])

    @property
    def n(self) -> int:
        return int(self.P.shape[0])


def _net_extraction(feeder: Feeder, inj: Injection) -> tuple[np.ndarray, np.ndarray]:
    inj.check(feeder)
    return feeder.p_c - feeder.p_g, feeder.q_c - inj.q_g


def _downstream_sum(a: np.ndarray) -> np.ndarray:
    # out[j] = sum(a[j:]), accumulated from the far end
    return np.cumsum(a[::-1])[::-1]


def solve_lindistflow(feeder: Feeder, inj: Injection) -> FlowSolution:
    p, q = _net_extraction(feeder, inj)
    P = _downstream_sum(p)
    Q = _downstream_sum(q)
    v0 = feeder.v0
    V = np.empty(feeder.n + 1)
    V[0] = v0
    V[1:] = v0 - np.cumsum((feeder.r * P + feeder.x * Q) / v0)
    return FlowSolution(P=P, Q=Q, V=V, model_tag="linear")


def distflow_residual(feeder: Feeder, inj: Injection, sol: FlowSolution) -> float:
    """Largest normalized residual of the three DistFlow recursions.

    Flow residuals are scaled by the largest flow magnitude (or 1 W), the
    voltage-squared residual by ``v0**2``.
    """
    p, q = _net_extraction(feeder, inj)
    r, x, P, Q, V = feeder.r, feeder.x, sol.P, sol.Q, sol.V
    s2 = (P**2 + Q**2) / V[:-1] ** 2
    P_next = np.append(P[1:], 0.0)
    Q_next = np.append(Q[1:], 0.0)
    res_p = P_next - (P - r * s2 - p)
    res_q = Q_next - (Q - x * s2 - q)
    res_v = V[1:] ** 2 - (V[:-1] ** 2 - 2 * (r * P + x * Q) + (r**2 + x**2) * s2)
    flow_scale = max(float(np.max(np.abs(np.concatenate([P, Q])))), 1.0)
    return float(
        max(
            np.max(np.abs(res_p)) / flow_scale,
            np.max(np.abs(res_q)) / flow_scale,
            np.max(np.abs(res_v)) / feeder.v0**2,
        )
    )


def solve_distflow(
    feeder: Feeder,
    inj: Injection,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FlowSolution:
    """Backward/forward sweep for the full DistFlow equations.

    Starts from a flat voltage profile and zero losses.  Each iteration
    evaluates the loss factor ``(P_j**2 + Q_j**2) / V_j**2`` from the
    previous iterate, accumulates flows from the far end (boundary
    ``P_n = Q_n = 0``) and then pushes squared voltages forward from the
    substation.  Stops when both the per-node relative voltage change and
    the relative flow change drop below ``tol``.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    if max_iter < 1:
        raise ValidationError("max_iter must be at least 1")
    p, q = _net_extraction(feeder, inj)
    r, x, v0 = feeder.r, feeder.x, feeder.v0
    n = feeder.n
    V = np.full(n + 1, v0)
    P = np.zeros(n)
    Q = np.zeros(n)
    change = np.inf
    for it in range(1, max_iter + 1):
        s2 = (P**2 + Q**2) / V[:-1] ** 2
        P_new = _downstream_sum(p + r * s2)
        Q_new = _downstream_sum(q + x * s2)
        drop = 2 * (r * P_new + x * Q_new) - (r**2 + x**2) * s2
        V2 = v0**2 - np.cumsum(drop)
        if not np.all(np.isfinite(V2)) or np.any(V2 <= 0):
            raise DivergenceError("voltage collapsed during DistFlow sweep", residual=float("inf"), iterations=it)
        V_new = np.concatenate(([v0], np.sqrt(V2)))
        flow_scale = max(float(np.max(np.abs(np.concatenate([P_new, Q_new])))), 1.0)
        change = max(
            float(np.max(np.abs(V_new - V))) / v0,
            float(np.max(np.abs(np.concatenate([P_new - P, Q_new - Q])))) / flow_scale,
        )
        P, Q, V = P_new, Q_new, V_new
        if change < tol:
            sol = FlowSolution(P=P, Q=Q, V=V, model_tag="nonlinear", iterations=it)
            residual = distflow_residual(feeder, inj, sol)
            return FlowSolution(P=P, Q=Q, V=V, model_tag="nonlinear", iterations=it, residual=residual)
    raise DivergenceError(
        f"DistFlow did not converge in {max_iter} iterations (last change {change:.3e})",
        residual=change,
        iterations=max_iter,
    )


def solve(feeder: Feeder, inj: Injection, model: str = "linear", **kwargs) -> FlowSolution:
    if model == "linear":
        return solve_lindistflow(feeder, inj)
    if model == "nonlinear":
        return solve_distflow(feeder, inj, **kwargs)
    raise ValidationError(f"model must be 'linear' or 'nonlinear', got {model!r}")


def losses(sol: FlowSolution, feeder: Feeder) -> float:
    """Total ohmic losses in W, evaluated with the substation voltage for every line."""
    if sol.n != feeder.n or sol.V.shape != (feeder.n + 1,):
        raise ValidationError(f"solution for {sol.n} lines does not match a {feeder.n}-node feeder")
    return float(np.sum(feeder.r * (sol.P**2 + sol.Q**2)) / feeder.v0**2)


def max_voltage_deviation(sol: FlowSolution) -> float:
    """Largest per-unit deviation ``|V_k - V_0| / V_0`` over nodes 1..n."""
    v0 = sol.V[0]
    return float(np.max(np.abs(sol.V[1:] - v0)) / v0)


def worst_voltage_node(sol: FlowSolution) -> int:
    """Index (1..n) of the node attaining :func:`max_voltage_deviation`."""
    return int(np.argmax(np.abs(sol.V[1:] - sol.V[0]))) + 1


def dumps_solution(sol: FlowSolution) -> str:
    out = io.StringIO()
    out.write(f"# {SOLUTION_FORMAT_VERSION}\n")
    out.write(f"# model_tag={sol.model_tag}\n")
    out.write(f"# iterations={sol.iterations}\n")
    out.write(f"# residual={sol.residual!r}\n")
    out.write(",".join(SOLUTION_COLUMNS) + "\n")
    P = np.append(sol.P, 0.0)
    Q = np.append(sol.Q, 0.0)
    for k in range(sol.V.shape[0]):
        out.write(f"{k},{float(sol.V[k])!r},{float(P[k])!r},{float(Q[k])!r}\n")
    return out.getvalue()


def loads_solution(text: str) -> FlowSolution:
    meta: dict[str, str] = {}
    rows = []
    seen_header = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        if not seen_header:
            if tuple(line.split(",")) != SOLUTION_COLUMNS:
                raise ValidationError("solution header mismatch")
            seen_header = True
            continue
        rows.append([float(v) for v in line.split(",")[1:]])
    data = np.array(rows, dtype=float)
    return FlowSolution(
        P=data[:-1, 1],
        Q=data[:-1, 2],
        V=data[:, 0],
        model_tag=meta.get("model_tag", "linear"),
        iterations=int(meta.get("iterations", 0)),
        residual=float(meta.get("residual", 0.0)),
    )


def write_solution(sol: FlowSolution, path: str | Path) -> None:
    Path(path).write_text(dumps_solution(sol))
