"""Radial feeder data model and the seeded rural-feeder generator.

Nodes are numbered 1..n; node 0 is the substation held at ``v0``.  Line ``j``
(0-based) connects node ``j`` to node ``j + 1``, so line 0 feeds node 1 from
the substation and a feeder with ``n`` nodes always has ``n`` lines.

Random numbers come from numpy's PCG64 generator.  Each of the two seeds is
turned into its own stream with ``SeedSequence(seed, spawn_key=(k,))``:
``k = 0`` for the topology stream (line lengths) and ``k = 1`` for the
load/PV stream.  The draw order inside each stream is part of the format
contract and is listed in :func:`build_topology` and
:func:`populate_loads_and_pv`.
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEEDER_FORMAT_VERSION = "feedersim-feeder v1"
FEEDER_COLUMNS = ("index", "length_km", "r_ohm", "x_ohm", "p_c_w", "q_c_var", "p_g_w", "s_va")

TOPOLOGY_STREAM = 0
LOAD_STREAM = 1


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Return the PCG64 generator for ``seed`` on the given sub-stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class LineSegment:
    length: float  # km
    r: float  # ohm
    x: float  # ohm


@dataclass(frozen=True)
class NodeState:
    p_c: float = 0.0  # W
    q_c: float = 0.0  # VAr
    p_g: float = 0.0  # W
    s: float = 0.0  # VA


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Feeder:
    """A single-chain radial feeder stored column-wise.

    Arrays are indexed by node (``p_c[i]`` belongs to node ``i + 1``) and by
    line (``r[j]`` is the line from node ``j`` to ``j + 1``).  All arrays are
    read-only, so instances can be shared freely.
    """

    v0: float
    length: np.ndarray
    r: np.ndarray
    x: np.ndarray
    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    s: np.ndarray
    topology_seed: int | None = None
    load_seed: int | None = None

    def __post_init__(self) -> None:
        for name in ("length", "r", "x", "p_c", "q_c", "p_g", "s"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.length.shape[0]
        if n < 1:
            raise ValidationError("feeder needs at least one node")
        for name in ("r", "x", "p_c", "q_c", "p_g", "s"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({n},)")
        if not self.v0 > 0:
            raise ValidationError("v0 must be positive")
        if np.any(self.length <= 0):
            raise ValidationError("line lengths must be positive")
        if np.any(self.r < 0) or np.any(self.x < 0):
            raise ValidationError("line resistance and reactance must be non-negative")
        if np.any(self.p_g < 0) or np.any(self.s < 0):
            raise ValidationError("p_g and s must be non-negative")
        if np.any(self.p_g > self.s):
            raise ValidationError("p_g exceeds inverter capability s at some node")

    @classmethod
    def from_parts(cls, v0: float, lines, nodes, topology_seed=None, load_seed=None) -> Feeder:
        lines = list(lines)
        nodes = list(nodes)
        if len(lines) != len(nodes):
            raise ValidationError(f"{len(lines)} lines for {len(nodes)} nodes; a chain needs one line per node")
        return cls(
            v0=float(v0),
            length=[ln.length for ln in lines],
            r=[ln.r for ln in lines],
            x=[ln.x for ln in lines],
            p_c=[nd.p_c for nd in nodes],
            q_c=[nd.q_c for nd in nodes],
            p_g=[nd.p_g for nd in nodes],
            s=[nd.s for nd in nodes],
            topology_seed=topology_seed,
            load_seed=load_seed,
        )

    @property
    def n(self) -> int:
        return int(self.length.shape[0])

    @property
    def lines(self) -> tuple[LineSegment, ...]:
        return tuple(LineSegment(float(a), float(b), float(c)) for a, b, c in zip(self.length, self.r, self.x))

    @property
    def nodes(self) -> tuple[NodeState, ...]:
        return tuple(
            NodeState(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(self.p_c, self.q_c, self.p_g, self.s)
        )

    @property
    def pv_count(self) -> int:
        return int(np.count_nonzero(self.s > 0))

    def replace(self, **changes) -> Feeder:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ScenarioSpec:
    node_count: int
    spacing_min: float  # km
    spacing_max: float  # km
    r_per_km: float
    x_per_km: float
    v0: float  # V
    p_c_max: float  # W
    q_c_ratio_min: float
    q_c_ratio_max: float
    penetration: float
    p_g: float  # W at every PV node
    s: float  # VA at every PV node
    topology_seed: int = 0
    load_seed: int = 0

    def validate(self) -> None:
        if int(self.node_count) != self.node_count or self.node_count < 1:
            raise ValidationError("node_count must be a positive integer")
        if not 0 < self.spacing_min <= self.spacing_max:
            raise ValidationError("spacing_min must satisfy 0 < spacing_min <= spacing_max")
        if not (self.r_per_km > 0 and self.x_per_km > 0):
            raise ValidationError("r_per_km and x_per_km must be positive")
        if not self.v0 > 0:
            raise ValidationError("v0 must be positive")
        if not self.p_c_max >= 0:
            raise ValidationError("p_c_max must be non-negative")
        if not self.q_c_ratio_min <= self.q_c_ratio_max:
            raise ValidationError("q_c_ratio_min must not exceed q_c_ratio_max")
        if not 0 <= self.penetration <= 1:
            raise ValidationError("penetration must lie in [0, 1]")
        if not (self.p_g >= 0 and self.s >= 0):
            raise ValidationError("p_g and s must be non-negative")

    @property
    def pv_node_count(self) -> int:
        # half-up rounding, so the count does not depend on banker's rounding
        return int(math.floor(self.penetration * self.node_count + 0.5))


def build_topology(spec: ScenarioSpec) -> Feeder:
    """Draw line lengths for ``spec`` and return a feeder with zero loads.

    Draws ``node_count`` uniforms on ``[spacing_min, spacing_max]`` from the
    topology stream of ``spec.topology_seed``.
    """
    spec.validate()
    n = int(spec.node_count)
    rng = make_rng(spec.topology_seed, TOPOLOGY_STREAM)
    length = rng.uniform(spec.spacing_min, spec.spacing_max, n)
    zeros = np.zeros(n)
    return Feeder(
        v0=float(spec.v0),
        length=length,
        r=spec.r_per_km * length,
        x=spec.x_per_km * length,
        p_c=zeros,
        q_c=zeros,
        p_g=zeros,
        s=zeros,
        topology_seed=spec.topology_seed,
    )


def populate_loads_and_pv(feeder: Feeder, spec: ScenarioSpec) -> Feeder:
    """Draw consumption and PV placement from the load stream of ``spec.load_seed``.

    Draw order: ``n`` load uniforms on ``[0, p_c_max]``, then ``n`` reactive
    ratio uniforms on ``[q_c_ratio_min, q_c_ratio_max]``, then one
    permutation of the node indices whose first ``pv_node_count`` entries
    are the PV nodes.  Line data is carried over untouched.
    """
    spec.validate()
    if spec.p_g > spec.s:
        raise ValidationError(f"p_g={spec.p_g} exceeds inverter capability s={spec.s}")
    n = feeder.n
    if n != spec.node_count:
        raise ValidationError(f"feeder has {n} nodes but spec.node_count={spec.node_count}")
    rng = make_rng(spec.load_seed, LOAD_STREAM)
    p_c = rng.uniform(0.0, spec.p_c_max, n)
    ratio = rng.uniform(spec.q_c_ratio_min, spec.q_c_ratio_max, n)
    order = rng.permutation(n)
    pv = order[: spec.pv_node_count]
    p_g = np.zeros(n)
    s = np.zeros(n)
    p_g[pv] = spec.p_g
    s[pv] = spec.s
    return feeder.replace(p_c=p_c, q_c=ratio * p_c, p_g=p_g, s=s, load_seed=spec.load_seed)


def generate(spec: ScenarioSpec) -> Feeder:
    return populate_loads_and_pv(build_topology(spec), spec)


# (penetration, p_c_max W, p_g W) per Table-1 case
_CASES = {
    1: (0.20, 2500.0, 1000.0),
    2: (0.20, 1000.0, 2000.0),
    3: (0.50, 2500.0, 1000.0),
    4: (0.50, 1000.0, 2000.0),
}


def case_spec(case_id: int, topology_seed: int = 0, load_seed: int = 0) -> ScenarioSpec:
    """Scenario for one of the four prototype rural-feeder cases."""
    if case_id not in _CASES:
        raise ValidationError("case must be 1..4")
    penetration, p_c_max, p_g = _CASES[case_id]
    return ScenarioSpec(
        node_count=250,
        spacing_min=0.2,
        spacing_max=0.3,
        r_per_km=0.33,
        x_per_km=0.38,
        v0=7200.0,
        p_c_max=p_c_max,
        q_c_ratio_min=0.2,
        q_c_ratio_max=0.3,
        penetration=penetration,
        p_g=p_g,
        s=2200.0,
        topology_seed=topology_seed,
        load_seed=load_seed,
    )


# --- serialization -------------------------------------------------------


def _seed_text(seed: int | None) -> str:
    return "none" if seed is None else str(seed)


def _parse_seed(text: str) -> int | None:
    return None if text == "none" else int(text)


def dumps_feeder(feeder: Feeder) -> str:
    """Serialize to the versioned text format.

    Row ``i`` holds node ``i`` and the line feeding it (line ``i - 1``).
    Floats are written with ``repr`` so a load round-trips bit-exactly.
    """
    out = io.StringIO()
    out.write(f"# {FEEDER_FORMAT_VERSION}\n")
    out.write(f"# v0={feeder.v0!r}\n")
    out.write(f"# topology_seed={_seed_text(feeder.topology_seed)}\n")
    out.write(f"# load_seed={_seed_text(feeder.load_seed)}\n")
    out.write(",".join(FEEDER_COLUMNS) + "\n")
    cols = (feeder.length, feeder.r, feeder.x, feeder.p_c, feeder.q_c, feeder.p_g, feeder.s)
    for i in range(feeder.n):
        out.write(",".join([str(i + 1)] + [repr(float(c[i])) for c in cols]) + "\n")
    return out.getvalue()


def loads_feeder(text: str) -> Feeder:
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    header = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            elif lineno == 1 and body != FEEDER_FORMAT_VERSION:
                raise ValidationError(f"unsupported feeder format {body!r}")
            continue
        if header is None:
            header = tuple(line.split(","))
            if header != FEEDER_COLUMNS:
                raise ValidationError(f"feeder header {header} does not match {FEEDER_COLUMNS}")
            continue
        rows.append(line.split(","))
    if header is None or "v0" not in meta:
        raise ValidationError("feeder file is missing its header or v0")
    for expected, row in enumerate(rows, 1):
        if len(row) != len(FEEDER_COLUMNS) or int(row[0]) != expected:
            raise ValidationError(f"malformed feeder row for node {expected}")
    data = np.array([[float(v) for v in row[1:]] for row in rows], dtype=float).reshape(-1, 7)
    return Feeder(
        v0=float(meta["v0"]),
        length=data[:, 0],
        r=data[:, 1],
        x=data[:, 2],
        p_c=data[:, 3],
        q_c=data[:, 4],
        p_g=data[:, 5],
        s=data[:, 6],
        topology_seed=_parse_seed(meta.get("topology_seed", "none")),
        load_seed=_parse_seed(meta.get("load_seed", "none")),
    )


def write_feeder(feeder: Feeder, path: str | Path) -> None:
    Path(path).write_text(dumps_feeder(feeder))


def read_feeder(path: str | Path) -> Feeder:
    return loads_feeder(Path(path).read_text())
