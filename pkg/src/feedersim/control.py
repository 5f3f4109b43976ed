"""Local reactive-power control laws for PV inverters.

Every law maps one node's own measurements (PV output, real and reactive
consumption, inverter rating) to a reactive setpoint.  The functions are
written elementwise with numpy, so a ``LocalMeasurement`` may hold scalars
or equally-shaped arrays; :func:`apply_control` relies on that to evaluate
all nodes at once.  No function here ever sees voltages or other nodes.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from feedersim.model import Feeder, ValidationError
from feedersim.powerflow import Injection

SCHEMES = ("none", "loss", "voltage", "hybrid")
COEFF_MODES = ("paper_literal", "drop_nulling")


@dataclass(frozen=True)
class LocalMeasurement:
    p_g: float | np.ndarray
    p_c: float | np.ndarray
    q_c: float | np.ndarray
    s: float | np.ndarray

    @property
    def q_max(self):
        return reactive_capability(self.s, self.p_g)


@dataclass(frozen=True)
class ControlConfig:
    """Control-law selection shared by every inverter on the feeder.

    ``alpha`` is the feeder's r/x ratio; leave it ``None`` and
    :func:`apply_control` fills it in from the feeder.  ``coeff_mode``
    picks the multiplier on ``p_c - p_g`` in the voltage law:
    ``paper_literal`` uses ``1/alpha``, ``drop_nulling`` uses ``alpha``
    (the value that zeroes ``r*P + x*Q`` on every line).
    """

    scheme: str = "hybrid"
    K: float = 1.0
    coeff_mode: str = "paper_literal"
    alpha: float | None = None
    epsilon: float = 0.05

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.coeff_mode not in COEFF_MODES:
            raise ValidationError(f"coeff_mode must be one of {COEFF_MODES}, got {self.coeff_mode!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if not np.isfinite(self.K):
            raise ValidationError("K must be finite")

    @property
    def coefficient(self) -> float:
        if self.alpha is None:
            raise ValidationError("alpha is unset; derive it from the feeder first")
        return 1.0 / self.alpha if self.coeff_mode == "paper_literal" else self.alpha

    def replace(self, **changes) -> ControlConfig:
        return dataclasses.replace(self, **changes)


def reactive_capability(s, p_g):
    """Reactive headroom ``sqrt(s**2 - p_g**2)`` of an inverter."""
    s = np.asarray(s, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    if np.any(p_g < 0) or np.any(p_g > s):
        raise ValidationError("reactive capability needs 0 <= p_g <= s")
    out = np.sqrt(s**2 - p_g**2)
    return float(out) if out.ndim == 0 else out


def constr(q, q_max):
    """Saturate ``q`` to ``[-q_max, q_max]``, keeping its sign."""
    q = np.asarray(q, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    with np.errstate(invalid="ignore"):  # sign(0) * inf in the unused branch
        out = np.where(np.abs(q) <= q_max, q, np.sign(q) * q_max)
    return float(out) if out.ndim == 0 else out


def control_loss(m: LocalMeasurement):
    """Cover the node's own reactive demand, as far as capability allows."""
    return constr(m.q_c, m.q_max)


def control_voltage(m: LocalMeasurement, cfg: ControlConfig):
    q_c = np.asarray(m.q_c, dtype=float)
    net_p = np.asarray(m.p_c, dtype=float) - np.asarray(m.p_g, dtype=float)
    return constr(q_c + cfg.coefficient * net_p, m.q_max)


def control_hybrid(m: LocalMeasurement, cfg: ControlConfig):
    """Clamped blend ``K * F_loss + (1 - K) * F_voltage``.

    Both inner laws are already clamped; the blend is clamped again, which
    only matters when K lies outside [0, 1].
    """
    q_max = m.q_max
    blend = cfg.K * np.asarray(control_loss(m)) + (1.0 - cfg.K) * np.asarray(control_voltage(m, cfg))
    return constr(blend, q_max)


def feeder_alpha(feeder: Feeder, rel_tol: float = 0.01) -> float:
    """r/x ratio of the feeder as ``sum(r) / sum(x)``.

    Warns when any single line strays from that ratio by more than
    ``rel_tol``; the voltage law assumes it is nearly uniform.
    """
    total_x = float(np.sum(feeder.x))
    if total_x <= 0:
        raise ValidationError("feeder has zero total reactance; r/x ratio undefined")
    alpha = float(np.sum(feeder.r)) / total_x
    with np.errstate(divide="ignore", invalid="ignore"):
        per_line = feeder.r / feeder.x
    if np.any(~np.isfinite(per_line)) or np.any(np.abs(per_line / alpha - 1.0) > rel_tol):
        warnings.warn(f"line r/x ratios deviate from the feeder average {alpha:.4g} by more than {rel_tol:.0%}")
    return alpha


def resolve_config(feeder: Feeder, cfg: ControlConfig) -> ControlConfig:
    if cfg.alpha is None and cfg.scheme in ("voltage", "hybrid"):
        return cfg.replace(alpha=feeder_alpha(feeder))
    return cfg


def apply_control(feeder: Feeder, cfg: ControlConfig) -> Injection:
    """Evaluate the configured law at every node, with the same settings everywhere."""
    if cfg.scheme == "none":
        return Injection.zeros(feeder.n)
    cfg = resolve_config(feeder, cfg)
    m = LocalMeasurement(p_g=feeder.p_g, p_c=feeder.p_c, q_c=feeder.q_c, s=feeder.s)
    if cfg.scheme == "loss":
        q_g = control_loss(m)
    elif cfg.scheme == "voltage":
        q_g = control_voltage(m, cfg)
    else:
        q_g = control_hybrid(m, cfg)
    return Injection(np.asarray(q_g, dtype=float).reshape(feeder.n))
