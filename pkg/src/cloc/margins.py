"""Inter-rank margins: parameterization, activation, and cumulative sums.

Ranks and boundaries use 1-based indices throughout: boundary ``h`` joins
rank ``h`` and rank ``h + 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, add, matmul, mul, relu, softplus, softplus_inverse

logger = logging.getLogger(__name__)

MODES = ("per_pair", "single", "all_fixed")
MODE_ALIASES = {"single_learnable": "single", "fixed": "all_fixed"}
ACTIVATIONS = ("softplus", "relu")
DEFAULT_INIT_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class OrdinalSchema:
    n_classes: int
    labels: tuple = ()

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("an ordinal schema needs at least 2 ranks")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(1, self.n_classes + 1)))
        elif len(self.labels) != self.n_classes:
            raise ValueError(f"{len(self.labels)} labels given for {self.n_classes} ranks")
        else:
            object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    @property
    def n_boundaries(self) -> int:
        return self.n_classes - 1

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        return [(h, h + 1) for h in range(1, self.n_classes)]

    def boundary_name(self, h: int) -> str:
        self.check_boundary(h)
        return f"{self.labels[h - 1]}|{self.labels[h]}"

    def check_rank(self, r: int) -> None:
        if not 1 <= int(r) <= self.n_classes:
            raise ValueError(f"rank {r} outside [1, {self.n_classes}]")

    def check_boundary(self, h: int) -> None:
        if not 1 <= int(h) <= self.n_boundaries:
            raise ValueError(f"boundary {h} outside [1, {self.n_boundaries}]")


@dataclass
class MarginSet:
    """C-1 margins, each learned (shared or per boundary) or held fixed.

    Activated margin for a learnable boundary is ``rho + act(theta)``, so the
    lower bound holds structurally for softplus. Overrides replace a
    boundary's value verbatim and never receive gradient.
    """

    schema: OrdinalSchema
    mode: str = "per_pair"
    raw: Tensor | None = None
    activation: str = "softplus"
    rho: float = 0.0
    constant: float = 1.0
    fixed_overrides: dict[int, float] = field(default_factory=dict)
    frozen: bool = False

    def __post_init__(self):
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ValueError(f"unknown margin mode {self.mode!r}; expected one of {MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown margin activation {self.activation!r}")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        self.fixed_overrides = {int(h): float(v) for h, v in self.fixed_overrides.items()}
        for h in self.fixed_overrides:
            self.schema.check_boundary(h)
        expected = {"per_pair": (self.schema.n_boundaries,), "single": (1,), "all_fixed": None}[self.mode]
        if expected is None:
            self.raw = None
        elif self.raw is None or self.raw.shape != expected:
            got = None if self.raw is None else self.raw.shape
            raise ValueError(f"mode {self.mode!r} needs raw parameters of shape {expected}, got {got}")

    @property
    def learnable(self) -> bool:
        return self.raw is not None and not self.frozen and self.n_learned > 0

    @property
    def n_learned(self) -> int:
        if self.mode == "all_fixed":
            return 0
        return self.schema.n_boundaries - len(self.fixed_overrides)

    def parameters(self) -> list[Tensor]:
        return [self.raw] if self.learnable else []

    def boundary_mode(self, h: int) -> str:
        if h in self.fixed_overrides or self.mode == "all_fixed":
            return "fixed"
        return "shared" if self.mode == "single" else "learned"

    def _fixed_vector(self):
        H = self.schema.n_boundaries
        keep = np.ones(H)
        fixed = np.zeros(H)
        if self.mode == "all_fixed":
            keep[:] = 0.0
            fixed[:] = self.constant
        for h, v in self.fixed_overrides.items():
            keep[h - 1] = 0.0
            fixed[h - 1] = v
        return keep, fixed

    def activated(self) -> Tensor:
        """Differentiable vector of the C-1 activated margins."""
        keep, fixed = self._fixed_vector()
        if self.raw is None:
            return Tensor(fixed)
        raw = self.raw
        if self.frozen:
            raw = Tensor(raw.data)
        if self.mode == "single":
            raw = matmul(Tensor(np.ones((self.schema.n_boundaries, 1))), raw)
        act = softplus(raw) if self.activation == "softplus" else relu(raw)
        learned = add(act, self.rho)
        if not keep.all():
            learned = add(mul(learned, Tensor(keep)), Tensor(fixed))
        return learned

    def values(self) -> np.ndarray:
        return self.activated().data.copy()

    def freeze(self) -> "MarginSet":
        """Copy whose values are constants (no parameters exposed)."""
        raw = None if self.raw is None else Tensor(self.raw.data.copy())
        return MarginSet(self.schema, self.mode, raw, self.activation, self.rho, self.constant,
                         dict(self.fixed_overrides), frozen=True)

    def copy(self) -> "MarginSet":
        raw = None if self.raw is None else Tensor(self.raw.data.copy(), requires_grad=True)
        return MarginSet(self.schema, self.mode, raw, self.activation, self.rho, self.constant,
                         dict(self.fixed_overrides), frozen=self.frozen)

    def state_dict(self) -> dict:
        return {
            "n_classes": self.schema.n_classes,
            "labels": list(self.schema.labels),
            "mode": self.mode,
            "raw": None if self.raw is None else self.raw.data.tolist(),
            "activation": self.activation,
            "rho": self.rho,
            "constant": self.constant,
            "fixed_overrides": {str(h): v for h, v in self.fixed_overrides.items()},
            "frozen": self.frozen,
        }

    @classmethod
    def from_state_dict(cls, state: Mapping) -> "MarginSet":
        schema = OrdinalSchema(int(state["n_classes"]), tuple(state.get("labels") or ()))
        raw = state.get("raw")
        raw = None if raw is None else Tensor(np.asarray(raw, dtype=np.float64), requires_grad=True)
        return cls(schema, state["mode"], raw, state.get("activation", "softplus"),
                   float(state.get("rho", 0.0)), float(state.get("constant", 1.0)),
                   {int(h): float(v) for h, v in (state.get("fixed_overrides") or {}).items()},
                   bool(state.get("frozen", False)))


def _inverse_activation(target: np.ndarray, activation: str) -> np.ndarray:
    if activation == "softplus":
        return softplus_inverse(target)
    return np.asarray(target, dtype=np.float64).copy()


def init_margins(
    schema: OrdinalSchema,
    mode: str = "per_pair",
    seed=None,
    rho: float = 0.0,
    activation: str = "softplus",
    init_range: Sequence[float] = DEFAULT_INIT_RANGE,
    constant: float = 1.0,
    fixed_overrides: Mapping[int, float] | None = None,
) -> MarginSet:
    """Draw starting margins uniformly from ``init_range`` (activated scale).

    Raw parameters are set by inverting the activation so that the activated
    margins, not the raw values, follow the uniform draw. With ``rho`` at or
    above the range's lower end the range is shifted up by ``rho``.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    lo, hi = float(init_range[0]), float(init_range[1])
    if not lo < hi:
        raise ValueError(f"empty init range [{lo}, {hi})")
    if rho > 0 and rho >= lo:
        logger.warning("rho=%g is not below the init range [%g, %g); drawing from [%g, %g) instead",
                       rho, lo, hi, rho + lo, rho + hi)
        lo, hi = rho + lo, rho + hi
    mode = MODE_ALIASES.get(mode, mode)
    rng = np.random.default_rng(seed)
    overrides = dict(fixed_overrides or {})
    if mode == "all_fixed":
        return MarginSet(schema, mode, None, activation, rho, constant, overrides)
    n = schema.n_boundaries if mode == "per_pair" else 1
    m0 = rng.uniform(lo, hi, size=n)
    excess = m0 - rho
    if activation == "relu":
        excess = np.maximum(excess, 0.0)
    raw = Tensor(_inverse_activation(excess, activation), requires_grad=True)
    return MarginSet(schema, mode, raw, activation, rho, constant, overrides)


def margins_from_values(schema: OrdinalSchema, values: Sequence[float], rho: float = 0.0,
                        activation: str = "softplus") -> MarginSet:
    """Per-boundary learnable margins initialized to the given activated values."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (schema.n_boundaries,):
        raise ValueError(f"expected {schema.n_boundaries} margin values, got {v.shape}")
    if np.any(v <= rho):
        raise ValueError("margin values must exceed rho")
    raw = Tensor(_inverse_activation(v - rho, activation), requires_grad=True)
    return MarginSet(schema, "per_pair", raw, activation, rho)


def activated_margins(ms: MarginSet) -> Tensor:
    return ms.activated()


def boundary_indicator(schema: OrdinalSchema, y: int, yk: int) -> np.ndarray:
    """0/1 vector selecting the boundaries strictly between ranks y and yk."""
    schema.check_rank(y)
    schema.check_rank(yk)
    if y == yk:
        raise ValueError("cumulative margin is only defined between distinct ranks")
    lo, hi = sorted((int(y), int(yk)))
    ind = np.zeros(schema.n_boundaries)
    ind[lo - 1:hi - 1] = 1.0
    return ind


def cumulative_margin(ms: MarginSet, y: int, yk: int, margins: Tensor | None = None) -> Tensor:
    """Sum of activated margins along the rank path from y to yk (symmetric)."""
    ind = boundary_indicator(ms.schema, y, yk)
    m = ms.activated() if margins is None else margins
    return matmul(m, Tensor(ind))


def cumulative_margin_matrix(schema: OrdinalSchema, values: Sequence[float]) -> np.ndarray:
    """C x C table of cumulative margins (zero diagonal), plain floats."""
    m = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(m)])
    return np.abs(c[:, None] - c[None, :])
