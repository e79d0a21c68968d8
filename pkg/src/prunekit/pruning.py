"""Filter selection, schedules and masks for the soft-to-hard pruning family.

A pruned filter is either *soft* (scaled by the decay factor after every
epoch but still trained) or *hard* (zero and excluded from gradient
updates for the rest of the run). The hardness ratio decides how many of
an epoch's pruned filters are hard; the mode decides which of the three
schedules are live.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .arch import pruned_count


class InvariantViolation(RuntimeError):
    pass


class FilterState(enum.IntEnum):
    ACTIVE = 0
    SOFT = 1
    HARD = 2


class Mode(str, enum.Enum):
    SFP = "SFP"
    SRFP = "SRFP"
    ASFP = "ASFP"
    ASRFP = "ASRFP"
    HFP = "HFP"
    GHFP = "GHFP"
    SOFT_AND_HARD = "SoftAndHard"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        for m in cls:
            if m.value.lower() == text.strip().lower():
                return m
        raise ValueError(f"unknown mode {text!r}; known: {', '.join(m.value for m in cls)}")


RAMPS = ("cubic", "linear", "constant")
_ZERO_ALPHA = {Mode.SFP, Mode.ASFP, Mode.HFP}
_SOFT_ONLY = {Mode.SFP, Mode.SRFP, Mode.ASFP, Mode.ASRFP}


@dataclass(frozen=True)
class ScheduleConfig:
    mode: Mode = Mode.GHFP
    alpha0: float = 0.0
    epsilon: float = 1e-4
    lambda_i: float = 0.0
    lambda_f: float = 1.0
    lambda_const: float = 0.5  # only read by SoftAndHard
    t_max: int = 200
    goal_rate: float = 0.0
    layer_rates: Mapping[str, float] = field(default_factory=dict)
    rate_ramp: str = "cubic"
    criterion: str = "l2"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode) if isinstance(self.mode, str) else self.mode)
        object.__setattr__(self, "layer_rates", dict(self.layer_rates))
        if self.t_max < 2:
            raise ValueError(f"t_max must be >= 2, got {self.t_max}")
        if not 0 <= self.alpha0 <= 1:
            raise ValueError(f"alpha0 must be in [0, 1], got {self.alpha0}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.alpha0 > 0 and self.epsilon >= self.alpha0:
            raise ValueError(f"epsilon ({self.epsilon}) must be below alpha0 ({self.alpha0})")
        for name in ("lambda_i", "lambda_f", "lambda_const"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.lambda_i > self.lambda_f:
            raise ValueError(
                f"lambda_i ({self.lambda_i}) > lambda_f ({self.lambda_f}): "
                "a decreasing hardness ratio would re-soften hard filters")
        for lid, r in [("goal_rate", self.goal_rate), *self.layer_rates.items()]:
            if not 0 <= r < 1:
                raise ValueError(f"pruning rate for {lid} must be in [0, 1), got {r}")
        if self.rate_ramp not in RAMPS:
            raise ValueError(f"rate_ramp must be one of {RAMPS}, got {self.rate_ramp!r}")
        if self.criterion not in ("l2", "l1"):
            raise ValueError(f"criterion must be 'l2' or 'l1', got {self.criterion!r}")

    @classmethod
    def for_mode(cls, mode: Mode | str, goal_rate: float, **kw) -> "ScheduleConfig":
        """Config with the defaults each method is usually run with."""
        mode = Mode.parse(mode) if isinstance(mode, str) else mode
        kw.setdefault("rate_ramp", "constant" if mode in (Mode.SFP, Mode.SRFP) else "cubic")
        kw.setdefault("alpha0", 1.0 if mode in (Mode.SRFP, Mode.ASRFP) else 0.0)
        return cls(mode=mode, goal_rate=goal_rate, **kw)

    def rate_for(self, layer: str) -> float:
        return self.layer_rates.get(layer, self.goal_rate)


def _check_epoch(cfg: ScheduleConfig, t: int) -> None:
    if not 0 <= t < cfg.t_max:
        raise ValueError(f"epoch {t} outside [0, {cfg.t_max})")


def _cubic(cfg: ScheduleConfig, t: int) -> float:
    last = cfg.t_max - 1
    return 1.0 - ((last - t) / last) ** 3


def alpha_schedule(cfg: ScheduleConfig, t: int) -> float:
    """Exponential decay from alpha0 towards epsilon, snapped to 0 at or below epsilon."""
    _check_epoch(cfg, t)
    a0 = cfg.alpha0
    if cfg.mode in _ZERO_ALPHA or a0 == 0:
        return 0.0
    if t == cfg.t_max - 1:
        return 0.0
    value = a0 * (a0 / cfg.epsilon) ** (-t / (cfg.t_max - 1))
    return 0.0 if value <= cfg.epsilon else value


def lambda_schedule(cfg: ScheduleConfig, t: int) -> float:
    _check_epoch(cfg, t)
    if cfg.mode in _SOFT_ONLY:
        return 0.0
    if cfg.mode is Mode.HFP:
        return 1.0
    if cfg.mode is Mode.SOFT_AND_HARD:
        return cfg.lambda_const
    if t == cfg.t_max - 1:
        return cfg.lambda_f
    return cfg.lambda_i + (cfg.lambda_f - cfg.lambda_i) * _cubic(cfg, t)


def rate_schedule(cfg: ScheduleConfig, layer: str, t: int) -> float:
    _check_epoch(cfg, t)
    goal = cfg.rate_for(layer)
    if cfg.rate_ramp == "constant" or t == cfg.t_max - 1:
        return goal
    if cfg.rate_ramp == "linear":
        return goal * t / (cfg.t_max - 1)
    return goal * _cubic(cfg, t)


def schedule_csv(cfg: ScheduleConfig, layers: Sequence[str] = ("layer0",)) -> str:
    buf = io.StringIO()
    buf.write(",".join(["t", "alpha", "lambda_h", *(f"rate_{l}" for l in layers)]) + "\n")
    for t in range(cfg.t_max):
        row = [str(t), repr(alpha_schedule(cfg, t)), repr(lambda_schedule(cfg, t))]
        row += [repr(rate_schedule(cfg, l, t)) for l in layers]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


# --- importance and selection ----------------------------------------------

def importance_l2(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"expected [n, m, s, s] weights, got shape {w.shape}")
    return np.sqrt(np.einsum("nmij,nmij->n", w, w))


def importance_l1(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"expected [n, m, s, s] weights, got shape {w.shape}")
    return np.abs(w).sum(axis=(1, 2, 3))


IMPORTANCE = {"l2": importance_l2, "l1": importance_l1}


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5 + 1e-9)


def select_filters(norms, states, rate: float, lambda_h: float) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``floor(rate * n)`` smallest-norm filters and split them into
    ``(hard, soft)`` index arrays, hard being the smallest of the pruned.

    Ties go to filters that are already hard, then to the lower index.
    Hard filters sit at norm 0, so this only matters when some other filter
    is also exactly zero.
    """
    norms = np.asarray(norms, dtype=np.float64)
    states = np.asarray(states)
    n = norms.shape[0]
    if states.shape != (n,):
        raise ValueError(f"mask length {states.shape} != number of filters {n}")
    if not 0 <= rate < 1 or not 0 <= lambda_h <= 1:
        raise ValueError(f"rate {rate} / lambda_h {lambda_h} out of range")
    n_pruned = pruned_count(n, rate)
    n_hard = round_half_up(lambda_h * n_pruned)
    was_hard = states == FilterState.HARD
    if n_hard < was_hard.sum():
        raise InvariantViolation(
            f"hard count {n_hard} below existing hard count {int(was_hard.sum())}")
    order = np.lexsort((np.arange(n), ~was_hard, norms))
    hard = np.sort(order[:n_hard])
    soft = np.sort(order[n_hard:n_pruned])
    if not np.isin(np.flatnonzero(was_hard), hard).all():
        raise InvariantViolation("a previously hard filter left the hard set")
    return hard, soft


def apply_soft_mask(weights: np.ndarray, hard, soft, alpha: float) -> np.ndarray:
    """Zero ``hard`` filters and scale ``soft`` filters by ``alpha``, in place."""
    n = weights.shape[0]
    for idx in (hard, soft):
        idx = np.asarray(idx, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"filter index out of range for {n} filters")
    weights[np.asarray(hard, dtype=np.intp)] = 0.0
    if alpha == 0:
        weights[np.asarray(soft, dtype=np.intp)] = 0.0
    else:
        weights[np.asarray(soft, dtype=np.intp)] *= alpha
    return weights


def apply_grad_mask(grads: np.ndarray, states) -> np.ndarray:
    """Zero the gradient rows of hard filters, in place."""
    states = np.asarray(states)
    if grads.shape[0] != states.shape[0]:
        raise ValueError(f"grad shape {grads.shape} does not match mask of length {states.shape[0]}")
    grads[states == FilterState.HARD] = 0.0
    return grads


# --- run state -----------------------------------------------------------------

class FilterMask(dict):
    """layer id -> int8 array of FilterState."""

    @classmethod
    def all_active(cls, widths: Mapping[str, int]) -> "FilterMask":
        return cls({lid: np.zeros(n, dtype=np.int8) for lid, n in widths.items()})

    def set_selection(self, layer: str, hard, soft) -> None:
        states = np.zeros_like(self[layer])
        states[np.asarray(soft, dtype=np.intp)] = FilterState.SOFT
        states[np.asarray(hard, dtype=np.intp)] = FilterState.HARD
        self[layer] = states

    def indices(self, layer: str, state: FilterState) -> np.ndarray:
        return np.flatnonzero(self[layer] == state)

    def counts(self, layer: str) -> tuple[int, int]:
        s = self[layer]
        return int((s == FilterState.HARD).sum()), int((s == FilterState.SOFT).sum())

    def pruned(self, layer: str) -> np.ndarray:
        return np.flatnonzero(self[layer] != FilterState.ACTIVE)


@dataclass
class PruneState:
    t: int
    alpha: float
    lambda_h: float
    rates: dict[str, float]
    selection: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def schedule_at(cfg: ScheduleConfig, layers: Sequence[str], t: int) -> PruneState:
    return PruneState(t, alpha_schedule(cfg, t), lambda_schedule(cfg, t),
                      {l: rate_schedule(cfg, l, t) for l in layers})


def prune_step(params: Mapping[str, np.ndarray], mask: FilterMask, state: PruneState,
               criterion: str = "l2") -> PruneState:
    """Score, select and mask every prunable layer for one epoch."""
    score = IMPORTANCE[criterion]
    for lid in mask:
        w = params[lid]
        hard, soft = select_filters(score(w), mask[lid], state.rates[lid], state.lambda_h)
        apply_soft_mask(w, hard, soft, state.alpha)
        mask.set_selection(lid, hard, soft)
        state.selection[lid] = (hard, soft)
    return state
