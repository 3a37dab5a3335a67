"""Iterative token-grid generation under composed conditioning.

Two modes share one loop. Masked mode starts from an all-MASK grid and fixes
one or more positions per step, never revisiting them (absorbing property).
Autoregressive mode fixes exactly one position per step, left to right. At
every step the backing model is queried once without a condition and once per
condition, the per-position distributions are composed in log space, the
schedule temperature is applied and tokens are drawn for the selected
positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

from .compose import DEFAULT_LOGP_FLOOR, DEFAULT_TEMPERATURE, compose_logits, normalize_logits
from .errors import NoMaskedSlots, NonPositiveTemperature, ShapeMismatch

MASK = -1

MODE_MASKED = "masked"
MODE_AUTOREGRESSIVE = "autoregressive"
ORDER_RANDOM = "random_fixed_seed"
ORDER_MAX_CONFIDENCE = "max_confidence"


@dataclass(frozen=True)
class MaskedState:
    """A length-L token grid where unfixed slots hold the MASK sentinel."""

    tokens: np.ndarray
    t: int = 0

    def __post_init__(self):
        arr = np.asarray(self.tokens, dtype=np.int16)
        object.__setattr__(self, "tokens", arr)

    @classmethod
    def fully_masked(cls, length: int) -> "MaskedState":
        return cls(np.full(length, MASK, dtype=np.int16), t=0)

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero(self.tokens == MASK)

    def is_complete(self) -> bool:
        return not bool((self.tokens == MASK).any())

    def key(self) -> bytes:
        return self.tokens.tobytes()

    def with_fixed(self, positions: Sequence[int], values: Sequence[int]) -> "MaskedState":
        """Return a successor state; refuses to overwrite an unmasked slot."""
        tokens = self.tokens.copy()
        for p, v in zip(positions, values):
            if tokens[p] != MASK:
                raise ValueError(f"slot {p} is already fixed; unmasked slots never change")
            tokens[p] = v
        return MaskedState(tokens, t=self.t + 1)


@dataclass(frozen=True)
class SamplerSchedule:
    """How a run unmaskes its grid.

    Masked mode finishes in exactly ceil(L / tokens_per_step) steps.
    Autoregressive mode requires tokens_per_step = 1 and ignores order_policy
    in favor of fixed left-to-right order.
    """

    mode: str = MODE_MASKED
    tokens_per_step: int = 1
    order_policy: str = ORDER_RANDOM
    rng_seed: int = 0
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.mode not in (MODE_MASKED, MODE_AUTOREGRESSIVE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.order_policy not in (ORDER_RANDOM, ORDER_MAX_CONFIDENCE):
            raise ValueError(f"unknown order_policy {self.order_policy!r}")
        if self.tokens_per_step < 1:
            raise ValueError("tokens_per_step must be >= 1")
        if self.mode == MODE_AUTOREGRESSIVE and self.tokens_per_step != 1:
            raise ValueError("autoregressive mode forces tokens_per_step = 1")
        if not (self.temperature > 0.0) or not math.isfinite(self.temperature):
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature}")


class ConditionalModel(Protocol):
    """Per-position predictor over K tokens for partially unmasked grids.

    predict(state, condition) returns one normalized log-probability vector
    for every currently masked position of `state`. condition = None asks for
    the unconditional distribution.
    """

    vocab_size: int

    def predict(self, state: MaskedState, condition=None) -> Mapping[int, np.ndarray]: ...


@dataclass
class RunStats:
    steps: int = 0
    evaluations: int = 0


def count_evaluations(sched: SamplerSchedule, length: int, n_conditions: int) -> int:
    """Model evaluations for a full run: steps times (n + 1)."""
    if sched.mode == MODE_AUTOREGRESSIVE:
        steps = length
    else:
        steps = math.ceil(length / sched.tokens_per_step)
    return steps * (n_conditions + 1)


def sample_token(logp: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a log-probability vector."""
    cum = np.cumsum(np.exp(logp))
    u = rng.random() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, logp.size - 1)


def _select_positions(
    state: MaskedState,
    sched: SamplerSchedule,
    order: np.ndarray | None,
    composed: dict[int, np.ndarray] | None,
) -> list[int]:
    masked = state.masked_positions()
    take = min(sched.tokens_per_step, masked.size)
    if sched.mode == MODE_AUTOREGRESSIVE:
        return [int(masked[0])]
    if sched.order_policy == ORDER_MAX_CONFIDENCE:
        # highest composed max-probability first; ties go to the lower index
        conf = np.array([composed[int(p)].max() for p in masked])
        ranked = masked[np.lexsort((masked, -conf))]
        return sorted(int(p) for p in ranked[:take])
    masked_set = set(int(p) for p in masked)
    picked = [int(p) for p in order if int(p) in masked_set][:take]
    return sorted(picked)


def composed_step(
    state: MaskedState,
    model: ConditionalModel,
    conds: Sequence,
    weights: Sequence[float],
    sched: SamplerSchedule,
    rng: np.random.Generator | None = None,
    order: np.ndarray | None = None,
    stats: RunStats | None = None,
    logp_floor: float = DEFAULT_LOGP_FLOOR,
) -> MaskedState:
    """Advance one step: query, compose, select, draw.

    The model is evaluated once unconditionally and once per condition,
    regardless of how many positions get fixed. When no rng or unmasking
    order is supplied they are derived from sched.rng_seed, which makes a
    standalone call reproducible but independent of any surrounding run.
    """
    if len(conds) != len(weights):
        raise ShapeMismatch(f"{len(conds)} conditions vs {len(weights)} weights")
    if state.is_complete():
        raise NoMaskedSlots("state has no masked slots left")
    if rng is None:
        rng = np.random.default_rng(sched.rng_seed)
    if order is None and sched.mode == MODE_MASKED and sched.order_policy == ORDER_RANDOM:
        order = rng.permutation(state.length)

    uncond = model.predict(state, None)
    if stats is not None:
        stats.evaluations += 1
    per_cond = []
    for c in conds:
        per_cond.append(model.predict(state, c))
        if stats is not None:
            stats.evaluations += 1

    def composed_at(pos: int) -> np.ndarray:
        out = compose_logits(
            uncond[pos], [d[pos] for d in per_cond], list(weights), logp_floor
        )
        if sched.temperature != 1.0:
            out = normalize_logits(out / sched.temperature)
        return out

    composed_all = None
    if sched.mode == MODE_MASKED and sched.order_policy == ORDER_MAX_CONFIDENCE:
        composed_all = {int(p): composed_at(int(p)) for p in state.masked_positions()}
    selected = _select_positions(state, sched, order, composed_all)

    values = []
    for pos in selected:  # ascending position order fixes rng consumption
        dist = composed_all[pos] if composed_all is not None else composed_at(pos)
        values.append(sample_token(dist, rng))
    new_state = state.with_fixed(selected, values)
    if stats is not None:
        stats.steps += 1
    return new_state


def run_to_completion(
    initial: MaskedState,
    model: ConditionalModel,
    conds: Sequence,
    weights: Sequence[float],
    sched: SamplerSchedule,
) -> tuple[np.ndarray, RunStats]:
    """Drive composed_step until every slot is fixed.

    The whole run is a pure function of (initial, model, conds, weights,
    sched): a fresh generator is seeded from sched.rng_seed and, in masked
    random-order mode, one permutation drawn up front fixes the unmasking
    order for the entire run.
    """
    if not bool((initial.tokens == MASK).all()):
        raise ValueError("run_to_completion expects a fully masked initial state")
    rng = np.random.default_rng(sched.rng_seed)
    order = None
    if sched.mode == MODE_MASKED and sched.order_policy == ORDER_RANDOM:
        order = rng.permutation(initial.length)
    stats = RunStats()
    state = initial
    while not state.is_complete():
        state = composed_step(
            state, model, conds, weights, sched, rng=rng, order=order, stats=stats
        )
    return state.tokens.copy(), stats


def schedule_for(
    mode: str = MODE_MASKED,
    tokens_per_step: int = 1,
    order_policy: str = ORDER_RANDOM,
    rng_seed: int = 0,
    temperature: float = DEFAULT_TEMPERATURE,
) -> SamplerSchedule:
    """Convenience constructor mirroring SamplerSchedule's fields."""
    return SamplerSchedule(
        mode=mode,
        tokens_per_step=tokens_per_step,
        order_policy=order_policy,
        rng_seed=rng_seed,
        temperature=temperature,
    )


def reseeded(sched: SamplerSchedule, rng_seed: int) -> SamplerSchedule:
    return replace(sched, rng_seed=rng_seed)
