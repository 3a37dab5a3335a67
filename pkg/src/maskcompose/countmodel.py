"""Count-based conditional model trained on randomly masked grid views.

The model is a table of Laplace-smoothed token counts. Every bucket is keyed
by (position, local context signature, condition key): the signature is the
sorted multiset of unmasked tokens in the position's Chebyshev-radius-1
neighborhood, so the model generalizes across mask patterns that reveal the
same local evidence. Training draws (grid, condition) pairs from a world,
drops the condition with a fixed probability so the same table also carries
an unconditional branch, masks each position with a per-sample random rate
and records the true token of every masked position under its visible
context.

At query time an unpopulated bucket backs off along a fixed chain: first
drop the signature but keep the condition, then drop the condition but keep
the signature, then drop both. Keeping the condition ahead of the context
means an expert asked about an unfamiliar neighborhood still answers from
its conditional marginals instead of going silent, which is what lets
composed prompts reach scenes denser than anything in training. A tuple of
conditions is keyed as one opaque joint prompt; a model trained only on
single conditions has no buckets for that key at any level, so joint
prompts fall through to the unconditional branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sampler import MASK, MaskedState
from .worlds import UNCONDITIONAL_KEY, WorldJoint, cond_key

WINDOW_RADIUS = 1

DEFAULT_ALPHA = 0.5
DEFAULT_DROPOUT = 0.1


def neighbor_lists(grid_w: int, grid_h: int, radius: int = WINDOW_RADIUS) -> list[np.ndarray]:
    """Flat indices within Chebyshev distance radius of each position."""
    out = []
    for row in range(grid_h):
        for col in range(grid_w):
            nbrs = [
                r * grid_w + c
                for r in range(max(0, row - radius), min(grid_h, row + radius + 1))
                for c in range(max(0, col - radius), min(grid_w, col + radius + 1))
                if (r, c) != (row, col)
            ]
            out.append(np.array(nbrs, dtype=np.int64))
    return out


@dataclass
class CountModel:
    grid_w: int
    grid_h: int
    vocab_size: int
    alpha: float = DEFAULT_ALPHA
    dropout_prob: float = DEFAULT_DROPOUT
    counts: dict = field(default_factory=dict)
    n_samples: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("dropout_prob must lie in [0, 1]")
        self._neighbors = neighbor_lists(self.grid_w, self.grid_h)

    @property
    def length(self) -> int:
        return self.grid_w * self.grid_h

    def signature(self, tokens: np.ndarray, pos: int) -> tuple[int, ...]:
        """Sorted unmasked neighbor tokens around pos; masked slots drop out."""
        vals = [int(tokens[q]) for q in self._neighbors[pos] if tokens[q] != MASK]
        return tuple(sorted(vals))

    def observe(self, view: np.ndarray, grid: np.ndarray, key: tuple):
        """Record every masked position of `view` with its true token."""
        for p in np.flatnonzero(view == MASK):
            bucket_key = (int(p), self.signature(view, int(p)), key)
            bucket = self.counts.get(bucket_key)
            if bucket is None:
                bucket = np.zeros(self.vocab_size, dtype=np.int64)
                self.counts[bucket_key] = bucket
            bucket[int(grid[p])] += 1

    def _bucket(self, pos: int, sig: tuple, key: tuple) -> np.ndarray | None:
        # backoff order: signature first, condition second
        chain = (
            (pos, sig, key),
            (pos, (), key),
            (pos, sig, UNCONDITIONAL_KEY),
            (pos, (), UNCONDITIONAL_KEY),
        )
        for cand in chain:
            bucket = self.counts.get(cand)
            if bucket is not None and bucket.sum() > 0:
                return bucket
        return None

    def predict(self, state: MaskedState, condition=None) -> dict[int, np.ndarray]:
        key = cond_key(condition)
        out = {}
        with np.errstate(divide="ignore"):
            for p in state.masked_positions():
                p = int(p)
                sig = self.signature(state.tokens, p)
                bucket = self._bucket(p, sig, key)
                if bucket is None:
                    bucket = np.zeros(self.vocab_size, dtype=np.int64)
                total = float(bucket.sum())
                denom = total + self.vocab_size * self.alpha
                if denom == 0.0:  # alpha 0 and nothing observed: fall to uniform
                    probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
                else:
                    probs = (bucket + self.alpha) / denom
                out[p] = np.log(probs)
        return out

    def n_buckets(self) -> int:
        return len(self.counts)


def fit_count_model(
    world: WorldJoint,
    n_samples: int,
    alpha: float = DEFAULT_ALPHA,
    dropout_prob: float = DEFAULT_DROPOUT,
    rng_seed: int = 0,
    training_max_objects: int | None = None,
) -> CountModel:
    """Train a CountModel on masked views of world samples.

    training_max_objects restricts the scene budget of the training
    distribution only (the model can still be asked to generate denser
    grids); it requires a world with a restrict method.
    """
    train_world = world
    if training_max_objects is not None:
        train_world = world.restrict(training_max_objects)
    model = CountModel(
        grid_w=world.grid_w,
        grid_h=world.grid_h,
        vocab_size=world.vocab_size,
        alpha=alpha,
        dropout_prob=dropout_prob,
        n_samples=n_samples,
        rng_seed=rng_seed,
    )
    rng = np.random.default_rng(rng_seed)
    grids, conds = train_world.sample_training_pairs(rng, n_samples)
    drop = rng.random(n_samples) < dropout_prob
    rates = rng.random(n_samples)
    mask_draws = rng.random((n_samples, model.length))
    for i in range(n_samples):
        maskbits = mask_draws[i] < rates[i]
        if not maskbits.any():
            continue
        cond = None if drop[i] else conds[i]
        view = grids[i].copy()
        view[maskbits] = MASK
        model.observe(view, grids[i], cond_key(cond))
    return model
