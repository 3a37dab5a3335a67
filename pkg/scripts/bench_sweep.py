"""Cost model in practice: evaluation counts and wall time over schedules.

Every run costs ceil(L / tokens_per_step) * (n_conditions + 1) model
evaluations; the harness asserts the law exactly while timing each grid
point. A second table shows per-image amortization from batching runs
against one shared (cache-warm) model.

    python scripts/bench_sweep.py --n-runs 10
"""

import argparse
import sys

from maskcompose.evalharness import run_batch_bench, run_bench
from maskcompose.worlds import (
    build_scene_world,
    exact_conditional_model,
    object_at_cell,
)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=int, default=3, help="square grid side")
    ap.add_argument("--n-runs", type=int, default=10, help="runs per grid point")
    ap.add_argument("--steps", type=int, nargs="+", default=[1, 3, 9])
    ap.add_argument("--conds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--batches", type=int, nargs="+", default=[1, 25])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    world = build_scene_world(
        args.grid, args.grid, n_shapes=1, n_colors=1, max_objects=3
    )
    model = exact_conditional_model(world)
    rows = run_bench(
        model, world,
        tokens_per_step_grid=args.steps,
        n_conditions_grid=args.conds,
        n_runs=args.n_runs,
        rng_seed=args.seed,
    )
    print(f"{'s':>4} {'n_cond':>7} {'steps':>6} {'evals':>6} {'ms/run':>9}")
    for r in rows:
        print(
            f"{r.tokens_per_step:>4} {r.n_conditions:>7} {r.steps:>6} "
            f"{r.evaluations:>6} {r.wall_per_run * 1e3:>9.2f}"
        )

    conds = [object_at_cell(0, 0)]
    batch = run_batch_bench(
        lambda: exact_conditional_model(world), world, conds,
        batch_sizes=args.batches, rng_seed=args.seed,
    )
    print("\nbatch amortization (cold model per batch):")
    print(f"{'batch':>6} {'ms/image':>10}")
    for row in batch:
        print(f"{row['batch_size']:>6} {row['wall_per_image'] * 1e3:>10.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
