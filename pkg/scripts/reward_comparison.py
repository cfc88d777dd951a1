"""Final success of oracle, designed and adversarial rewards against the frozen pretrained agent."""
import numpy as np

from _common import config_for, dump, parser, setup
from advdialog.experiment import prepare, run_rl

SOURCES = ("oracle", "designed", "adversarial")


def main():
    args = parser(__doc__, range(5)).parse_args()
    setup(args)
    rows = {}
    for seed in args.seeds:
        pre = prepare(config_for(args, seed))
        runs = {src: run_rl(pre, reward_source=src) for src in SOURCES}
        rows[seed] = {"baseline": runs["oracle"]["baseline"],
                      **{src: r["final"] for src, r in runs.items()},
                      "curves": {src: r["log"] for src, r in runs.items()}}
        print(f"seed {seed}: " + "  ".join(f"{k} {rows[seed][k]:.3f}" for k in ("baseline",) + SOURCES),
              flush=True)
    means = {k: float(np.mean([r[k] for r in rows.values()])) for k in ("baseline",) + SOURCES}
    print("mean:   " + "  ".join(f"{k} {v:.3f}" for k, v in means.items()))
    dump(args, {"per_seed": rows, "mean": means})


if __name__ == "__main__":
    main()
