"""Offline accuracy and mean success/fail probabilities for each pooling method."""
import numpy as np

from _common import config_for, dump, parser, setup
from advdialog.discriminator import POOLING_METHODS
from advdialog.experiment import discriminator_metrics, discriminator_stage, pretrain_agent_stage, simulate_stage


def main():
    p = parser(__doc__, range(3))
    p.add_argument("--positives", type=int, default=500)
    args = p.parse_args()
    setup(args)
    table = {m: [] for m in POOLING_METHODS}
    for seed in args.seeds:
        base = simulate_stage(pretrain_agent_stage(config_for(args, seed)))
        for method in POOLING_METHODS:
            table[method].append(discriminator_metrics(discriminator_stage(base, args.positives, method)))
    print(f"{'pooling':8s} {'accuracy':>9s} {'succ prob':>10s} {'fail prob':>10s}")
    means = {}
    for method, ms in table.items():
        means[method] = {k: float(np.mean([m[k] for m in ms])) for k in ms[0]}
        mm = means[method]
        print(f"{method:8s} {mm['accuracy']:9.3f} {mm['success_prob']:10.3f} {mm['fail_prob']:10.3f}")
    dump(args, {"per_seed": table, "mean": means})


if __name__ == "__main__":
    main()
