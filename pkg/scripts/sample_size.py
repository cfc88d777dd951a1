"""Adversarial training with different numbers of positive D-pretraining samples."""
import numpy as np

from _common import config_for, dump, parser, setup
from advdialog.experiment import discriminator_metrics, discriminator_stage, pretrain_agent_stage, run_rl, simulate_stage


def main():
    p = parser(__doc__, range(3))
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 1000])
    args = p.parse_args()
    setup(args)
    finals = {n: [] for n in args.sizes}
    curves = {}
    for seed in args.seeds:
        base = simulate_stage(pretrain_agent_stage(config_for(args, seed)))
        for n in args.sizes:
            pre = discriminator_stage(base, positives=n)
            r = run_rl(pre)
            finals[n].append(r["final"])
            curves[f"{seed}/{n}"] = r["log"]
            print(f"seed {seed} positives {n}: D {discriminator_metrics(pre)}  final {r['final']:.3f}", flush=True)
    for n, xs in finals.items():
        print(f"positives {n:5d}: mean final success {np.mean(xs):.3f}")
    dump(args, {"final": finals, "curves": curves})


if __name__ == "__main__":
    main()
