"""Adversarial training with positive user feedback folded into the D pool at several rates."""
import numpy as np

from _common import config_for, dump, parser, setup
from advdialog.experiment import prepare, run_rl


def main():
    p = parser(__doc__, range(3))
    p.add_argument("--rates", type=float, nargs="+", default=[0.0, 0.1, 0.2])
    args = p.parse_args()
    setup(args)
    finals = {r: [] for r in args.rates}
    curves = {}
    for seed in args.seeds:
        pre = prepare(config_for(args, seed))
        for rate in args.rates:
            r = run_rl(pre, feedback_rate=rate)
            finals[rate].append(r["final"])
            curves[f"{seed}/{rate}"] = r["log"]
            print(f"seed {seed} rate {rate}: final {r['final']:.3f}  pool {r['log'][-1]['pool_size']}",
                  flush=True)
    for rate, xs in finals.items():
        print(f"feedback rate {rate:.2f}: mean final success {np.mean(xs):.3f}")
    dump(args, {"final": finals, "curves": curves})


if __name__ == "__main__":
    main()
