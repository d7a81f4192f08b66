"""Sweep text guidance weight on the toy model and on the closed-form mixture field.

Prints component accuracy and mean distance to the requested mean. Used to
examine whether the distance falls monotonically as w_T grows (it does not:
strong guidance pushes samples past the mode).
"""

import argparse

import numpy as np

from pixkit import toymodel as tm
from pixkit.flow import CfgWeights, Schedule, integrate
from pixkit.numcore import RngState


def exact_velocity(x, t, means, std):
    var = (1 - t) ** 2 + t**2 * std**2
    diff = x[:, None, :] - t * means[None]
    logw = -0.5 * (diff**2).sum(-1) / var
    w = np.exp(logw - logw.max(1, keepdims=True))
    w /= w.sum(1, keepdims=True)
    v = means[None] + (t * std**2 - (1 - t)) / var * diff
    return (w[..., None] * v).sum(1)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weights", type=float, nargs="+", default=[0, 1, 2, 4, 7])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--steps", type=int, default=30)
    args = ap.parse_args()

    data = tm.ToyDataset.two_gaussians()
    means = np.asarray(data.means)
    model, trace = tm.train(tm.VelocityMlp.init(RngState(0)), data, tm.TrainConfig())
    print(f"trained: loss ratio {tm.loss_reduction(trace):.3f}")

    def exact_field(x, t, ci, ct):
        return exact_velocity(x, t, means if ct is None else means[:1], data.stds[0])

    print(f"{'w_T':>5} {'acc (model)':>12} {'dist (model)':>13} {'dist (exact)':>13}")
    for w in args.weights:
        accs, dists, exact = [], [], []
        for s in range(args.seeds):
            r = tm.sample(model, args.n, 0, CfgWeights(1.0, w), "heun", Schedule(args.steps), RngState(s))
            accs.append(np.mean(tm.nearest_component(r.x, data) == 0))
            dists.append(np.linalg.norm(r.x - means[0], axis=1).mean())
            x0 = RngState(s).generator().standard_normal((args.n, 2))
            e = integrate(exact_field, x0, Schedule(args.steps), "heun", None, "A", CfgWeights(1.0, w))
            exact.append(np.linalg.norm(e.x - means[0], axis=1).mean())
        print(f"{w:>5.1f} {np.median(accs):>12.3f} {np.median(dists):>13.4f} {np.median(exact):>13.4f}")


if __name__ == "__main__":
    main()
