"""Compare the three residual norms on an outlier-contaminated scene: after
the same number of descent steps, report which fraction of the confident
pixel set sits within 2mm of the truth.

Usage: python scripts/run_norm_comparison.py [--seed 300]
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from mvslab import depthopt, synth
from mvslab.geometry import CameraView
from mvslab.grids import Image
from mvslab.losses import LossWeights, NormKind
from mvslab.planesweep import SweepConfig, cascade_infer
from mvslab.sampling import (Sample, curriculum, make_image_contrastive,
                             make_scene_contrastive, select_regular_views)


def contaminate(sample, frac, seed):
    out = []
    for i, view in enumerate(sample.sources):
        rng = np.random.default_rng([seed, i, 77])
        img = view.image.data.copy()
        h, w, _ = img.shape
        covered = np.zeros((h, w), dtype=bool)
        while covered.mean() < frac:
            rh = int(rng.integers(4, 12))
            rw = int(rng.integers(5, 14))
            v0 = int(rng.integers(0, h - rh))
            u0 = int(rng.integers(0, w - rw))
            img[v0:v0 + rh, u0:u0 + rw] = rng.random((rh, rw, 3))
            covered[v0:v0 + rh, u0:u0 + rw] = True
        out.append(CameraView(Image(img), view.camera, view.gt_depth, view.view_id))
    return Sample(sample.reference, out, kind=sample.kind)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=300)
    parser.add_argument("--iterations", type=int, default=60)
    args = parser.parse_args()

    scene = synth.gen_scene(synth.SceneSpec(height=48, width=64, n_views=7,
                                            seed=args.seed))
    gt = scene.views[0].gt_depth.data
    reference = scene.views[0]
    candidates = [v for v in scene.views if v.view_id != 0]
    regular = select_regular_views(reference, candidates, scene.pair_scores[0], 5)
    regular = contaminate(regular, 0.20, args.seed + 600)
    stages = cascade_infer(regular)
    prob_map = stages[-1].prob_map.data
    top80 = prob_map >= np.quantile(prob_map, 0.2)
    init = stages[-1].depth
    print(f"initialization: {np.abs(init.data - gt)[top80].mean():.2f}mm mean "
          f"error on the top-80% confidence set")
    samples = {"regular": regular,
               "image_contrastive": make_image_contrastive(regular, 0.0, 1, None),
               "scene_contrastive": make_scene_contrastive(scene.views, reference,
                                                           5, 1)}
    schedule = curriculum(0, 16)
    for exponent in (0.5, 1.0, 2.0):
        opt = depthopt.OptimizerConfig(iterations=args.iterations,
                                       image_consist_weight=0.0,
                                       norm=NormKind(exponent),
                                       weights=LossWeights(scene_consist=0.0))
        state = depthopt.optimize_joint(samples, schedule, SweepConfig(), opt,
                                        init_depths={k: init for k in samples})
        err = np.abs(state.depths["regular"].data - gt)
        print(f"norm exponent {exponent:3.1f}: within 2mm on confident set "
              f"{(err[top80] <= 2.0).mean():.3f}, median {np.median(err):6.3f}mm")


if __name__ == "__main__":
    main()
