"""Evaluate a trained field: close/far RMSE per link, sign classification,
throughput against the GJK baseline, and isosurface export.

Expects demos/out/arm3_demo.ckpt from 02_dataset_and_training.py (run it
first); falls back to a fresh quick training if missing.
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from chainsdf import (SamplerConfig, bench_throughput, evaluate_field,
                      extract_isosurface, generate_dataset, load_checkpoint,
                      load_robot, save_obj, scaled_thresholds)

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "out")
ARM = os.path.join(HERE, "..", "assets", "robots", "arm3.robot.toml")
CKPT = os.path.join(OUT, "arm3_demo.ckpt")


def main():
    os.makedirs(OUT, exist_ok=True)
    if not os.path.exists(CKPT):
        print("no checkpoint found; running 02_dataset_and_training.py first")
        import importlib

        sys.path.insert(0, HERE)
        importlib.import_module("02_dataset_and_training").main()

    arm = load_robot(ARM)
    f = load_checkpoint(CKPT)

    # held-out testset with a fresh seed
    testset = generate_dataset(arm, SamplerConfig(configs_count=150, points_per_config=100,
                                                  seed=9911))
    close_thr, band = scaled_thresholds(arm.reach_radius())
    report = evaluate_field(f, testset, close_thr, band, param_count=f.params.count,
                            metadata={"testset_seed": 9911})
    print(report.to_text())

    timing = bench_throughput(f, batch_size=20_000, repeats=3,
                              joint_limits=arm.joint_limits())
    print(f"batched inference: {timing['per_sample_us']:.2f} us/sample at batch "
          f"{timing['batch_size']} vs {timing['single_query_us']:.1f} us single"
          f" | GJK baseline {timing['gjk_per_query_us']:.1f} us/convex pair")

    q = np.array([0.4, 0.8, -0.6])
    half = 1.05 * arm.reach_radius()
    bounds = ((-half, -half, -half), (half, half, half))
    for level in (0.001, 0.1):
        verts, faces = extract_isosurface(f, q, level, grid_resolution=96, bounds=bounds)
        path = os.path.join(OUT, f"arm3_level_{level:g}.obj")
        save_obj(path, verts, faces)
        print(f"level {level:g}: {len(verts)} vertices -> {path}")


if __name__ == "__main__":
    main()
