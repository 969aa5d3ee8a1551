"""Generate a balanced distance dataset and train a small field on it.

Uses a reduced budget so the whole script runs in about a minute; the
full-size protocol lives in the CLI (see README). Artifacts land in
demos/out/.
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from chainsdf import (NeuralField, SamplerConfig, TrainConfig, default_arch,
                      generate_dataset, load_robot, save_checkpoint, save_dataset,
                      train)
from chainsdf.robot import model_hash

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "out")
ARM = os.path.join(HERE, "..", "assets", "robots", "arm3.robot.toml")


def main():
    os.makedirs(OUT, exist_ok=True)
    arm = load_robot(ARM)

    cfg = SamplerConfig(configs_count=300, points_per_config=200, seed=11)
    ds = generate_dataset(arm, cfg)
    print(f"dataset: {len(ds)} records, inside fraction {ds.inside_fraction():.3f}, "
          f"near-surface fraction {ds.near_surface_mask.mean():.3f}")
    print(f"  band half-width d_s = {ds.metadata['config']['d_s']*1000:.1f} mm "
          f"(5% of reach), limits expanded by 5%")
    save_dataset(ds, os.path.join(OUT, "arm3_demo.sdfd"))

    arch = default_arch("rndf", m=arm.dof, n=arm.n_links, latent_size=32,
                        encoding_frequencies=4)
    tcfg = TrainConfig(epochs=25, batch_size=512, learning_rate=2e-3, seed=0)
    print(f"\ntraining {arch.variant} (K={arch.latent_size}) for {tcfg.epochs} epochs...")
    result = train(ds, arch, tcfg, log_path=os.path.join(OUT, "train_demo.log"))
    print(f"best validation RMSE: {result.best_val_rmse*1000:.2f} mm at epoch {result.best_epoch}")

    ckpt = os.path.join(OUT, "arm3_demo.ckpt")
    save_checkpoint(ckpt, result.params, robot_hash=model_hash(arm),
                    metadata={"demo": True})
    print(f"checkpoint written to {ckpt}")

    # the learned field vs the exact oracle at a few points
    from chainsdf import OracleField

    f = NeuralField(result.params, arch)
    oracle = OracleField(arm)
    rng = np.random.default_rng(4)
    q = rng.uniform(-1.5, 1.5, 3)
    pts = rng.uniform(-0.6, 0.6, (5, 3))
    pred = f.query(q, pts)
    true = oracle.query(q, pts)
    print("\nprediction vs truth (m):")
    for i in range(len(pts)):
        print(f"  min_k pred {pred[i].min():+.4f}   true {true[i].min():+.4f}")


if __name__ == "__main__":
    main()
