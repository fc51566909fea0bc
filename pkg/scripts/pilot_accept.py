"""Pilot for the desk-scale learned-vs-random experiment (tuning run)."""
import time

import numpy as np

from sensemat.dataset import ChannelGenConfig, build_dataset
from sensemat.train import TrainConfig, init_model, train, export_matrix
from sensemat.unfold import Variant
from sensemat.baselines import gaussian_matrix
from sensemat.metrics import evaluate
from sensemat.recon import SolverOptions

cfg = ChannelGenConfig(n_antennas=64, n_paths=3, rice_k_db=13.2, n_channels=5435,
                       sparsity=4, split_ratios=(0.92, 0.04, 0.04), seed=11)
data = build_dataset(cfg)
print("dataset", data.samples.shape, flush=True)

opts = SolverOptions(tol=1e-10, max_iters=50_000)
results = {}
for variant, ms in ((Variant.GAE, (10, 14, 18)), (Variant.GAECAT, (10,))):
    for m in ms:
        tcfg = TrainConfig(learning_rate=1e-3, batch_size=128, max_epochs=1000,
                           patience=25, alpha_init=1.0, depth=10, seed=3)
        t0 = time.perf_counter()
        model, report = train(init_model(variant, 64, m, tcfg), data, tcfg)
        dt = time.perf_counter() - t0
        matrix = export_matrix(model)
        row = evaluate(matrix, data, "bp_exact", opts=opts, n_samples=200)
        results[(variant.value, m)] = row
        print(f"{variant.value} M={m}: {dt:.0f}s, stop epoch {report.stopped_epoch} "
              f"(best {report.best_epoch}, val {report.best_val_loss:.4f}) -> "
              f"NMSE {row.nmse:.3e} acc {row.accurate_pct:.1f}%", flush=True)

for m in (10, 14, 18):
    nmses, accs = [], []
    for s in range(5):
        g = gaussian_matrix(m, 64, seed=1000 + s)
        row = evaluate(g, data, "bp_exact", opts=opts, n_samples=200)
        nmses.append(row.nmse)
        accs.append(row.accurate_pct)
    learned = results[("gae", m)]
    print(f"M={m}: gaussian mean NMSE {np.mean(nmses):.3e} (acc {np.mean(accs):.1f}%) | "
          f"gae NMSE {learned.nmse:.3e} ratio {learned.nmse/np.mean(nmses):.3f}", flush=True)

print("cat check M=10: gae acc", results[("gae", 10)].accurate_pct,
      "gaec acc", results[("gaecat", 10)].accurate_pct, flush=True)
