"""Multi-task versus single-task training on synthetic embeddings.

Three tasks share a 16-dim latent space; i/d/x-style vectors are noisy
projections of it, and each utterance keeps only some of its labels. One
idx network with three heads is compared with three one-head networks.

    python demos/multitask_vs_single.py
"""

import time

from sparta.evaluation import per_dataset_report
from sparta.network import build_network, make_config
from sparta.synthetic import multitask_vectors
from sparta.train import TrainConfig, train

data, _ = multitask_vectors((600, 150, 150), kind="idx", seed=0)
tcfg = TrainConfig(epochs=30, optimizer={"name": "adam", "lr": 0.003})
for task in ("gender", "emotion", "dialect"):
    print(f"{task:8s} labeled train/dev/test:",
          [len(data.labeled_ids(task, s)) for s in ("train", "dev", "test")])

start = time.perf_counter()
mtl, hist = train(build_network(make_config("idx", hidden=64, head_hidden=32), 0), data, tcfg)
print(f"\nMTL: best epoch {hist.best_epoch} of {len(hist.epochs)} ({time.perf_counter() - start:.1f} s)")
print("dev macro-F1:", {t: round(v, 3) for t, v in hist.epochs[hist.best_epoch].dev_macro_f1.items()})
print("head updates (head -> task -> count):", hist.head_updates)

print("\nSTL baselines")
for task in ("gender", "emotion", "dialect"):
    _, h = train(build_network(make_config("idx", hidden=64, head_hidden=32, tasks=[task]), 0), data, tcfg)
    print(f"  {task:8s} dev macro-F1 {h.best_score:.3f} (epoch {h.best_epoch})")

print("\nMTL test report")
print(per_dataset_report(mtl, data, "test").to_tsv())
