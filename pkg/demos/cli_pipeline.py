"""The full command-line pipeline on a throwaway synthetic corpus.

Writes tone WAVs and a manifest, then runs extract, split, train and eval
for an MFCC/CNN model, and train, grid and eval for an idx/FC model on
synthetic vector stores. Each step is the same call the `sparta` console
script makes.

    python demos/cli_pipeline.py [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

from sparta.cli import main
from sparta.corpus import write_manifest
from sparta.synthetic import synthetic_corpus, write_corpus_audio, write_vector_stores

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="sparta-"))
root.mkdir(parents=True, exist_ok=True)


def run(*argv):
    print("\n$ sparta " + " ".join(argv))
    code = main(list(argv))
    if code:
        sys.exit(code)


manifest = write_corpus_audio(synthetic_corpus(60, 4, seed=0), root / "audio", seconds=0.3)
run("extract", "--manifest", str(manifest), "--features", "mfcc", "--out", str(root / "mfcc.sprt"))
run("split", "--manifest", str(manifest), "--seed", "1", "--out", str(root / "split.jsonl"))
(root / "cnn.json").write_text(json.dumps({"network": {"trunk": "CNN", "filters": 32, "filter_size": 5},
                                           "train": {"epochs": 5, "batch_size": 16}}))
audio = ["--manifest", str(manifest), "--split", str(root / "split.jsonl"), "--cache", f"mfcc={root / 'mfcc.sprt'}"]
run("train", "--config", str(root / "cnn.json"), *audio, "--features", "mfcc", "--mode", "stl", "--tasks", "g",
    "--out", str(root / "cnn"))
run("eval", "--checkpoint", str(root / "cnn"), *audio, "--out", str(root / "cnn_eval"))

dims = {"i": 12, "d": 8, "x": 10}
corpus = synthetic_corpus(480, 3, seed=0)
write_manifest(root / "vec.jsonl", corpus)
stores = write_vector_stores(corpus, root / "vectors", dims=dims, seed=0)
run("split", "--manifest", str(root / "vec.jsonl"), "--seed", "1", "--out", str(root / "vsplit.jsonl"))
vec = ["--manifest", str(root / "vec.jsonl"), "--split", str(root / "vsplit.jsonl")]
vec += [a for p in "idx" for a in ("--cache", f"{p}={stores[p]}")]
(root / "mtl.json").write_text(json.dumps({"network": {"hidden": 64, "head_hidden": 32, "vector_dims": dims},
                                           "train": {"epochs": 30, "optimizer": {"name": "adam", "lr": 0.003}}}))
(root / "space.json").write_text(json.dumps({"hidden": [32, 64], "head_hidden": [16, 32]}))
run("train", "--config", str(root / "mtl.json"), *vec, "--features", "idx", "--out", str(root / "mtl"))
run("grid", "--config", str(root / "mtl.json"), *vec, "--features", "idx", "--space", str(root / "space.json"),
    "--out", str(root / "grid"))
run("eval", "--checkpoint", str(root / "mtl"), *vec, "--out", str(root / "mtl_eval"))
print(f"\nartifacts in {root}")
