#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs the per-document training kernel over a synthetic corpus for every
mode/objective combination, once per backend (the backend is fixed at import
time by SEQVEC_PURE_NUMPY, so the two measurements run in subprocesses).

    python benchmarks/bench_kernels.py           # both backends + speedup
    python benchmarks/bench_kernels.py --inner   # current backend only
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(seconds_per_case: float = 2.0) -> dict:
    from seqvec import corpus, embedding
    from seqvec.kernels import BACKEND, kernel_args, uniforms_for, count_pairs, run_document

    rng = np.random.default_rng(0)
    v, k, window, num_neg = 600, 50, 5, 5
    codes = [f"dx:f{i // 80}.s{(i // 10) % 8}.l{i % 10}" for i in range(v)]
    counts = np.sort(rng.integers(300, 5000, v))[::-1].astype(np.int64)
    vocab = corpus.Vocabulary(codes, counts, 1, 1)
    tree = embedding.build_huffman(vocab)
    noise = embedding.build_noise_table(vocab)
    docs = [rng.integers(0, v, int(rng.integers(150, 450))).astype(np.int32)
            for _ in range(50)]

    results = {"backend": BACKEND, "cases": {}}
    for mode in ("dm", "dbow"):
        for objective in ("hs", "ns"):
            model = embedding.init_model(mode, objective, k, window, len(docs),
                                         vocab, seed=1)
            args = kernel_args(None, tree if objective == "hs" else None,
                               noise if objective == "ns" else None)
            # warmup (includes JIT compilation on the numba backend)
            u = uniforms_for(len(docs[0]), window, mode, objective, num_neg, 7)
            run_document(model.doc_vectors[0], model.token_vectors,
                         model.output_weights, docs[0], mode == "dbow",
                         objective == "ns", window, num_neg, False, *args, u,
                         0.025, -0.02, 0, 10 ** 9, True, True)
            positions = 0
            pairs = 0
            start = time.perf_counter()
            d = 0
            while time.perf_counter() - start < seconds_per_case:
                tokens = docs[d % len(docs)]
                u = uniforms_for(len(tokens), window, mode, objective, num_neg, d)
                run_document(model.doc_vectors[d % len(docs)], model.token_vectors,
                             model.output_weights, tokens, mode == "dbow",
                             objective == "ns", window, num_neg, False, *args, u,
                             0.025, -0.02, 0, 10 ** 9, True, True)
                positions += len(tokens)
                pairs += count_pairs(len(tokens), window, mode)
                d += 1
            elapsed = time.perf_counter() - start
            results["cases"][f"{mode}-{objective}"] = {
                "positions_per_s": positions / elapsed,
                "pairs_per_s": pairs / elapsed,
            }
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--inner", action="store_true",
                        help="measure only the backend selected by the environment")
    parser.add_argument("--seconds", type=float, default=2.0,
                        help="sampling window per case")
    opts = parser.parse_args()

    if opts.inner:
        print(json.dumps(measure(opts.seconds)))
        return 0

    runs = {}
    for flag, label in (("0", "numba"), ("1", "numpy")):
        env = dict(os.environ, SEQVEC_PURE_NUMPY=flag)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--inner",
             "--seconds", str(opts.seconds)],
            capture_output=True, text=True, env=env, check=True)
        runs[label] = json.loads(out.stdout.strip().splitlines()[-1])
        if runs[label]["backend"] != label:
            print(f"warning: requested {label} backend, measured "
                  f"{runs[label]['backend']} (numba missing?)", file=sys.stderr)

    print(f"{'case':>10} {'numba pos/s':>14} {'numpy pos/s':>14} {'speedup':>9}")
    for case in runs["numba"]["cases"]:
        fast = runs["numba"]["cases"][case]["positions_per_s"]
        slow = runs["numpy"]["cases"][case]["positions_per_s"]
        print(f"{case:>10} {fast:>14.0f} {slow:>14.0f} {fast / slow:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
