"""Benchmark the compiled kernels against the NumPy fallback.

Runs each hot kernel on training-shaped inputs, then times a full
multitask optimizer step under both backends.

    python benchmarks/bench_kernels.py [--steps 4] [--repeat 5]
"""

import argparse
import time

import numpy as np

from triplet_tagger import backend
from triplet_tagger import corpus as C
from triplet_tagger import model as M
from triplet_tagger import trainer as TR


def best_of(fn, repeat):
    fn()  # warmup
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    rows, cols, d = 2048, 48, 64
    x = rng.normal(size=(rows, cols))
    soft = 1.0 / (1.0 + np.exp(-x))
    gy = rng.normal(size=(rows, cols))
    xd = rng.normal(size=(rows, d))
    gyd = rng.normal(size=(rows, d))
    gamma, beta = rng.normal(size=d), rng.normal(size=d)
    xhat = rng.normal(size=(rows, d))
    inv_std = np.abs(rng.normal(size=rows)) + 0.5
    big = rng.normal(size=(rows, 128))
    logits = rng.normal(size=(rows, 8))
    gold = rng.integers(0, 8, size=rows)
    mask = (rng.random(rows) < 0.8).astype(float)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    x3 = rng.normal(size=(32, cols, d))
    mask2 = (rng.random((32, cols)) < 0.8).astype(float)
    mask2[:, 0] = 1.0
    counts = mask2.sum(axis=1)
    gy2 = rng.normal(size=(32, d))
    table_grad = np.zeros((500, d))
    ids = rng.integers(0, 500, size=rows)
    param = rng.normal(size=(d, d))
    grad = rng.normal(size=(d, d))
    m = np.zeros_like(param)
    v = np.zeros_like(param)

    return [
        ("all_finite", lambda k: k.all_finite(big)),
        ("softmax_fwd", lambda k: k.softmax_fwd(x)),
        ("softmax_bwd", lambda k: k.softmax_bwd(soft, gy)),
        ("layernorm_fwd", lambda k: k.layernorm_fwd(xd, gamma, beta, 1e-5)),
        ("layernorm_bwd", lambda k: k.layernorm_bwd(gyd, xhat, inv_std, gamma)),
        ("gelu_fwd", lambda k: k.gelu_fwd(big)),
        ("gelu_bwd", lambda k: k.gelu_bwd(big, big)),
        ("cross_entropy_fwd", lambda k: k.cross_entropy_fwd(logits, gold, mask)),
        ("cross_entropy_bwd", lambda k: k.cross_entropy_bwd(probs, gold, mask, 0.01)),
        ("masked_mean_fwd", lambda k: k.masked_mean_fwd(x3, mask2, counts)),
        ("masked_mean_bwd", lambda k: k.masked_mean_bwd(gy2, mask2, counts)),
        ("embedding_bwd", lambda k: k.embedding_bwd(table_grad, ids, gyd)),
        ("adam_update", lambda k: k.adam_update(param, grad, m, v, 3, 1e-3, 0.9, 0.999, 1e-8)),
    ]


def bench_kernels(repeat):
    from triplet_tagger import _kernels_py

    impls = [("python", _kernels_py)]
    if "cython" in backend.available_backends():
        from triplet_tagger import _kernels_cy

        impls.append(("cython", _kernels_cy))

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':20s} " + "".join(f"{name:>12s}" for name, _ in impls) + f"{'speedup':>10s}")
    for case_name, call in cases:
        times = [best_of(lambda k=k: call(k), repeat) for _, k in impls]
        cells = "".join(f"{t * 1e6:11.1f}u" for t in times)
        speed = f"{times[0] / times[-1]:9.2f}x" if len(times) > 1 else "       n/a"
        print(f"{case_name:20s} {cells}{speed}")


def bench_train_step(steps, repeat):
    items = C.generate_synthetic(99, 256)
    scheme = C.DEFAULT_SCHEME
    vocab = C.build_vocab(items)
    cfg = M.EncoderConfig(
        vocab_size=len(vocab), max_len=64, d_model=64, n_heads=4,
        n_layers=2, d_ff=128, n_tags=scheme.n_tags,
    )
    pool = TR.encode_items(items, vocab, scheme, 64, need_descriptions=True)
    tc = TR.TrainConfig(epochs=1, batch_size=32, seed=4, mode="multitask")

    def run():
        params = M.init_params(cfg, 4)
        state = TR.AdamState(params)
        rng = np.random.default_rng(4)
        for b in range(steps):
            TR.train_step(params, state, pool[b * 32 : (b + 1) * 32], tc, rng, pool)

    print(f"\nmultitask train_step x{steps} (batch 32, 2 layers, d_model 64):")
    for name in backend.available_backends():
        backend.use_backend(name)
        t = best_of(run, repeat)
        print(f"  {name:8s} {t / steps * 1000:8.1f} ms/step")
    backend.use_backend(backend.available_backends()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {backend.active_backend()}; available: {backend.available_backends()}")
    bench_kernels(args.repeat)
    bench_train_step(args.steps, max(2, args.repeat // 2))


if __name__ == "__main__":
    main()
