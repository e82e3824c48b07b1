"""Count attention score pairs as sequence length doubles.

Banded attention with per-block global tokens scores O(n * (radius +
n/block)) pairs, so doubling the input roughly doubles the work; dense
attention quadruples it. The counter tallies exact pair counts, and a
wide-enough band with globals disabled reproduces dense attention to
float64 precision.
"""

import numpy as np

from longspan.attention import (
    AttentionConfig,
    ScoreCounter,
    attend,
    tglobal_attention,
    tglobal_tokens,
)

cfg = AttentionConfig(local_radius=32, block_size=16)
rng = np.random.default_rng(0)

print(f"radius={cfg.local_radius} block={cfg.block_size}")
print("n\tband pairs\tglobal pairs\tdense pairs")
prev_band = prev_dense = None
for n in (512, 1024, 2048, 4096):
    q, k, v = (rng.normal(size=(1, n, 8)) for _ in range(3))
    gk = tglobal_tokens(k[0], cfg.block_size)[None]
    sparse_counter = ScoreCounter()
    tglobal_attention(q, k, v, gk, gk, cfg, counter=sparse_counter)
    dense_counter = ScoreCounter()
    attend(q, k, v, counter=dense_counter)
    row = (f"{n}\t{sparse_counter.token_pairs}\t{sparse_counter.global_pairs}"
           f"\t{dense_counter.token_pairs}")
    if prev_band is not None:
        row += (f"\t(x{sparse_counter.token_pairs / prev_band:.2f} band,"
                f" x{dense_counter.token_pairs / prev_dense:.2f} dense)")
    print(row)
    prev_band = sparse_counter.token_pairs
    prev_dense = dense_counter.token_pairs

# correctness: a band covering the whole sequence, with global slots off,
# is ordinary dense attention
n = 24
q, k, v = (rng.normal(size=(2, n, 6)) for _ in range(3))
wide = AttentionConfig(local_radius=n - 1, block_size=4, disable_global=True)
gap = np.abs(tglobal_attention(q, k, v, None, None, wide) - attend(q, k, v)).max()
print(f"\nwide band vs dense, n={n}: max abs gap = {gap:.2e}")

narrow = AttentionConfig(local_radius=2, block_size=4, disable_global=True)
gap = np.abs(tglobal_attention(q, k, v, None, None, narrow) - attend(q, k, v)).max()
print(f"radius-2 band vs dense, n={n}: max abs gap = {gap:.2e} (band actually restricts)")
