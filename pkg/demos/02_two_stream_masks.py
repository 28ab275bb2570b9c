"""Factorization orders, attention masks and what each stream can see."""

import numpy as np

from permlm.model import ModelConfig, PermutationOrder, TransformerWeights, build_masks, encode_streams

order = PermutationOrder((2, 0, 3, 1))
masks = build_masks(order)
print("order z   ", order.z)
print("rank      ", order.rank)
print("content mask (row attends to column):")
print(masks.content_mask.astype(int))
print("query mask:")
print(masks.query_mask.astype(int))

cfg = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=12, max_len=8, dropout=0.0)
weights = TransformerWeights.init(cfg, seed=0)
ids = np.array([4, 5, 6, 7])
h, g = encode_streams(ids, order, weights)

# swapping the token at position 3 leaves the query stream there untouched
changed = ids.copy()
changed[3] = 9
h2, g2 = encode_streams(changed, order, weights)
print("query stream change at pos 3:", np.abs(g2.data[3] - g.data[3]).max())
print("content stream change at pos 3:", np.abs(h2.data[3] - h.data[3]).max())
# position 2 comes first in the order, so it sees nothing of position 3
print("both streams at pos 2:", np.abs(h2.data[2] - h.data[2]).max(), np.abs(g2.data[2] - g.data[2]).max())
