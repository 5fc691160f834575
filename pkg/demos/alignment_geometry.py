"""
What the alignment loss pulls toward
====================================

The loss reads only the singular values of the row-normalized state
matrix. A batch of identical directions has one nonzero singular value
and the smallest loss; orthonormal rows spread the spectrum evenly and
give the largest.
"""

import numpy as np

from robustedit.rcsl import alignment_backward, batch_from_hidden, closed_form_aligned_loss, rank1_check

rng = np.random.default_rng(0)
row = rng.standard_normal(24)

aligned = batch_from_hidden(np.tile(row, (5, 1)))
ortho = batch_from_hidden(np.eye(5, 24))
print("aligned sigma:", np.round(aligned.svd.sigma, 6))
print("aligned loss :", alignment_backward(aligned, allow_degenerate=True).loss,
      "closed form:", closed_form_aligned_loss(5, 4.0))
print("orthonormal loss:", alignment_backward(ortho, allow_degenerate=True).loss, "log 5:", np.log(5))

# %%
# Gradient descent on the variant rows, anchor held fixed. The leading
# singular value grows and the Gram matrix collapses to rank one.

h = rng.standard_normal((5, 24))
for step in range(301):
    batch = batch_from_hidden(h)
    res = alignment_backward(batch, allow_degenerate=True)
    if step % 100 == 0:
        print(f"step {step:3d}: loss {res.loss:.4f} sigma_1 {batch.svd.sigma[0]:.4f} "
              f"rank {rank1_check(batch, 1e-3).rank}")
    h = h - 0.5 * res.grad_h
    h /= np.linalg.norm(h, axis=1, keepdims=True)

# Rank one is reached, but rows may point in opposite directions: the
# singular values cannot tell h from -h.
print("final Gram row 0:", np.round(batch.gram[0], 3))
