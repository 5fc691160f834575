"""Rank-constrained alignment of edit-layer hidden states.

Row 0 of every batch is the anchor (the unperturbed edit sample); rows 1..n
are the adversarial variants. The loss treats the singular values of the
row-normalized state matrix as logits and maximizes the share of the
leading one, which is minimal exactly when every row points the same way
(a rank-one Gram matrix of all ones). Gradients flow into the variant rows
only; the anchor is a fixed target.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateSpectrumError
from .linalg import gram, numerical_rank, row_l2_normalize, svd

GAP_TOL = 1e-8


@dataclass
class AlignmentBatch:
    h_raw: np.ndarray
    h_norm: np.ndarray
    svd: object
    gram: np.ndarray
    tau_align: float

    @property
    def n_rows(self):
        return self.h_raw.shape[0]


@dataclass
class AlignmentResult:
    loss: float
    sigma: np.ndarray
    softmax_p: np.ndarray
    grad_h: np.ndarray = None


def batch_from_hidden(h_raw, tau_align=4.0):
    """Normalize, factor and Gram a stack of hidden states (anchor first).

    Raises:
        ConfigError: if there are more rows than hidden dimensions.
        DegenerateRowError: if any hidden state has (near) zero norm.
    """
    if tau_align <= 0:
        raise ConfigError("tau_align must be positive")
    h_raw = np.atleast_2d(np.asarray(h_raw, dtype=np.float64))
    rows, d = h_raw.shape
    if d < rows:
        raise ConfigError(f"hidden width {d} < batch rows {rows}; need d_h >= n + 1")
    h_norm = row_l2_normalize(h_raw)
    return AlignmentBatch(h_raw, h_norm, svd(h_norm), gram(h_norm), float(tau_align))


def build_batch(model, variant_set, tau_align=4.0):
    return batch_from_hidden(model.hidden_at_edit_layer(variant_set.rows()), tau_align)


def _softmax_terms(sigma, tau):
    shifted = (sigma - sigma[0]) / tau
    e = np.exp(shifted)
    total = e.sum()
    return np.log(total), e / total


def alignment_loss(batch):
    """``-log softmax(sigma / tau)[0]``, shifted by sigma_1 for stability."""
    sigma = batch.svd.sigma
    log_total, p = _softmax_terms(sigma, batch.tau_align)
    return AlignmentResult(loss=float(log_total), sigma=sigma.copy(), softmax_p=p)


def alignment_backward(batch, allow_degenerate=False, detach_anchor=True):
    """Loss plus its gradient with respect to the raw hidden states.

    Uses ``d sigma_k = u_k^T dH v_k`` and pulls the result back through the
    row normalization with the tangent projector ``(I - h h^T) / |h|``.
    With ``detach_anchor`` (the default) row 0 of the gradient is zero.

    Raises:
        DegenerateSpectrumError: if consecutive singular values are closer
            than 1e-8 and ``allow_degenerate`` is False.
    """
    result = alignment_loss(batch)
    sigma = result.sigma
    if not allow_degenerate and sigma.size > 1:
        gaps = -np.diff(sigma)
        if np.min(gaps) < GAP_TOL:
            raise DegenerateSpectrumError(f"singular value gap {np.min(gaps):.3g} below {GAP_TOL}")
    d_sigma = result.softmax_p.copy()
    d_sigma[0] -= 1.0
    d_sigma /= batch.tau_align
    u, v = batch.svd.u, batch.svd.v
    g_norm = (u * d_sigma) @ v.T
    norms = np.linalg.norm(batch.h_raw, axis=1, keepdims=True)
    radial = np.sum(g_norm * batch.h_norm, axis=1, keepdims=True)
    grad_h = (g_norm - radial * batch.h_norm) / norms
    if detach_anchor:
        grad_h[0] = 0.0
    result.grad_h = grad_h
    return result


def closed_form_aligned_loss(n_rows, tau):
    """Loss of a perfectly aligned batch: sigma = (sqrt(n_rows), 0, ..., 0)."""
    s1 = np.sqrt(n_rows) / tau
    return float(-np.log(np.exp(s1) / (np.exp(s1) + (n_rows - 1))))


@dataclass
class Rank1Report:
    is_aligned: bool
    rank: int
    min_gram_entry: float
    rows_equal: bool
    gram_all_ones: bool


def rank1_check(batch, tol=1e-6):
    """Check the three equivalent forms of perfect alignment.

    ``rank`` is the numerical rank of the Gram matrix at relative ``tol``;
    ``is_aligned`` requires rank one and every Gram entry ``>= 1 - tol``.
    ``rows_equal`` and ``gram_all_ones`` are reported with absolute ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = batch.gram
    n = g.shape[0]
    off = g[~np.eye(n, dtype=bool)]
    min_entry = float(off.min()) if off.size else 1.0
    rank = numerical_rank(g, tol)
    rows_equal = bool(np.max(np.abs(batch.h_norm - batch.h_norm[0])) <= tol)
    gram_ones = bool(np.max(np.abs(g - 1.0)) <= tol)
    return Rank1Report(
        is_aligned=bool(rank == 1 and min_entry >= 1.0 - tol),
        rank=rank,
        min_gram_entry=min_entry,
        rows_equal=rows_equal,
        gram_all_ones=gram_ones,
    )


def export_gram(batch, path):
    """Write ``{"sigma": [...], "gram": [[...]]}`` for heatmap plotting."""
    with open(path, "w") as fh:
        json.dump({"sigma": batch.svd.sigma.tolist(), "gram": batch.gram.tolist()}, fh)
        fh.write("\n")
