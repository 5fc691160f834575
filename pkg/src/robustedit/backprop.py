"""Hand-written reverse-mode gradients for :class:`ToyMultimodalModel`.

Only two gradient targets matter for editing: the joint latent ``z`` (to
craft adversarial variants) and the edit-layer parameters (the only thing an
edit may change). :func:`full_param_grads` exists for base training.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CacheInvalidError, NumericalError, ShapeError


@dataclass
class GradientBundle:
    grad_z: np.ndarray
    grad_edit_weights: np.ndarray
    grad_edit_bias: np.ndarray

    def as_param_grads(self):
        return {"edit.W": self.grad_edit_weights, "edit.b": self.grad_edit_bias}


def _check_trailing(arr, dim, name):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-1] != dim:
        raise ShapeError(f"{name} must have trailing dimension {dim}, got {arr.shape}")
    return arr


def hidden_grad_from_logits(model, g_logits):
    """Pull a logit gradient back through the (linear) head."""
    g_logits = _check_trailing(g_logits, model.dims.n_classes, "logit gradient")
    return g_logits @ model.W("head")


def grad_wrt_latent(model, z, loss_grad_on_logits):
    """Gradient of ``<loss_grad_on_logits, logits(z)>`` with respect to ``z``.

    Works row-wise for batched ``z`` (one gradient row per latent row).
    """
    z = _check_trailing(z, model.dims.d_z, "z")
    g_logits = _check_trailing(loss_grad_on_logits, model.dims.n_classes, "logit gradient")
    pre_out = np.tanh(z @ model.W("pre").T + model.b("pre"))
    g_hidden = g_logits @ model.W("head")
    g_pre_out = g_hidden @ model.W("edit")
    g_pre_act = g_pre_out * (1.0 - pre_out * pre_out)
    return g_pre_act @ model.W("pre")


def grad_wrt_edit_layer(model, cache, loss_grad_on_hidden):
    """Edit-layer parameter gradients given dL/dh at the edit-layer output.

    ``loss_grad_on_hidden`` matches ``cache.hidden`` in shape; for a batch
    the per-row contributions are summed. ``grad_z`` is returned as zeros.

    Raises:
        CacheInvalidError: if the model changed after ``cache`` was recorded.
    """
    if cache.fingerprint != model.fingerprint():
        raise CacheInvalidError("forward cache predates the current parameters")
    g_h = _check_trailing(loss_grad_on_hidden, model.dims.d_h, "hidden gradient")
    if g_h.shape != cache.hidden.shape:
        raise ShapeError(f"hidden gradient shape {g_h.shape} != cache {cache.hidden.shape}")
    g_h2 = np.atleast_2d(g_h)
    a2 = np.atleast_2d(cache.pre_out)
    return GradientBundle(
        grad_z=np.zeros_like(cache.z),
        grad_edit_weights=g_h2.T @ a2,
        grad_edit_bias=g_h2.sum(axis=0),
    )


def full_param_grads(model, x_v, x_t, g_logits):
    """Gradients for every parameter block, used by base training only."""
    x_v = np.atleast_2d(x_v)
    x_t = np.atleast_2d(x_t)
    g_logits = np.atleast_2d(g_logits)
    lat = model.encode(x_v, x_t)
    cache = model.forward_cache(lat.z)

    grads = {"head.W": g_logits.T @ cache.hidden, "head.b": g_logits.sum(axis=0)}
    g_h = g_logits @ model.W("head")
    grads["edit.W"] = g_h.T @ cache.pre_out
    grads["edit.b"] = g_h.sum(axis=0)
    g_pre = (g_h @ model.W("edit")) * (1.0 - cache.pre_out**2)
    grads["pre.W"] = g_pre.T @ lat.z
    grads["pre.b"] = g_pre.sum(axis=0)
    g_z = g_pre @ model.W("pre")
    d_e = model.dims.d_e
    for block, e, x, g_e in (
        ("enc_v", lat.e_v, x_v, g_z[:, :d_e]),
        ("enc_t", lat.e_t, x_t, g_z[:, d_e:]),
    ):
        g_a = g_e * (1.0 - e * e)
        grads[f"{block}.W"] = g_a.T @ x
        grads[f"{block}.b"] = g_a.sum(axis=0)
    return grads


def finite_diff_check(f, x, analytic_grad, step=1e-5):
    """Max over coordinates of ``|central difference - analytic| / max(1, |analytic|)``.

    Raises:
        NumericalError: if ``f`` is non-finite at any probe point.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    worst = 0.0
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x.copy())
        x[idx] = orig - step
        fm = f(x.copy())
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite evaluation at coordinate {idx}")
        numeric = (fp - fm) / (2.0 * step)
        err = abs(numeric - analytic[idx]) / max(1.0, abs(analytic[idx]))
        worst = max(worst, err)
    return worst
