"""The toy editable multimodal classifier.

Architecture (all affine maps are ``W @ x + b``)::

    e_v = tanh(enc_v(x_v))          d_v -> d_e
    e_t = tanh(enc_t(x_t))          d_t -> d_e
    z   = [e_v, e_t]                2*d_e
    a   = tanh(pre(z))              2*d_e -> d_h
    h   = edit(a)                   d_h -> d_h   (the only block edits touch)
    y   = head(h)                   d_h -> C logits

Batched inputs are row-major: one sample per row.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeError

BLOCKS = ("enc_v", "enc_t", "pre", "edit", "head")
EDIT_BLOCK = "edit"


@dataclass(frozen=True)
class ModelDims:
    d_v: int = 16
    d_t: int = 16
    d_e: int = 12
    d_h: int = 24
    n_classes: int = 10

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 2:
                raise ShapeError(f"dimension {name}={value} must be >= 2")

    @property
    def d_z(self):
        return 2 * self.d_e

    def block_shapes(self):
        return {
            "enc_v": (self.d_e, self.d_v),
            "enc_t": (self.d_e, self.d_t),
            "pre": (self.d_h, self.d_z),
            "edit": (self.d_h, self.d_h),
            "head": (self.n_classes, self.d_h),
        }


@dataclass
class LatentInput:
    e_v: np.ndarray
    e_t: np.ndarray

    @property
    def z(self):
        return np.concatenate([self.e_v, self.e_t], axis=-1)


@dataclass
class ForwardCache:
    """Activations from one forward pass, keyed to the parameters that made them."""

    z: np.ndarray
    pre_act: np.ndarray
    pre_out: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    fingerprint: str


class ToyMultimodalModel:
    """Two tanh encoders, one tanh pre-layer, a linear edit layer and a linear head.

    Parameters live in ``self.params`` as ``{"<block>.W": ..., "<block>.b": ...}``.
    """

    def __init__(self, dims=None, seed=0, params=None):
        self.dims = dims or ModelDims()
        self.seed = seed
        if params is None:
            params = self._init_params(seed)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self._check_params()

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = {}
        for block, (fan_out, fan_in) in self.dims.block_shapes().items():
            bound = 1.0 / np.sqrt(fan_in)
            params[f"{block}.W"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            params[f"{block}.b"] = rng.uniform(-bound, bound, size=fan_out)
        return params

    def _check_params(self):
        for block, shape in self.dims.block_shapes().items():
            w, b = self.params[f"{block}.W"], self.params[f"{block}.b"]
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError(f"{block}: expected W{shape}, b({shape[0]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"{block} parameters are not finite")

    def copy(self):
        return ToyMultimodalModel(self.dims, self.seed, {k: v.copy() for k, v in self.params.items()})

    def W(self, block):
        return self.params[f"{block}.W"]

    def b(self, block):
        return self.params[f"{block}.b"]

    def fingerprint(self, blocks=BLOCKS):
        """SHA-256 over the raw bytes of the named parameter blocks."""
        digest = hashlib.sha256()
        for block in blocks:
            for kind in ("W", "b"):
                digest.update(np.ascontiguousarray(self.params[f"{block}.{kind}"]).tobytes())
        return digest.hexdigest()

    def frozen_fingerprint(self):
        return self.fingerprint(tuple(b for b in BLOCKS if b != EDIT_BLOCK))

    def _check_dim(self, x, dim, name):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != dim or x.ndim > 2:
            raise ShapeError(f"{name} must have trailing dimension {dim}, got {x.shape}")
        return x

    def encode(self, x_v, x_t):
        x_v = self._check_dim(x_v, self.dims.d_v, "x_v")
        x_t = self._check_dim(x_t, self.dims.d_t, "x_t")
        e_v = np.tanh(x_v @ self.W("enc_v").T + self.b("enc_v"))
        e_t = np.tanh(x_t @ self.W("enc_t").T + self.b("enc_t"))
        return LatentInput(e_v, e_t)

    def forward_cache(self, z):
        z = self._check_dim(z, self.dims.d_z, "z")
        pre_act = z @ self.W("pre").T + self.b("pre")
        pre_out = np.tanh(pre_act)
        hidden = pre_out @ self.W("edit").T + self.b("edit")
        logits = hidden @ self.W("head").T + self.b("head")
        return ForwardCache(z.copy(), pre_act, pre_out, hidden, logits, self.fingerprint())

    def hidden_at_edit_layer(self, z):
        z = self._check_dim(z, self.dims.d_z, "z")
        pre_out = np.tanh(z @ self.W("pre").T + self.b("pre"))
        return pre_out @ self.W("edit").T + self.b("edit")

    def head(self, hidden):
        return hidden @ self.W("head").T + self.b("head")

    def forward_from_latent(self, z):
        return self.head(self.hidden_at_edit_layer(z))

    def __call__(self, x_v, x_t):
        return self.forward_from_latent(self.encode(x_v, x_t).z)

    def predict(self, x_v, x_t):
        return np.argmax(self(x_v, x_t), axis=-1)

    def lipschitz_bound(self):
        """Product of spectral norms of the latent-to-logit layers (tanh slope <= 1)."""
        from .linalg import spectral_norm

        return float(np.prod([spectral_norm(self.W(b)) for b in ("pre", "edit", "head")]))

    # -- persistence ---------------------------------------------------------

    def to_dict(self):
        return {
            "dims": vars(self.dims).copy(),
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, data):
        try:
            dims = ModelDims(**data["dims"])
            params = {k: np.asarray(v, dtype=np.float64) for k, v in data["params"].items()}
            return cls(dims, data.get("seed", 0), params)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed checkpoint: missing or invalid field {exc}") from exc


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return ToyMultimodalModel.from_dict(data)


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. ``logits``.

    Accepts a single logit vector with an int label, or a batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    logits2 = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    rows = np.arange(logits2.shape[0])
    loss = -log_softmax(logits2)[rows, labels]
    grad = softmax(logits2)
    grad[rows, labels] -= 1.0
    grad /= logits2.shape[0]
    return float(loss.mean()), (grad[0] if single else grad)


def train_base(model, kb, epochs=300, lr=1e-2, seed=0):
    """Full-parameter cross-entropy training on every variant in ``kb``.

    This is the only routine allowed to touch non-edit parameters. Trains
    full-batch with Adam; ``seed`` is recorded but the procedure itself is
    deterministic. Returns ``(model, train_accuracy)``; ``model`` is updated in
    place.

    Raises:
        TrainingError: on a non-finite loss.
    """
    from .backprop import full_param_grads
    from .errors import TrainingError
    from .optim import Adam

    if not kb.units:
        raise ValueError("knowledge base is empty")
    if lr <= 0:
        raise ValueError("lr must be positive")
    x_v, x_t, labels = kb.arrays()
    opt = Adam(lr=lr)
    for epoch in range(epochs):
        cache = model.forward_cache(model.encode(x_v, x_t).z)
        loss, g_logits = cross_entropy(cache.logits, labels)
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}", iterations=epoch)
        opt.step(model.params, full_param_grads(model, x_v, x_t, g_logits))
    acc = float(np.mean(model.predict(x_v, x_t) == labels))
    return model, acc
