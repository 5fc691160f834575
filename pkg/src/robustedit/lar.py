"""Adversarial variants in the joint latent space.

Each variant starts from a random point in the half-budget ball around the
anchor latent, takes one normalized gradient-ascent step on the target
cross-entropy and is projected back into the budget ball. A separate
bisection routine measures how large a perturbation can get before a
similarity discriminator stops calling the output "the same".
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backprop import grad_wrt_latent
from .errors import DiscriminatorError, NumericalError
from .model import cross_entropy, softmax

NORMS = ("l2", "linf")


def latent_gradient(model, z, y_star):
    """d CE(f(z), y_star) / dz; row-wise if ``z`` is a batch."""
    if not 0 <= int(y_star) < model.dims.n_classes:
        raise ValueError(f"y_star {y_star} outside [0, {model.dims.n_classes})")
    logits = model.forward_from_latent(z)
    probs = softmax(logits)
    probs[..., int(y_star)] -= 1.0
    return grad_wrt_latent(model, z, probs)


def project(delta, eps, norm):
    """Project rows of ``delta`` onto the ``norm`` ball of radius ``eps``."""
    if norm == "l2":
        norms = np.linalg.norm(delta, axis=-1, keepdims=True)
        scale = np.where(norms > eps, eps / np.where(norms > 0, norms, 1.0), 1.0)
        return delta * scale
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    raise ValueError(f"unknown norm {norm!r}; expected one of {NORMS}")


def _ascent_direction(g, norm):
    if norm == "linf":
        return np.sign(g)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)


def sample_ball(rng, dim, radius, norm):
    """Uniform sample from the ``norm`` ball."""
    if norm == "l2":
        x = rng.standard_normal(dim)
        x /= np.linalg.norm(x)
        return x * radius * rng.random() ** (1.0 / dim)
    if norm == "linf":
        return rng.uniform(-radius, radius, size=dim)
    raise ValueError(f"unknown norm {norm!r}")


@dataclass
class LatentVariantSet:
    anchor: np.ndarray
    variants: np.ndarray  # n x d_z
    deltas: np.ndarray  # n x d_z
    inits: np.ndarray  # random starting points, n x d_z
    eps: float
    norm: str
    seed: int

    @property
    def n(self):
        return self.variants.shape[0]

    def rows(self):
        """Anchor followed by the variants, as an (n+1) x d_z matrix."""
        return np.vstack([self.anchor[None, :], self.variants])


def generate_variants(model, z, y_star, n=4, eps=1e-3, norm="l2", step_scale=1.0, seed=0):
    """Single-step projected gradient ascent from ``n`` random starts.

    Raises:
        NumericalError: if the latent gradient is not finite.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not (eps > 0 and step_scale > 0):
        raise ValueError("eps and step_scale must be positive")
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}")
    z = np.asarray(z, dtype=np.float64)
    dim = z.shape[-1]
    children = np.random.SeedSequence(seed).spawn(n)
    inits = np.array([sample_ball(np.random.default_rng(c), dim, eps / 2, norm) for c in children])
    inits = inits.reshape(n, dim)
    if n == 0:
        empty = np.zeros((0, dim))
        return LatentVariantSet(z.copy(), empty, empty, empty, eps, norm, seed)
    g = latent_gradient(model, z[None, :] + inits, y_star)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite latent gradient")
    deltas = project(inits + step_scale * eps * _ascent_direction(g, norm), eps, norm)
    return LatentVariantSet(z.copy(), z[None, :] + deltas, deltas, inits, eps, norm, seed)


def default_discriminator(logits_a, logits_b):
    """Cosine similarity between the two softmax distributions."""
    pa, pb = softmax(np.asarray(logits_a, float)), softmax(np.asarray(logits_b, float))
    if pa.shape != pb.shape:
        raise ValueError("logit vectors differ in length")
    return float(pa @ pb / (np.linalg.norm(pa) * np.linalg.norm(pb)))


@dataclass
class BudgetSearchResult:
    epsilon_star: float
    iterations: int
    bracket: tuple
    discriminator_scores: list  # [(magnitude, score), ...] in probe order
    cap_hit: bool = False
    history: list = field(default_factory=list)  # bracket after every probe


def bisect_budget(score, tau_sim, search_hi, tol):
    """Largest magnitude in ``[0, search_hi]`` whose score stays ``>= tau_sim``.

    ``score(magnitude)`` must pass at magnitude 0. Keeps ``score(lo) >= tau_sim``
    and ``score(hi) < tau_sim`` throughout and returns ``lo`` once
    ``hi - lo <= tol``. If even ``search_hi`` passes, returns it with
    ``cap_hit=True``.

    Raises:
        ValueError: if the self-similarity check at 0 fails or arguments are invalid.
        DiscriminatorError: if a score is NaN.
    """
    if not (tol > 0 and search_hi > 0):
        raise ValueError("tol and search_hi must be positive")

    def probe(mag):
        s = float(score(mag))
        if math.isnan(s):
            raise DiscriminatorError(f"discriminator returned NaN at magnitude {mag:g}")
        return s

    self_score = probe(0.0)
    if self_score < tau_sim:
        raise ValueError(f"tau_sim={tau_sim} exceeds self-similarity {self_score}")

    scores = [(search_hi, probe(search_hi))]
    if scores[0][1] >= tau_sim:
        return BudgetSearchResult(search_hi, 1, (search_hi, search_hi), scores, True, [(search_hi, search_hi)])
    lo, hi = 0.0, search_hi
    history = [(lo, hi)]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s = probe(mid)
        scores.append((mid, s))
        if s >= tau_sim:
            lo = mid
        else:
            hi = mid
        history.append((lo, hi))
    return BudgetSearchResult(lo, len(scores), (lo, hi), scores, False, history)


def semantic_budget_search(
    model_pre,
    x,
    discriminator=default_discriminator,
    tau_sim=0.99,
    search_hi=1.0,
    tol=1e-6,
    direction=None,
):
    """Bisection for the largest latent perturbation the discriminator accepts.

    ``x`` is an ``(x_v, x_t)`` pair. Perturbations are taken along a fixed unit
    ``direction``; when omitted it is the normalized cross-entropy gradient
    toward the model's own prediction, i.e. the locally worst direction. The
    result therefore under-approximates the supremum over all directions.
    """
    z = model_pre.encode(*x).z
    base = model_pre.forward_from_latent(z)
    if direction is None:
        direction = latent_gradient(model_pre, z, int(np.argmax(base)))
    direction = np.asarray(direction, dtype=np.float64)
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise ValueError("search direction is zero")
    direction = direction / nrm

    def score(mag):
        return discriminator(base, model_pre.forward_from_latent(z + mag * direction))

    return bisect_budget(score, tau_sim, search_hi, tol)
