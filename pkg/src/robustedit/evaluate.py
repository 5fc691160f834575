"""Reliability / generality / locality metrics, ablations and exports."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

ALIGN_KINDS = ("none", "cosine", "l2norm", "rcsl")


def _argmax(model, pairs):
    x_v = np.array([p[0] for p in pairs])
    x_t = np.array([p[1] for p in pairs])
    return model.predict(x_v, x_t)


def reliability(edited, requests):
    """Fraction of edit samples the edited model maps to the new label."""
    if not requests:
        raise ConfigError("no requests")
    preds = _argmax(edited, [r.edit_sample for r in requests])
    return float(np.mean(preds == np.array([r.new_label for r in requests])))


def generality(edited, requests):
    """Mean over requests of the held-out variant hit rate."""
    if not requests:
        raise ConfigError("no requests")
    rates = []
    for r in requests:
        if not r.heldout_variants:
            raise ConfigError(f"request for unit {r.unit_id} has no held-out variants")
        rates.append(np.mean(_argmax(edited, r.heldout_variants) == r.new_label))
    return float(np.mean(rates))


def locality(edited, pre, kb, edited_unit_ids):
    """Argmax agreement with ``pre`` on every variant of every unedited unit."""
    x_v, x_t, _ = kb.arrays(exclude=set(edited_unit_ids))
    if len(x_v) == 0:
        raise ConfigError("out-of-scope pool is empty")
    return float(np.mean(edited.predict(x_v, x_t) == pre.predict(x_v, x_t)))


@dataclass
class MetricsReport:
    rel: float
    gen: float
    loc: float
    n_requests: int
    n_loc: int
    per_request: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def evaluate(edited, pre, kb, requests, config=None, seed=0):
    ids = [r.unit_id for r in requests]
    per = [
        {
            "unit_id": r.unit_id,
            "new_label": r.new_label,
            "rel": reliability(edited, [r]),
            "gen": generality(edited, [r]),
        }
        for r in requests
    ]
    x_v, _, _ = kb.arrays(exclude=set(ids))
    return MetricsReport(
        rel=reliability(edited, requests),
        gen=generality(edited, requests),
        loc=locality(edited, pre, kb, ids),
        n_requests=len(requests),
        n_loc=len(x_v),
        per_request=per,
        config=config or {},
        seed=seed,
    )


# -- ablation baselines --------------------------------------------------------


def cosine_alignment(batch):
    """Mean ``1 - cos(h_i, h_0)`` over variants, anchor detached."""
    h, hn = batch.h_raw, batch.h_norm
    n = h.shape[0] - 1
    grad = np.zeros_like(h)
    if n == 0:
        return 0.0, grad
    cos = hn[1:] @ hn[0]
    norms = np.linalg.norm(h[1:], axis=1, keepdims=True)
    # d(-cos)/dh_i = -(I - hn_i hn_i^T) hn_0 / |h_i|
    grad[1:] = -(hn[0] - cos[:, None] * hn[1:]) / norms / n
    return float(np.mean(1.0 - cos)), grad


def l2_alignment(batch):
    """Mean ``|h_i - h_0|^2`` over variants, anchor detached."""
    h = batch.h_raw
    n = h.shape[0] - 1
    grad = np.zeros_like(h)
    if n == 0:
        return 0.0, grad
    diff = h[1:] - h[0]
    grad[1:] = 2.0 * diff / n
    return float(np.mean(np.sum(diff * diff, axis=1))), grad


def align_fn_for(kind):
    from .editor import rcsl_alignment

    try:
        return {"none": rcsl_alignment, "rcsl": rcsl_alignment, "cosine": cosine_alignment, "l2norm": l2_alignment}[kind]
    except KeyError:
        raise ConfigError(f"unknown alignment kind {kind!r}; expected one of {ALIGN_KINDS}") from None


def run_single_edits(model_pre, kb, requests, config, kind="rcsl"):
    """Edit a fresh copy of ``model_pre`` for each request independently.

    Returns a :class:`MetricsReport` averaged over requests, each scored
    against its own single-edit model.
    """
    from .editor import edit

    if kind == "none":
        config = config.with_(beta=0.0)
    align_fn = align_fn_for(kind)
    per, rels, gens, locs, n_loc = [], [], [], [], 0
    for r in requests:
        edited, trace = edit(model_pre.copy(), model_pre, r, config, kb=kb, align_fn=align_fn)
        rep = evaluate(edited, model_pre, kb, [r])
        rels.append(rep.rel)
        gens.append(rep.gen)
        locs.append(rep.loc)
        n_loc += rep.n_loc
        per.append({"unit_id": r.unit_id, "rel": rep.rel, "gen": rep.gen, "loc": rep.loc, "steps": trace.steps_taken})
    return MetricsReport(
        rel=float(np.mean(rels)),
        gen=float(np.mean(gens)),
        loc=float(np.mean(locs)),
        n_requests=len(requests),
        n_loc=n_loc,
        per_request=per,
        config={**asdict(config), "align_kind": kind},
        seed=config.seed,
    )


def ablation_alignment(kind, model_pre, kb, requests, config):
    """Single-edit metrics with the alignment term swapped for ``kind``.

    All kinds share the config seed, so the locality batches and variant
    draws are identical across kinds and differences come from the
    alignment objective alone.
    """
    if kind not in ALIGN_KINDS:
        raise ConfigError(f"unknown alignment kind {kind!r}")
    return run_single_edits(model_pre, kb, requests, config, kind)


# -- exports ------------------------------------------------------------------


def perturbation_sweep_export(model, sample, eps_list, k_per_eps, path, seed=0):
    """Write edit-layer hidden states of perturbed latents as JSON lines.

    For each ``eps`` the same ``k_per_eps`` random unit directions are scaled
    to length ``eps``, so rows for different budgets are directly comparable.
    Rows are ``{"eps": ..., "index": ..., "vector": [...]}``.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(b < a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be nonempty and ascending")
    z = model.encode(*sample).z
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((k_per_eps, z.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n_rows = 0
    with open(path, "w") as fh:
        for eps in eps_list:
            hidden = model.hidden_at_edit_layer(z + eps * dirs)
            for j, vec in enumerate(hidden):
                fh.write(json.dumps({"eps": eps, "index": j, "vector": vec.tolist()}) + "\n")
                n_rows += 1
    return n_rows


def empirical_lipschitz(f, dim, trials, eps, seed=0, z_scale=1.0):
    """Max of ``|f(z + d) - f(z)| / eps`` over random ``z`` and ``|d| = eps``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        z = rng.uniform(-z_scale, z_scale, dim)
        d = rng.standard_normal(dim)
        d *= eps / np.linalg.norm(d)
        worst = max(worst, float(np.linalg.norm(f(z + d) - f(z))) / eps)
    return worst


def lipschitz_report(model, trials=1000, eps=1e-3, seed=0):
    """Empirical latent-to-logit Lipschitz ratio against the spectral-norm bound."""
    bound = model.lipschitz_bound()
    ratio = empirical_lipschitz(model.forward_from_latent, model.dims.d_z, trials, eps, seed)
    return {"max_ratio": ratio, "bound": bound, "holds": ratio <= bound}
