"""The editing engine: reliability + locality + weighted alignment, edit layer only."""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import lar, rcsl
from .backprop import grad_wrt_edit_layer, hidden_grad_from_logits
from .errors import ConfigError, EditFailure, InvalidEditError
from .model import cross_entropy, log_softmax, softmax
from .optim import Adam


@dataclass(frozen=True)
class EditConfig:
    eps: float = 1e-3
    n_variants: int = 4
    tau_align: float = 4.0
    beta: float = 10.0
    lr: float = 1e-2
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int = 200
    rel_threshold: float = 1e-3
    loc_batch_size: int = 16
    norm: str = "l2"
    step_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if not (self.eps > 0 and self.tau_align > 0 and self.lr > 0):
            raise ConfigError("eps, tau_align and lr must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.n_variants < 0:
            raise ConfigError("n_variants must be >= 0")
        if self.loc_batch_size < 1:
            raise ConfigError("loc_batch_size must be >= 1")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class StepRecord:
    step: int
    loss_rel: float
    loss_loc: float
    loss_align: float
    loss_total: float
    sigma: list
    update_norm: float


@dataclass
class EditTrace:
    unit_id: int
    steps: list = field(default_factory=list)
    steps_taken: int = 0
    converged: bool = False
    final: dict = field(default_factory=dict)

    def to_jsonl(self):
        return "".join(json.dumps({"unit_id": self.unit_id, **asdict(s)}) + "\n" for s in self.steps)


def reliability_loss(model, request):
    """Cross-entropy of the edit sample against the new label.

    Returns ``(loss, dloss/dlogits)``.
    """
    return cross_entropy(model(*request.edit_sample), request.new_label)


def locality_loss(model_current, model_pre, x_v, x_t):
    """Mean ``KL(p_pre || p_current)`` over an out-of-scope batch.

    Returns ``(loss, dloss/dlogits_current)`` with one gradient row per sample.
    """
    x_v, x_t = np.atleast_2d(x_v), np.atleast_2d(x_t)
    if x_v.shape[0] == 0:
        raise ConfigError("locality batch is empty")
    log_p = log_softmax(model_pre(x_v, x_t))
    logits = model_current(x_v, x_t)
    log_q = log_softmax(logits)
    p = np.exp(log_p)
    kl = np.sum(p * (log_p - log_q), axis=1)
    grad = (softmax(logits) - p) / x_v.shape[0]
    return float(kl.mean()), grad


def rcsl_alignment(batch):
    """Default alignment objective: returns ``(loss, grad wrt raw hidden rows)``."""
    res = rcsl.alignment_backward(batch, allow_degenerate=True)
    return res.loss, res.grad_h


def _step_seed(seed, unit_id, step):
    return int(np.random.SeedSequence([seed, unit_id, step]).generate_state(1)[0])


def _out_of_scope_arrays(kb, request):
    xs = [kb.sample(uid, j) for uid, j in request.outofscope_sample_ids]
    return np.array([x[0] for x in xs]), np.array([x[1] for x in xs])


def edit(model, model_pre, request, config=None, kb=None, align_fn=rcsl_alignment, loc_pool=None):
    """Edit ``model`` in place so the edit sample maps to ``request.new_label``.

    Every step regenerates adversarial variants around the edit sample's
    latent, then takes one Adam step on the edit layer against
    ``L_rel + L_loc + beta * L_align``. Stops once ``L_rel`` drops below
    ``config.rel_threshold`` or after ``config.max_steps`` updates.

    ``loc_pool`` is an ``(x_v, x_t)`` pair of out-of-scope inputs; if omitted it
    is built from ``kb`` and the request's out-of-scope ids. ``align_fn`` maps
    an :class:`rcsl.AlignmentBatch` to ``(loss, grad_h)`` and lets ablations
    swap the objective.

    Returns ``(model, trace)``.

    Raises:
        EditFailure: on a non-finite loss, carrying the partial trace.
    """
    config = config or EditConfig()
    config.validate()
    if loc_pool is None:
        if kb is None:
            raise ConfigError("edit needs either kb or loc_pool for the locality loss")
        loc_pool = _out_of_scope_arrays(kb, request)
    pool_v, pool_t = loc_pool
    if len(pool_v) == 0:
        raise ConfigError("out-of-scope pool is empty")

    frozen = model.frozen_fingerprint()
    opt = Adam(lr=config.lr, betas=config.adam_betas, eps=config.adam_eps)
    trace = EditTrace(unit_id=request.unit_id)
    z0 = model.encode(*request.edit_sample).z
    loc_rng = np.random.default_rng([config.seed, request.unit_id])
    batch_size = min(config.loc_batch_size, len(pool_v))

    for step in range(config.max_steps + 1):
        cache0 = model.forward_cache(z0)
        loss_rel, g_rel = cross_entropy(cache0.logits, request.new_label)
        if not np.isfinite(loss_rel):
            raise EditFailure(f"non-finite reliability loss at step {step}", trace)
        if loss_rel < config.rel_threshold:
            trace.converged = True
            break
        if step == config.max_steps:
            break

        idx = np.sort(loc_rng.choice(len(pool_v), size=batch_size, replace=False))
        loc_v, loc_t = pool_v[idx], pool_t[idx]
        loc_z = model.encode(loc_v, loc_t).z
        loss_loc, g_loc = locality_loss(model, model_pre, loc_v, loc_t)
        grads = grad_wrt_edit_layer(model, cache0, hidden_grad_from_logits(model, g_rel)).as_param_grads()
        loc_cache = model.forward_cache(loc_z)
        _accumulate(grads, grad_wrt_edit_layer(model, loc_cache, hidden_grad_from_logits(model, g_loc)))

        loss_align, sigma = 0.0, [1.0]
        if config.n_variants > 0 and config.beta > 0:
            variants = lar.generate_variants(
                model, z0, request.new_label, config.n_variants, config.eps,
                config.norm, config.step_scale, _step_seed(config.seed, request.unit_id, step),
            )
            rows = variants.rows()
            batch = rcsl.batch_from_hidden(model.hidden_at_edit_layer(rows), config.tau_align)
            loss_align, grad_h = align_fn(batch)
            sigma = batch.svd.sigma.tolist()
            var_cache = model.forward_cache(rows)
            _accumulate(grads, grad_wrt_edit_layer(model, var_cache, config.beta * grad_h))

        total = loss_rel + loss_loc + config.beta * loss_align
        if not np.isfinite(total):
            raise EditFailure(f"non-finite total loss at step {step}", trace)
        update = opt.step(model.params, grads)
        trace.steps.append(StepRecord(step, loss_rel, loss_loc, loss_align, total, sigma, update))
        trace.steps_taken += 1

    assert model.frozen_fingerprint() == frozen, "edit touched a frozen parameter block"
    trace.final = {"loss_rel": float(loss_rel), "prediction": int(np.argmax(cache0.logits))}
    return model, trace


def _accumulate(grads, bundle):
    for k, g in bundle.as_param_grads().items():
        grads[k] = grads[k] + g


def sequential_edit(model, requests, config=None, kb=None, align_fn=rcsl_alignment):
    """Apply ``requests`` in order to one model, locality always against the original.

    Returns ``(model, traces, running)`` where ``running[k]`` holds cumulative
    Rel/Gen/Loc over the first ``k + 1`` edits.

    Raises:
        InvalidEditError: if two requests target the same unit.
        EditFailure: propagated; ``exc.partial`` holds ``(traces, running)``.
    """
    from .evaluate import evaluate

    ids = [r.unit_id for r in requests]
    if len(set(ids)) != len(ids):
        raise InvalidEditError("sequential requests must target distinct units")
    if kb is None:
        raise ConfigError("sequential_edit needs the knowledge base")
    config = config or EditConfig()
    model_pre = model.copy()
    traces, running = [], []
    for k, request in enumerate(requests):
        # earlier edits are not "unrelated knowledge" any more
        done = set(ids[: k + 1])
        pool = kb.arrays(exclude=done)[:2]
        try:
            model, trace = edit(model, model_pre, request, config, align_fn=align_fn, loc_pool=pool)
        except EditFailure as exc:
            exc.partial = (traces, running)
            raise
        traces.append(trace)
        report = evaluate(model, model_pre, kb, requests[: k + 1])
        running.append({"n_edits": k + 1, "rel": report.rel, "gen": report.gen, "loc": report.loc})
    return model, traces, running
