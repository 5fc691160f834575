import numpy as np
import pytest

from robustedit.backprop import finite_diff_check
from robustedit.dataset import make_edit_request, make_edit_requests
from robustedit.editor import (
    EditConfig,
    edit,
    locality_loss,
    rcsl_alignment,
    reliability_loss,
    sequential_edit,
)
from robustedit.errors import ConfigError, EditFailure, InvalidEditError
from robustedit.evaluate import evaluate, reliability
from robustedit.model import ToyMultimodalModel, cross_entropy
from robustedit.rcsl import alignment_backward


def flat_model():
    m = ToyMultimodalModel(seed=0)
    m.params["head.W"][...] = 0.0
    m.params["head.b"][...] = 0.0
    return m


def test_reliability_loss_uniform_logits(trained):
    kb, _ = trained
    req = make_edit_request(kb, 0, 5)
    loss, grad = reliability_loss(flat_model(), req)
    assert loss == pytest.approx(np.log(10), abs=1e-12)
    np.testing.assert_allclose(grad, np.full(10, 0.1) - np.eye(10)[5], atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cur, pre = ToyMultimodalModel(seed=seed), ToyMultimodalModel(seed=seed + 100)
    x_v, x_t = rng.standard_normal((6, 16)), rng.standard_normal((6, 16))
    logits = cur(x_v, x_t)
    y = rng.integers(10, size=6)
    assert finite_diff_check(lambda l: cross_entropy(l, y)[0], logits, cross_entropy(logits, y)[1]) <= 1e-6

    from robustedit.model import log_softmax

    log_p = log_softmax(pre(x_v, x_t))

    def kl(l):
        return float(np.mean(np.sum(np.exp(log_p) * (log_p - log_softmax(l)), axis=1)))

    _, g = locality_loss(cur, pre, x_v, x_t)
    assert finite_diff_check(kl, logits, g) <= 1e-6


def test_locality_loss_nonnegative_and_zero_on_identity(rng):
    for seed in range(100):
        cur, pre = ToyMultimodalModel(seed=seed), ToyMultimodalModel(seed=seed + 1)
        x_v, x_t = rng.standard_normal((4, 16)), rng.standard_normal((4, 16))
        assert locality_loss(cur, pre, x_v, x_t)[0] >= 0
        assert abs(locality_loss(pre, pre, x_v, x_t)[0]) <= 1e-15
    with pytest.raises(ConfigError):
        locality_loss(pre, pre, np.zeros((0, 16)), np.zeros((0, 16)))


def test_confident_model_is_a_noop(trained):
    kb, m = trained
    req = make_edit_request(kb, 1, (kb.unit(1).label + 1) % 10)
    m = m.copy()
    m.params["head.b"][req.new_label] += 100.0
    before = m.fingerprint()
    out, trace = edit(m, m.copy(), req, EditConfig(beta=0.0), kb=kb)
    assert trace.steps_taken == 0 and trace.converged
    assert out.fingerprint() == before


@pytest.fixture(scope="module")
def edited(trained):
    kb, m = trained
    req = make_edit_requests(kb, 1, seed=4)[0]
    out, trace = edit(m.copy(), m, req, EditConfig(), kb=kb)
    return kb, m, req, out, trace


def test_edit_reaches_new_label(edited):
    kb, m, req, out, trace = edited
    assert trace.converged and trace.steps_taken <= 200
    assert reliability(out, [req]) == 1.0
    assert trace.final["loss_rel"] < 1e-3


def test_edit_touches_only_the_edit_layer(edited):
    _, m, _, out, _ = edited
    assert out.frozen_fingerprint() == m.frozen_fingerprint()
    assert out.fingerprint(("edit",)) != m.fingerprint(("edit",))
    for k in m.params:
        if not k.startswith("edit."):
            assert out.params[k].tobytes() == m.params[k].tobytes()


def test_trace_loss_decomposition(edited):
    *_, trace = edited
    beta = EditConfig().beta
    for s in trace.steps:
        assert abs(s.loss_total - (s.loss_rel + s.loss_loc + beta * s.loss_align)) <= 1e-10
        assert len(s.sigma) == 5 and s.loss_align >= 0
    lines = trace.to_jsonl().splitlines()
    assert len(lines) == trace.steps_taken


def test_edit_is_deterministic(edited):
    kb, m, req, out, trace = edited
    out2, trace2 = edit(m.copy(), m, req, EditConfig(), kb=kb)
    assert out2.fingerprint() == out.fingerprint()
    assert trace2.to_jsonl() == trace.to_jsonl()


def test_attached_anchor_changes_the_run(edited):
    kb, m, req, out, _ = edited

    def attached(batch):
        res = alignment_backward(batch, allow_degenerate=True, detach_anchor=False)
        return res.loss, res.grad_h

    out2, _ = edit(m.copy(), m, req, EditConfig(), kb=kb, align_fn=attached)
    assert out2.fingerprint(("edit",)) != out.fingerprint(("edit",))


def test_beta_zero_skips_alignment(edited):
    kb, m, req, _, _ = edited
    _, trace = edit(m.copy(), m, req, EditConfig(beta=0.0), kb=kb)
    assert all(s.loss_align == 0.0 for s in trace.steps)


def test_nan_alignment_raises_with_partial_trace(edited):
    kb, m, req, _, _ = edited
    calls = []

    def bad(batch):
        calls.append(1)
        loss, grad = rcsl_alignment(batch)
        return (float("nan") if len(calls) > 2 else loss), grad

    with pytest.raises(EditFailure) as info:
        edit(m.copy(), m, req, EditConfig(), kb=kb, align_fn=bad)
    assert len(info.value.trace.steps) == 2


def test_config_validation():
    for bad in (dict(eps=0.0), dict(beta=-1.0), dict(lr=0.0), dict(n_variants=-1), dict(loc_batch_size=0)):
        with pytest.raises(ConfigError):
            EditConfig(**bad).validate()


def test_single_step_sequence_matches_single_edit(trained):
    kb, m = trained
    req = make_edit_requests(kb, 1, seed=9)
    single, trace = edit(m.copy(), m, req[0], EditConfig(), kb=kb)
    seq, traces, running = sequential_edit(m.copy(), req, EditConfig(), kb=kb)
    assert seq.fingerprint() == single.fingerprint()
    assert traces[0].to_jsonl() == trace.to_jsonl()
    rep = evaluate(single, m, kb, req)
    assert running[0] == {"n_edits": 1, "rel": rep.rel, "gen": rep.gen, "loc": rep.loc}


def test_sequential_edits(trained):
    kb, m = trained
    reqs = make_edit_requests(kb, 3, seed=2)
    out, traces, running = sequential_edit(m.copy(), reqs, EditConfig(max_steps=50), kb=kb)
    assert [r["n_edits"] for r in running] == [1, 2, 3]
    assert len(traces) == 3
    assert out.frozen_fingerprint() == m.frozen_fingerprint()


def test_sequential_requires_distinct_units(trained):
    kb, m = trained
    req = make_edit_requests(kb, 1, seed=0)[0]
    with pytest.raises(InvalidEditError):
        sequential_edit(m.copy(), [req, req], kb=kb)


def test_default_hyperparameters():
    cfg = EditConfig()
    assert (cfg.eps, cfg.n_variants, cfg.tau_align, cfg.beta) == (1e-3, 4, 4.0, 10.0)
