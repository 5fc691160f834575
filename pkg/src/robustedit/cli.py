"""Command-line entry point.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure,
4 I/O failure while writing outputs.
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import lar, rcsl
from .dataset import KBConfig, generate_knowledge_base, load_kb, make_edit_request, make_edit_requests, save_kb
from .editor import EditConfig, edit, sequential_edit
from .errors import ConfigError, EditFailure, NumericalError, ParseError
from .evaluate import evaluate, perturbation_sweep_export, run_single_edits
from .model import ModelDims, ToyMultimodalModel, load_model, save_model, train_base

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class OutputError(Exception):
    """Wraps OSErrors raised while writing results."""


DEFAULTS = {
    "gen-data": {"units": 10, "variants": 6, "noise": 0.08, "classes": 10, "d_v": 16, "d_t": 16, "seed": 0, "out": None},
    "train": {"kb": None, "epochs": 300, "lr": 1e-2, "seed": 0, "out": None, "d_e": 12, "d_h": 24},
    "edit": {"model": None, "kb": None, "unit": None, "new_label": None, "out_dir": None},
    "edit-seq": {"model": None, "kb": None, "n_edits": 10, "out_dir": None},
    "sweep": {"model": None, "kb": None, "param": None, "values": None, "seeds": 3, "n_edits": 10, "out": None},
    "gram": {"model": None, "kb": None, "unit": 0, "new_label": None, "edited_model": None, "out": None},
    "sweep-repr": {"model": None, "kb": None, "unit": 0, "eps_list": "0,1e-5,1e-4,1e-3,1e-2,1e-1", "k": 8, "out": None},
}
EDIT_FLAGS = {"eps": 1e-3, "n_variants": 4, "tau": 4.0, "beta": 10.0, "lr": 1e-2, "max_steps": 200, "seed": 0}
for _cmd in ("edit", "edit-seq", "sweep", "gram"):
    DEFAULTS[_cmd] = {**EDIT_FLAGS, **DEFAULTS[_cmd]}


def _parser():
    p = argparse.ArgumentParser(prog="robustedit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=None)
        sp.add_argument("--config", help="JSON file of flag values; explicit flags win")
        return sp

    g = add("gen-data", "generate a synthetic knowledge base")
    g.add_argument("--units", type=int)
    g.add_argument("--variants", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--classes", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")

    t = add("train", "train a base model on a knowledge base")
    t.add_argument("--kb")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--d-e", dest="d_e", type=int)
    t.add_argument("--d-h", dest="d_h", type=int)
    t.add_argument("--out")

    def edit_flags(sp):
        sp.add_argument("--model")
        sp.add_argument("--kb")
        sp.add_argument("--eps", type=float)
        sp.add_argument("--n-variants", dest="n_variants", type=int)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--max-steps", dest="max_steps", type=int)
        sp.add_argument("--seed", type=int)

    e = add("edit", "apply one edit")
    edit_flags(e)
    e.add_argument("--unit", type=int)
    e.add_argument("--new-label", dest="new_label", type=int)
    e.add_argument("--out-dir", dest="out_dir")

    s = add("edit-seq", "apply a sequence of edits to one model")
    edit_flags(s)
    s.add_argument("--n-edits", dest="n_edits", type=int)
    s.add_argument("--out-dir", dest="out_dir")

    w = add("sweep", "metrics over a hyperparameter grid (CSV)")
    edit_flags(w)
    w.add_argument("--param", choices=None)
    w.add_argument("--values")
    w.add_argument("--seeds", type=int)
    w.add_argument("--n-edits", dest="n_edits", type=int)
    w.add_argument("--out")

    gr = add("gram", "export the hidden-state Gram matrix of an edit sample and its variants")
    edit_flags(gr)
    gr.add_argument("--unit", type=int)
    gr.add_argument("--new-label", dest="new_label", type=int)
    gr.add_argument("--edited-model", dest="edited_model", help="score variants with this model instead")
    gr.add_argument("--out")

    r = add("sweep-repr", "export hidden states under growing latent perturbations")
    r.add_argument("--model")
    r.add_argument("--kb")
    r.add_argument("--unit", type=int)
    r.add_argument("--eps-list", dest="eps_list")
    r.add_argument("--k", type=int)
    r.add_argument("--out")
    return p


def resolve(command, args):
    """Merge defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(from_file)
    for k, v in vars(args).items():
        if k in cfg and v is not None:
            cfg[k] = v
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _load_inputs(cfg):
    for key in ("model", "kb"):
        if cfg.get(key) is not None and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key} file not found: {cfg[key]}")
    model = load_model(cfg["model"]) if cfg.get("model") else None
    kb = load_kb(cfg["kb"]) if cfg.get("kb") else None
    return model, kb


def _edit_config(cfg):
    return EditConfig(
        eps=cfg["eps"], n_variants=cfg["n_variants"], tau_align=cfg["tau"], beta=cfg["beta"],
        lr=cfg["lr"], max_steps=cfg["max_steps"], seed=cfg["seed"],
    )


def _write(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _dump(obj):
    return json.dumps(obj, sort_keys=True) + "\n"


def _write_run_config(command, cfg, path):
    _write(path, _dump({"command": command, **cfg}))


def cmd_gen_data(cfg):
    _require(cfg, "out")
    kbc = KBConfig(
        n_units=cfg["units"], m_variants=cfg["variants"], d_v=cfg["d_v"], d_t=cfg["d_t"],
        n_classes=cfg["classes"], noise_scale=cfg["noise"], seed=cfg["seed"],
    )
    kb = generate_knowledge_base(kbc)
    try:
        save_kb(kb, cfg["out"])
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_run_config("gen-data", cfg, cfg["out"] + ".config.json")
    print(_dump({"n_units": kb.n_units, "out": cfg["out"]}), end="")


def cmd_train(cfg):
    _require(cfg, "kb", "out")
    _, kb = _load_inputs(cfg)
    dims = ModelDims(d_v=kb.config.d_v, d_t=kb.config.d_t, d_e=cfg["d_e"], d_h=cfg["d_h"], n_classes=kb.n_classes)
    model, acc = train_base(ToyMultimodalModel(dims, seed=cfg["seed"]), kb, cfg["epochs"], cfg["lr"], cfg["seed"])
    try:
        save_model(model, cfg["out"])
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_run_config("train", cfg, cfg["out"] + ".config.json")
    print(_dump({"accuracy": acc}), end="")


def _write_traces(out_dir, traces):
    _write(out_dir / "trace.jsonl", "".join(t.to_jsonl() for t in traces))


def cmd_edit(cfg):
    _require(cfg, "model", "kb", "unit", "out_dir")
    model, kb = _load_inputs(cfg)
    out_dir = Path(cfg["out_dir"])
    try:
        unit = kb.unit(cfg["unit"])
    except KeyError as exc:
        raise ConfigError(f"invalid unit id {cfg['unit']}") from exc
    new_label = cfg["new_label"] if cfg["new_label"] is not None else (unit.label + 1) % kb.n_classes
    request = make_edit_request(kb, unit.unit_id, new_label, cfg["seed"])
    config = _edit_config(cfg)
    _write_run_config("edit", cfg, out_dir / "run_config.json")
    pre = model.copy()
    try:
        model, trace = edit(model, pre, request, config, kb=kb)
    except EditFailure as exc:
        _write_traces(out_dir, [exc.trace] if exc.trace else [])
        raise
    _write_traces(out_dir, [trace])
    report = evaluate(model, pre, kb, [request], asdict(config), cfg["seed"])
    _write(out_dir / "metrics.json", report.to_json() + "\n")
    _write(out_dir / "model.json", json.dumps(model.to_dict()) + "\n")
    print(report.to_json())


def cmd_edit_seq(cfg):
    _require(cfg, "model", "kb", "out_dir")
    model, kb = _load_inputs(cfg)
    out_dir = Path(cfg["out_dir"])
    requests = make_edit_requests(kb, cfg["n_edits"], cfg["seed"])
    config = _edit_config(cfg)
    _write_run_config("edit-seq", cfg, out_dir / "run_config.json")
    pre = model.copy()
    try:
        model, traces, running = sequential_edit(model, requests, config, kb)
    except EditFailure as exc:
        traces, running = getattr(exc, "partial", ([], []))
        _write_traces(out_dir, traces + ([exc.trace] if exc.trace else []))
        _write(out_dir / "running.json", _dump(running))
        raise
    _write_traces(out_dir, traces)
    report = evaluate(model, pre, kb, requests, asdict(config), cfg["seed"])
    _write(out_dir / "metrics.json", report.to_json() + "\n")
    _write(out_dir / "running.json", _dump(running))
    _write(out_dir / "model.json", json.dumps(model.to_dict()) + "\n")
    print(report.to_json())


SWEEP_PARAMS = {"eps": "eps", "beta": "beta", "tau": "tau_align"}


def cmd_sweep(cfg):
    _require(cfg, "model", "kb", "param", "values", "out")
    if cfg["param"] not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep param {cfg['param']!r}; choose from {sorted(SWEEP_PARAMS)}")
    try:
        values = [float(v) for v in str(cfg["values"]).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values: {exc}") from exc
    if not values:
        raise ConfigError("--values is empty")
    model, kb = _load_inputs(cfg)
    base = _edit_config(cfg)
    rows = []
    for value in values:
        for seed in range(cfg["seeds"]):
            config = base.with_(seed=seed, **{SWEEP_PARAMS[cfg["param"]]: value})
            requests = make_edit_requests(kb, min(cfg["n_edits"], kb.n_units), seed)
            rep = run_single_edits(model, kb, requests, config)
            rows.append([cfg["param"], repr(value), seed, repr(rep.rel), repr(rep.gen), repr(rep.loc)])
    try:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        with open(cfg["out"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["param", "value", "seed", "rel", "gen", "loc"])
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_run_config("sweep", cfg, cfg["out"] + ".config.json")
    print(_dump({"rows": len(rows), "out": cfg["out"]}), end="")


def cmd_gram(cfg):
    _require(cfg, "model", "kb", "out")
    model, kb = _load_inputs(cfg)
    scorer = model
    if cfg["edited_model"]:
        if not Path(cfg["edited_model"]).is_file():
            raise ConfigError(f"edited model file not found: {cfg['edited_model']}")
        scorer = load_model(cfg["edited_model"])
    try:
        unit = kb.unit(cfg["unit"])
    except KeyError as exc:
        raise ConfigError(f"invalid unit id {cfg['unit']}") from exc
    y_star = cfg["new_label"] if cfg["new_label"] is not None else int(scorer.predict(*unit.variants[0]))
    z0 = scorer.encode(*unit.variants[0]).z
    variants = lar.generate_variants(scorer, z0, y_star, cfg["n_variants"], cfg["eps"], seed=cfg["seed"])
    batch = rcsl.build_batch(scorer, variants, cfg["tau"])
    try:
        rcsl.export_gram(batch, cfg["out"])
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_run_config("gram", cfg, cfg["out"] + ".config.json")
    check = rcsl.rank1_check(batch)
    print(_dump({"min_offdiag": check.min_gram_entry, "rank": check.rank, "sigma": batch.svd.sigma.tolist()}), end="")


def cmd_sweep_repr(cfg):
    _require(cfg, "model", "kb", "out")
    model, kb = _load_inputs(cfg)
    try:
        sample = kb.unit(cfg["unit"]).variants[0]
        eps_list = [float(e) for e in str(cfg["eps_list"]).split(",")]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad unit or eps list: {exc}") from exc
    try:
        n = perturbation_sweep_export(model, sample, eps_list, cfg["k"], cfg["out"], seed=0)
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    _write_run_config("sweep-repr", cfg, cfg["out"] + ".config.json")
    print(_dump({"rows": n, "out": cfg["out"]}), end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "edit": cmd_edit,
    "edit-seq": cmd_edit_seq,
    "sweep": cmd_sweep,
    "gram": cmd_gram,
    "sweep-repr": cmd_sweep_repr,
}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        COMMANDS[args.command](resolve(args.command, args))
    except (ConfigError, ParseError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OutputError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
