"""Synthetic knowledge bases built from Gaussian neighbourhoods of prototypes.

A knowledge unit is one concept: a visual prototype, a text prototype and
``m`` noisy (x_v, x_t) variants that all share a label. Everything outside a
unit is out of scope for edits to that unit.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InvalidEditError, ParseError

MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class KBConfig:
    n_units: int = 10
    m_variants: int = 6
    d_v: int = 16
    d_t: int = 16
    n_classes: int = 10
    noise_scale: float = 0.08
    seed: int = 0

    def validate(self):
        if self.n_units < 2:
            raise ConfigError("n_units must be >= 2")
        if self.m_variants < 2:
            raise ConfigError("m_variants must be >= 2")
        if not self.noise_scale > 0:
            raise ConfigError("noise_scale must be > 0")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")


@dataclass
class KnowledgeUnit:
    unit_id: int
    label: int
    concept_v: np.ndarray
    concept_t: np.ndarray
    variants: list  # [(x_v, x_t), ...]

    @property
    def m(self):
        return len(self.variants)


@dataclass
class KnowledgeBase:
    units: list
    n_classes: int
    config: KBConfig = field(default_factory=KBConfig)

    @property
    def n_units(self):
        return len(self.units)

    def unit(self, unit_id):
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(f"no unit with id {unit_id}")

    def arrays(self, exclude=()):
        """Stack every variant as ``(x_v, x_t, labels)`` arrays."""
        xs_v, xs_t, labels = [], [], []
        for u in self.units:
            if u.unit_id in exclude:
                continue
            for x_v, x_t in u.variants:
                xs_v.append(x_v)
                xs_t.append(x_t)
                labels.append(u.label)
        return np.array(xs_v), np.array(xs_t), np.array(labels, dtype=np.int64)

    def sample(self, unit_id, variant):
        return self.unit(unit_id).variants[variant]

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "units": [
                {
                    "unit_id": u.unit_id,
                    "label": u.label,
                    "concept_v": u.concept_v.tolist(),
                    "concept_t": u.concept_t.tolist(),
                    "variants": [{"x_v": v.tolist(), "x_t": t.tolist()} for v, t in u.variants],
                }
                for u in self.units
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return json.dumps(self.to_dict()) == json.dumps(other.to_dict())


def generate_knowledge_base(config=None, **overrides):
    """Sample a knowledge base; labels are assigned ``unit_id % n_classes``.

    Prototypes are drawn uniformly on the unit sphere of each modality and a
    candidate is rejected if its concatenated prototype lies within
    ``2 * noise_scale`` of an accepted one.

    Raises:
        ConfigError: on invalid settings or if separation cannot be reached.
    """
    config = config or KBConfig()
    if overrides:
        config = KBConfig(**{**asdict(config), **overrides})
    config.validate()
    rng = np.random.default_rng(config.seed)
    min_sep = 2.0 * config.noise_scale

    def on_sphere(dim):
        x = rng.standard_normal(dim)
        return x / np.linalg.norm(x)

    protos = []
    rejections = 0
    while len(protos) < config.n_units:
        cand = (on_sphere(config.d_v), on_sphere(config.d_t))
        joined = np.concatenate(cand)
        if all(np.linalg.norm(joined - np.concatenate(p)) >= min_sep for p in protos):
            protos.append(cand)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise ConfigError(
                f"could not separate {config.n_units} prototypes by {min_sep:g} "
                f"after {MAX_REJECTIONS} rejections"
            )

    units = []
    for uid, (pv, pt) in enumerate(protos):
        variants = [
            (
                pv + config.noise_scale * rng.standard_normal(config.d_v),
                pt + config.noise_scale * rng.standard_normal(config.d_t),
            )
            for _ in range(config.m_variants)
        ]
        units.append(KnowledgeUnit(uid, uid % config.n_classes, pv, pt, variants))
    return KnowledgeBase(units, config.n_classes, config)


@dataclass
class EditRequest:
    """Relabel one unit; the first variant is the edit sample, the rest are held out."""

    unit_id: int
    edit_sample: tuple
    new_label: int
    old_label: int
    heldout_variants: list
    outofscope_sample_ids: list  # [(unit_id, variant_index), ...]
    seed: int = 0


def make_edit_request(kb, unit_id, new_label, seed=0):
    """Build an edit request for ``unit_id``.

    Raises:
        InvalidEditError: if the unit does not exist, the label is out of
            range, or ``new_label`` equals the unit's current label.
    """
    try:
        unit = kb.unit(unit_id)
    except KeyError as exc:
        raise InvalidEditError(str(exc)) from exc
    if not 0 <= new_label < kb.n_classes:
        raise InvalidEditError(f"new_label {new_label} outside [0, {kb.n_classes})")
    if new_label == unit.label:
        raise InvalidEditError(f"unit {unit_id} already has label {new_label}")
    out_ids = [(u.unit_id, j) for u in kb.units if u.unit_id != unit_id for j in range(u.m)]
    return EditRequest(
        unit_id=unit_id,
        edit_sample=unit.variants[0],
        new_label=int(new_label),
        old_label=unit.label,
        heldout_variants=list(unit.variants[1:]),
        outofscope_sample_ids=out_ids,
        seed=seed,
    )


def make_edit_requests(kb, n_edits, seed=0):
    """``n_edits`` requests on distinct, randomly chosen units with random new labels."""
    if n_edits > kb.n_units:
        raise InvalidEditError(f"cannot make {n_edits} disjoint edits on {kb.n_units} units")
    rng = np.random.default_rng(seed)
    unit_ids = rng.permutation([u.unit_id for u in kb.units])[:n_edits]
    requests = []
    for uid in unit_ids:
        label = kb.unit(int(uid)).label
        new_label = int(rng.integers(kb.n_classes - 1))
        new_label += new_label >= label
        requests.append(make_edit_request(kb, int(uid), new_label, seed))
    return requests


def save_kb(kb, path):
    with open(path, "w") as fh:
        json.dump(kb.to_dict(), fh)
        fh.write("\n")


def kb_from_dict(data):
    """Validate and rebuild a knowledge base from its JSON document."""
    try:
        config = KBConfig(**data["config"])
        units = []
        for i, u in enumerate(data["units"]):
            where = f"units[{i}] (unit_id={u.get('unit_id')})"
            try:
                label = int(u["label"])
                variants = [
                    (np.asarray(v["x_v"], dtype=np.float64), np.asarray(v["x_t"], dtype=np.float64))
                    for v in u["variants"]
                ]
                unit = KnowledgeUnit(
                    int(u["unit_id"]),
                    label,
                    np.asarray(u["concept_v"], dtype=np.float64),
                    np.asarray(u["concept_t"], dtype=np.float64),
                    variants,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: bad or missing field {exc}") from exc
            if not 0 <= label < config.n_classes:
                raise ParseError(f"{where}: label {label} outside [0, {config.n_classes})")
            if unit.m < 2:
                raise ParseError(f"{where}: needs at least 2 variants")
            units.append(unit)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed knowledge base: missing field {exc}") from exc
    return KnowledgeBase(units, config.n_classes, config)


def load_kb(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return kb_from_dict(data)
