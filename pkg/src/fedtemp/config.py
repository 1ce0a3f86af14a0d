"""Experiment configuration: a plain-text key/value format.

Grammar, one entry per line::

    # comment (also after '#' anywhere on a line)
    key = value
    [section]            # following keys read as section.key
    section.key = value  # dotted form, equivalent

Blank lines are ignored; keys are case-sensitive; unknown keys, duplicate
keys and malformed values are errors.  Booleans are ``true``/``false``;
lists are comma-separated.  An empty document yields the Table-4 MNIST
defaults (50 clients, 5 per round, 100 rounds, 5 local epochs, batch 64,
beta 0.01, Dirichlet alpha 1.0, seeds 0-4).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .exceptions import ConfigParseError


@dataclass(frozen=True)
class DataSettings:
    source: str = "mnist"
    dir: str = "data/mnist"
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"
    synth_classes: int = 3
    synth_per_class: int = 400
    synth_test_per_class: int = 100
    synth_dim: int = 4
    synth_spread: float = 1.0
    hidden: int = 256


@dataclass(frozen=True)
class AttackSettings:
    kind: str = "none"
    tau: float = 1.0
    coupling: bool = True
    sigma: float = 0.1
    k_shift: int = 1
    attackers: int = 13


@dataclass(frozen=True)
class DefenseSettings:
    kind: str = "fedavg"
    root_size: int = 100
    normalize: bool = True
    f: int = -1
    m: int = -1
    confidence: float = 1.0


@dataclass(frozen=True)
class PosthocSettings:
    kind: str = "none"
    n_cal: int = 500
    holdout: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    clients: int = 50
    clients_per_round: int = 5
    rounds: int = 100
    local_steps: int = 5
    local_unit: str = "epochs"
    batch_size: int = 64
    beta: float = 0.01
    alpha: float = 1.0
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_stride: int = 1
    precision: str = "float32"
    bins: int = 15
    output: str = "results"
    data: DataSettings = field(default_factory=DataSettings)
    attack: AttackSettings = field(default_factory=AttackSettings)
    defense: DefenseSettings = field(default_factory=DefenseSettings)
    posthoc: PosthocSettings = field(default_factory=PosthocSettings)

    @property
    def attacker_count(self) -> int:
        return 0 if self.attack.kind == "none" else self.attack.attackers

    def to_text(self) -> str:
        """Canonical document: every key, sorted, re-parseable to an equal config."""
        lines = []
        for key, value in sorted(_flatten(self).items()):
            lines.append(f"{key} = {_render(value)}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        """Copy with ``{"attack.tau": 5, "rounds": 10, ...}`` applied and validated."""
        flat = _flatten(self)
        for k, v in dotted.items():
            key = k.replace("__", ".")
            if key not in flat:
                raise ConfigParseError(key, "unknown key")
            flat[key] = v
        return _validate(_build(flat))


SECTIONS = {
    "data": DataSettings,
    "attack": AttackSettings,
    "defense": DefenseSettings,
    "posthoc": PosthocSettings,
}


def _flatten(cfg: ExperimentConfig) -> dict:
    flat = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sf in fields(v):
                flat[f"{f.name}.{sf.name}"] = getattr(v, sf.name)
        else:
            flat[f.name] = v
    return flat


def _build(flat: dict) -> ExperimentConfig:
    top = {k: v for k, v in flat.items() if "." not in k}
    for name, cls in SECTIONS.items():
        top[name] = cls(**{k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith(name + ".")})
    return ExperimentConfig(**top)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _field_types() -> dict:
    types = {}
    for f in fields(ExperimentConfig):
        if f.name in SECTIONS:
            for sf in fields(SECTIONS[f.name]):
                types[f"{f.name}.{sf.name}"] = sf.type
        else:
            types[f.name] = f.type
    return types


def _coerce(key, type_name, raw: str):
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if type_name == "tuple":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigParseError(key, f"expected {type_name}, got {raw!r}") from None


def _check(cond, key, message):
    if not cond:
        raise ConfigParseError(key, message)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check(cfg.clients >= 1, "clients", "must be >= 1")
    _check(1 <= cfg.clients_per_round <= cfg.clients, "clients_per_round",
           f"must lie in [1, clients={cfg.clients}]")
    _check(cfg.rounds >= 0, "rounds", "must be >= 0")
    _check(cfg.local_steps >= 1, "local_steps", "must be >= 1")
    _check(cfg.local_unit in ("steps", "epochs"), "local_unit", "must be 'steps' or 'epochs'")
    _check(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    _check(cfg.beta > 0, "beta", "must be > 0")
    _check(cfg.alpha > 0, "alpha", "must be > 0")
    _check(len(cfg.seeds) >= 1, "seeds", "need at least one seed")
    _check(cfg.eval_stride >= 1, "eval_stride", "must be >= 1")
    _check(cfg.precision in ("float32", "float64"), "precision", "must be float32 or float64")
    _check(cfg.bins >= 1, "bins", "must be >= 1")
    d = cfg.data
    _check(d.source in ("mnist", "synth"), "data.source", "must be 'mnist' or 'synth'")
    _check(d.hidden >= 1, "data.hidden", "must be >= 1")
    for name in ("synth_classes", "synth_per_class", "synth_test_per_class", "synth_dim"):
        _check(getattr(d, name) >= 1, f"data.{name}", "must be >= 1")
    _check(d.synth_classes >= 2, "data.synth_classes", "need at least two classes")
    _check(d.synth_spread >= 0, "data.synth_spread", "must be >= 0")
    a = cfg.attack
    _check(a.kind in ("none", "tsa", "noise", "label_flip"), "attack.kind",
           "must be one of none, tsa, noise, label_flip")
    _check(a.tau > 0, "attack.tau", "must be > 0")
    _check(a.sigma >= 0, "attack.sigma", "must be >= 0")
    _check(a.attackers >= 0 and (a.kind == "none" or a.attackers <= cfg.clients), "attack.attackers", f"must lie in [0, clients={cfg.clients}]")
    _check(a.k_shift >= 1, "attack.k_shift", "must be >= 1")
    df = cfg.defense
    _check(df.kind in ("fedavg", "fltrust", "foolsgold", "multikrum"), "defense.kind",
           "must be one of fedavg, fltrust, foolsgold, multikrum")
    _check(df.root_size >= 1, "defense.root_size", "must be >= 1")
    _check(df.f >= -1, "defense.f", "must be >= 0, or -1 for automatic")
    _check(df.m == -1 or df.m >= 1, "defense.m", "must be >= 1, or -1 for automatic")
    p = cfg.posthoc
    _check(p.kind in ("none", "temperature", "platt", "isotonic", "histogram"), "posthoc.kind",
           "must be one of none, temperature, platt, isotonic, histogram")
    _check(p.holdout >= 1, "posthoc.holdout", "must be >= 1")
    _check(1 <= p.n_cal <= p.holdout, "posthoc.n_cal", f"must lie in [1, holdout={p.holdout}]")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    types = _field_types()
    values = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigParseError(section, f"unknown section (line {lineno})")
            continue
        if "=" not in line:
            raise ConfigParseError(line, f"expected 'key = value' (line {lineno})")
        key, raw = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in types:
            raise ConfigParseError(key, "unknown key")
        if key in values:
            raise ConfigParseError(key, "given twice")
        values[key] = _coerce(key, types[key], raw)
    flat = _flatten(ExperimentConfig())
    flat.update(values)
    return _validate(_build(flat))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())

