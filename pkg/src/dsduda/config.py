"""Flat ``section.key = value`` configuration files.

Example::

    # comments start with '#'
    train.gamma = 1e-3
    train.ablation = dat_and_mim
    data.target.tempo_range = 1.0, 1.3
    eval.ablations = baseline, dat_and_mim

Every key has a default; ``Config.to_text()`` writes all of them out.
Validation is total: all bad keys and values are reported in one error and
nothing is built until the whole file is valid.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corpus import DomainSpec, SynthConfig
from .losses import LossWeights
from .model import CbrnnConfig
from .train import ABLATIONS, TrainConfig

MODES = ("within", "cross")
STIM_DOMAINS = ("source", "target")


class ConfigError(ValueError):
    """One or more configuration keys are unknown or hold invalid values."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "cross"
    rounds: int = 10
    ablations: tuple = ABLATIONS
    domain: str = "target"     # the labelled pool for within-domain runs


@dataclass(frozen=True)
class Config:
    data: SynthConfig = field(default_factory=SynthConfig)
    model: CbrnnConfig = field(default_factory=CbrnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat(self):
        flat = {}
        for key, (obj_path, attr, kind, _) in SCHEMA.items():
            flat[key] = _get(self, obj_path, attr)
        return flat

    def to_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.to_flat().items()}


# value kinds ---------------------------------------------------------------

def _pos_int(v):
    v = int(v)
    if v < 1:
        raise ValueError("must be an integer >= 1")
    return v


def _nonneg_int(v):
    v = int(v)
    if v < 0:
        raise ValueError("must be an integer >= 0")
    return v


def _int(v):
    return int(v)


def _pos_float(v):
    v = float(v)
    if not v > 0:
        raise ValueError("must be > 0")
    return v


def _nonneg_float(v):
    v = float(v)
    if not v >= 0:
        raise ValueError("must be >= 0")
    return v


def _float(v):
    return float(v)


def _at_least_one(v):
    v = float(v)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _choice(options):
    def parse(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return parse


def _probabilities(v):
    parts = tuple(float(p) for p in _split(v))
    if len(parts) != 3 or min(parts) < 0 or abs(sum(parts) - 1.0) > 1e-9:
        raise ValueError("must be three non-negative probabilities summing to 1")
    return parts


def _range(v):
    parts = tuple(float(p) for p in _split(v))
    if len(parts) != 2 or not 0 < parts[0] <= parts[1]:
        raise ValueError("must be 'min, max' with 0 < min <= max")
    return parts


def _ablation_list(v):
    parts = tuple(_split(v))
    bad = [p for p in parts if p not in ABLATIONS]
    if not parts or bad:
        raise ValueError(f"must list ablations from {', '.join(ABLATIONS)}")
    return parts


def _split(v):
    if isinstance(v, (tuple, list)):
        return list(v)
    return [p.strip() for p in str(v).split(",") if p.strip()]


def _format(v):
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# schema: flat key -> (object path, attribute, parser, description)
SCHEMA = {}


def _add(prefix, obj_path, names, parsers):
    for name, parse in zip(names, parsers):
        SCHEMA[f"{prefix}{name}"] = (obj_path, name, parse, "")


_add("data.", ("data",), ("seed", "jitter", "modulation_slowdown", "harmonic_instability"),
     (_nonneg_int, _nonneg_float, _at_least_one, _nonneg_float))
for _dom in STIM_DOMAINS:
    _add(f"data.{_dom}.", ("data", _dom),
         ("speakers_per_class", "utterances_per_speaker", "healthy_ratio", "stimulus_mix",
          "tilt_db_per_octave", "noise_floor", "tempo_range"),
         (_pos_int, _pos_int, _pos_float, _probabilities, _float, _nonneg_float, _range))
_add("model.", ("model",), ("n_banks", "bank_channels", "hidden", "attention_hidden"),
     (_nonneg_int, _pos_int, _pos_int, _pos_int))
_add("train.", ("train",), ("alpha", "beta", "gamma", "epochs", "batch_size", "ablation", "seed"),
     (_pos_float, _pos_float, _pos_float, _pos_int, _pos_int, _choice(ABLATIONS), _nonneg_int))
_add("loss.", ("train", "weights"), ("bio", "adv", "dom", "mi"),
     (_nonneg_float, _nonneg_float, _nonneg_float, _nonneg_float))
_add("eval.", ("eval",), ("mode", "rounds", "ablations", "domain"),
     (_choice(MODES), _pos_int, _ablation_list, _choice(STIM_DOMAINS)))


def _get(cfg, obj_path, attr):
    obj = cfg
    for part in obj_path:
        obj = getattr(obj, part)
    return getattr(obj, attr)


def _set(obj, obj_path, attr, value):
    if not obj_path:
        return replace(obj, **{attr: value})
    head, rest = obj_path[0], obj_path[1:]
    return replace(obj, **{head: _set(getattr(obj, head), rest, attr, value)})


# parsing -------------------------------------------------------------------

def parse_text(text, source="<config>"):
    """Parse config text into {key: raw string}; syntax problems are collected, not raised."""
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            problems.append(f"{source}:{lineno}: duplicate key {key}")
        values[key] = value
    return values, problems


def build(values, problems=(), base=None):
    """Validate every key and build a Config; raises ConfigError listing all problems."""
    problems = list(problems)
    parsed = {}
    for key, raw in values.items():
        if key not in SCHEMA:
            problems.append(f"{key}: unknown key")
            continue
        try:
            parsed[key] = SCHEMA[key][2](raw)
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {raw!r} {exc}" if "must" in str(exc) else f"{key}: cannot parse {raw!r}")
    if problems:
        raise ConfigError(problems)
    cfg = base or Config()
    for key, value in parsed.items():
        obj_path, attr, _, _ = SCHEMA[key]
        try:
            cfg = _set(cfg, obj_path, attr, value)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    try:
        cfg.data.validate()
    except ValueError as exc:
        problems.append(f"data: {exc}")
    if cfg.eval.mode == "within":
        uda = [a for a in cfg.eval.ablations if a != "baseline"]
        if uda:
            problems.append(f"eval.ablations: within-domain runs only support baseline, got {', '.join(uda)}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load(path=None, overrides=None):
    """Read a config file (or defaults when ``path`` is None) and apply ``overrides``."""
    values, problems = {}, []
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError([f"{path}: cannot read ({exc.strerror or exc})"]) from None
        values, problems = parse_text(text, str(path))
    values.update(overrides or {})
    return build(values, problems)


def load_text(text, overrides=None):
    values, problems = parse_text(text)
    values.update(overrides or {})
    return build(values, problems)


def keys():
    return list(SCHEMA)


def defaults_text():
    return Config().to_text()


def _check_schema_covers_dataclasses():
    # every tunable dataclass field has exactly one key
    expected = {f"train.{f.name}" for f in fields(TrainConfig) if f.name != "weights"}
    expected |= {f"loss.{f.name}" for f in fields(LossWeights)}
    expected |= {f"model.{f.name}" for f in fields(CbrnnConfig) if f.name != "n_mels"}
    expected |= {f"data.{d}.{f.name}" for d in STIM_DOMAINS for f in fields(DomainSpec)}
    expected |= {f"data.{f.name}" for f in fields(SynthConfig) if f.name not in STIM_DOMAINS}
    expected |= {f"eval.{f.name}" for f in fields(EvalConfig)}
    return expected == set(SCHEMA)
