"""Experiment configuration: a flat INI file checked against ``schema.ini``."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

from ..ilqg.types import IlqgConfig

MODES = ("operational", "torque", "kinematics")
POLICIES = ("ilqg", "mlp-late-fusion", "mlp-first-layer")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaEntry:
    section: str
    key: str
    kind: str
    default: str
    doc: str

    def parse(self, raw):
        raw = raw.strip()
        try:
            if self.kind == "int":
                return int(raw)
            if self.kind == "float":
                return float(raw)
            if self.kind == "bool":
                low = raw.lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError(raw)
                return low in ("true", "yes", "1", "on")
            if self.kind == "str":
                return raw
            if self.kind == "floats":
                return tuple(float(v) for v in raw.split(",") if v.strip())
            if self.kind == "ints":
                return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"[{self.section}] {self.key}: cannot read {raw!r} as {self.kind}") from None
        if self.kind.startswith("choice(") and self.kind.endswith(")"):
            options = [o.strip() for o in self.kind[7:-1].split(",")]
            if raw not in options:
                raise ConfigError(f"[{self.section}] {self.key}: {raw!r} is not one of {options}")
            return raw
        raise ConfigError(f"schema type {self.kind!r} is not supported")


def load_schema(text=None):
    """Parse the schema into ``{section: {key: SchemaEntry}}``."""
    if text is None:
        text = resources.files(__package__).joinpath("schema.ini").read_text()
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    schema = {}
    for section in parser.sections():
        schema[section] = {}
        for key, spec in parser.items(section):
            parts = [p.strip() for p in spec.split("|", 2)]
            if len(parts) != 3:
                raise ConfigError(f"schema line [{section}] {key} needs 'type | default | doc'")
            schema[section][key] = SchemaEntry(section, key, *parts)
    return schema


def read_values(text=None, schema=None):
    """Defaults overlaid with ``text``; unknown sections or keys are errors."""
    schema = schema or load_schema()
    values = {sec: {k: e.parse(e.default) for k, e in entries.items()} for sec, entries in schema.items()}
    if text:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        for section in parser.sections():
            if section not in schema:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in schema[section]:
                    raise ConfigError(f"unknown key [{section}] {key}")
                values[section][key] = schema[section][key].parse(raw)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "planar-peg"
    mode: str = "operational"
    augmented: bool = False
    policy: str = "ilqg"
    episodes: int = 5
    seed: int = 0
    env: dict = field(default_factory=dict)
    ilqg: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    distill: dict = field(default_factory=dict)
    generalize: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy kind {self.policy!r}")
        if self.episodes < 1:
            raise ConfigError("evaluation episodes must be at least 1")
        if self.mode == "kinematics" and (self.augmented or self.policy != "ilqg"):
            raise ConfigError("kinematics-only mode has no learned policy or state augmentation")
        if self.policy != "ilqg" and (self.mode != "operational" or self.augmented):
            raise ConfigError("network policies emit wrenches and take F/T at the fusion layer: "
                              "use operational mode without state augmentation")
        # fill every section from the schema so equal configs hash equally
        defaults = read_values()
        for name in ("env", "ilqg", "cost", "distill", "generalize"):
            merged = dict(defaults[name])
            unknown = set(getattr(self, name)) - set(merged)
            if unknown:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(unknown)}")
            merged.update(getattr(self, name))
            object.__setattr__(self, name, merged)

    @classmethod
    def from_values(cls, values):
        exp = values["experiment"]
        return cls(task=exp["task"], mode=exp["mode"], augmented=exp["augmented"], policy=exp["policy"],
                   episodes=exp["episodes"], seed=exp["seed"], env=values["env"], ilqg=values["ilqg"],
                   cost=values["cost"], distill=values["distill"], generalize=values["generalize"])

    @classmethod
    def from_text(cls, text):
        return cls.from_values(read_values(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def with_(self, **changes):
        """Copy with top-level fields replaced; dict fields are merged."""
        kw = self.to_dict()
        for key, val in changes.items():
            if isinstance(kw.get(key), dict):
                kw[key] = {**kw[key], **val}
            else:
                kw[key] = val
        return type(self)(**kw)

    def to_dict(self):
        return {"task": self.task, "mode": self.mode, "augmented": self.augmented, "policy": self.policy,
                "episodes": self.episodes, "seed": self.seed, "env": dict(self.env),
                "ilqg": dict(self.ilqg), "cost": dict(self.cost), "distill": dict(self.distill),
                "generalize": dict(self.generalize)}

    def to_text(self):
        """INI text that loads back to an equal config."""
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, tuple):
                return ",".join(repr(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)

        d = self.to_dict()
        lines = ["[experiment]"]
        lines += [f"{k} = {fmt(d[k])}" for k in ("task", "mode", "augmented", "policy", "episodes", "seed")]
        for sec in ("env", "ilqg", "cost", "distill", "generalize"):
            lines += ["", f"[{sec}]"] + [f"{k} = {fmt(v)}" for k, v in d[sec].items()]
        return "\n".join(lines) + "\n"

    def config_hash(self):
        """Digest of every semantic field.  The seed is provenance, not semantics."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def ilqg_config(self):
        c = self.ilqg
        return IlqgConfig(horizon=self.env["horizon"], rollouts=c["rollouts"], iterations=c["iterations"],
                          entropy_weight=c["entropy_weight"], fit_reg=c["fit_reg"], fit_window=c["fit_window"],
                          mu_init=c["mu_init"], mu_factor=c["mu_factor"], mu_max=c["mu_max"],
                          line_search=tuple(c["line_search"]), force_std=c["force_std"],
                          moment_std=c["moment_std"], torque_std=c["torque_std"])
