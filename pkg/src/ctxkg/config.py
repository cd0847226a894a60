"""Flat-sectioned INI configuration shared by every subcommand.

Sections mirror the module parameter sets: [scenario], [perturb], [train],
[assoc], [dcn], [matrix], plus one [variant:NAME] section per graph variant
in the experiment matrix. Unknown sections or keys are hard errors so typos
in experiment matrices fail loudly, and every run writes its fully resolved
configuration next to its outputs for exact replay.
"""

from __future__ import annotations

import configparser
import dataclasses
import io as _io
import os
import re

from .errors import ValidationError
from .gat import GatConfig
from .simulate import SimScenario
from .sparsify import parse_plan

PERTURB_STRATEGIES = ("none", "add", "replace")

# element type of tuple-valued fields, by field name
_TUPLE_ELEM = {"cohort_sizes": int, "cohorts": int, "seeds": int,
               "variants": str}
_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


@dataclasses.dataclass(frozen=True)
class PerturbParams:
    pseudo_count: float = 1.0
    n_dev: int = 3000
    n_hvg: int = 2000
    k: int = 0            # 0 = one component per planted program (when known)
    tau: float = 0.5
    seed: int = 0

    def check(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValidationError(f"tau must be in (0, 1], got {self.tau}")
        if self.pseudo_count <= 0:
            raise ValidationError("pseudo_count must be positive")
        if self.n_dev < 0 or self.n_hvg < 0 or self.k < 0:
            raise ValidationError("n_dev, n_hvg and k must be non-negative")


@dataclasses.dataclass(frozen=True)
class AssocParams:
    alpha: float = 0.05
    window_bp: int = 500_000
    max_loci: int = 100
    recall_k: int = 100

    def check(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.window_bp <= 0 or self.max_loci <= 0 or self.recall_k <= 0:
            raise ValidationError("window_bp, max_loci and recall_k must be positive")


@dataclasses.dataclass(frozen=True)
class DcnParams:
    k: int = 5
    v2g_layer: int = 0
    g2g_layer: int = 1
    norm: str = "minmax"

    def check(self):
        if self.k < 0:
            raise ValidationError("k must be non-negative")
        if self.norm not in ("minmax", "rank"):
            raise ValidationError(f"unknown normalization {self.norm!r}")
        if self.v2g_layer < 0 or self.g2g_layer < 0:
            raise ValidationError("layer indices must be non-negative")


@dataclasses.dataclass(frozen=True)
class VariantSpec:
    name: str = ""
    plan: str = ""                 # sparsify steps joined by ';'
    perturb_edges: str = "none"    # none | add | replace
    rewire_seed: int = -1          # >= 0: rewire G2G with this seed offset

    def plan_text(self) -> str:
        return "\n".join(s.strip() for s in self.plan.split(";") if s.strip())

    def check(self):
        if self.perturb_edges not in PERTURB_STRATEGIES:
            raise ValidationError(
                f"variant {self.name!r}: perturb_edges must be one of "
                f"{PERTURB_STRATEGIES}, got {self.perturb_edges!r}")
        parse_plan(self.plan_text())


@dataclasses.dataclass(frozen=True)
class MatrixParams:
    variants: tuple = ()
    cohorts: tuple = ()
    seeds: tuple = (0,)
    full_cohort: int = 20_000

    def check(self):
        if self.full_cohort <= 0:
            raise ValidationError("full_cohort must be positive")
        if any(c <= 0 for c in self.cohorts):
            raise ValidationError("cohorts must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("duplicate seeds in matrix")


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    scenario: SimScenario = SimScenario()
    perturb: PerturbParams = PerturbParams()
    train: GatConfig = GatConfig()
    assoc: AssocParams = AssocParams()
    dcn: DcnParams = DcnParams()
    matrix: MatrixParams = MatrixParams()
    variants: dict = dataclasses.field(default_factory=dict)

    def check(self):
        self.scenario.check()
        self.perturb.check()
        self.train.check()
        self.assoc.check()
        self.dcn.check()
        self.matrix.check()
        for spec in self.variants.values():
            spec.check()
        for name in self.matrix.variants:
            if name not in self.variants:
                raise ValidationError(
                    f"matrix references undefined variant {name!r}; "
                    f"add a [variant:{name}] section")

    def variant(self, name: str) -> VariantSpec:
        if name not in self.variants:
            raise ValidationError(f"unknown graph variant {name!r}")
        return self.variants[name]


_SECTIONS = {"scenario": SimScenario, "perturb": PerturbParams,
             "train": GatConfig, "assoc": AssocParams, "dcn": DcnParams,
             "matrix": MatrixParams}
_VARIANT_NAME = re.compile(r"^[A-Za-z0-9_-]+$")


def _coerce(section, name, kind, raw):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_WORDS[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            elem = _TUPLE_ELEM[name]
            return tuple(elem(part.strip()) for part in raw.split(",")
                         if part.strip())
        return raw
    except (ValueError, KeyError) as exc:
        raise ValidationError(
            f"[{section}] {name}: cannot parse {raw!r}: {exc}") from None


def _fill(cls, section, items, extra=None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(extra or {})
    for key, raw in items:
        if key not in fields or key in kwargs:
            raise ValidationError(f"unknown key {key!r} in section [{section}]")
        default = fields[key].default
        if default is dataclasses.MISSING:
            kind = str
        else:
            kind = type(default)
        kwargs[key] = _coerce(section, key, kind, raw)
    return cls(**kwargs)


def parse_config(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config parse error: {exc}") from None

    parts = {}
    variants = {}
    for section in cp.sections():
        if section in _SECTIONS:
            parts[section] = _fill(_SECTIONS[section], section,
                                   cp.items(section))
        elif section.startswith("variant:"):
            name = section.split(":", 1)[1]
            if not _VARIANT_NAME.match(name):
                raise ValidationError(f"bad variant name {name!r}")
            variants[name] = _fill(VariantSpec, section, cp.items(section),
                                   extra={"name": name})
        else:
            raise ValidationError(f"unknown config section [{section}]")

    cfg = PipelineConfig(variants=variants, **{k: v for k, v in parts.items()})
    cfg.check()
    return cfg


def load_config(path) -> PipelineConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    return str(value)


def render_config(cfg: PipelineConfig) -> str:
    """Canonical text of the fully resolved configuration; parsing it back
    reproduces the same PipelineConfig."""
    out = _io.StringIO()
    for section, obj in (("scenario", cfg.scenario), ("perturb", cfg.perturb),
                         ("train", cfg.train), ("assoc", cfg.assoc),
                         ("dcn", cfg.dcn), ("matrix", cfg.matrix)):
        out.write(f"[{section}]\n")
        for f in dataclasses.fields(obj):
            out.write(f"{f.name} = {_render_value(getattr(obj, f.name))}\n")
        out.write("\n")
    for name in sorted(cfg.variants):
        spec = cfg.variants[name]
        out.write(f"[variant:{name}]\n")
        for f in dataclasses.fields(spec):
            if f.name == "name":
                continue
            out.write(f"{f.name} = {_render_value(getattr(spec, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def write_resolved_config(cfg: PipelineConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
