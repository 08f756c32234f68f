"""Run configuration and its canonical text form.

A config document is one ``dotted.key = type:value`` line per field, sorted
by key. Floats are written with ``repr`` so parsing is lossless. Unknown
keys are rejected; missing keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from clqlab.head import HeadConfig
from clqlab.synthdata import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass
class AssignConfig:
    top_k: int = 9
    iou_target_source: str = "decoded"
    qe_target_mode: str = "power"
    anchor_scale: float = 4.0


@dataclass
class LossConfig:
    w_cls: float = 1.0
    w_reg: float = 1.0
    w_lqe: float = 1.0
    beta: float = 2.0


@dataclass
class OptimConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    iterations: int = 3000
    lr_decay_steps: list[int] = field(default_factory=lambda: [2400])
    lr_decay_factor: float = 0.1
    warmup_iters: int = 100
    batch_size: int = 8


@dataclass
class NMSConfig:
    score_threshold: float = 0.05
    iou_threshold: float = 0.6
    pre_nms_top: int = 1000
    max_per_image: int = 100


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    assign: AssignConfig = field(default_factory=AssignConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    nms: NMSConfig = field(default_factory=NMSConfig)
    seed: int = 0
    deterministic: bool = True
    run_name: str = "clq"
    output_dir: str = "runs/clq"
    checkpoint_interval: int = 0
    eval_batch: int = 50

    def validate(self):
        self.scene.validate()
        self.head.validate()
        if self.head.num_classes != self.scene.num_classes:
            raise ConfigError("head.num_classes must equal scene.num_classes")
        if self.assign.top_k < 1:
            raise ConfigError("assign.top_k must be >= 1")
        if self.assign.iou_target_source not in ("decoded", "anchor"):
            raise ConfigError("assign.iou_target_source must be 'decoded' or 'anchor'")
        if self.assign.qe_target_mode not in ("power", "iou", "hard"):
            raise ConfigError("assign.qe_target_mode must be 'power', 'iou' or 'hard'")
        if self.assign.anchor_scale <= 0:
            raise ConfigError("assign.anchor_scale must be > 0")
        if self.optim.iterations < 0 or self.optim.batch_size < 1:
            raise ConfigError("optim.iterations must be >= 0 and batch_size >= 1")
        if self.optim.batch_size > self.scene.n_train:
            raise ConfigError("optim.batch_size exceeds the training split")
        if self.optim.lr < 0 or self.loss.beta < 0:
            raise ConfigError("optim.lr and loss.beta must be >= 0")
        if not 0 < self.nms.iou_threshold < 1:
            raise ConfigError("nms.iou_threshold must lie in (0, 1)")
        if self.scene.n_val < 1:
            raise ConfigError("scene.n_val must be >= 1")
        return self

    @property
    def qfl(self) -> bool:
        return self.assign.qe_target_mode != "hard"


_TYPE_NAMES = {int: "int", float: "float", bool: "bool", str: "str"}


def _type_name(tp) -> str:
    if typing.get_origin(tp) is list:
        (inner,) = typing.get_args(tp)
        return f"list[{_TYPE_NAMES[inner]}]"
    return _TYPE_NAMES[tp]


def _leaves(obj, prefix=""):
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _leaves(value, key + ".")
        else:
            yield key, hints[f.name], value


def _fmt(tp, value) -> str:
    if typing.get_origin(tp) is list:
        return ",".join(_fmt(typing.get_args(tp)[0], v) for v in value)
    if tp is bool:
        return "true" if value else "false"
    if tp is float:
        return repr(float(value))
    if tp is int:
        return str(int(value))
    s = str(value)
    if "\n" in s:
        raise ConfigError("string values must be single-line")
    return s


def _parse(tp, text: str, key: str):
    try:
        if typing.get_origin(tp) is list:
            inner = typing.get_args(tp)[0]
            return [] if text == "" else [_parse(inner, t, key) for t in text.split(",")]
        if tp is bool:
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {_type_name(tp)}") from None


def serialize(cfg: RunConfig) -> str:
    lines = [f"{k} = {_type_name(tp)}:{_fmt(tp, v)}" for k, tp, v in _leaves(cfg)]
    return "\n".join(sorted(lines)) + "\n"


def _set(cfg, key: str, raw: str, declared: str | None = None):
    table = {k: tp for k, tp, _ in _leaves(cfg)}
    if key not in table:
        raise ConfigError(f"unknown config key {key!r}")
    tp = table[key]
    if declared is not None and declared != _type_name(tp):
        raise ConfigError(f"{key}: declared type {declared} but expected {_type_name(tp)}")
    value = _parse(tp, raw, key)
    *path, leaf = key.split(".")
    target = cfg
    for p in path:
        target = getattr(target, p)
    setattr(target, leaf, value)


def parse(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rest = line.partition("=")
        typed, sep2, raw = rest.strip().partition(":")
        if not sep or not sep2:
            raise ConfigError(f"line {lineno}: expected 'key = type:value'")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        _set(cfg, key, raw.strip(), typed.strip())
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings (type taken from the field)."""
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        _set(cfg, key.strip(), raw.strip())
    return cfg


def load(path) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())


def save(cfg: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(serialize(cfg))


def clone(cfg: RunConfig) -> RunConfig:
    return parse(serialize(cfg))
