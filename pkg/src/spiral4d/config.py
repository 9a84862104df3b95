"""Run configuration: a flat key = value text file plus command-line
overrides (flags win). The resolved configuration is echoed by every command
and its hash is stamped into every artifact the command writes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields


@dataclass
class RunConfig:
    # paths
    template: str = ""
    dataset: str = ""
    cache: str = ""
    checkpoint: str = ""
    baseline_checkpoint: str = ""
    neutral: str = ""
    output: str = ""
    report: str = ""
    # hierarchy / spirals
    factors: str = "5,5,5,5"
    spiral_k: int = 1
    spiral_length: int = 0  # 0 = per-level default (longest k-disk)
    reference_vertex: str = "max_z"
    # training
    epochs: int = 100
    learning_rate: float = 0.001
    lr_decay: float = 0.99
    weight_decay: float = 5e-5
    precision: str = "single"
    seed: int = 0
    # data generation
    subjects: int = 10
    test_subjects: int = 2
    frames: int = 60
    noise_std: float = 0.01
    # generation / labels
    expression: str = "happy"
    t_onset: int = -1
    t_apex_start: int = -1
    t_apex_end: int = -1
    t_offset_end: int = -1
    scale: float = 1.0
    # interpolation
    expression_a: str = "happy"
    expression_b: str = "surprise"
    steps: int = 10
    # classifier
    classifier_epochs: int = 13
    classifier_frames: int = 20

    def factor_list(self):
        out = [int(x) for x in str(self.factors).split(",") if str(x).strip()]
        if not out:
            raise ValueError("factors must be a nonempty comma list")
        return out

    def reference_spec(self):
        r = str(self.reference_vertex)
        return int(r) if r.lstrip("-").isdigit() else r

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def config_hash(self) -> str:
        text = "\n".join(f"{k} = {v}" for k, v in sorted(self.items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def echo(self, print_fn=print):
        print_fn(f"config hash: {self.config_hash()}")
        for k, v in sorted(self.items()):
            print_fn(f"config: {k} = {v}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, raw):
    kind = _FIELD_TYPES[name]
    raw = str(raw).strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; # starts a comment; unknown keys error."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, val)
    return out


def resolve_config(file_path=None, overrides=None) -> RunConfig:
    """Defaults, then config file values, then explicit flag overrides."""
    cfg = RunConfig()
    if file_path:
        for k, v in parse_config_file(file_path).items():
            setattr(cfg, k, v)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {k!r}")
        setattr(cfg, k, _coerce(k, v))
    return cfg
