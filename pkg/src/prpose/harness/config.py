"""INI experiment configuration with embedded defaults."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path

from ..metrics import EvalProtocol
from ..sampler import Layer, NoiseKind, NoiseStrategy
from ..synthgen import DatasetConfig

DEFAULT_INI = """\
[dataset]
# directory holding train.jsonl / test.jsonl; empty = generate from the keys below
path =
count = 22000
train_weight = 10
test_weight = 1
seed = 0
skeleton = h36m16
base_sigma = 0.005
occlusion_prob = 0.3
occlusion_multiplier = 4.0
focal = 2.29
subject_distance = 5000.0

[lifter]
hidden_dim = 256
n_blocks = 2
epochs = 40
batch_size = 256
lr = 0.001
lr_decay_epoch = 30
lr_decay = 0.1

[avg]
hidden_dim = 128
n_blocks = 1
epochs = 40
batch_size = 256
lr = 0.001
lr_decay_epoch = 30
lr_decay = 0.1
paradigms = independent, shared

[sampling]
kinds = NoAdapted, JointsAdapted, SampleAdapted, SampleJointsAdapted
layers = pre, post
alphas = 0.005
samples = 1, 5, 10, 50, 200
# number of test samples evaluated; 0 = all
eval_count = 0

[protocol]
kinds = p1, p2
selections = pbest, jbest
pck_threshold_mm = 150.0

[run]
seeds = 0, 1, 2
out = runs/default
export_count = 16
export_samples = 10
"""


class ConfigError(ValueError):
    pass


def _list(s: str) -> list[str]:
    return [x.strip() for x in s.replace("\n", ",").split(",") if x.strip()]


@dataclass(frozen=True)
class NetConfig:
    hidden_dim: int
    n_blocks: int
    epochs: int
    batch_size: int
    lr: float
    lr_decay_epoch: int | None
    lr_decay: float

    def kwargs(self) -> dict:
        return dict(hidden_dim=self.hidden_dim, n_blocks=self.n_blocks, epochs=self.epochs,
                    batch_size=self.batch_size, lr=self.lr,
                    lr_decay_epoch=self.lr_decay_epoch, lr_decay=self.lr_decay)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    dataset_path: str
    lifter: NetConfig
    avg: NetConfig
    paradigms: tuple[str, ...]
    kinds: tuple[NoiseKind, ...]
    layers: tuple[Layer, ...]
    alphas: tuple[float, ...]
    samples: tuple[int, ...]
    eval_count: int
    protocols: tuple[EvalProtocol, ...]
    pck_threshold_mm: float
    seeds: tuple[int, ...]
    out: str
    export_count: int
    export_samples: int

    def validate(self) -> "ExperimentConfig":
        if not (self.kinds and self.layers and self.alphas):
            raise ConfigError("at least one strategy kind, layer and alpha is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.samples or min(self.samples) < 1:
            raise ConfigError("sample counts must be >= 1")
        if any(a <= 0 for a in self.alphas):
            raise ConfigError("alphas must be positive")
        if self.eval_count < 0 or self.export_count < 0 or self.export_samples < 1:
            raise ConfigError("eval_count/export_count must be >= 0, export_samples >= 1")
        for p in self.paradigms:
            if p not in ("independent", "shared"):
                raise ConfigError(f"unknown paradigm {p!r}")
        if self.dataset_path:
            d = Path(self.dataset_path)
            for name in ("train.jsonl", "test.jsonl"):
                if not (d / name).is_file():
                    raise ConfigError(f"dataset path {d} has no {name}")
        return self

    @property
    def s_max(self) -> int:
        return max(self.samples)

    def strategies(self) -> list[NoiseStrategy]:
        return [NoiseStrategy(k, a, l) for l in self.layers for a in self.alphas for k in self.kinds]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate() if kw else self


def _net(sec: configparser.SectionProxy) -> NetConfig:
    decay = sec.get("lr_decay_epoch", "").strip()
    return NetConfig(sec.getint("hidden_dim"), sec.getint("n_blocks"), sec.getint("epochs"),
                     sec.getint("batch_size"), sec.getfloat("lr"),
                     int(decay) if decay and decay.lower() != "none" else None,
                     sec.getfloat("lr_decay"))


def parse_config(text: str | None = None, path=None) -> ExperimentConfig:
    """Defaults overlaid with ``text`` (or the file at ``path``)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.read_string(DEFAULT_INI)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        text = p.read_text()
    if text:
        cp.read_string(text)
    known = configparser.ConfigParser()
    known.read_string(DEFAULT_INI)
    for sec in cp.sections():
        if not known.has_section(sec):
            raise ConfigError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            if not known.has_option(sec, key):
                raise ConfigError(f"unknown config key {sec}.{key}")
    try:
        d = cp["dataset"]
        ds = DatasetConfig(count=d.getint("count"),
                           split=(d.getfloat("train_weight"), d.getfloat("test_weight")),
                           seed=d.getint("seed"), skeleton=d.get("skeleton"),
                           base_sigma=d.getfloat("base_sigma"),
                           occlusion_prob=d.getfloat("occlusion_prob"),
                           occlusion_multiplier=d.getfloat("occlusion_multiplier"),
                           focal=d.getfloat("focal"), subject_distance=d.getfloat("subject_distance"))
        s, pr, r = cp["sampling"], cp["protocol"], cp["run"]
        thr = pr.getfloat("pck_threshold_mm")
        protos = tuple(EvalProtocol(k, sel, thr) for k in _list(pr["kinds"])
                       for sel in _list(pr["selections"]))
        cfg = ExperimentConfig(
            dataset=ds, dataset_path=d.get("path", "").strip(),
            lifter=_net(cp["lifter"]), avg=_net(cp["avg"]),
            paradigms=tuple(_list(cp["avg"]["paradigms"])),
            kinds=tuple(NoiseKind(k) for k in _list(s["kinds"])),
            layers=tuple(Layer(x.lower()) for x in _list(s["layers"])),
            alphas=tuple(float(a) for a in _list(s["alphas"])),
            samples=tuple(sorted({int(x) for x in _list(s["samples"])})),
            eval_count=s.getint("eval_count"), protocols=protos, pck_threshold_mm=thr,
            seeds=tuple(int(x) for x in _list(r["seeds"])), out=r.get("out"),
            export_count=r.getint("export_count"), export_samples=r.getint("export_samples"),
        )
    except (ValueError, KeyError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {e}") from e
    return cfg.validate()


def to_ini(cfg: ExperimentConfig) -> str:
    """Effective configuration as INI text; parses back to an equal config."""
    ds = cfg.dataset
    j = lambda xs: ", ".join(str(x) for x in xs)

    def net(n: NetConfig) -> dict:
        return {"hidden_dim": n.hidden_dim, "n_blocks": n.n_blocks, "epochs": n.epochs,
                "batch_size": n.batch_size, "lr": repr(n.lr),
                "lr_decay_epoch": "none" if n.lr_decay_epoch is None else n.lr_decay_epoch,
                "lr_decay": repr(n.lr_decay)}

    cp = configparser.ConfigParser()
    cp["dataset"] = {"path": cfg.dataset_path, "count": ds.count, "train_weight": repr(ds.split[0]),
                     "test_weight": repr(ds.split[1]), "seed": ds.seed, "skeleton": ds.skeleton,
                     "base_sigma": repr(ds.base_sigma), "occlusion_prob": repr(ds.occlusion_prob),
                     "occlusion_multiplier": repr(ds.occlusion_multiplier),
                     "focal": repr(ds.focal), "subject_distance": repr(ds.subject_distance)}
    cp["lifter"] = net(cfg.lifter)
    cp["avg"] = {**net(cfg.avg), "paradigms": j(cfg.paradigms)}
    cp["sampling"] = {"kinds": j(k.value for k in cfg.kinds), "layers": j(l.value for l in cfg.layers),
                      "alphas": j(repr(a) for a in cfg.alphas), "samples": j(cfg.samples),
                      "eval_count": cfg.eval_count}
    cp["protocol"] = {"kinds": j(dict.fromkeys(p.kind.value for p in cfg.protocols)),
                      "selections": j(dict.fromkeys(p.selection.value for p in cfg.protocols)),
                      "pck_threshold_mm": repr(cfg.pck_threshold_mm)}
    cp["run"] = {"seeds": j(cfg.seeds), "out": cfg.out, "export_count": cfg.export_count,
                 "export_samples": cfg.export_samples}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def show_config(cfg: ExperimentConfig | None = None) -> str:
    return to_ini(cfg if cfg is not None else parse_config())


def config_hash(obj) -> str:
    """Stable short hash of a JSON-able object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
