"""Versioned JSON run configuration.

A :class:`RunConfig` fully determines an experiment.  ``config_hash`` is a
digest of everything that can influence results; the output directory and
the worker count are excluded because they must not change any number.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

from .objectives import ALGORITHMS, MetaConfig
from .tasks import BlobSpec, SineSpec, spec_from_dict, spec_to_dict

SCHEMA_VERSION = 1
EXPERIMENTS = ("sine-regression", "blob-classification", "gradcheck", "theorem-sweep",
               "attack-sweep", "ablation-t")
OPTIMIZERS = ("adam", "sgd")
OUTPUT_DIR_ENV = "RKHSMETA_OUTPUT_DIR"

# Meta-RKHS-II has a published outer learning rate; everything else gets 1e-3.
DEFAULT_META_LR = {"meta-rkhs-2": 0.01}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _inf_to_json(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _json_to_float(x):
    return float(x) if isinstance(x, str) else x


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "sine-regression"
    algorithm: str = "meta-rkhs-2"
    meta: MetaConfig = field(default_factory=MetaConfig)
    tasks: SineSpec | BlobSpec = field(default_factory=SineSpec)
    hidden: tuple[int, ...] = (64, 64)
    init_bias_std: float = 0.0
    seed: int = 0
    output_dir: str = "runs"
    meta_iterations: int = 2000
    optimizer: str = "adam"
    eval_tasks: int = 100
    test_steps: int = 10
    test_lr: float | None = None
    t_grid: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0, math.inf)
    epsilons: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 4.0)
    attack_iterations: int = 10
    attack_step_scale: float = 2.5
    workers: int = 1
    log_every: int = 100

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError("optimizer", f"must be one of {OPTIMIZERS}")
        if not isinstance(self.meta, MetaConfig):
            raise ConfigError("meta", "must be a MetaConfig")
        if not isinstance(self.tasks, (SineSpec, BlobSpec)):
            raise ConfigError("tasks", "must be a sine or blobs task distribution")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden", "layer widths must be >= 1")
        for name in ("meta_iterations", "test_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("eval_tasks", "attack_iterations", "workers", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.test_lr is not None and not self.test_lr > 0:
            raise ConfigError("test_lr", "must be > 0")
        if self.init_bias_std < 0:
            raise ConfigError("init_bias_std", "must be >= 0")
        if any(not t >= 0 for t in self.t_grid):
            raise ConfigError("t_grid", "times must be >= 0 or inf")
        if any(not (e >= 0 and math.isfinite(e)) for e in self.epsilons):
            raise ConfigError("epsilons", "must be finite and >= 0")
        if not self.attack_step_scale > 0:
            raise ConfigError("attack_step_scale", "must be > 0")

    @property
    def effective_test_lr(self) -> float:
        return self.meta.inner_lr if self.test_lr is None else self.test_lr

    @property
    def loss_kind(self) -> str:
        return self.meta.loss_kind

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "algorithm": self.algorithm,
            "meta": self.meta.to_dict(),
            "tasks": spec_to_dict(self.tasks),
            "hidden": list(self.hidden),
            "init_bias_std": self.init_bias_std,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "meta_iterations": self.meta_iterations,
            "optimizer": self.optimizer,
            "eval_tasks": self.eval_tasks,
            "test_steps": self.test_steps,
            "test_lr": self.test_lr,
            "t_grid": [_inf_to_json(t) for t in self.t_grid],
            "epsilons": list(self.epsilons),
            "attack_iterations": self.attack_iterations,
            "attack_step_scale": self.attack_step_scale,
            "workers": self.workers,
            "log_every": self.log_every,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        algorithm = d.get("algorithm", cls.algorithm)
        try:
            tasks = spec_from_dict(d["tasks"]) if "tasks" in d else SineSpec()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError("tasks", str(exc)) from None
        d["tasks"] = tasks
        d["meta"] = _meta_from_dict(d.get("meta", {}), algorithm, tasks)
        for key in ("hidden", "epsilons"):
            if key in d:
                d[key] = tuple(d[key])
        if "t_grid" in d:
            d["t_grid"] = tuple(float(_json_to_float(t)) for t in d["t_grid"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def with_overrides(self, **kw) -> "RunConfig":
        """Replace top-level fields, ignoring ``None`` values."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if "algorithm" in kw and "meta" not in kw and kw["algorithm"] != self.algorithm:
            meta = self.meta
            old_default = DEFAULT_META_LR.get(self.algorithm, 1e-3)
            if meta.meta_lr == old_default:
                meta = replace(meta, meta_lr=DEFAULT_META_LR.get(kw["algorithm"], 1e-3))
            kw["meta"] = meta
        return replace(self, **kw)

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir


def _meta_from_dict(d: dict, algorithm: str, tasks) -> MetaConfig:
    if not isinstance(d, dict):
        raise ConfigError("meta", "must be a JSON object")
    d = dict(d)
    known = {f.name for f in dataclasses.fields(MetaConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"meta.{unknown[0]}", "unknown field")
    d.setdefault("meta_lr", DEFAULT_META_LR.get(algorithm, 1e-3))
    d.setdefault("loss_kind", "cross_entropy" if isinstance(tasks, BlobSpec) else "squared")
    try:
        return MetaConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        head = msg.split()[0] if msg else ""
        path = f"meta.{head}" if head in known else "meta"
        raise ConfigError(path, msg) from None


def default_run(experiment: str = "sine-regression", algorithm: str = "meta-rkhs-2", **kw) -> RunConfig:
    """A config with the per-algorithm and per-task defaults filled in."""
    tasks = BlobSpec() if experiment in ("blob-classification", "attack-sweep") else SineSpec()
    base = {"experiment": experiment, "algorithm": algorithm, "tasks": spec_to_dict(tasks)}
    run = RunConfig.from_dict(base)
    return replace(run, **kw) if kw else run
