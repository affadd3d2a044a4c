"""Synthetic task distributions: sine-wave regression and Gaussian-blob episodes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .rng import as_rng


@dataclass(frozen=True)
class Task:
    """One episode: a support set for adaptation and a query set for scoring."""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("support_x", "support_y", "query_x", "query_y"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(np.asarray(arr, dtype=np.float64))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and query stacked into one batch."""
        return (
            np.concatenate([self.support_x, self.query_x]),
            np.concatenate([self.support_y, self.query_y]),
        )

    def swapped(self) -> "Task":
        return Task(self.query_x, self.query_y, self.support_x, self.support_y, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "support_x": self.support_x.tolist(),
            "support_y": self.support_y.tolist(),
            "query_x": self.query_x.tolist(),
            "query_y": self.query_y.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        def arr(key):
            return np.asarray(d[key], dtype=np.float64)

        sy, qy = arr("support_y"), arr("query_y")
        if d.get("meta", {}).get("kind") == "blobs":
            sy, qy = sy.astype(np.int64), qy.astype(np.int64)
        return cls(arr("support_x"), sy, arr("query_x"), qy, dict(d.get("meta", {})))


@dataclass(frozen=True)
class SineSpec:
    amplitude: tuple[float, float] = (0.1, 5.0)
    phase: tuple[float, float] = (0.0, math.pi)
    x_range: tuple[float, float] = (-5.0, 5.0)
    noise: float = 0.0
    n_support: int = 10
    n_query: int = 10

    kind = "sine"

    def __post_init__(self):
        for name in ("amplitude", "phase", "x_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.n_support < 1 or self.n_query < 0:
            raise ValueError("need n_support >= 1 and n_query >= 0")


@dataclass(frozen=True)
class BlobSpec:
    way: int = 5
    shot: int = 1
    query_shot: int = 5
    input_dim: int = 8
    spread: float = 0.1
    center_scale: float = 10.0

    kind = "blobs"

    def __post_init__(self):
        if self.way < 2:
            raise ValueError("way must be >= 2")
        if self.shot < 1 or self.query_shot < 0:
            raise ValueError("need shot >= 1 and query_shot >= 0")
        if self.spread < 0 or self.center_scale < 0:
            raise ValueError("spread and center_scale must be non-negative")


def spec_to_dict(spec) -> dict:
    return {"kind": spec.kind, **asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "sine":
        return SineSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    if kind == "blobs":
        return BlobSpec(**d)
    raise ValueError(f"unknown task distribution kind {kind!r}")


def sample_sine_task(spec: SineSpec, seed) -> Task:
    """``y = A sin(x + phase)`` with uniform amplitude, phase and inputs."""
    rng = as_rng(seed)
    amp = rng.uniform(*spec.amplitude)
    phase = rng.uniform(*spec.phase)
    n = spec.n_support + spec.n_query
    x = rng.uniform(*spec.x_range, size=(n, 1))
    y = amp * np.sin(x + phase)
    if spec.noise > 0:
        y = y + rng.normal(0.0, spec.noise, size=y.shape)
    s = spec.n_support
    meta = {"kind": "sine", "amplitude": float(amp), "phase": float(phase)}
    return Task(x[:s], y[:s], x[s:], y[s:], meta)


def sample_blob_task(spec: BlobSpec, seed) -> Task:
    """N-way k-shot episode; class ``c`` is a Gaussian blob around its own center."""
    rng = as_rng(seed)
    centers = rng.normal(0.0, spec.center_scale, size=(spec.way, spec.input_dim))

    def draw(per_class):
        labels = np.repeat(np.arange(spec.way), per_class)
        x = centers[labels] + rng.normal(0.0, 1.0, size=(labels.size, spec.input_dim)) * spec.spread
        return x, labels

    sx, sy = draw(spec.shot)
    qx, qy = draw(spec.query_shot)
    meta = {"kind": "blobs", "centers": centers.tolist()}
    return Task(sx, sy, qx, qy, meta)


def sample_task(spec, seed) -> Task:
    if isinstance(spec, SineSpec):
        return sample_sine_task(spec, seed)
    if isinstance(spec, BlobSpec):
        return sample_blob_task(spec, seed)
    raise TypeError(f"unsupported task distribution {type(spec).__name__}")
