"""Experiment specification: JSON schema, validation and rendering.

Relative file paths inside a config are resolved against the config
file's directory and stored absolute, so a rendered spec parses back to
an equal object from anywhere.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Discriminator,
    Field,
    Tag,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from fedex.assignment import Objective


class ConfigError(ValueError):
    """Schema violation; ``errors`` holds one ``(field_path, message)`` per problem."""

    def __init__(self, errors: list[tuple[str, str]], source: str = "config"):
        self.errors = errors
        self.source = source
        lines = "; ".join(f"{p}: {m}" for p, m in errors)
        super().__init__(f"{source}: {lines}")

    def to_dict(self) -> dict:
        return {"source": self.source, "errors": [{"field": p, "message": m} for p, m in self.errors]}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _resolve(path: str, info: ValidationInfo) -> str:
    base = (info.context or {}).get("base_dir")
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    if not p.is_file():
        raise ValueError(f"file not found: {p}")
    return str(p.resolve())


class PresetTopology(_Strict):
    """Clients scattered in equal blocks; the generator seed is the run seed unless pinned."""

    preset: Literal["grid"] = "grid"
    num_blocks: int = Field(10, ge=1)
    clients_per_block: int = Field(4, ge=1)
    block_width: float = Field(4.0, gt=0)
    block_height: float = Field(10.0, gt=0)
    speed: float = Field(4.0, gt=0)
    seed: int | None = None

    @property
    def num_clients(self) -> int:
        return self.num_blocks * self.clients_per_block


class FileTopology(_Strict):
    file: str

    @field_validator("file")
    @classmethod
    def _exists(cls, v: str, info: ValidationInfo) -> str:
        return _resolve(v, info)


class SyntheticData(_Strict):
    source: Literal["synthetic"] = "synthetic"
    generator: Literal["blobs", "quadratic"] = "blobs"
    features: int = Field(10, ge=1)
    classes: int = Field(10, ge=1)
    samples: int = Field(3400, ge=1)
    noise: float = Field(0.25, ge=0)


class IdxData(_Strict):
    source: Literal["idx"]
    images: str
    labels: str

    @field_validator("images", "labels")
    @classmethod
    def _exists(cls, v: str, info: ValidationInfo) -> str:
        return _resolve(v, info)


def _tagged(key: str, default: str):
    # Callable discriminator so the tag key may be omitted.
    def tag_of(v):
        if isinstance(v, dict):
            return v.get(key, default)
        return getattr(v, key, default)

    return Discriminator(tag_of)


DataSource = Annotated[
    Union[Annotated[SyntheticData, Tag("synthetic")], Annotated[IdxData, Tag("idx")]],
    _tagged("source", "synthetic"),
]


class TaskSpec(_Strict):
    kind: Literal["logistic", "mlp", "quadratic"] = "logistic"
    hidden: int = Field(16, ge=1)
    l2: float = Field(0.0, ge=0)
    data: DataSource = SyntheticData()
    test_samples: int = Field(1000, ge=0)


class IidSplit(_Strict):
    kind: Literal["iid"] = "iid"
    samples_per_client: int = Field(60, ge=1)


class DirichletSplit(_Strict):
    kind: Literal["dirichlet"]
    alpha: float = Field(gt=0)
    samples_per_client: int = Field(60, ge=1)


def _topology_kind(v) -> str:
    if isinstance(v, dict):
        return "file" if "file" in v else "preset"
    return "file" if isinstance(v, FileTopology) else "preset"


TopologySource = Annotated[
    Union[Annotated[FileTopology, Tag("file")], Annotated[PresetTopology, Tag("preset")]],
    Discriminator(_topology_kind),
]


SplitSpec = Annotated[
    Union[Annotated[IidSplit, Tag("iid")], Annotated[DirichletSplit, Tag("dirichlet")]],
    _tagged("kind", "iid"),
]


class ExperimentSpec(_Strict):
    """Everything needed to reproduce a sweep.

    Defaults (used when a key is omitted): the 40-client grid preset with
    K = 4 transporters at speed 4, all three routing objectives, both modes,
    seeds 0-4, multinomial logistic regression on 10-class blobs, IID
    shards of 60 samples, eta = 0.3, T = 800 slots, full-shard batches, 200
    CARD sweeps, metrics every 10 slots and a target of 0.85 of the best
    centralized accuracy.
    """

    topology: TopologySource = PresetTopology()
    k: int = Field(4, ge=1)
    objectives: list[Objective] = Field(default_factory=lambda: list(Objective), min_length=1)
    modes: list[Literal["sync", "async"]] = Field(default_factory=lambda: ["sync", "async"], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    task: TaskSpec = TaskSpec()
    split: SplitSpec = IidSplit()
    eta: float = Field(0.3, ge=0)
    horizon: int = Field(800, ge=1)
    batch_size: int = Field(60, ge=1)
    out_dir: str = "runs"
    card_sweeps: int = Field(200, ge=1)
    eval_every: int = Field(10, ge=1)
    target_fraction: float = Field(0.85, gt=0, le=1)

    @field_validator("objectives", "modes", "seeds")
    @classmethod
    def _unique(cls, v: list) -> list:
        if len(set(v)) != len(v):
            raise ValueError("entries must be unique")
        return v

    @model_validator(mode="after")
    def _enough_data(self) -> ExperimentSpec:
        if isinstance(self.topology, PresetTopology) and isinstance(self.task.data, SyntheticData):
            need = self.topology.num_clients * self.split.samples_per_client + self.task.test_samples
            if need > self.task.data.samples:
                raise ValueError(
                    f"task.data.samples={self.task.data.samples} is below the {need} needed for "
                    f"{self.topology.num_clients} clients x {self.split.samples_per_client} plus the test set"
                )
        return self


_UNIONS = {"topology", "data", "split"}


def _field_path(loc: tuple) -> str:
    # Pydantic inserts the union member tag after a union field; drop it.
    parts = [str(p) for i, p in enumerate(loc) if not (i > 0 and loc[i - 1] in _UNIONS)]
    return ".".join(parts) or "<root>"


def spec_from_dict(doc: dict, base_dir: str | Path | None = None, source: str = "config") -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(doc, context={"base_dir": base_dir})
    except ValidationError as exc:
        errs = []
        for e in exc.errors():
            msg = e["msg"]
            if e["type"] == "extra_forbidden":
                msg = "unknown key"
            errs.append((_field_path(e["loc"]), msg))
        raise ConfigError(errs, source) from None


def parse_config(path: str | Path) -> ExperimentSpec:
    """Load and validate a JSON experiment file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read: {exc.strerror or exc}")], str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")], str(path)) from None
    if not isinstance(doc, dict):
        raise ConfigError([("<root>", "top level must be a JSON object")], str(path))
    return spec_from_dict(doc, path.parent, str(path))


def render_config(spec: ExperimentSpec) -> str:
    """Fully resolved JSON (defaults included) that parses back to ``spec``."""
    return json.dumps(spec.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
