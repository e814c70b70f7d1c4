"""Pipeline configuration: TOML file plus command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid
from .geometry import RimTemplate
from .modal import Material
from .recon.wheel import ReconConfig


@dataclass(frozen=True)
class TopoSettings:
    nx: int = 40  # angular elements per segment
    ny: int = 30  # radial elements
    lambdas: tuple = (0.0, 0.01, 0.05)
    volume_fractions: tuple = (0.35, 0.5)
    normal_shear_ratios: tuple = (0.5, 2.0)
    n_segs: tuple = (4, 5, 6)
    filter_radius: float = 1.5
    move_limit: float = 0.2
    change_tol: float = 0.01
    max_iters: int = 200
    reference_fraction: float = 0.5  # share of designs taken straight from references


@dataclass(frozen=True)
class ModalSettings:
    elem_size: float = 10.0  # mm; 6 mm reproduces the original mesh density but is slow
    n_modes: int = 20


@dataclass(frozen=True)
class SamplingSettings:
    n_samples: int = 10
    k: int = 10
    histogram_bins: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    output_root: Path = Path("wheelforge_out")
    designs: int = 20
    seed: int = 0
    workers: int = 1
    raster_size: int = 512
    topo: TopoSettings = field(default_factory=TopoSettings)
    template: RimTemplate = field(default_factory=RimTemplate)
    recon: ReconConfig = field(default_factory=ReconConfig)
    material: Material = field(default_factory=Material)
    modal: ModalSettings = field(default_factory=ModalSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)

    def __post_init__(self):
        if self.designs < 2:
            raise ConfigInvalid("designs must be at least 2")
        if self.workers < 1:
            raise ConfigInvalid("workers must be at least 1")
        if self.raster_size < 128 or self.raster_size % 16:
            raise ConfigInvalid("raster_size must be a multiple of 16 and at least 128")
        t = self.topo
        if not 0.0 <= t.reference_fraction <= 1.0:
            raise ConfigInvalid("topo.reference_fraction must lie in [0, 1]")
        if not all((t.lambdas, t.volume_fractions, t.normal_shear_ratios, t.n_segs)):
            raise ConfigInvalid("every topo parameter list must be nonempty")
        if min(t.nx, t.ny) < 2:
            raise ConfigInvalid("topo grid needs at least 2 elements per axis")
        if self.modal.n_modes < 12 or self.modal.elem_size <= 0:
            raise ConfigInvalid("modal.n_modes must be >= 12 and elem_size positive")
        if self.sampling.n_samples < 1 or self.sampling.k < 1 or self.sampling.histogram_bins < 1:
            raise ConfigInvalid("sampling settings must be positive")


_SECTIONS = {
    "topo": TopoSettings,
    "template": RimTemplate,
    "recon": ReconConfig,
    "material": Material,
    "modal": ModalSettings,
    "sampling": SamplingSettings,
}


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigInvalid(f"unknown keys in [{where}]: {', '.join(sorted(unknown))}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"[{where}]: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    data = dict(data)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigInvalid(f"[{name}] must be a table")
        kwargs[name] = _build(cls, section, name)
    top = {f.name for f in dataclasses.fields(PipelineConfig)} - set(_SECTIONS)
    unknown = set(data) - top
    if unknown:
        raise ConfigInvalid(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    if "output_root" in data:
        root = Path(data.pop("output_root"))
        if base_dir is not None and not root.is_absolute():
            root = base_dir / root
        kwargs["output_root"] = root
    try:
        return PipelineConfig(**data, **kwargs)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a TOML config (relative ``output_root`` resolves against the file's
    directory) and apply non-None keyword overrides, which win over the file."""
    data: dict = {}
    base = None
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigInvalid(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        base = path.parent
    for key, value in overrides.items():
        if value is not None:
            data[key] = Path(value).resolve() if key == "output_root" else value
    return config_from_dict(data, base)
