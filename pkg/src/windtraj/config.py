"""
Run configuration: YAML file, command-line overrides and a stable hash.

A configuration file has the sections ``paths``, ``data``, ``model``,
``copula``, ``verify`` and ``run``; every key can be overridden on the
command line with ``--set section.key=value``. Flags win over the file and
the file wins over the defaults below.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import yaml

from .errors import ConfigError
from .gwishart import Graph
from .model import DEFAULT_POWERS, ModelConfig, ModelVariant
from .verify import CrpsEstimator, VerifySettings

logger = logging.getLogger(__name__)

POSTPROC_CHOICES = ("none", "copula")
PIT_SOURCES = ("out_of_sample", "in_sample")


@dataclass(frozen=True)
class PathsConfig:
    nwp: Optional[str] = None
    production: Optional[str] = None
    cases: Optional[str] = None
    output_dir: str = "results"
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class DataConfig:
    T: int = 72
    window_days: int = 100
    lat_min: float = 51.0
    eval_start: Optional[str] = None
    eval_end: Optional[str] = None


@dataclass(frozen=True)
class ModelSection:
    variants: List[str] = field(default_factory=lambda: [v.value for v in ModelVariant])
    postproc: List[str] = field(default_factory=lambda: list(POSTPROC_CHOICES))
    powers: List[int] = field(default_factory=lambda: list(DEFAULT_POWERS))
    n_gibbs: int = 3000
    n_burn: int = 1000
    m_pred: int = 999
    band_K: int = 1
    band_K0: int = 1
    fix_n0: bool = False
    log_every: int = 500


@dataclass(frozen=True)
class CopulaSection:
    band: int = 1
    window_days: int = 100
    min_cases: int = 30
    pit_source: str = "out_of_sample"


@dataclass(frozen=True)
class VerifySection:
    level: float = 0.8
    pit_bins: int = 20
    pit_leads: int = 24
    rank_leads: int = 24
    crps_estimator: str = "ensemble"


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    n_jobs: int = 1
    window_sweep: List[int] = field(default_factory=list)


SECTIONS = {
    "paths": PathsConfig,
    "data": DataConfig,
    "model": ModelSection,
    "copula": CopulaSection,
    "verify": VerifySection,
    "run": RunSection,
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one invocation."""

    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    copula: CopulaSection = field(default_factory=CopulaSection)
    verify: VerifySection = field(default_factory=VerifySection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("Configuration must be a mapping of sections")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown configuration section(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = raw.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{name}' must be a mapping")
            known = {f.name for f in fields(section_cls)}
            bad = set(values) - known
            if bad:
                raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(sorted(bad))}")
            kwargs[name] = section_cls(**values)
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as handle:
                raw = yaml.safe_load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"Configuration file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"Cannot parse {path}: {exc}") from exc
        logger.debug("Loaded configuration from %s", path)
        return cls.from_dict(raw)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, assignments: Iterable[str]) -> "RunConfig":
        """Apply ``section.key=value`` assignments (values parsed as YAML scalars)."""
        raw = self.to_dict()
        for assignment in assignments:
            if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
                raise ConfigError(f"Override must look like section.key=value, got '{assignment}'")
            dotted, value = assignment.split("=", 1)
            section, key = dotted.strip().split(".", 1)
            if section not in raw:
                raise ConfigError(f"Unknown configuration section: {section}")
            if key not in raw[section]:
                raise ConfigError(f"Unknown key in section '{section}': {key}")
            try:
                raw[section][key] = yaml.safe_load(value)
            except yaml.YAMLError as exc:
                raise ConfigError(f"Cannot parse override value '{value}': {exc}") from exc
        return RunConfig.from_dict(raw)

    def replace_section(self, section: str, **values: Any) -> "RunConfig":
        """Copy with some keys of one section changed (used by dedicated flags)."""
        updated = replace(getattr(self, section), **values)
        config = replace(self, **{section: updated})
        config.validate()
        return config

    def validate(self) -> None:
        d, m, c, v, r = self.data, self.model, self.copula, self.verify, self.run
        if d.T < 1:
            raise ConfigError(f"data.T must be positive, got {d.T}")
        if d.window_days < 1:
            raise ConfigError(f"data.window_days must be positive, got {d.window_days}")
        if not m.variants:
            raise ConfigError("model.variants must name at least one variant")
        for name in m.variants:
            try:
                ModelVariant(name)
            except ValueError:
                choices = ", ".join(x.value for x in ModelVariant)
                raise ConfigError(f"Unknown model variant '{name}' (choose from {choices})")
        for name in m.postproc:
            if name not in POSTPROC_CHOICES:
                raise ConfigError(f"Unknown postproc '{name}' (choose from none, copula)")
        if not m.postproc:
            raise ConfigError("model.postproc must name at least one method")
        if not m.n_gibbs > m.n_burn >= 0:
            raise ConfigError(f"Need n_gibbs > n_burn >= 0, got {m.n_gibbs} and {m.n_burn}")
        if m.m_pred < 2:
            raise ConfigError(f"model.m_pred must be at least 2, got {m.m_pred}")
        if m.m_pred > m.n_gibbs - m.n_burn:
            raise ConfigError(
                f"model.m_pred={m.m_pred} exceeds the {m.n_gibbs - m.n_burn} retained draws"
            )
        if m.band_K < 0 or m.band_K0 < 0 or c.band < 0:
            raise ConfigError("Graph bands must be non-negative")
        if c.pit_source not in PIT_SOURCES:
            raise ConfigError(f"copula.pit_source must be one of {', '.join(PIT_SOURCES)}")
        if c.min_cases < 1 or c.window_days < c.min_cases:
            raise ConfigError("Need 1 <= copula.min_cases <= copula.window_days")
        if not 0 < v.level < 1:
            raise ConfigError(f"verify.level must lie in (0, 1), got {v.level}")
        if v.pit_bins < 1 or v.pit_leads < 1 or v.rank_leads < 1:
            raise ConfigError("verify.pit_bins, pit_leads and rank_leads must be positive")
        if v.crps_estimator not in {e.value for e in CrpsEstimator}:
            raise ConfigError("verify.crps_estimator must be 'ensemble' or 'fair'")
        if r.seed < 0:
            raise ConfigError(f"run.seed must be non-negative, got {r.seed}")
        if r.n_jobs == 0:
            raise ConfigError("run.n_jobs must be non-zero")
        if any(w < 1 for w in r.window_sweep):
            raise ConfigError("run.window_sweep lengths must be positive")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def model_config(self, variant: Union[str, ModelVariant]) -> ModelConfig:
        m = self.model
        try:
            return ModelConfig.for_variant(
                variant,
                self.data.T,
                band=m.band_K,
                band_K0=m.band_K0,
                n_gibbs=m.n_gibbs,
                n_burn=m.n_burn,
                m_pred=m.m_pred,
                seed=self.run.seed,
                powers=tuple(m.powers),
                fix_n0=m.fix_n0,
                log_every=m.log_every,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def copula_graph(self) -> Graph:
        return Graph(self.data.T, self.copula.band)

    def verify_settings(self) -> VerifySettings:
        v = self.verify
        return VerifySettings(
            level=v.level,
            pit_bins=v.pit_bins,
            pit_leads=v.pit_leads,
            rank_leads=v.rank_leads,
            crps_estimator=CrpsEstimator(v.crps_estimator),
        )
