"""AmbiVer configuration management."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar, Union

import yaml

from .exceptions import IoFailureError, MissingFileError

_PACKAGE_DIR = Path(__file__).resolve().parent

BACKENDS = ("mock", "replay", "remote")


class AmbiVerConfig:
    """Process-wide defaults for AmbiVer."""

    # Parser lexicons shipped with the package
    lexicon_dir: Path = _PACKAGE_DIR / "lexicons"

    # Versioned reasoning prompt
    prompt_template: Path = _PACKAGE_DIR / "prompts" / "ambiguity_v1.txt"

    # Environment variables read by the remote backend
    endpoint_env: str = "AMBIVER_VLM_ENDPOINT"
    api_key_env: str = "AMBIVER_VLM_API_KEY"

    @classmethod
    def set_lexicon_dir(cls, path: Union[str, Path]) -> None:
        """Point the parser at a different lexicon directory."""
        directory = Path(path)
        if not directory.is_dir():
            raise MissingFileError(f"Lexicon directory not found: {directory}")
        cls.lexicon_dir = directory

    @classmethod
    def get_lexicon_dir(cls, override: Optional[Union[str, Path]] = None) -> Path:
        """Resolve the lexicon directory, preferring ``override`` when given."""
        return Path(override) if override else cls.lexicon_dir

    @classmethod
    def get_prompt_template(cls, override: Optional[Union[str, Path]] = None) -> Path:
        """Resolve the prompt template file, preferring ``override`` when given."""
        return Path(override) if override else cls.prompt_template

    @classmethod
    def remote_endpoint(cls) -> Optional[str]:
        """Remote backend endpoint from the environment, if any."""
        return os.environ.get(cls.endpoint_env) or None

    @classmethod
    def remote_api_key(cls) -> Optional[str]:
        """Remote backend credential from the environment, if any."""
        return os.environ.get(cls.api_key_env) or None


_C = TypeVar("_C", bound="_Section")


class _Section:
    """Mapping conversion shared by the config dataclasses."""

    @classmethod
    def from_value(cls: Type[_C], value: Any) -> _C:
        """Create a config section from an instance, a mapping or ``None``."""

        if value is None:
            return cls()

        if isinstance(value, cls):
            return value

        if isinstance(value, Mapping):
            known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
            unknown = sorted(set(value) - set(known))
            if unknown:
                raise ValueError(
                    f"Unknown {cls.__name__} field(s): {', '.join(unknown)}"
                )
            kwargs: Dict[str, Any] = {}
            for key, raw in value.items():
                kwargs[key] = cls._coerce_field(key, raw)
            return cls(**kwargs)

        raise TypeError(
            f"{cls.__name__} must be built from a mapping or a {cls.__name__} instance."
        )

    @classmethod
    def _coerce_field(cls, name: str, raw: Any) -> Any:
        if isinstance(raw, list):
            return tuple(raw)
        return raw

    def to_dict(self) -> Dict[str, Any]:
        """Plain nested mapping suitable for YAML or JSON."""

        result: Dict[str, Any] = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, _Section):
                result[f.name] = value.to_dict()
            elif isinstance(value, tuple):
                result[f.name] = list(value)
            else:
                result[f.name] = value
        return result


@dataclass(frozen=True)
class KeyframeConfig(_Section):
    """Adaptive keyframe selection parameters."""

    n_target: int = 100
    tau_t_init: float = 0.1
    tau_r_init: float = 15.0
    alpha_inc: float = 1.2
    alpha_dec: float = 0.85
    tolerance: int = 5
    max_iterations: int = 50

    def __post_init__(self) -> None:
        if self.n_target <= 0:
            raise ValueError("n_target must be positive")
        if self.tau_t_init <= 0 or self.tau_r_init <= 0:
            raise ValueError("initial thresholds must be positive")
        if self.alpha_inc <= 1:
            raise ValueError("alpha_inc must be greater than 1")
        if not 0 < self.alpha_dec < 1:
            raise ValueError("alpha_dec must lie in (0, 1)")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class FusionConfig(_Section):
    """Connectivity-graph thresholds and representative scoring."""

    eps_d: float = 0.3
    theta_min: float = 0.0
    theta_max: float = 60.0
    sigma_s: float = 0.2
    top_k: int = 6
    gamma: float = 0.5
    delta: float = 4.0

    def __post_init__(self) -> None:
        if self.eps_d <= 0:
            raise ValueError("eps_d must be positive")
        if not 0 <= self.theta_min <= self.theta_max <= 180:
            raise ValueError(
                "angle window must satisfy 0 <= theta_min <= theta_max <= 180"
            )
        if not 0 < self.sigma_s <= 1:
            raise ValueError("sigma_s must lie in (0, 1]")
        if self.top_k <= 0:
            raise ValueError("top_k must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass(frozen=True)
class BevConfig(_Section):
    """Bird's-eye-view rasterization parameters."""

    width: int = 640
    height: int = 640
    stride: int = 8
    fill_ratio: float = 0.9
    ceiling_percentile: float = 98.0
    background: Tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("BEV size must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if not 0 < self.fill_ratio <= 1:
            raise ValueError("fill_ratio must lie in (0, 1]")
        if not 0 < self.ceiling_percentile <= 100:
            raise ValueError("ceiling_percentile must lie in (0, 100]")
        if len(self.background) != 3:
            raise ValueError("background must be an RGB triple")

    @property
    def size(self) -> Tuple[int, int]:
        return (self.width, self.height)


@dataclass(frozen=True)
class AblationSwitches(_Section):
    """Independent switches that disable individual pipeline stages."""

    no_parse: bool = False
    uniform_keyframes: bool = False
    no_fusion: bool = False
    confidence_only_rep: bool = False
    no_bev: bool = False
    no_local: bool = False
    no_visual: bool = False


@dataclass(frozen=True)
class RemoteBackendConfig(_Section):
    """Transport settings for the remote reasoning backend.

    The endpoint falls back to ``AMBIVER_VLM_ENDPOINT`` and the credential is
    only ever read from ``AMBIVER_VLM_API_KEY``.
    """

    endpoint: Optional[str] = None
    model: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def resolved_endpoint(self) -> Optional[str]:
        return self.endpoint or AmbiVerConfig.remote_endpoint()


_NESTED: Dict[str, Type[_Section]] = {
    "keyframes": KeyframeConfig,
    "fusion": FusionConfig,
    "bev": BevConfig,
    "ablations": AblationSwitches,
    "remote": RemoteBackendConfig,
}


@dataclass(frozen=True)
class PipelineConfig(_Section):
    """Complete configuration of one pipeline run."""

    keyframes: KeyframeConfig = field(default_factory=KeyframeConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    ablations: AblationSwitches = field(default_factory=AblationSwitches)
    backend: str = "mock"
    replay_path: Optional[str] = None
    remote: RemoteBackendConfig = field(default_factory=RemoteBackendConfig)
    lexicon_dir: Optional[str] = None
    prompt_template: Optional[str] = None
    temperature: float = 0.0
    crop_margin: float = 0.1
    inflight_limit: int = 4
    workers: int = 1
    output_dir: str = "ambiver-out"
    detector_version: str = "synthetic-1"

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(
                f"backend must be one of {', '.join(BACKENDS)}, got {self.backend!r}"
            )
        if self.backend == "replay" and not self.replay_path:
            raise ValueError("the replay backend requires replay_path")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 <= self.crop_margin < 1:
            raise ValueError("crop_margin must lie in [0, 1)")
        if self.inflight_limit < 1 or self.workers < 1:
            raise ValueError("inflight_limit and workers must be at least 1")

    @classmethod
    def _coerce_field(cls, name: str, raw: Any) -> Any:
        if name in _NESTED:
            return _NESTED[name].from_value(raw)
        return super()._coerce_field(name, raw)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        """Read a YAML config file."""

        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"Config file not found: {path}")

        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)

        return cls.from_value(data or {})

    def dumps(self) -> str:
        """Serialize to YAML text; stable across dump/load cycles."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def dump(self, path: Union[str, Path]) -> Path:
        """Write the config as YAML and return the path."""

        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.dumps(), encoding="utf-8")
        except OSError as e:
            raise IoFailureError(f"Failed to write config {path}: {e}")
        return path

    def with_overrides(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        """Return a copy with dotted-key overrides applied.

        Args:
            overrides: Mapping such as ``{"fusion.top_k": 3, "backend": "replay"}``.
                ``None`` values are skipped so unset CLI flags leave the file
                value untouched.
        """

        data = self.to_dict()
        for dotted, value in overrides.items():
            if value is None:
                continue
            target = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                if part not in target or not isinstance(target[part], dict):
                    raise ValueError(f"Unknown config section: {dotted}")
                target = target[part]
            if leaf not in target:
                raise ValueError(f"Unknown config field: {dotted}")
            target[leaf] = list(value) if isinstance(value, tuple) else value
        return PipelineConfig.from_value(data)


# Values fixed by the published experimental setup.
REFERENCE_DEFAULTS: Dict[str, Any] = {
    "keyframes.n_target": 100,
    "fusion.eps_d": 0.3,
    "fusion.theta_max": 60.0,
    "fusion.sigma_s": 0.2,
    "fusion.top_k": 6,
    "fusion.gamma": 0.5,
    "fusion.delta": 4.0,
    "temperature": 0.0,
}


__all__ = [
    "AblationSwitches",
    "AmbiVerConfig",
    "BACKENDS",
    "BevConfig",
    "FusionConfig",
    "KeyframeConfig",
    "PipelineConfig",
    "REFERENCE_DEFAULTS",
    "RemoteBackendConfig",
]
