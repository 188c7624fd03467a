"""Run configuration: JSON file plus flag overrides, and backend construction."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from avua.errors import ConfigError
from avua.gateway import Backend, RemoteBackend, ScriptedBackend, load_script, record_and_replay
from avua.planner import AblationConfig, AgentConfig
from avua.prompts import PromptCatalog
from avua.sim import SimulatedBackend
from avua.toolbox import RemoteToolAdapter, SyntheticAdapter, SyntheticVideoSpec, Toolbox, standard_toolbox

ENV_VAR = "AVUA_CONFIG"
GATEWAY_KINDS = ("remote", "scripted", "replay", "record", "simulated")
TOOLBOX_KINDS = ("synthetic", "remote")


@dataclass
class Budgets:
    max_steps: int = 15
    max_trials: int = 2
    sampler_cap: int = 16


@dataclass
class RunConfig:
    prompts_dir: str | None = None
    gateway: dict[str, Any] = field(default_factory=lambda: {"kind": "scripted", "strict": True})
    toolbox: dict[str, Any] = field(default_factory=lambda: {"kind": "synthetic"})
    ablation: str = "ours"
    budgets: Budgets = field(default_factory=Budgets)
    memory_path: str | None = None
    deterministic: bool = True
    inherit_cache: bool = True
    retrieve_on_first_trial: bool = True
    only_successful: bool = False
    eval_confidence_gate: int | None = None
    window_stride: int = 1

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d)
        budgets = Budgets(**d.pop("budgets", {}))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(budgets=budgets, **d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RunConfig":
        path = path or os.environ.get(ENV_VAR)
        if not path:
            return cls()
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        kind = self.gateway.get("kind")
        if kind not in GATEWAY_KINDS:
            raise ConfigError(f"gateway.kind must be one of {GATEWAY_KINDS}, got {kind!r}")
        if self.toolbox.get("kind") not in TOOLBOX_KINDS:
            raise ConfigError(f"toolbox.kind must be one of {TOOLBOX_KINDS}")
        try:
            AblationConfig.from_name(self.ablation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.budgets.max_steps < 1 or self.budgets.max_trials < 1 or self.budgets.sampler_cap < 1:
            raise ConfigError("budgets must be positive")

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        budgets = {k: overrides.pop(k) for k in ("max_steps", "max_trials", "sampler_cap")
                   if overrides.get(k) is not None}
        clean = {k: v for k, v in overrides.items() if v is not None}
        cfg = replace(self, **clean)
        if budgets:
            cfg = replace(cfg, budgets=replace(cfg.budgets, **budgets))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def ablation_config(self) -> AblationConfig:
        return AblationConfig.from_name(self.ablation)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            max_steps=self.budgets.max_steps,
            max_trials=self.budgets.max_trials,
            sampler_cap=self.budgets.sampler_cap,
            inherit_cache=self.inherit_cache,
            retrieve_on_first_trial=self.retrieve_on_first_trial,
            only_successful=self.only_successful,
            eval_confidence_gate=self.eval_confidence_gate,
        )

    def catalog(self) -> PromptCatalog:
        return PromptCatalog(self.prompts_dir)


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


def build_backend(spec: dict[str, Any], base_dir: Path | None = None) -> Backend:
    """Construct a completion backend from a ``{"kind": ..., ...}`` mapping."""
    kind = spec.get("kind")
    if kind == "scripted":
        if not spec.get("script"):
            raise ConfigError("scripted gateway requires a script path")
        path = _resolve(spec["script"], base_dir)
        if not path.exists():
            raise ConfigError(f"script file not found: {path}")
        return ScriptedBackend(load_script(path), strict=spec.get("strict", True))
    if kind == "simulated":
        return SimulatedBackend()
    if kind == "remote":
        if not spec.get("url"):
            raise ConfigError("remote gateway requires a url")
        return RemoteBackend(spec["url"], timeout=float(spec.get("timeout", 60.0)))
    if kind == "replay":
        path = _resolve(spec.get("session", ""), base_dir)
        if not path.is_file():
            raise ConfigError(f"replay session not found: {path}")
        return record_and_replay(path, "replay")
    if kind == "record":
        live = build_backend(spec.get("live") or {"kind": "remote", "url": spec.get("url")}, base_dir)
        return record_and_replay(_resolve(spec["session"], base_dir), "record", live)
    raise ConfigError(f"unknown gateway kind {kind!r}")


def build_toolbox(spec: dict[str, Any], video_ref: str | None, base_dir: Path | None = None,
                  window_stride: int = 1) -> Toolbox:
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        if not video_ref:
            raise ConfigError("synthetic toolbox requires a video spec path")
        path = _resolve(video_ref, base_dir)
        if not path.exists():
            raise ConfigError(f"video spec not found: {path}")
        adapter = SyntheticAdapter(SyntheticVideoSpec.load(path),
                                   detection_threshold=float(spec.get("detection_threshold", 0.6)))
        return standard_toolbox(adapter, window_stride=window_stride)
    if kind == "remote":
        if not spec.get("url"):
            raise ConfigError("remote toolbox requires a url")
        return standard_toolbox(RemoteToolAdapter(spec["url"]), window_stride=window_stride)
    raise ConfigError(f"unknown toolbox kind {kind!r}")
