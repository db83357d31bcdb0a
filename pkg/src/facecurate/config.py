"""Pipeline configuration file (YAML or JSON).

Schema (every section optional)::

    clean:     CleanConfig fields
    augment:   AugmentConfig fields
    generator: GeneratorConfig fields
    leak:      {tau_leak}
    grid:      {cell_size, columns, label_height}
    dataset:   {images_per_identity}
    attributes_dir: directory of <attribute>.txt option lists
    base_descriptions: file with one base description per line
    adapters:
      llm:       {kind: none|mock|replay|http, script, transcript, endpoint, model,
                  api_key_env, timeout, rate, burst, max_in_flight}
      generator: {kind: mock|http, endpoint, size, timeout}
      detector:  {kind: mock|mock-none|http, endpoint, timeout}
      expander:  {kind: echo|http, endpoint, timeout}

Credentials are never read from this file; HTTP adapters take them from the
environment variable named by ``api_key_env``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError
from .types import (
    AugmentConfig,
    CleanConfig,
    DatasetConfig,
    GeneratorConfig,
    GridSpec,
    LeakConfig,
    config_from_mapping,
)

_SECTIONS = {"clean", "augment", "generator", "leak", "grid", "dataset", "attributes_dir",
             "base_descriptions", "adapters"}


@dataclass(frozen=True)
class PipelineConfig:
    clean: CleanConfig = CleanConfig()
    augment: AugmentConfig = AugmentConfig()
    generator: GeneratorConfig = GeneratorConfig()
    leak: LeakConfig = LeakConfig()
    grid: GridSpec = GridSpec()
    dataset: DatasetConfig = DatasetConfig()
    attributes_dir: Optional[Path] = None
    base_descriptions: Optional[Path] = None
    adapters: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def validate(self) -> None:
        problems = self.clean.validate() + self.augment.validate()
        if not 0 < self.leak.tau_leak <= 1:
            problems.append("0 < tau_leak ≤ 1")
        if self.grid.columns < 1 or self.grid.cell_size < 1 or self.grid.label_height < 1:
            problems.append("grid dimensions ≥ 1")
        if problems:
            raise ConfigError("invalid configuration: " + ", ".join(problems))


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - _SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")

    def rel(p):
        return None if p is None else (path.parent / p)

    cfg = PipelineConfig(
        clean=config_from_mapping(CleanConfig, data.get("clean")),
        augment=config_from_mapping(AugmentConfig, data.get("augment")),
        generator=config_from_mapping(GeneratorConfig, data.get("generator")),
        leak=config_from_mapping(LeakConfig, data.get("leak")),
        grid=config_from_mapping(GridSpec, data.get("grid")),
        dataset=config_from_mapping(DatasetConfig, data.get("dataset")),
        attributes_dir=rel(data.get("attributes_dir")),
        base_descriptions=rel(data.get("base_descriptions")),
        adapters=dict(data.get("adapters") or {}),
    )
    cfg.validate()
    return cfg


def make_llm_client(spec: Optional[Dict[str, Any]]):
    """Build the LLM client described by an ``adapters.llm`` mapping (None for kind none)."""
    from .llm import HttpLLMClient, RateLimitedClient, ReplayLLMClient, ScriptedLLMClient

    spec = dict(spec or {})
    kind = spec.get("kind", "none")
    if kind == "none":
        return None
    if kind == "mock":
        client = ScriptedLLMClient.from_file(spec["script"]) if spec.get("script") else ScriptedLLMClient()
    elif kind == "replay":
        if not spec.get("transcript"):
            raise ConfigError("replay LLM adapter needs a transcript file")
        client = ReplayLLMClient.from_file(spec["transcript"])
    elif kind == "http":
        endpoint = spec.get("endpoint") or os.environ.get("FACECURATE_LLM_ENDPOINT")
        model = spec.get("model") or os.environ.get("FACECURATE_LLM_MODEL")
        if not endpoint or not model:
            raise ConfigError("http LLM adapter needs an endpoint and a model")
        client = HttpLLMClient(endpoint, model, spec.get("api_key_env", "FACECURATE_LLM_API_KEY"),
                               float(spec.get("timeout", 60.0)))
    else:
        raise ConfigError(f"unknown LLM adapter kind {kind!r}")
    return RateLimitedClient(client, float(spec.get("rate", 0.0)), int(spec.get("burst", 1)),
                             int(spec.get("max_in_flight", 1)))


def make_generation_clients(adapters: Dict[str, Dict[str, Any]], generator: GeneratorConfig):
    from .generator import (
        EchoExpander,
        GenerationClients,
        HttpExpander,
        HttpFaceDetector,
        HttpImageGenerator,
        MockFaceDetector,
        MockImageGenerator,
    )

    def http(cls, spec):
        if not spec.get("endpoint"):
            raise ConfigError(f"{cls.__name__} needs an endpoint")
        headers = {}
        key = os.environ.get(spec.get("api_key_env", ""), "") if spec.get("api_key_env") else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return cls(spec["endpoint"], float(spec.get("timeout", 120.0)), headers=headers)

    g = dict(adapters.get("generator") or {})
    d = dict(adapters.get("detector") or {})
    e = dict(adapters.get("expander") or {})
    kinds = (g.get("kind", "mock"), d.get("kind", "mock"), e.get("kind", "echo"))
    if kinds[0] == "mock":
        gen = MockImageGenerator(int(g.get("size", generator.image_size)))
    elif kinds[0] == "http":
        gen = http(HttpImageGenerator, g)
    else:
        raise ConfigError(f"unknown generator adapter kind {kinds[0]!r}")
    if kinds[1] in ("mock", "mock-full"):
        det = MockFaceDetector("full")
    elif kinds[1] == "mock-none":
        det = MockFaceDetector("none")
    elif kinds[1] == "http":
        det = http(HttpFaceDetector, d)
    else:
        raise ConfigError(f"unknown detector adapter kind {kinds[1]!r}")
    if kinds[2] == "echo":
        exp = EchoExpander()
    elif kinds[2] == "http":
        exp = http(HttpExpander, e)
    else:
        raise ConfigError(f"unknown expander adapter kind {kinds[2]!r}")
    return GenerationClients(gen, det, exp)
