"""Declarative run configuration: endpoints, thresholds, executor, paths.

One YAML file drives every CLI command and the service. Environment
variables appear only as *names* here (for API keys); secrets never live
in the file itself. Scripted endpoints reference a replies JSON so whole
pipelines can run hermetically offline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .execution import ExecutorPool, MeshCache
from .gateway import Endpoint, Gateway, HttpBackend, RouterBackend, ScriptedBackend, ScriptedReply, Transcript
from .protocol import CostMode, RewardParams

ROLES = ("clarifier", "coder", "user", "judge", "describe", "perturb")


@dataclass(frozen=True)
class EndpointSpec:
    kind: str  # "http" | "scripted"
    base_url: str = "scripted://"
    model: str = "scripted"
    api_key_env: str = ""
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 3
    supports_vision: bool = False

    def to_endpoint(self) -> Endpoint:
        return Endpoint(
            base_url=self.base_url,
            model_name=self.model,
            api_key_env=self.api_key_env,
            temperature=self.temperature,
            timeout=self.timeout,
            max_retries=self.max_retries,
            supports_vision=self.supports_vision,
        )


@dataclass(frozen=True)
class RunConfig:
    endpoints: dict[str, EndpointSpec]
    scripted_replies_path: str | None
    executor_argv: list[str]
    executor_parallelism: int
    executor_timeout: float
    completeness_cd: float
    select_cd: float
    select_ratio: float
    curate_cd: float
    surface_points: int
    seed: int
    reward_lambda: float
    cost_mode: str
    templates_dir: str | None
    out_dir: str
    mesh_cache_dir: str | None
    service_host: str
    service_port: int
    cors_origin: str
    raw: dict = field(compare=False, default_factory=dict)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]

    def reward_params(self) -> RewardParams:
        return RewardParams(lam=self.reward_lambda, cost_mode=CostMode(self.cost_mode))


def _endpoint_spec(obj: dict, role: str) -> EndpointSpec:
    kind = obj.get("kind", "scripted")
    if kind not in ("http", "scripted"):
        raise ConfigError(f"endpoint {role}: kind must be http or scripted, got {kind!r}")
    if kind == "http" and not obj.get("base_url"):
        raise ConfigError(f"endpoint {role}: http endpoints need a base_url")
    return EndpointSpec(
        kind=kind,
        base_url=obj.get("base_url", "scripted://"),
        model=obj.get("model", f"scripted-{role}"),
        api_key_env=obj.get("api_key_env", ""),
        temperature=float(obj.get("temperature", 0.0)),
        timeout=float(obj.get("timeout", 120.0)),
        max_retries=int(obj.get("max_retries", 3)),
        supports_vision=bool(obj.get("supports_vision", False)),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc

    endpoints_raw = raw.get("endpoints", {})
    endpoints = {}
    for role in ROLES:
        endpoints[role] = _endpoint_spec(endpoints_raw.get(role, {}), role)

    executor = raw.get("executor", {})
    argv = executor.get("argv")
    if not argv or not isinstance(argv, list):
        raise ConfigError("executor.argv must be a non-empty list")
    thresholds = raw.get("thresholds", {})
    sampling = raw.get("sampling", {})
    reward = raw.get("reward", {})
    paths = raw.get("paths", {})
    service = raw.get("service", {})
    base = path.parent

    def resolve(p: str | None) -> str | None:
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    scripted_path = resolve(raw.get("scripted_replies"))
    return RunConfig(
        endpoints=endpoints,
        scripted_replies_path=scripted_path,
        executor_argv=[str(a) for a in argv],
        executor_parallelism=int(executor.get("parallelism", 2)),
        executor_timeout=float(executor.get("timeout", 30.0)),
        completeness_cd=float(thresholds.get("completeness_cd", 2e-4)),
        select_cd=float(thresholds.get("select_cd", 2e-4)),
        select_ratio=float(thresholds.get("select_ratio", 10.0)),
        curate_cd=float(thresholds.get("curate_cd", 2e-4)),
        surface_points=int(sampling.get("surface_points", 8192)),
        seed=int(sampling.get("seed", 0)),
        reward_lambda=float(reward.get("lambda", 0.0)),
        cost_mode=str(reward.get("cost_mode", "Rounds")),
        templates_dir=resolve(raw.get("templates", {}).get("dir")),
        out_dir=resolve(paths.get("out_dir", "runs")),
        mesh_cache_dir=resolve(paths.get("mesh_cache")),
        service_host=str(service.get("host", "127.0.0.1")),
        service_port=int(service.get("port", 8321)),
        cors_origin=str(service.get("cors_origin", "*")),
        raw=raw,
    )


def build_gateway(config: RunConfig, transcript: Transcript | None = None) -> Gateway:
    """Gateway with scripted roles routed to their canned scripts."""
    scripted_roles = [r for r, spec in config.endpoints.items() if spec.kind == "scripted"]
    backends: dict[str, object] = {}
    if scripted_roles:
        if not config.scripted_replies_path:
            raise ConfigError("scripted endpoints configured but no scripted_replies file")
        scripts = json.loads(Path(config.scripted_replies_path).read_text(encoding="utf-8"))
        for role in scripted_roles:
            model = config.endpoints[role].model
            entries = scripts.get(role, [])
            backends[model] = ScriptedBackend(
                [ScriptedReply(reply=e["reply"], match=e.get("match")) for e in entries]
            )
    return Gateway(
        backend=RouterBackend(backends, fallback=HttpBackend()),
        transcript=transcript,
        backoff_base=0.0 if scripted_roles else 0.5,
    )


def build_executor(config: RunConfig) -> ExecutorPool:
    cache = MeshCache(config.mesh_cache_dir) if config.mesh_cache_dir else None
    return ExecutorPool(
        config.executor_argv, parallelism=config.executor_parallelism, cache=cache
    )
