"""Run configuration: file + flag overrides + environment for secrets.

The config file is flat TOML-style text — `[section]` headers and
`key = value` lines with quoted strings, numbers, booleans, and one-line
arrays. Every recognized key lives in CONFIG_KEYS with its type, default,
and help text; that registry is the single source for parsing, validation,
the snapshot written into each run directory, and the `--help` listing.
Unknown keys are rejected outright. The only thing ever read from the
environment is the API token named by backend.auth_env.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigurationError
from .execution import (
    DEFAULT_MAX_OUTPUT_BYTES,
    DEFAULT_TIMEOUT_S,
    ExecutionLimits,
    SandboxPolicy,
)
from .generation import DEFAULT_MAX_NEW_TOKENS, DEFAULT_TEMPERATURE
from .judging import DEFAULT_UNIT_WORDS, Tolerances
from .problems import registry


@dataclass(frozen=True, slots=True)
class KeySpec:
    name: str
    kind: str  # "str" | "int" | "float" | "bool" | "list"
    default: Any
    help: str


def _dataset_shot_keys() -> list[KeySpec]:
    return [
        KeySpec(
            f"prompts.shots.{meta.dataset}",
            "int",
            meta.default_shots,
            f"few-shot exemplar count for {meta.display_name} (default {meta.default_shots})",
        )
        for meta in registry()
    ]


CONFIG_KEYS: tuple[KeySpec, ...] = tuple(
    [
        KeySpec("backend.kind", "str", "http", "generation backend: 'http' or 'replay'"),
        KeySpec("backend.url", "str", "", "completion endpoint URL for the http backend"),
        KeySpec("backend.model", "str", "", "model name sent in each request"),
        KeySpec("backend.api_style", "str", "completions", "request shape: 'completions' or 'chat'"),
        KeySpec("backend.auth_env", "str", "", "name of the environment variable holding the API token"),
        KeySpec("backend.timeout_s", "float", 60.0, "HTTP request timeout in seconds"),
        KeySpec("backend.retries", "int", 3, "retry count for transport/5xx failures"),
        KeySpec("backend.backoff_s", "float", 0.5, "base exponential backoff between retries"),
        KeySpec("backend.max_concurrency", "int", 4, "maximum in-flight generation requests"),
        KeySpec("backend.requests_per_second", "float", 0.0, "sustained request rate cap (0 = unlimited)"),
        KeySpec("backend.fixture", "str", "", "replay fixture path for the replay backend"),
        KeySpec("backend.max_new_tokens", "int", DEFAULT_MAX_NEW_TOKENS, "token budget per completion"),
        KeySpec("backend.temperature", "float", DEFAULT_TEMPERATURE, "sampling temperature (0 = greedy)"),
        KeySpec("backend.stop", "list", [], "stop sequences sent with each request"),
        KeySpec("executor.kind", "str", "subprocess", "program runner: 'subprocess' or 'inprocess'"),
        KeySpec(
            "executor.runner_cmd",
            "list",
            ["python", "-m", "potrunner"],
            "command spawning the runner shim ('python' resolves to this interpreter)",
        ),
        KeySpec("executor.timeout_s", "float", DEFAULT_TIMEOUT_S, "wall-clock limit per program execution"),
        KeySpec("executor.max_output_bytes", "int", DEFAULT_MAX_OUTPUT_BYTES, "cap on captured stdout/stderr"),
        KeySpec("executor.pool_size", "int", 4, "maximum concurrent program executions"),
        KeySpec("policy.allow_network", "bool", False, "let executed programs open sockets"),
        KeySpec("policy.allow_file_write", "bool", False, "let executed programs write files"),
        KeySpec(
            "policy.allowed_imports",
            "list",
            list(SandboxPolicy().allowed_imports),
            "import allow-list for executed programs",
        ),
        KeySpec("policy.memory_limit_mb", "int", 512, "address-space limit for executed programs"),
        KeySpec("judge.abs_tol", "float", 1e-6, "absolute tolerance for float-valued comparisons"),
        KeySpec("judge.rel_tol", "float", 1e-4, "relative tolerance for float-valued comparisons"),
        KeySpec("judge.unit_words", "list", list(DEFAULT_UNIT_WORDS), "trailing unit words stripped from answers"),
        KeySpec("prompts.exemplar_dir", "str", "exemplars", "directory holding pot.jsonl/cot.jsonl exemplar files"),
        KeySpec(
            "prompts.zero_shot",
            "bool",
            True,
            "use zero-shot instruction prompts everywhere (per-dataset shots keys override)",
        ),
        *_dataset_shot_keys(),
        KeySpec("run.datasets", "list", [m.dataset for m in registry()], "datasets to evaluate"),
        KeySpec("run.dataset_dir", "str", "datasets", "directory holding <dataset>.jsonl files"),
        KeySpec("run.mode", "str", "hybrid", "decoding mode(s), comma-separated: hybrid, pot, cot"),
        KeySpec("run.out_dir", "str", "runs", "parent directory for run directories"),
        KeySpec("run.run_id", "str", "run", "run directory name; reruns with the same id resume"),
        KeySpec("run.parallelism", "int", 4, "worker threads for decoding"),
        KeySpec("run.seed", "int", 0, "seed recorded for synthesis workflows"),
    ]
)

_KEY_INDEX = {spec.name: spec for spec in CONFIG_KEYS}


def _parse_scalar(token: str, where: str) -> Any:
    token = token.strip()
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if token in ("true", "false"):
        return token == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    raise ConfigurationError(f"{where}: cannot parse value {token!r} (strings need double quotes)")


def _parse_value(text: str, where: str) -> Any:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part, where) for part in _split_items(inner, where)]
    return _parse_scalar(text, where)


def _split_items(inner: str, where: str) -> list[str]:
    items, depth, current = [], 0, []
    in_string = False
    for ch in inner:
        if ch == '"':
            in_string = not in_string
        if ch == "," and not in_string and depth == 0:
            items.append("".join(current))
            current = []
            continue
        current.append(ch)
    if in_string:
        raise ConfigurationError(f"{where}: unterminated string")
    items.append("".join(current))
    return items


def _strip_comment(line: str) -> str:
    out, in_string = [], False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str, filename: str = "<config>") -> dict[str, Any]:
    """Parse flat TOML-style text into {dotted.key: value}."""
    values: dict[str, Any] = {}
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        where = f"{filename}:{lineno}"
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigurationError(f"{where}: empty section name")
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        full_key = f"{section}.{key}" if section else key
        if full_key in values:
            raise ConfigurationError(f"{where}: duplicate key {full_key!r}")
        values[full_key] = _parse_value(value, where)
    return values


def _coerce(spec: KeySpec, value: Any) -> Any:
    if spec.kind == "str":
        if isinstance(value, str):
            return value
    elif spec.kind == "bool":
        if isinstance(value, bool):
            return value
    elif spec.kind == "int":
        if isinstance(value, bool):
            pass  # bools are ints in Python; reject explicitly
        elif isinstance(value, int):
            return value
    elif spec.kind == "float":
        if isinstance(value, bool):
            pass
        elif isinstance(value, (int, float)):
            return float(value)
    elif spec.kind == "list":
        if isinstance(value, list):
            return value
        if isinstance(value, str):  # flag overrides pass comma-joined strings
            return [part.strip() for part in value.split(",") if part.strip()]
    raise ConfigurationError(
        f"config key {spec.name} expects {spec.kind}, got {type(value).__name__} ({value!r})"
    )


@dataclass(slots=True)
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    # keys set by a file or an override, as opposed to registry defaults
    explicit: set = field(default_factory=set)

    def __getitem__(self, key: str) -> Any:
        if key not in _KEY_INDEX:
            raise ConfigurationError(f"unknown config key {key!r}")
        return self.values[key]

    def modes(self) -> list[str]:
        modes = [m.strip() for m in str(self["run.mode"]).split(",") if m.strip()]
        for m in modes:
            if m not in ("hybrid", "pot", "cot"):
                raise ConfigurationError(f"run.mode entries must be hybrid/pot/cot, got {m!r}")
        if not modes:
            raise ConfigurationError("run.mode selects no mode")
        return modes

    def shots_for(self, dataset: str, default_shots: int) -> int:
        override_key = f"prompts.shots.{dataset}"
        if override_key in self.explicit:
            return int(self.values[override_key])
        if self["prompts.zero_shot"]:
            return 0
        return default_shots

    def limits(self) -> ExecutionLimits:
        return ExecutionLimits(
            timeout_s=self["executor.timeout_s"],
            max_output_bytes=self["executor.max_output_bytes"],
        )

    def sandbox_policy(self) -> SandboxPolicy:
        return SandboxPolicy(
            allow_network=self["policy.allow_network"],
            allow_file_write=self["policy.allow_file_write"],
            allowed_imports=tuple(self["policy.allowed_imports"]),
            memory_limit_mb=self["policy.memory_limit_mb"],
        )

    def tolerances(self) -> Tolerances:
        return Tolerances(abs_tol=self["judge.abs_tol"], rel_tol=self["judge.rel_tol"])

    def unit_words(self) -> tuple[str, ...]:
        return tuple(self["judge.unit_words"])

    def auth_token(self) -> str | None:
        env_name = self["backend.auth_env"]
        if not env_name:
            return None
        token = os.environ.get(env_name)
        if token is None:
            raise ConfigurationError(
                f"backend.auth_env names {env_name!r} but that environment variable is not set"
            )
        return token

    def snapshot(self) -> dict[str, Any]:
        """Full resolved key/value map; what reruns and audits read."""
        return {spec.name: self.values[spec.name] for spec in CONFIG_KEYS}


def build_config(
    file_text: str | None = None,
    filename: str = "<config>",
    overrides: list[str] | None = None,
) -> RunConfig:
    """Merge defaults, a config file, and `key=value` override strings."""
    merged: dict[str, Any] = {spec.name: spec.default for spec in CONFIG_KEYS}
    explicit: set[str] = set()

    def apply(values: dict[str, Any], origin: str) -> None:
        for key, value in values.items():
            spec = _KEY_INDEX.get(key)
            if spec is None:
                raise ConfigurationError(f"{origin}: unknown config key {key!r}")
            merged[key] = _coerce(spec, value)
            explicit.add(key)

    if file_text is not None:
        apply(parse_config_text(file_text, filename), filename)
    for override in overrides or []:
        if "=" not in override:
            raise ConfigurationError(f"override {override!r} must look like key=value")
        key, _, value = override.partition("=")
        key = key.strip()
        spec = _KEY_INDEX.get(key)
        if spec is None:
            raise ConfigurationError(f"override: unknown config key {key!r}")
        if spec.kind in ("str", "list"):
            parsed: Any = value if spec.kind == "str" else value
        else:
            parsed = _parse_value(value, f"override {key}")
        merged[key] = _coerce(spec, parsed)
        explicit.add(key)

    config = RunConfig(values=merged, explicit=explicit)
    _validate(config)
    return config


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    text = None
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return build_config(text, filename=path or "<config>", overrides=overrides)


def _validate(config: RunConfig) -> None:
    if config["backend.kind"] not in ("http", "replay"):
        raise ConfigurationError("backend.kind must be 'http' or 'replay'")
    if config["backend.api_style"] not in ("completions", "chat"):
        raise ConfigurationError("backend.api_style must be 'completions' or 'chat'")
    if config["executor.kind"] not in ("subprocess", "inprocess"):
        raise ConfigurationError("executor.kind must be 'subprocess' or 'inprocess'")
    for key in ("run.parallelism", "executor.pool_size", "backend.max_concurrency"):
        if config[key] < 1:
            raise ConfigurationError(f"{key} must be >= 1")
    for key in ("executor.timeout_s", "backend.timeout_s"):
        if config[key] <= 0:
            raise ConfigurationError(f"{key} must be positive")
    for key in ("judge.abs_tol", "judge.rel_tol"):
        if config[key] < 0:
            raise ConfigurationError(f"{key} must be nonnegative")
    shot_keys = [f"prompts.shots.{m.dataset}" for m in registry()]
    for key in shot_keys:
        if config[key] < 0:
            raise ConfigurationError(f"{key} must be >= 0")
    config.modes()


def config_keys_help() -> str:
    """One line per config key, used verbatim in --help output."""
    width = max(len(spec.name) for spec in CONFIG_KEYS)
    lines = []
    for spec in CONFIG_KEYS:
        default = spec.default if spec.default != "" else '""'
        lines.append(f"  {spec.name.ljust(width)}  {spec.help} [default: {default}]")
    return "\n".join(lines)
