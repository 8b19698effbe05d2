"""
run_config.py

Run configuration: loading, merging and validation.

Sources, later wins:
    schema defaults (schemas/run_config_rules.yaml)
    -> config file (`key = value` lines, or a flat YAML mapping for .yaml/.yml)
    -> command-line flags

Validation uses the Cerberus rules in the schema file; unknown keys are
rejected with the closest known key suggested.
"""

import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from cerberus import Validator
from rapidfuzz import process

from gate_types import BasisSpec, Method, WiringScheme, parse_basis
from netarch import NetworkConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; names the offending key when there is one."""

    def __init__(self, message: str, key: Optional[str] = None, suggestion: Optional[str] = None):
        self.key = key
        self.suggestion = suggestion
        if suggestion:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message)


def load_config_rules(path: Optional[str] = None) -> Dict:
    """
    Load the run configuration rules.

    Args:
        path: Path to run_config_rules.yaml (defaults to schemas/run_config_rules.yaml)

    Returns:
        Dictionary with 'rules', 'aliases' and 'method_aliases'
    """
    if path is None:
        current_dir = Path(__file__).parent
        path = current_dir.parent / "schemas" / "run_config_rules.yaml"

    with open(path, 'r') as f:
        return yaml.safe_load(f)


class RunConfigValidator(Validator):
    """Cerberus validator with the coercers the rules file names."""

    def _normalize_coerce_real(self, value):
        if isinstance(value, bool):
            return value
        try:
            return float(value)
        except (TypeError, ValueError):
            return value

    def _normalize_coerce_seeds(self, value):
        if isinstance(value, int) and not isinstance(value, bool):
            return [value]
        if isinstance(value, str):
            try:
                return [int(part) for part in value.replace(",", " ").split()]
            except ValueError:
                return value
        return value


@dataclass
class RunConfig:
    """Everything one training invocation needs, validated."""
    depth: int = 6
    width: int = 136
    method: Method = Method.MULTILINEAR_COVJAC
    tau: float = 1.0
    init_sigma: float = 1.0
    wiring_scheme: WiringScheme = WiringScheme.STRIDE
    wiring_seed: int = 0
    ste_basis: BasisSpec = field(default_factory=BasisSpec)
    iters: int = 50000
    batch_size: int = 512
    eval_every: int = 1000
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    dataset: str = "monks2"
    dataset_path: Optional[str] = None
    parity_bits: int = 6
    target_gate: str = "XOR"
    thermometer_levels: int = 0
    label_column: str = "label"
    output_dir: str = "runs"
    deterministic: bool = False
    probe_size: int = 1024
    workers: int = 1

    @property
    def effective_workers(self) -> int:
        """Workers actually used; deterministic mode evaluates on one worker."""
        return 1 if self.deterministic else self.workers

    def network_config(self, input_dim: int, classes: int) -> NetworkConfig:
        return NetworkConfig(
            input_dim=input_dim,
            depth=self.depth,
            width=self.width,
            classes=classes,
            method=self.method,
            tau=self.tau,
            init_sigma=self.init_sigma,
            seed=self.wiring_seed,
            wiring_scheme=self.wiring_scheme,
        )

    def to_dict(self) -> Dict:
        """Flat, YAML/JSON-friendly representation (round-trips through build_run_config)."""
        data = asdict(self)
        data["method"] = self.method.value
        data["wiring_scheme"] = self.wiring_scheme.value
        data["ste_basis"] = self.ste_basis.label()
        return data

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        for key, value in changes.items():
            data[key] = value.value if hasattr(value, "value") else value
        return build_run_config(overrides=data)


def parse_value(text: str) -> Any:
    """Type a `key = value` right-hand side with YAML scalar rules."""
    value = yaml.safe_load(text) if text.strip() else None
    if isinstance(value, str):
        # YAML 1.1 reads '1e-8' as a string
        try:
            return float(value)
        except ValueError:
            return value
    return value


def load_config_file(path) -> Dict:
    """
    Read a config file into a flat dict.

    Raises:
        ConfigError: missing file, malformed line, non-mapping YAML
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    if path.suffix in (".yaml", ".yml"):
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: YAML config must be a flat mapping")
        return data

    data = {}
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            content = line.split("#", 1)[0].strip()
            if not content:
                continue
            key, sep, value = content.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{line_number}: expected 'key = value', got '{line.strip()}'")
            data[key.strip()] = parse_value(value)
    return data


def _canonical_keys(data: Dict, rules: Dict) -> Dict:
    aliases = rules.get("aliases", {})
    known = rules["rules"]
    result = {}
    for key, value in data.items():
        name = aliases.get(key, key).replace("-", "_")
        if name not in known:
            match = process.extractOne(name, list(known) + list(aliases))
            suggestion = aliases.get(match[0], match[0]) if match and match[1] >= 60 else None
            raise ConfigError(f"Unknown config key '{key}'", key=key, suggestion=suggestion)
        result[name] = value
    return result


def _resolve_method(value: Any, rules: Dict) -> Any:
    if isinstance(value, Method):
        return value.value
    if not isinstance(value, str):
        return value
    name = value.strip().lower().replace("-", "_")
    return rules.get("method_aliases", {}).get(name, name)


def build_run_config(config_path: Optional[str] = None, overrides: Optional[Dict] = None,
                     rules_path: Optional[str] = None) -> RunConfig:
    """
    Merge defaults, a config file and overrides into a validated RunConfig.

    Args:
        config_path: Optional config file
        overrides: Command-line values; None entries are ignored

    Raises:
        ConfigError: unknown key, wrong type, out-of-range or disallowed value
    """
    rules = load_config_rules(rules_path)

    merged: Dict = {}
    if config_path:
        merged.update(_canonical_keys(load_config_file(config_path), rules))
    if overrides:
        merged.update(_canonical_keys({k: v for k, v in overrides.items() if v is not None}, rules))

    if "method" in merged:
        merged["method"] = _resolve_method(merged["method"], rules)
        allowed = rules["rules"]["method"]["allowed"]
        if merged["method"] not in allowed:
            match = process.extractOne(str(merged["method"]), allowed)
            raise ConfigError(f"Unknown method '{merged['method']}'", key="method",
                              suggestion=match[0] if match and match[1] >= 60 else None)

    validator = RunConfigValidator(rules["rules"])
    if not validator.validate(merged):
        key, problems = next(iter(sorted(validator.errors.items())))
        raise ConfigError(f"Invalid value for '{key}': {problems}", key=key)
    document = validator.document

    for key in ("tau", "init_sigma", "lr", "eps"):
        if not document[key] > 0:
            raise ConfigError(f"'{key}' must be > 0, got {document[key]}", key=key)

    try:
        basis = parse_basis(document["ste_basis"])
    except ValueError as e:
        raise ConfigError(str(e), key="ste_basis")

    if document["width"] < 2 and document["depth"] > 1:
        raise ConfigError("width must be >= 2 when depth > 1", key="width")

    document["method"] = Method(document["method"])
    document["wiring_scheme"] = WiringScheme(document["wiring_scheme"])
    document["ste_basis"] = basis
    return RunConfig(**document)
