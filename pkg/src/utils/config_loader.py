"""
Config Loader Utility
---------------------
Loads a scenario file, validates it against the scenario schema and merges it
over the defaults of config_base.yaml.

Validation never runs a simulation; every problem is reported as a
ConfigIssue anchored to its key path and YAML line.
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from jsonschema import Draft7Validator

from src.utils.error_handling import ConfigError, ConfigIssue
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("ConfigLoader")

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
DEFAULT_BASE_CONFIG = CONFIG_DIR / "config_base.yaml"
DEFAULT_SCHEMA = CONFIG_DIR / "scenario_schema.yaml"
SCENARIO_DIR = CONFIG_DIR / "scenarios"

SCENARIO_KINDS = (
    "comb_lock",
    "comb_calibration",
    "averaging",
    "feed_forward",
    "offset_lock",
    "intensity_lock",
    "pid_pipeline",
    "dac",
    "coherence",
)


@dataclass
class Scenario:
    """A validated scenario with its component section merged over the defaults."""
    name: str
    seed: int
    kind: str
    params: Dict[str, Any]
    duration_s: Optional[float] = None
    output_dir: Optional[str] = None
    description: str = ""
    expectations: List[Dict[str, Any]] = field(default_factory=list)
    source_path: Optional[str] = None
    settings: Dict[str, Any] = field(default_factory=dict)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base; lists and scalars are replaced."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


# ---------------------------------------------------------------------
# Line anchoring
# ---------------------------------------------------------------------
def _node_at(root: Optional[yaml.Node], path) -> Optional[yaml.Node]:
    node = root
    for part in path:
        if isinstance(node, yaml.MappingNode):
            node = next((value for key, value in node.value if key.value == str(part)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            return node
        if node is None:
            return None
    return node


def _key_line(mapping: Optional[yaml.Node], key: str) -> Optional[int]:
    if isinstance(mapping, yaml.MappingNode):
        for key_node, _ in mapping.value:
            if key_node.value == key:
                return key_node.start_mark.line + 1
    return None


def _issue_from_error(error, root: Optional[yaml.Node]) -> ConfigIssue:
    path = list(error.absolute_path)
    dotted = ".".join(str(p) for p in path)
    node = _node_at(root, path)
    line = node.start_mark.line + 1 if node is not None else None

    if error.validator == "required":
        missing = [name for name in error.validator_value if name not in (error.instance or {})]
        message = ", ".join(missing) + " required"
    elif error.validator == "additionalProperties":
        allowed = set((error.schema.get("properties") or {}).keys())
        extra = sorted(k for k in error.instance if k not in allowed)
        message = "unknown key(s): " + ", ".join(extra)
        if extra:
            line = _key_line(node, extra[0]) or line
            dotted = ".".join(filter(None, [dotted, extra[0]]))
    elif error.validator in ("maximum", "exclusiveMaximum"):
        message = f"{error.instance} exceeds the maximum of {error.validator_value}"
    elif error.validator in ("minimum", "exclusiveMinimum"):
        message = f"{error.instance} is below the minimum of {error.validator_value}"
    else:
        message = error.message
    return ConfigIssue(path=dotted, message=message, line=line)


# ---------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------
class ConfigLoader:
    """
    Loads configuration from the base YAML file and a scenario YAML file.
    """

    def __init__(self, base_config_path: str = str(DEFAULT_BASE_CONFIG), scenario_config_path: str = "",
                 schema_path: str = str(DEFAULT_SCHEMA)):
        self.base_config_path = Path(base_config_path)
        self.scenario_config_path = Path(scenario_config_path)
        self.schema_path = Path(schema_path)
        self.config: Dict[str, Any] = {}

    def load(self, seed_override: Optional[int] = None) -> Scenario:
        """
        Validate the scenario and merge it over the base defaults.

        Raises:
            ConfigError: With the list of line-anchored issues.
        """
        base = self._load_yaml(self.base_config_path)
        schema = self._load_yaml(self.schema_path)
        text = self._read(self.scenario_config_path)

        try:
            root = yaml.compose(text)
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            issue = ConfigIssue(path="", message=f"YAML parse error: {getattr(e, 'problem', e)}",
                                line=mark.line + 1 if mark is not None else None)
            raise ConfigError(f"Invalid scenario file {self.scenario_config_path}", [issue])
        if data is None:
            data = {}
        if seed_override is not None and isinstance(data, dict):
            data["seed"] = int(seed_override)

        issues = self.validate(data, schema, root)
        kinds = [kind for kind in SCENARIO_KINDS if isinstance(data, dict) and kind in data]
        if not issues and len(kinds) != 1:
            issues.append(ConfigIssue(
                path="",
                message=f"exactly one component section required, found {kinds or 'none'} "
                        f"(expected one of {', '.join(SCENARIO_KINDS)})",
                line=1,
            ))
        if issues:
            for issue in issues:
                logger.error(f"{self.scenario_config_path}: {issue}")
            raise ConfigError(f"Invalid scenario file {self.scenario_config_path}", issues)

        kind = kinds[0]
        defaults = (base.get("defaults") or {}).get(kind, {})
        self.config = deep_merge({"defaults": defaults}, data)
        scenario = Scenario(
            name=data["name"],
            seed=int(data["seed"]),
            kind=kind,
            params=deep_merge(defaults, data[kind] or {}),
            duration_s=data.get("duration_s", (base.get("durations") or {}).get(kind)),
            output_dir=data.get("output_dir"),
            description=data.get("description", ""),
            expectations=list(data.get("expectations") or []),
            source_path=str(self.scenario_config_path),
            settings={key: value for key, value in base.items() if key != "defaults"},
        )
        logger.info(f"Scenario '{scenario.name}' ({kind}) validated from {self.scenario_config_path}.")
        return scenario

    @staticmethod
    def validate(data: Any, schema: Dict[str, Any], root: Optional[yaml.Node] = None) -> List[ConfigIssue]:
        """Schema-check a parsed document; returns issues sorted by line."""
        validator = Draft7Validator(schema)
        issues = [_issue_from_error(error, root) for error in validator.iter_errors(data)]
        return sorted(issues, key=lambda issue: (issue.line or 0, issue.path))

    @staticmethod
    def _read(path: Path) -> str:
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        try:
            return path.read_text(encoding="utf-8")
        except Exception as e:
            logger.exception(f"Failed to read configuration file: {path}")
            raise ConfigError(f"Failed to read configuration file {path}: {e}")

    def _load_yaml(self, path: Path) -> Dict[str, Any]:
        text = self._read(path)
        try:
            return yaml.safe_load(text) or {}
        except Exception as e:
            logger.exception(f"Failed to load YAML file: {path}")
            raise ConfigError(f"Failed to load configuration file {path}: {e}")


def load_base_settings(base_config_path: str = str(DEFAULT_BASE_CONFIG)) -> Dict[str, Any]:
    """
    Top-level settings of the base config (logging, artifacts, durations),
    without the per-kind defaults.

    Raises:
        ConfigError: If the file is missing or not valid YAML.
    """
    loader = ConfigLoader(base_config_path=base_config_path)
    base = loader._load_yaml(loader.base_config_path)
    return {key: value for key, value in base.items() if key != "defaults"}
