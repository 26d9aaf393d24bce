"""
Settings Manager Module

This module contains the SettingsManager class responsible for turning
experiment documents (JSON) into validated HyperParams and ExperimentConfig
objects, and for writing the resolved configuration back next to the results.
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

from PySide6.QtCore import QObject, Signal

from constants import ATTACK_ALIASES, HYPERPARAMETER_DEFAULTS
from analysis.adversary import AttackSpec
from analysis.aggregation import AggregatorKind, AggregatorSpec
from analysis.client_models import ClientRole, HyperParams
from analysis.errors import ConfigError, FlareError, InvalidParameter, InvariantViolation, MissingField

logger = logging.getLogger(__name__)

SETTINGS_VERSION = "1.0"

SECTIONS = ("hyperparameters", "federation", "attack", "experiment")

AGGREGATOR_ALIASES = {
    "flare": AggregatorKind.FLARE,
    "fedavg": AggregatorKind.FEDAVG,
    "krum": AggregatorKind.KRUM,
    "trimmed_mean": AggregatorKind.TRIMMED_MEAN,
    "trimmed-mean": AggregatorKind.TRIMMED_MEAN,
    "trimmedmean": AggregatorKind.TRIMMED_MEAN,
}

SELECTION_MODES = ("reputation", "uniform")

DEFAULT_TRIM_FRACTION = 0.2

# Expected type of every field per section. Fields listed in OPTIONAL_FIELDS
# accept null; every other null is a missing value.
FIELD_TYPES = {
    "hyperparameters": {name: type(value) for name, value in HYPERPARAMETER_DEFAULTS.items()},
    "federation": {
        "n_clients": int,
        "samples_per_client": int,
        "dirichlet_alpha": float,
        "feature_dim": int,
        "class_separation": float,
        "test_samples": int,
        "label_noise": float,
        "dropout_prob": float,
        "selection": str,
    },
    "attack": {
        "name": str,
        "malicious_fraction": float,
        "params": dict,
    },
    "experiment": {
        "aggregator": str,
        "krum_f": int,
        "trim_fraction": float,
        "soft_exclusion": bool,
        "server_clipping": bool,
        "use_consistency": bool,
        "use_anomaly": bool,
        "use_temporal": bool,
        "multi_dimensional": bool,
        "adaptive_threshold": bool,
        "reputation_decay": bool,
        "pin_reputation": float,
        "ldp": bool,
        "clean_reference": bool,
        "output_dir": str,
        "run_id": str,
        "repetitions": int,
        "max_workers": int,
    },
}
OPTIONAL_FIELDS = {"selection", "pin_reputation", "run_id", "krum_f"}


def canonical_attack(name: str) -> str:
    """Map a user-facing attack name to "none", "all" or a role value."""
    key = str(name).strip().lower().replace("-", "_")
    if key in ("none", "all"):
        return key
    if key not in ATTACK_ALIASES:
        raise InvariantViolation("attack.name", f"one of none, all, {', '.join(sorted(ATTACK_ALIASES))}", name)
    return ATTACK_ALIASES[key]


def canonical_aggregator(name: str) -> AggregatorKind:
    key = str(name).strip().lower()
    if key not in AGGREGATOR_ALIASES:
        raise InvariantViolation("experiment.aggregator", f"one of {', '.join(AGGREGATOR_ALIASES)}", name)
    return AGGREGATOR_ALIASES[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one experiment needs, validated.

    Attributes:
        hp: Algorithm and training hyperparameters.
        attack: "none", "all" or a canonical role value.
        attack_params: Parameter overrides keyed by canonical role value.
        aggregator: Server aggregation rule.
        selection: Cohort sampling law; None picks reputation for FLARE and
            uniform for the baselines.
        pin_reputation: When set, every client keeps this reputation and no
            scoring, threshold adaptation or evolution takes place.
        use_consistency, use_anomaly, use_temporal: Ablation switches for the
            three evidence dimensions.
        multi_dimensional: False reduces the reputation to the anomaly score.
        adaptive_threshold: False keeps the threshold at theta_base.
        reputation_decay: False leaves flagged clients' reputation unchanged.
    """

    hp: HyperParams = field(default_factory=HyperParams)
    n_clients: int = 100
    samples_per_client: int = 200
    dirichlet_alpha: float = 0.5
    feature_dim: int = 20
    class_separation: float = 4.0
    test_samples: int = 2000
    label_noise: float = 0.0
    dropout_prob: float = 0.0
    selection: Optional[str] = None
    malicious_fraction: float = 0.0
    attack: str = "none"
    attack_params: Dict[str, dict] = field(default_factory=dict)
    aggregator: AggregatorSpec = field(default_factory=lambda: AggregatorSpec(trim_fraction=DEFAULT_TRIM_FRACTION))
    soft_exclusion: bool = True
    server_clipping: bool = True
    use_consistency: bool = True
    use_anomaly: bool = True
    use_temporal: bool = True
    multi_dimensional: bool = True
    adaptive_threshold: bool = True
    reputation_decay: bool = True
    pin_reputation: Optional[float] = None
    ldp: bool = True
    clean_reference: bool = True
    output_dir: str = "results"
    run_id: Optional[str] = None
    repetitions: int = 1
    max_workers: int = 1

    def __post_init__(self):
        _require("federation.n_clients", self.n_clients >= 1, ">= 1", self.n_clients)
        _require("hyperparameters.cohort_size", self.hp.cohort_size <= self.n_clients,
                 "<= n_clients", self.hp.cohort_size)
        _require("federation.samples_per_client", self.samples_per_client >= 1, ">= 1", self.samples_per_client)
        _require("federation.dirichlet_alpha", self.dirichlet_alpha > 0.0, "> 0", self.dirichlet_alpha)
        _require("federation.feature_dim", self.feature_dim >= 10, ">= 10", self.feature_dim)
        _require("federation.class_separation", self.class_separation >= math.sqrt(2.0),
                 ">= sqrt(2)", self.class_separation)
        _require("federation.test_samples", self.test_samples >= 1, ">= 1", self.test_samples)
        _require("federation.label_noise", 0.0 <= self.label_noise < 1.0, "0 <= value < 1", self.label_noise)
        _require("federation.dropout_prob", 0.0 <= self.dropout_prob < 1.0, "0 <= value < 1", self.dropout_prob)
        _require("federation.selection", self.selection in (None,) + SELECTION_MODES,
                 f"one of {', '.join(SELECTION_MODES)}", self.selection)
        _require("attack.malicious_fraction", 0.0 <= self.malicious_fraction < 0.5,
                 "0 <= value < 0.5", self.malicious_fraction)
        _require("experiment.pin_reputation",
                 self.pin_reputation is None or 0.0 <= self.pin_reputation <= 1.0,
                 "0 <= value <= 1", self.pin_reputation)
        _require("experiment.use_anomaly", any(self.scored_dimensions),
                 "at least one of use_consistency, use_anomaly, use_temporal", False)
        _require("experiment.repetitions", self.repetitions >= 1, ">= 1", self.repetitions)
        _require("experiment.max_workers", self.max_workers >= 1, ">= 1", self.max_workers)
        try:
            self.aggregator.check_cohort(self.hp.cohort_size)
        except FlareError as e:
            raise InvariantViolation("experiment.aggregator", str(e), self.aggregator.name) from e

    @property
    def scored_dimensions(self) -> Tuple[bool, bool, bool]:
        """Which of r1, r2, r3 enter the composite score; a single score keeps r2 alone."""
        if not self.multi_dimensional:
            return (False, True, False)
        return (self.use_consistency, self.use_anomaly, self.use_temporal)

    @property
    def resolved_selection(self) -> str:
        if self.selection is not None:
            return self.selection
        return "reputation" if self.aggregator.kind is AggregatorKind.FLARE else "uniform"

    @property
    def n_malicious(self) -> int:
        return int(round(self.malicious_fraction * self.n_clients))

    @property
    def attacked(self) -> bool:
        return self.attack != "none" and self.n_malicious > 0

    def attack_spec(self, role: ClientRole, direction=None) -> AttackSpec:
        """Attack specification of a role with this experiment's overrides."""
        return AttackSpec.from_dict(role, self.attack_params.get(role.value), self.hp.rounds, direction)

    def clean(self) -> "ExperimentConfig":
        """The same experiment without attackers, used as the clean reference."""
        return replace(self, malicious_fraction=0.0, attack="none", clean_reference=False)

    def to_document(self) -> Dict[str, Any]:
        """Resolved configuration as an experiment document."""
        return {
            "version": SETTINGS_VERSION,
            "hyperparameters": self.hp.to_dict(),
            "federation": {
                "n_clients": self.n_clients,
                "samples_per_client": self.samples_per_client,
                "dirichlet_alpha": self.dirichlet_alpha,
                "feature_dim": self.feature_dim,
                "class_separation": self.class_separation,
                "test_samples": self.test_samples,
                "label_noise": self.label_noise,
                "dropout_prob": self.dropout_prob,
                "selection": self.resolved_selection,
            },
            "attack": {
                "name": self.attack,
                "malicious_fraction": self.malicious_fraction,
                "params": copy.deepcopy(self.attack_params),
            },
            "experiment": {
                "aggregator": self.aggregator.name,
                "krum_f": self.aggregator.f,
                "trim_fraction": self.aggregator.trim_fraction,
                "soft_exclusion": self.soft_exclusion,
                "server_clipping": self.server_clipping,
                "use_consistency": self.use_consistency,
                "use_anomaly": self.use_anomaly,
                "use_temporal": self.use_temporal,
                "multi_dimensional": self.multi_dimensional,
                "adaptive_threshold": self.adaptive_threshold,
                "reputation_decay": self.reputation_decay,
                "pin_reputation": self.pin_reputation,
                "ldp": self.ldp,
                "clean_reference": self.clean_reference,
                "output_dir": self.output_dir,
                "run_id": self.run_id,
                "repetitions": self.repetitions,
                "max_workers": self.max_workers,
            },
        }


def _require(field_name: str, condition: bool, bound: str, value):
    if not condition:
        raise InvariantViolation(field_name, bound, value)


def _coerce(path: str, value, expected: type):
    """Convert a document value to the expected type or raise InvariantViolation."""
    if expected is bool:
        if isinstance(value, bool):
            return value
        raise InvariantViolation(path, "a boolean", value)
    if expected is int:
        if isinstance(value, bool):
            raise InvariantViolation(path, "an integer", value)
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise InvariantViolation(path, "an integer", value)
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvariantViolation(path, "a number", value)
        if not math.isfinite(value):
            raise InvariantViolation(path, "a finite number", value)
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise InvariantViolation(path, "a string", value)
        return value
    if expected is dict:
        if not isinstance(value, dict):
            raise InvariantViolation(path, "a mapping", value)
        return value
    return value


def _split_sections(raw: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Normalize a sectioned or flat document into one mapping per section."""
    if not isinstance(raw, dict):
        raise InvariantViolation("document", "a JSON object", type(raw).__name__)
    sections = {name: {} for name in SECTIONS}
    for key, value in raw.items():
        if key in SECTIONS:
            if value is None:
                raise MissingField(key)
            if not isinstance(value, dict):
                raise InvariantViolation(key, "a mapping", value)
            sections[key].update(value)
        elif key == "version":
            continue
        elif key in FIELD_TYPES["hyperparameters"]:
            sections["hyperparameters"][key] = value
        else:
            logger.warning("⚠️ Ignoring unknown configuration key '%s'", key)
    return sections


def _section_values(section: str, values: Dict[str, Any]) -> Dict[str, Any]:
    types = FIELD_TYPES[section]
    resolved = {}
    for key, value in values.items():
        path = f"{section}.{key}"
        if key not in types:
            logger.warning("⚠️ Ignoring unknown configuration key '%s'", path)
            continue
        if value is None:
            if key in OPTIONAL_FIELDS:
                resolved[key] = None
                continue
            raise MissingField(path)
        resolved[key] = _coerce(path, value, types[key])
    return resolved


def default_krum_f(malicious_fraction: float, cohort_size: int) -> int:
    """Expected attackers per cohort, at least 1 and at most cohort_size - 3."""
    return max(0, min(max(1, round(malicious_fraction * cohort_size)), cohort_size - 3))


def validate_config(raw_config: Dict[str, Any]) -> HyperParams:
    """
    Validate the hyperparameters of an experiment document.

    Args:
        raw_config (dict): Parsed document, sectioned or flat.

    Returns:
        HyperParams: Defaults for omitted keys, document values otherwise.

    Raises:
        MissingField: If a key is present with a null value.
        InvariantViolation: If a value has the wrong type or breaks a bound.
    """
    values = _section_values("hyperparameters", _split_sections(raw_config)["hyperparameters"])
    if "lambda" in values:
        values["lambda_"] = values.pop("lambda")
    return HyperParams(**values)


def build_experiment_config(raw_config: Dict[str, Any]) -> ExperimentConfig:
    """
    Build the full experiment configuration from a document.

    Args:
        raw_config (dict): Parsed document, sectioned or flat.

    Returns:
        ExperimentConfig: The validated configuration.

    Raises:
        ConfigError: On any missing, mistyped or out-of-range value.
    """
    hp = validate_config(raw_config)
    sections = _split_sections(raw_config)
    federation = _section_values("federation", sections["federation"])
    attack = _section_values("attack", sections["attack"])
    experiment = _section_values("experiment", sections["experiment"])

    attack_name = canonical_attack(attack.get("name", "none"))
    malicious_fraction = attack.get("malicious_fraction", 0.0)
    attack_params = _attack_params(attack.get("params", {}), hp.rounds)

    kind = canonical_aggregator(experiment.pop("aggregator", "flare"))
    krum_f = experiment.pop("krum_f", None)
    if krum_f is None:
        krum_f = default_krum_f(malicious_fraction, hp.cohort_size)
    try:
        aggregator = AggregatorSpec(kind=kind, f=krum_f,
                                    trim_fraction=experiment.pop("trim_fraction", DEFAULT_TRIM_FRACTION))
    except InvalidParameter as e:
        raise InvariantViolation("experiment.aggregator", str(e), kind.value) from e

    return ExperimentConfig(hp=hp, malicious_fraction=malicious_fraction, attack=attack_name,
                            attack_params=attack_params, aggregator=aggregator,
                            **federation, **experiment)


def _attack_params(raw_params: Dict[str, Any], rounds: int) -> Dict[str, dict]:
    """Canonicalize per-attack parameter overrides and check them by building each spec."""
    params = {}
    for name, values in raw_params.items():
        role_value = canonical_attack(name)
        if role_value in ("none", "all"):
            raise InvariantViolation(f"attack.params.{name}", "a concrete attack name", name)
        if not isinstance(values, dict):
            raise InvariantViolation(f"attack.params.{name}", "a mapping", values)
        for key, value in values.items():
            if value is None:
                raise MissingField(f"attack.params.{name}.{key}")
        try:
            AttackSpec.from_dict(ClientRole(role_value), values, rounds)
        except FlareError as e:
            raise InvariantViolation(f"attack.params.{name}", str(e), values) from e
        params[role_value] = dict(values)
    return params


def apply_overrides(raw_config: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Return a copy of the document with command-line overrides applied.

    Args:
        raw_config (dict): Parsed document.
        overrides (dict): Dotted "section.key" paths to values; None values are skipped.

    Returns:
        dict: A sectioned document.
    """
    document = copy.deepcopy(_split_sections(raw_config))
    document["version"] = raw_config.get("version", SETTINGS_VERSION)
    for path, value in overrides.items():
        if value is None:
            continue
        section, key = path.split(".", 1)
        document[section][key] = value
    return document


class SettingsManager(QObject):
    """
    Manager for experiment documents.

    This class handles:
    - Loading experiment documents from JSON files
    - Merging them over the default settings and validating the result
    - Applying command-line overrides
    - Writing the resolved configuration next to the results
    """

    settings_loaded = Signal(dict)
    settings_saved = Signal(str)  # File path
    error_occurred = Signal(str)

    def __init__(self):
        """Initialize the settings manager with default configurations."""
        super().__init__()
        self.default_settings = ExperimentConfig().to_document()
        self.current_path: Optional[str] = None

    def get_default_settings(self) -> Dict[str, Any]:
        """
        Get a copy of the default settings.

        Returns:
            dict: Default experiment document.
        """
        return copy.deepcopy(self.default_settings)

    def load_file(self, path: Optional[str]) -> Dict[str, Any]:
        """
        Read an experiment document.

        Args:
            path (str or None): JSON file; None yields an empty document.

        Returns:
            dict: The parsed document.

        Raises:
            ConfigError: If the file cannot be read or parsed.
        """
        if path is None:
            logger.info("No configuration file given, using defaults")
            return {}
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            error_msg = f"❌ Error loading settings from {path}: {e}"
            logger.error(error_msg)
            self.error_occurred.emit(error_msg)
            raise ConfigError(error_msg) from e
        self.current_path = path
        logger.info("Settings loaded from: %s", path)
        return document

    def load_settings(self, path: Optional[str] = None,
                      overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """
        Load, merge and validate an experiment.

        Args:
            path (str, optional): Experiment document.
            overrides (dict, optional): Dotted-path overrides from the command line.

        Returns:
            ExperimentConfig: The validated configuration.

        Raises:
            ConfigError: On any invalid input; error_occurred is emitted first.
        """
        document = self.load_file(path)
        try:
            merged = apply_overrides(document, overrides or {})
            config = build_experiment_config(merged)
        except ConfigError as e:
            error_msg = f"❌ Invalid configuration: {e}"
            logger.error(error_msg)
            self.error_occurred.emit(error_msg)
            raise
        resolved = config.to_document()
        self.settings_loaded.emit(resolved)
        return config

    def save_settings(self, config: ExperimentConfig, path: str) -> str:
        """
        Write the resolved configuration.

        Args:
            config (ExperimentConfig): Configuration to echo.
            path (str): Destination JSON file.

        Returns:
            str: The path written.
        """
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(config.to_document(), f, indent=2, ensure_ascii=False)
        except OSError as e:
            error_msg = f"❌ Error saving settings: {e}"
            logger.error(error_msg)
            self.error_occurred.emit(error_msg)
            raise
        logger.debug("Settings saved to: %s", path)
        self.settings_saved.emit(path)
        return path
