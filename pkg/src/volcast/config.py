"""Experiment configuration: defaults, profiles, INI files, and overrides.

Settings resolve in four layers, each overriding the last: built-in
defaults, the selected profile ("paper" mirrors the reference protocol,
"desk" shrinks the network and data span so full runs finish in
minutes), the user's INI file, and explicit command-line overrides.

The [sweep] section lists sensitivity scenarios as single-parameter
overrides, e.g. ``loss_mae = network.loss=mae``.  A config without a
[sweep] section inherits the default seven scenarios; an explicitly
empty [sweep] section disables them.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import DataError
from .neural import NetworkConfig
from .pipeline import ModelVariant, WalkForwardConfig

__all__ = [
    "DEFAULTS",
    "PROFILES",
    "DEFAULT_SWEEP",
    "ExperimentConfig",
    "load_config",
    "resolve_sections",
]

DEFAULTS = {
    "data": {"sp500": "", "vix": "", "max_rows": "0"},
    "model": {"variant": "lstm-garch", "return_kind": "log", "lookback": "22"},
    "walkforward": {
        "initial_train": "3024",
        "initial_val": "756",
        "refit_stride": "252",
        "garch_refit_stride": "1",
        "garch_min_history": "252",
        "garch_p": "1",
        "garch_q": "1",
    },
    "network": {
        "layers": "2",
        "neurons": "128",
        "activation": "tanh",
        "dropout": "0.1",
        "recurrent_dropout": "0.1",
        "learning_rate": "0.001",
        "loss": "mse",
        "epochs": "100",
        "batch_size": "64",
        "patience": "10",
    },
    "tuner": {"trials": "50", "executions_per_trial": "3"},
    "explain": {"num_samples": "5000", "num_features": "10"},
    "run": {"seed": "0"},
}

PROFILES = {
    "paper": {},
    "desk": {
        # 4276 rows of the bundled snapshots span 2000-01-03..2016-12-30
        "data": {"max_rows": "4276"},
        "walkforward": {
            "initial_train": "1008",
            "initial_val": "252",
            "garch_refit_stride": "21",
        },
        "network": {"neurons": "16", "epochs": "20", "patience": "5"},
        "tuner": {"trials": "5", "executions_per_trial": "1"},
        "explain": {"num_samples": "1000"},
    },
}

# the reference sensitivity grid: each scenario changes exactly one knob
DEFAULT_SWEEP = (
    ("loss_mae", "network.loss", "mae"),
    ("input_pct", "model.return_kind", "pct"),
    ("lookback_5", "model.lookback", "5"),
    ("lookback_66", "model.lookback", "66"),
    ("layers_1", "network.layers", "1"),
    ("layers_3", "network.layers", "3"),
    ("activation_relu", "network.activation", "relu"),
)

_VALID_VARIANTS = {v.value for v in ModelVariant}


def resolve_sections(path=None, profile: str = "paper", overrides=None):
    """Merge defaults, profile, file, and flag overrides into string maps.

    ``overrides`` maps dotted keys ("run.seed") to replacement strings.
    Returns (sections, sweep) where sweep is a tuple of
    (scenario name, dotted key, value) entries.
    """
    if profile not in PROFILES:
        raise DataError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    sections = {name: dict(keys) for name, keys in DEFAULTS.items()}
    for name, keys in PROFILES[profile].items():
        sections[name].update(keys)

    sweep = DEFAULT_SWEEP
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise DataError(f"cannot read config file {path}")
        for name in parser.sections():
            if name == "sweep":
                sweep = tuple(
                    _parse_sweep_entry(entry, parser["sweep"][entry])
                    for entry in parser["sweep"]
                )
                continue
            if name not in sections:
                raise DataError(f"unknown config section [{name}]")
            for key, value in parser[name].items():
                if key not in sections[name]:
                    raise DataError(f"unknown config key {name}.{key}")
                sections[name][key] = value
    for dotted, value in (overrides or {}).items():
        section, key = _split_key(dotted)
        if section not in sections or key not in sections[section]:
            raise DataError(f"unknown config key {dotted}")
        sections[section][key] = str(value)
    return sections, sweep


def _split_key(dotted: str):
    if dotted.count(".") != 1:
        raise DataError(f"config keys are section.key, got {dotted!r}")
    return dotted.split(".", 1)


def _parse_sweep_entry(name: str, spec: str):
    """A sweep entry is one 'section.key=value' assignment."""
    if spec.count("=") != 1:
        raise DataError(
            f"sweep scenario {name!r} must override exactly one parameter"
        )
    dotted, value = (part.strip() for part in spec.split("="))
    section, key = _split_key(dotted)
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise DataError(f"sweep scenario {name!r} targets unknown key {dotted}")
    if section == "data" or dotted == "run.seed":
        raise DataError(f"sweep scenario {name!r} may not override {dotted}")
    return (name, dotted, value)


def _to_int(sections, section, key, minimum=None):
    raw = sections[section][key]
    try:
        value = int(raw)
    except ValueError:
        raise DataError(f"{section}.{key} must be an integer, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise DataError(f"{section}.{key} must be >= {minimum}, got {value}")
    return value


def _to_float(sections, section, key):
    raw = sections[section][key]
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"{section}.{key} must be a number, got {raw!r}") from None


def _choice(sections, section, key, allowed):
    value = sections[section][key]
    if value not in allowed:
        raise DataError(
            f"{section}.{key} must be one of {sorted(allowed)}, got {value!r}"
        )
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved, typed experiment settings.

    ``sections`` keeps the resolved raw strings for manifests and sweep
    diffs; the typed fields are what the commands consume.
    """

    sections: dict
    sweep: tuple
    sp500: str
    vix: str
    max_rows: int
    variant: ModelVariant
    return_kind: str
    lookback: int
    walkforward: WalkForwardConfig
    garch_min_history: int
    layers: int
    neurons: int
    activation: str
    dropout: float
    recurrent_dropout: float
    learning_rate: float
    loss: str
    epochs: int
    batch_size: int
    patience: int
    trials: int
    executions_per_trial: int
    explain_samples: int
    explain_features: int
    seed: int

    def network_config(self, input_size: int) -> NetworkConfig:
        return NetworkConfig(
            input_size=input_size,
            hidden_sizes=(self.neurons,) * self.layers,
            activations=(self.activation,) * self.layers,
            dropout=(self.dropout,) * self.layers,
            recurrent_dropout=self.recurrent_dropout,
            learning_rate=self.learning_rate,
            loss=self.loss,
            epochs=self.epochs,
            batch_size=self.batch_size,
            patience=self.patience,
            seed=self.seed,
        )

    def manifest_entries(self) -> dict:
        return {
            f"config.{section}.{key}": value
            for section, keys in sorted(self.sections.items())
            for key, value in sorted(keys.items())
        }

    def with_override(self, dotted: str, value: str) -> "ExperimentConfig":
        """A copy with one dotted key replaced (the sweep primitive)."""
        section, key = _split_key(dotted)
        if section not in self.sections or key not in self.sections[section]:
            raise DataError(f"unknown config key {dotted}")
        sections = {name: dict(keys) for name, keys in self.sections.items()}
        sections[section][key] = str(value)
        return _typed(sections, self.sweep)


def _typed(sections, sweep) -> ExperimentConfig:
    variant = ModelVariant(_choice(sections, "model", "variant", _VALID_VARIANTS))
    dropout = _to_float(sections, "network", "dropout")
    recurrent = _to_float(sections, "network", "recurrent_dropout")
    for name, rate in (("dropout", dropout), ("recurrent_dropout", recurrent)):
        if not 0.0 <= rate < 1.0:
            raise DataError(f"network.{name} must be in [0, 1), got {rate}")
    learning_rate = _to_float(sections, "network", "learning_rate")
    if learning_rate <= 0:
        raise DataError("network.learning_rate must be positive")
    wf = WalkForwardConfig(
        initial_train=_to_int(sections, "walkforward", "initial_train", 1),
        initial_val=_to_int(sections, "walkforward", "initial_val", 1),
        refit_stride=_to_int(sections, "walkforward", "refit_stride", 1),
        garch_refit_stride=_to_int(sections, "walkforward", "garch_refit_stride", 1),
        garch_order=(
            _to_int(sections, "walkforward", "garch_p", 0),
            _to_int(sections, "walkforward", "garch_q", 0),
        ),
    )
    return ExperimentConfig(
        sections=sections,
        sweep=tuple(sweep),
        sp500=sections["data"]["sp500"],
        vix=sections["data"]["vix"],
        max_rows=_to_int(sections, "data", "max_rows", 0),
        variant=variant,
        return_kind=_choice(sections, "model", "return_kind", {"log", "pct"}),
        lookback=_to_int(sections, "model", "lookback", 1),
        walkforward=wf,
        garch_min_history=_to_int(sections, "walkforward", "garch_min_history", 50),
        layers=_to_int(sections, "network", "layers", 1),
        neurons=_to_int(sections, "network", "neurons", 1),
        activation=_choice(sections, "network", "activation", {"tanh", "relu"}),
        dropout=dropout,
        recurrent_dropout=recurrent,
        learning_rate=learning_rate,
        loss=_choice(sections, "network", "loss", {"mse", "mae"}),
        epochs=_to_int(sections, "network", "epochs", 1),
        batch_size=_to_int(sections, "network", "batch_size", 1),
        patience=_to_int(sections, "network", "patience", 0),
        trials=_to_int(sections, "tuner", "trials", 1),
        executions_per_trial=_to_int(sections, "tuner", "executions_per_trial", 1),
        explain_samples=_to_int(sections, "explain", "num_samples", 10),
        explain_features=_to_int(sections, "explain", "num_features", 1),
        seed=_to_int(sections, "run", "seed"),
    )


def load_config(path=None, profile: str = "paper", overrides=None) -> ExperimentConfig:
    """Resolve all four layers and return the typed configuration."""
    sections, sweep = resolve_sections(path=path, profile=profile, overrides=overrides)
    return _typed(sections, sweep)
