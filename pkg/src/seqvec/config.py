"""Run configuration: TOML-style config files, defaults, and fingerprints.

A run config collects every knob that affects pipeline output. Its
fingerprint (sha256 of the canonical JSON serialization, excluding the
[paths] section, which locates artifacts without affecting their content) is
embedded in every artifact so mixed-provenance pipelines are refused.

The parser accepts the flat TOML subset the tool documents: ``[section]``
headers, ``key = value`` lines with quoted strings, integers, floats,
booleans, and one-level arrays, plus ``#`` comments.
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigError, MissingInputError, ParseError

# section -> key -> default (value type is the default's type; None = string)
SCHEMA: dict[str, dict] = {
    "global": {
        "seed": 42,
    },
    "paths": {
        "events": "events.tsv",
        "labels": "labels.tsv",
        "vocab": "vocab.tsv",
        "model": "model.sqv",
        "report": "report.json",
        "vectors": "vectors.tsv",
        "projection": "projection.json",
        "export_dir": "",
    },
    "gen": {
        "n_records": 5000,
        "history_days": 1000,
        "min_span_days": 350,
        "positive_fraction": 0.5,
        "background_rate": 0.35,
        "target_rate": 0.4,
        "onset_lo": 250,
        "onset_hi": 700,
        "marker_weight": 0.03,
        "marker_deferral_days": 75,
        "min_post_onset_days": 150,
        "background_blend": 0.6,
        "family_overlap": 0.02,
        "n_families": 9,
        "n_sub": 3,
        "n_leaf": 4,
    },
    "vocab": {
        "min_count": 250,
        "group_depth": 1,
    },
    "train": {
        "mode": "dbow",
        "objective": "hs",
        "k": 100,
        "window": 10,
        "epochs": 20,
        "initial_alpha": 0.025,
        "final_alpha": 1e-4,
        "num_negatives": 5,
        "workers": 1,
        "dbow_train_words": False,
    },
    "infer": {
        "epochs": 20,
    },
    "eval": {
        "task": "dx-onset",
        "horizon": 30,
        "folds": 5,
        "lambdas": [float(x) for x in (1e-4, 1e-3, 1e-2, 0.046, 0.22, 1.0)],
        "alphas": [0.2, 0.5, 0.8],
        "n_bins": 10,
        "min_dx_events": 10,
        "min_history_days": 180,
    },
    "trajectory": {
        "checkpoint_step": 100,
    },
}


def _parse_value(raw: str, line_no: int, path):
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(item, line_no, path) for item in inner.split(",")]
    if (raw.startswith('"') and raw.endswith('"')) or (
            raw.startswith("'") and raw.endswith("'")):
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"cannot parse value {raw!r}", line_no, path) from None


def parse_config_text(text: str, path=None) -> dict:
    out: dict[str, dict] = {}
    section = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ParseError(f"expected key = value, got {stripped!r}", line_no, path)
        if section is None:
            raise ParseError("key outside of any [section]", line_no, path)
        key, _, raw = stripped.partition("=")
        out[section][key.strip()] = _parse_value(raw, line_no, path)
    return out


def resolve_config(file_values: dict | None = None,
                   overrides: dict | None = None) -> dict:
    """Defaults < config file < explicit overrides; unknown keys are errors."""
    resolved = {sec: dict(keys) for sec, keys in SCHEMA.items()}

    def apply(source: dict, origin: str):
        for sec, keys in source.items():
            if sec not in resolved:
                raise ConfigError(f"{origin}: unknown config section [{sec}]")
            for key, value in keys.items():
                if key not in resolved[sec]:
                    raise ConfigError(f"{origin}: unknown key {sec}.{key}")
                default = SCHEMA[sec][key]
                if isinstance(default, bool):
                    if not isinstance(value, bool):
                        raise ConfigError(f"{origin}: {sec}.{key} must be a boolean")
                elif isinstance(default, int) and not isinstance(value, bool):
                    if isinstance(value, float) and value.is_integer():
                        value = int(value)
                    if not isinstance(value, int):
                        raise ConfigError(f"{origin}: {sec}.{key} must be an integer")
                elif isinstance(default, float):
                    if isinstance(value, bool) or not isinstance(value, (int, float)):
                        raise ConfigError(f"{origin}: {sec}.{key} must be a number")
                    value = float(value)
                elif isinstance(default, list):
                    if not isinstance(value, list):
                        raise ConfigError(f"{origin}: {sec}.{key} must be an array")
                    value = [float(v) for v in value]
                elif isinstance(default, str) and not isinstance(value, str):
                    raise ConfigError(f"{origin}: {sec}.{key} must be a string")
                resolved[sec][key] = value

    if file_values:
        apply(file_values, "config file")
    if overrides:
        apply(overrides, "flags")
    return resolved


def load_config(path=None, overrides: dict | None = None) -> dict:
    file_values = None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                file_values = parse_config_text(fh.read(), path)
        except FileNotFoundError:
            raise MissingInputError(f"config file not found: {path}") from None
    return resolve_config(file_values, overrides)


def fingerprint(config: dict) -> str:
    """sha256 over the canonical serialization, paths excluded."""
    payload = {sec: keys for sec, keys in sorted(config.items()) if sec != "paths"}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
