"""Experiment configuration: YAML schema, strict validation, overrides.

Unknown keys are rejected rather than ignored; silent typos in experiment
configs are the main reproducibility hazard this guards against.
"""

from __future__ import annotations

import copy

import yaml

from .errors import ConfigError

METHODS = ("ce-lora", "fedavg-lora", "ffa-lora", "local-only")
ATTACK_SURFACES = ("full_lora", "ffa", "c_only")

_REQUIRED = object()


def _num(lo=None, strict=False):
    def check(v, path):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {v!r}")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ConfigError(f"{path}: must be {'>' if strict else '>='} {lo}")
        return float(v)

    return check


def _int(lo=None):
    def check(v, path):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{path}: expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(f"{path}: must be >= {lo}")
        return v

    return check


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected a boolean, got {v!r}")
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _choice(options):
    def check(v, path):
        if v not in options:
            raise ConfigError(f"{path}: must be one of {options}, got {v!r}")
        return v

    return check


def _str_or_int(v, path):
    if isinstance(v, bool) or not isinstance(v, (str, int)):
        raise ConfigError(f"{path}: expected a string or integer, got {v!r}")
    return v


def _opt_num(v, path):
    if v is None:
        return None
    return _num(0, strict=True)(v, path)


def _list_of(check):
    def inner(v, path):
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{path}: expected a non-empty list")
        return [check(item, f"{path}[{i}]") for i, item in enumerate(v)]

    return inner


# Each entry: key -> (validator-or-subschema, default). _REQUIRED marks
# fields that must be present.
SCHEMA = {
    "seed": (_int(0), _REQUIRED),
    "method": (_choice(METHODS), "ce-lora"),
    "dataset": (
        {
            "kind": (_choice(("synth", "csv")), "synth"),
            "classes": (_int(2), 4),
            "samples": (_int(1), 500),
            "raw_dim": (_int(1), 10),
            "sep": (_num(0), 6.0),
            "noise": (_num(0), 1.0),
            "path": (_str, None),
            "label_column": (_str_or_int, "label"),
            "has_header": (_bool, True),
        },
        _REQUIRED,
    ),
    "partition": (
        {
            "clients": (_int(1), _REQUIRED),
            "alpha": (_num(0, strict=True), 0.5),
            "min_samples_per_client": (_int(1), 2),
            "eval_fraction": (_num(0), 0.25),
        },
        _REQUIRED,
    ),
    "model": (
        {
            "feature_dim": (_int(2), 16),
            "layers": (_int(1), 1),
            "rank": (_int(1), _REQUIRED),
        },
        _REQUIRED,
    ),
    "train": (
        {
            "rounds": (_int(0), _REQUIRED),
            "epochs_per_round": (_int(0), 1),
            "batch_size": (_int(1), 32),
            "learning_rate": (_num(0), 0.05),
        },
        _REQUIRED,
    ),
    "similarity": (
        {
            "gmm_components": (_int(1), 3),
            "n_probe": (_int(2), 256),
            "sigma": (_opt_num, None),  # None: median off-diagonal cost
            "sinkhorn_eps_scale": (_num(0, strict=True), 0.05),
            "model_coeff": (_num(0), 1.0),
            "include_self": (_bool, False),
        },
        {},
    ),
    "comm_shape": (
        {
            # Overrides for communication accounting; fall back to the
            # model section (d = k = feature_dim) when omitted.
            "layers": (_int(1), None),
            "d": (_int(1), None),
            "k": (_int(1), None),
            "rank": (_int(1), None),
        },
        {},
    ),
    "attack": (
        {
            "surfaces": (_list_of(_choice(ATTACK_SURFACES)), list(ATTACK_SURFACES)),
            "batch_sizes": (_list_of(_int(1)), [1]),
            "steps": (_int(1), 200),
            "attack_lr": (_num(0, strict=True), 0.5),
            "restarts": (_int(1), 2),
            "seeds": (_int(1), 3),
            "d": (_int(2), 8),
            "k": (_int(2), 2),
            "rank": (_int(1), 2),
        },
        {},
    ),
    "output": (
        {
            "dir": (_str, "out"),
            "checkpoint_every": (_int(0), 0),  # 0 disables checkpoints
        },
        {},
    ),
}


def _validate_section(obj, schema, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    out = {}
    for key in obj:
        if key not in schema:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    for key, (check, default) in schema.items():
        kpath = f"{path}.{key}" if path else key
        if key in obj:
            value = obj[key]
            if isinstance(check, dict):
                out[key] = _validate_section(value, check, kpath)
            elif value is None and default is None:
                out[key] = None
            else:
                out[key] = check(value, kpath)
        elif default is _REQUIRED:
            raise ConfigError(f"{kpath}: required field is missing")
        elif isinstance(check, dict):
            out[key] = _validate_section({}, check, kpath)
        else:
            out[key] = default
    return out


def validate(raw: dict) -> dict:
    """Validate a raw config mapping; returns the effective config with
    all defaults filled in."""
    cfg = _validate_section(raw, SCHEMA, "")
    if cfg["dataset"]["kind"] == "csv" and not cfg["dataset"]["path"]:
        raise ConfigError("dataset.path: required when dataset.kind is 'csv'")
    return cfg


def load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if raw is None:
        raw = {}
    return validate(raw)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply repeatable ``key.path=value`` overrides and re-validate."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw_value = item.partition("=")
        value = yaml.safe_load(raw_value)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"override {key!r}: unknown section {part!r}")
            node = node[part]
        node[parts[-1]] = value
    return validate(cfg)


def dump(cfg: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def comm_shape_config(cfg: dict):
    """Resolve the accounting shape from comm_shape with model fallbacks."""
    from .adapter import ModelShapeConfig

    cs = cfg["comm_shape"]
    model = cfg["model"]
    return ModelShapeConfig(
        num_adapted_matrices=cs["layers"] or model["layers"],
        d_per_matrix=cs["d"] or model["feature_dim"],
        k_per_matrix=cs["k"] or model["feature_dim"],
        r=cs["rank"] or model["rank"],
    )
