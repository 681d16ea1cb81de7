"""Run configuration: one defaults table, a key = value config file
format, and flag overrides (flags win over the file, the file wins over
defaults).

Config files are plain text: one ``key = value`` per line, ``#`` starts
a comment. Booleans are true/false, lists are comma separated, and a
fraction grid may also be written start:stop:step (inclusive).
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Bad config file or option value."""


DEFAULTS = {
    # pipeline
    "seed": 0,
    "threads": 1,
    "cube_format": "flat-f32",
    "label_format": "pgm",
    "exclude_bands": [],
    # splits
    "samples_per_class": 15,
    "validation_samples": 50,
    "per_class_validation": False,
    # mlr
    "lambda_w": 0.001,
    "mlr_max_iter": 500,
    "mlr_tol": 1e-6,
    "feature_kind": "rbf",
    "rbf_gamma": 0.0,  # 0 = median heuristic
    # solver
    "lambda_tv": 2.0,
    "mu": 1.0,
    "solver_max_iter": 200,
    "tol_primal": 1e-4,
    # rejection
    "grid": "0:0.5:0.01",
    "fraction": 0.1,
    "rstar_from": "validation",
    # synth scene
    "synth_height": 64,
    "synth_width": 64,
    "synth_k": 4,
    "synth_bands": 20,
    "noise_sigma": 0.3,
    "region_kind": "blocks",
}


def _parse_scalar(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip()]
    return _parse_scalar(text)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(value)
    return values


def resolve(config_path=None, overrides: dict | None = None) -> dict:
    """defaults <- config file <- non-None overrides."""
    cfg = dict(DEFAULTS)
    if config_path is not None:
        cfg.update(load_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in DEFAULTS:
                raise ConfigError(f"unknown option {key!r}")
            cfg[key] = value
    return cfg


def parse_grid(spec) -> list[float]:
    """Fraction grid from a list, comma string, or start:stop:step string."""
    if isinstance(spec, (list, tuple)):
        grid = [float(v) for v in spec]
    elif isinstance(spec, str) and ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad grid range {spec!r} (want start:stop:step)")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"bad grid range {spec!r}")
        count = int(round((stop - start) / step)) + 1
        grid = [round(start + i * step, 10) for i in range(count)]
        grid = [g for g in grid if g <= stop + 1e-12]
    elif isinstance(spec, str):
        grid = [float(v) for v in spec.split(",") if v.strip()]
    else:
        grid = [float(spec)]
    if any(not 0.0 <= g <= 1.0 for g in grid) or sorted(grid) != grid:
        raise ConfigError("grid must be sorted fractions in [0, 1]")
    return grid


def parse_band_list(spec) -> list[int]:
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    if spec in ("", None):
        return []
    if isinstance(spec, str):
        return [int(v) for v in spec.split(",") if v.strip()]
    return [int(spec)]
