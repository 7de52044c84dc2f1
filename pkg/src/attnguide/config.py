"""Run configuration: JSON schema, validation and round-tripping.

A run config is one JSON object with three sections and an optional output
directory::

    {
      "model":    {"h": 16, "w": 16, "c": 4, "d": 8, "l": 8, "d_text": 16, "seed": 7},
      "guidance": {"tau": 0.5, "alpha": 20.0, "total_steps": 50,
                   "refine_at": [0, 10, 20], "refine_iters": 5,
                   "cutoff_step": 25, "seed": 0, "cross_timestep": true},
      "groups":   [{"subject": 1, "attributes": [2]},
                   {"subject": 4, "attributes": [5]}],
      "out_dir":  "runs/demo"
    }

Every section falls back to its defaults field by field; ``groups`` is
required. Validation failures name the offending field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .pairing import TokenGroup, TokenGroups
from .sampler import GuidanceConfig, ModelConfig


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    guidance: GuidanceConfig
    groups: TokenGroups
    out_dir: str | None = None


DEFAULT_GROUPS = TokenGroups((
    TokenGroup(subject=1, attributes=(2,)),
    TokenGroup(subject=4, attributes=(5,)),
))


def default_config(groups: TokenGroups = DEFAULT_GROUPS, **guidance_overrides) -> RunConfig:
    return RunConfig(
        model=ModelConfig(),
        guidance=GuidanceConfig(**guidance_overrides),
        groups=groups,
    )


def _check_int(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{field}: expected an integer, got {value!r}")
    return value


def _check_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{field}: expected a number, got {value!r}")
    return float(value)


def _parse_section(data: dict, name: str) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{name}: expected an object")
    return section

def _parse_groups(data: dict) -> TokenGroups:
    if "groups" not in data:
        raise ConfigError("groups: required field is missing")
    raw = data["groups"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("groups: expected a non-empty list of group objects")
    groups = []
    for pos, entry in enumerate(raw):
        if not isinstance(entry, dict) or "subject" not in entry:
            raise ConfigError(f"groups[{pos}]: each group needs a 'subject' token index")
        subject = _check_int(entry["subject"], f"groups[{pos}].subject")
        attrs = entry.get("attributes", [])
        if not isinstance(attrs, list):
            raise ConfigError(f"groups[{pos}].attributes: expected a list")
        attributes = tuple(
            _check_int(a, f"groups[{pos}].attributes[{k}]") for k, a in enumerate(attrs)
        )
        groups.append(TokenGroup(subject=subject, attributes=attributes))
    return TokenGroups(tuple(groups))


def parse_config(data: dict) -> RunConfig:
    """Build a validated :class:`RunConfig` from a plain JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    known = {"model", "guidance", "groups", "out_dir"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level field")

    model_raw = _parse_section(data, "model")
    model_kwargs = {}
    for field in ("h", "w", "c", "d", "l", "d_text", "seed"):
        if field in model_raw:
            model_kwargs[field] = _check_int(model_raw[field], f"model.{field}")
    for key in model_raw:
        if key not in ("h", "w", "c", "d", "l", "d_text", "seed"):
            raise ConfigError(f"model.{key}: unknown field")

    guidance_raw = _parse_section(data, "guidance")
    guidance_kwargs = {}
    for field in ("tau", "alpha"):
        if field in guidance_raw:
            guidance_kwargs[field] = _check_number(guidance_raw[field], f"guidance.{field}")
    for field in ("total_steps", "refine_iters", "cutoff_step", "seed"):
        if field in guidance_raw:
            guidance_kwargs[field] = _check_int(guidance_raw[field], f"guidance.{field}")
    if "refine_at" in guidance_raw:
        raw_refine = guidance_raw["refine_at"]
        if not isinstance(raw_refine, list):
            raise ConfigError("guidance.refine_at: expected a list of step indices")
        guidance_kwargs["refine_at"] = frozenset(
            _check_int(v, f"guidance.refine_at[{k}]") for k, v in enumerate(raw_refine)
        )
    if "cross_timestep" in guidance_raw:
        if not isinstance(guidance_raw["cross_timestep"], bool):
            raise ConfigError("guidance.cross_timestep: expected a boolean")
        guidance_kwargs["cross_timestep"] = guidance_raw["cross_timestep"]
    known_guidance = {"tau", "alpha", "total_steps", "refine_iters", "cutoff_step",
                      "seed", "refine_at", "cross_timestep"}
    for key in guidance_raw:
        if key not in known_guidance:
            raise ConfigError(f"guidance.{key}: unknown field")

    out_dir = data.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("out_dir: expected a string path")

    model = ModelConfig(**model_kwargs)
    guidance = GuidanceConfig(**guidance_kwargs)
    groups = _parse_groups(data)
    groups.validate_token_range(model.l)
    return RunConfig(model=model, guidance=guidance, groups=groups, out_dir=out_dir)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"config: cannot read {path}: {err}") from err
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config: {path} is not valid JSON: {err}") from err
    return parse_config(data)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-JSON form of a config; parsing it back gives an equal config."""
    out = {
        "model": dataclasses.asdict(cfg.model),
        "guidance": {
            "tau": cfg.guidance.tau,
            "alpha": cfg.guidance.alpha,
            "total_steps": cfg.guidance.total_steps,
            "refine_at": sorted(cfg.guidance.refine_at),
            "refine_iters": cfg.guidance.refine_iters,
            "cutoff_step": cfg.guidance.cutoff_step,
            "seed": cfg.guidance.seed,
            "cross_timestep": cfg.guidance.cross_timestep,
        },
        "groups": [
            {"subject": g.subject, "attributes": list(g.attributes)}
            for g in cfg.groups
        ],
    }
    if cfg.out_dir is not None:
        out["out_dir"] = cfg.out_dir
    return out


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
