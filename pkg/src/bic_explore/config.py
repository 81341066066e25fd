"""TOML/JSON experiment configuration: priors, algorithms and audit settings."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import tomli

from .model import BERNOULLI, POINTMASS, RewardFamily
from .priors import (BetaBernoulli, BoundedGrid, GaussianConjugate, IndependentPrior, PointMassPrior,
                     offset_prior)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomli.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}: missing field '{key}'")
    return block[key]


def _family(spec: dict, where: str, default: RewardFamily = BERNOULLI) -> RewardFamily:
    kind = spec.get("family", default.kind)
    try:
        return RewardFamily(kind, float(spec.get("noise_var", 1.0)))
    except ValueError as e:
        raise ConfigError(f"{where}.family: {e}") from None


def arm_from_config(spec: dict, where: str = "arm"):
    kind = _need(spec, "kind", where)
    try:
        if kind == "gaussian":
            return GaussianConjugate(float(_need(spec, "mean", where)), float(_need(spec, "var", where)),
                                     float(spec.get("noise_var", 1.0)))
        if kind == "beta":
            return BetaBernoulli(float(spec.get("alpha", 1.0)), float(spec.get("beta", 1.0)))
        if kind == "grid":
            fam = _family(spec, where)
            shape = spec.get("shape", "uniform")
            res = int(spec.get("resolution", 1000))
            if shape == "uniform":
                return BoundedGrid.uniform(res, fam)
            if shape == "truncnorm":
                return BoundedGrid.truncated_normal(float(_need(spec, "mean", where)),
                                                    float(_need(spec, "sd", where)), res, fam)
            if shape == "points":
                return BoundedGrid(_need(spec, "points", where), _need(spec, "weights", where), fam)
            raise ConfigError(f"{where}.shape: unknown grid shape {shape!r}")
        if kind == "pointmass":
            return PointMassPrior(float(_need(spec, "value", where)), _family(spec, where, POINTMASS))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}.kind: unknown prior kind {kind!r}")


def prior_from_config(block: dict | None):
    """Build a PriorModel from a ``[prior]`` block."""
    if not block:
        raise ConfigError("prior: missing block")
    if "joint" in block:
        name = block["joint"]
        if name != "offset":
            raise ConfigError(f"prior.joint: unknown joint prior {name!r}")
        return offset_prior(float(block.get("offset", 0.2)), float(block.get("low", 0.2)),
                            float(block.get("high", 1.0)), _family(block, "prior"),
                            n_draws=int(block.get("n_draws", 20000)))
    arms = _need(block, "arms", "prior")
    if not isinstance(arms, list) or len(arms) < 2:
        raise ConfigError("prior.arms: expected a list of at least two arm blocks")
    parsed = [arm_from_config(a, f"prior.arms[{i}]") for i, a in enumerate(arms)]
    try:
        return IndependentPrior(parsed, allow_unordered=bool(block.get("allow_unordered", False)))
    except ValueError as e:
        raise ConfigError(f"prior.arms: {e}") from None


def contextual_prior_from_config(block: dict | None):
    from .baselines import second_draw_feedback
    from .contextual import ContextSpace, ContextualPrior, offset_contextual_prior

    if not block:
        raise ConfigError("prior: missing block")
    probs = _need(block, "contexts", "prior")
    try:
        space = ContextSpace(tuple(probs))
    except ValueError as e:
        raise ConfigError(f"prior.contexts: {e}") from None
    if block.get("joint") == "offset":
        return offset_contextual_prior(space, float(block.get("offset", 0.2)))
    if "cells" in block:
        cells = block["cells"]
        arms = [[arm_from_config(c, f"prior.cells[{a}][{x}]") for x, c in enumerate(row)]
                for a, row in enumerate(cells)]
        prior = ContextualPrior.independent(arms, space)
    else:
        arms = [arm_from_config(a, f"prior.arms[{i}]") for i, a in enumerate(_need(block, "arms", "prior"))]
        prior = ContextualPrior.context_free(arms, space)
    if block.get("feedback") == "second_draw":
        prior.feedback = second_draw_feedback(prior.families[0])
    return prior


ALGORITHM_KINDS = ("bic", "two-arm", "df", "ctx")


def algorithm_block(cfg: dict) -> dict:
    block = cfg.get("algorithm")
    if not block:
        raise ConfigError("algorithm: missing block")
    kind = _need(block, "kind", "algorithm")
    if kind not in ALGORITHM_KINDS:
        raise ConfigError(f"algorithm.kind: expected one of {ALGORITHM_KINDS}, got {kind!r}")
    if "T" not in block and kind != "two-arm":
        raise ConfigError("algorithm: missing field 'T'")
    return block
