"""Statistical BIC audit, prediction-coupling check and experiment runner.

The audit estimates E[mu_i - mu_j | I_t = i] for every recommended arm i
and competitor j.  Rounds sharing a phase label (and context) are pooled,
so a cell is (group, context, i, j).  Within a replicate the pooled rounds
contribute count * (mu_i - mu_j); the estimate is the ratio of sums over
replicates and its standard error comes from the replicate-level
(cluster) linearisation of that ratio.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import Environment, make_algorithm, run_standalone
from .bic_core import ReductionConfig, run_black_box_reduction, run_two_arm_sampler
from .config import (ConfigError, algorithm_block, config_hash, contextual_prior_from_config,
                     prior_from_config)
from .contextual import (PolicyClass, contextual_regret, estimate_contextual_persuasion,
                         run_contextual_reduction)
from .detail_free import DetailFreeConfig, run_detail_free
from .metrics import RegretCurve, regret_path
from .model import Transcript, derive_stream
from .priors import (PriorModel, estimate_persuasion_constants, min_phase_length_m_arm,
                     min_phase_length_two_arm)
from .stats import z_value

# ---------------------------------------------------------------------------
# BIC audit
# ---------------------------------------------------------------------------


@dataclass
class AuditCell:
    group: str
    context: int | None
    arm: int
    competitor: int
    slack: float
    se: float
    lo: float
    hi: float
    count: int
    verdict: str


@dataclass
class AuditReport:
    cells: list
    epsilon: float
    replicates: int
    min_cell: int
    confidence: float
    note: str = "pooled by phase label; normal-approximation CI on the ratio estimator"

    @property
    def conclusive(self) -> list:
        return [c for c in self.cells if c.verdict != "inconclusive"]

    @property
    def inconclusive(self) -> list:
        return [c for c in self.cells if c.verdict == "inconclusive"]

    @property
    def verdict(self) -> str:
        conc = self.conclusive
        if any(c.verdict == "FAIL" for c in conc):
            return "FAIL"
        return "PASS" if conc else "INCONCLUSIVE"

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def worst(self) -> AuditCell | None:
        conc = self.conclusive
        return min(conc, key=lambda c: c.lo) if conc else None

    def cell(self, group: str, arm: int, competitor: int, context=None) -> AuditCell:
        for c in self.cells:
            if (c.group, c.arm, c.competitor, c.context) == (group, arm, competitor, context):
                return c
        raise KeyError((group, arm, competitor, context))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "epsilon": self.epsilon,
            "replicates": self.replicates,
            "min_cell": self.min_cell,
            "confidence": self.confidence,
            "note": self.note,
            "cells": [asdict(c) for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


class BicAuditor:
    """Streaming accumulator for the audit; add one transcript per replicate."""

    def __init__(self, group: Callable[[str], str] | None = None):
        self.group = group or (lambda label: label)
        self.n = 0
        # key -> [S_c, S_y, S_cc, S_yy, S_cy] per competitor, stored as arrays of length m
        self._acc: dict = {}
        self.m: int | None = None

    def add(self, tr: Transcript) -> None:
        mu = tr.instance.means
        m = mu.shape[0]
        self.m = m if self.m is None else self.m
        ctx = tr.context.tolist() if tr.context is not None else [None] * len(tr)
        groups = [self.group(p) for p in tr.phase]
        counts = Counter(zip(groups, ctx, tr.recommendation.tolist()))
        self.n += 1
        for (g, x, i), c in counts.items():
            col = mu[:, x] if x is not None else mu
            y = c * (col[i] - col)
            acc = self._acc.get((g, x, i))
            if acc is None:
                acc = self._acc[(g, x, i)] = np.zeros((5, m))
            acc[0] += c
            acc[1] += y
            acc[2] += c * c
            acc[3] += y * y
            acc[4] += c * y

    def report(self, epsilon: float = 0.01, min_cell: int = 200, confidence: float = 0.95) -> AuditReport:
        z = z_value(confidence)
        cells = []
        N = self.n
        for (g, x, i) in sorted(self._acc, key=lambda key: (key[0], -1 if key[1] is None else key[1], key[2])):
            S_c, S_y, S_cc, S_yy, S_cy = self._acc[(g, x, i)]
            for j in range(self.m):
                if j == i:
                    continue
                count = int(S_c[j])
                s = S_y[j] / S_c[j]
                ss = max(S_yy[j] - 2 * s * S_cy[j] + s * s * S_cc[j], 0.0)
                se = math.sqrt(ss * N / max(N - 1, 1)) / S_c[j]
                lo, hi = s - z * se, s + z * se
                if count < min_cell:
                    verdict = "inconclusive"
                else:
                    verdict = "PASS" if lo >= -epsilon else "FAIL"
                cells.append(AuditCell(g, x, int(i), int(j), float(s), float(se), float(lo), float(hi),
                                       count, verdict))
        return AuditReport(cells, epsilon, N, min_cell, confidence)


def audit_bic(run: Callable[[Environment], Transcript], make_env: Callable[[int, int], Environment],
              replicates: int, seed: int = 0, epsilon: float = 0.01, min_cell: int = 200,
              confidence: float = 0.95, group: Callable[[str], str] | None = None,
              min_replicates: int = 1000) -> AuditReport:
    """Run ``run`` on fresh prior draws and audit every (group, i, j) cell."""
    if replicates < min_replicates:
        raise ValueError(f"the audit needs at least {min_replicates} replicates")
    auditor = BicAuditor(group)
    for r in range(replicates):
        auditor.add(run(make_env(seed, r)))
    return auditor.report(epsilon, min_cell, confidence)


# ---------------------------------------------------------------------------
# Prediction coupling
# ---------------------------------------------------------------------------

def check_prediction_coupling(reduction: Transcript, wrapped: Transcript, c: int, L: int,
                              offset: int = 0) -> bool:
    """True iff prediction(t) equals the wrapped run's prediction at round
    floor((t - c) / L) + offset for every t > c + L."""
    if reduction.prediction is None or wrapped.prediction is None:
        raise ValueError("both transcripts must record predictions")
    if (reduction.seed, reduction.replicate) != (wrapped.seed, wrapped.replicate):
        raise ValueError("seed coupling not configured: transcripts come from different (seed, replicate)")
    for t in range(c + L + 1, len(reduction) + 1):
        idx = (t - c) // L + offset
        if idx < 1 or idx > len(wrapped):
            return False
        if reduction.prediction[t - 1] != wrapped.prediction[idx - 1]:
            return False
    return True


# ---------------------------------------------------------------------------
# Experiment wiring
# ---------------------------------------------------------------------------

@dataclass
class Experiment:
    kind: str
    run: Callable
    make_env: Callable
    constants: dict
    T: int
    prior: object
    policies: PolicyClass | None = None
    probs: tuple | None = None
    extras: dict = field(default_factory=dict)


def _wrapped_factory(block: dict, prior, m: int, T: int):
    name = block.get("wrapped", "ucb1")
    params = {k: v for k, v in block.get("wrapped_params", {}).items()}

    def factory(env: Environment):
        rng = derive_stream(env.seed, env.replicate, "algorithm")
        return make_algorithm(name, m, T, prior=prior, rng=rng, **params)

    return factory


def build_experiment(cfg: dict) -> Experiment:
    """Resolve a config into a per-replicate runner and its constants."""
    block = algorithm_block(cfg)
    kind = block["kind"]
    est = cfg.get("estimation", {})
    reps = int(est.get("replicates", 20_000))
    est_seed = int(est.get("seed", cfg.get("seed", 0)))
    if kind == "ctx":
        prior = contextual_prior_from_config(cfg.get("prior"))
        k = int(block.get("k", 1))
        T = int(block["T"])
        constants = {}
        if "L" in block:
            L = int(block["L"])
        else:
            pc = estimate_contextual_persuasion(prior, k, reps, rng=derive_stream(est_seed, 0, "constants"))
            constants.update(pc.to_dict())
            L = int(pc.L_P)
        rcfg = ReductionConfig(k, L, T)
        policies = PolicyClass(block["policies"], prior.m, prior.n_contexts) if "policies" in block \
            else PolicyClass.all_policies(prior.m, prior.n_contexts)
        if block.get("wrapped", "ucb1") == "eps-greedy":
            block = {**block, "wrapped_params": {"policies": policies.table, **block.get("wrapped_params", {})}}
        factory = _wrapped_factory(block, None, prior.m, T)
        rank1 = bool(block.get("rank1_phase", True))
        constants.update({"k": k, "L": L, "T": T})

        def run(env):
            return run_contextual_reduction(prior, rcfg, factory(env), env, rank1_phase=rank1)

        return Experiment(kind, run, prior.environment, constants, T, prior, policies, prior.space.probs)

    prior: PriorModel = prior_from_config(cfg.get("prior"))

    def make_env(seed, r):
        return Environment.from_prior(prior, seed, r)

    if kind == "two-arm":
        k = int(block.get("k", 1))
        constants = {"k": k}
        if "L" in block:
            L = int(block["L"])
        else:
            L = min_phase_length_two_arm(prior, k, rng=derive_stream(est_seed, 0, "constants"))
        constants.update({"L": L, "T": max(L, k) + k * L})

        def run(env):
            return run_two_arm_sampler(prior, k, L, env)

        return Experiment(kind, run, make_env, constants, max(L, k) + k * L, prior)

    T = int(block["T"])
    if kind == "bic":
        k = int(block.get("k", 1))
        constants = {}
        if "L" in block:
            L = int(block["L"])
        else:
            pc = estimate_persuasion_constants(prior, k, reps, rng=derive_stream(est_seed, 0, "constants"))
            L = min_phase_length_m_arm(prior, pc, rng=derive_stream(est_seed, 1, "constants"),
                                       replicates=int(est.get("max_replicates", 200_000)))
            constants.update(pc.to_dict())
        constants.update({"k": k, "L": L, "T": T, "c": k + (prior.m - 1) * L * k})
        rcfg = ReductionConfig(k, L, T)
        factory = _wrapped_factory(block, prior, prior.m, T)

        def run(env):
            return run_black_box_reduction(prior, rcfg, factory(env), env)

        return Experiment(kind, run, make_env, constants, T, prior)

    # detail-free
    dcfg = DetailFreeConfig(float(block.get("mu_hat", prior.means[-1])), int(_need_int(block, "N")), T,
                            tuple(prior.means), float(block.get("tau", 0.2)), block.get("theta"))

    def run(env):
        return run_detail_free(dcfg, env)

    return Experiment(kind, run, make_env, dcfg.constants(), T, prior)


def _need_int(block, key):
    if key not in block:
        raise ConfigError(f"algorithm: missing field '{key}'")
    return int(block[key])


def regret_matrix(exp: Experiment, transcripts) -> np.ndarray:
    if exp.kind == "ctx":
        return contextual_regret(transcripts, exp.probs, exp.policies, keep=True).per_instance
    return np.stack([regret_path(t) for t in transcripts])


def _fmt(x) -> str:
    return repr(float(x))


def metrics_csv(transcripts, regrets: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "rounds", "expost_regret", "mean_reward", "best_mean"])
    for tr, reg in zip(transcripts, regrets):
        w.writerow([tr.replicate, len(tr), _fmt(reg[-1]), _fmt(tr.mean_rewards().mean()),
                    _fmt(tr.instance.means.max())])
    return buf.getvalue()


def curve_csv(curve: RegretCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "mean", "se", "lo", "hi"])
    for t in range(curve.T):
        w.writerow([t + 1, _fmt(curve.mean[t]), _fmt(curve.se[t]), _fmt(curve.lo[t]), _fmt(curve.hi[t])])
    return buf.getvalue()


def _svg_setup(salt: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = salt
    return plt


def regret_svg(curve: RegretCurve, path: Path, chash: str) -> None:
    plt = _svg_setup(chash)
    fig, ax = plt.subplots(figsize=(6, 4))
    t = np.arange(1, curve.T + 1)
    ax.plot(t, curve.mean, lw=1.2)
    ax.fill_between(t, curve.lo, curve.hi, alpha=0.3, lw=0)
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative regret")
    ax.set_title(f"regret over {curve.replicates} replicates (config {chash})", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def audit_svg(report: AuditReport, path: Path, chash: str) -> None:
    plt = _svg_setup(chash)
    groups = sorted({(c.group, c.context) for c in report.cells}, key=str)
    pairs = sorted({(c.arm, c.competitor) for c in report.cells})
    grid = np.full((len(groups), len(pairs)), np.nan)
    gi = {g: n for n, g in enumerate(groups)}
    pi = {p: n for n, p in enumerate(pairs)}
    for c in report.cells:
        if c.verdict != "inconclusive":
            grid[gi[(c.group, c.context)], pi[(c.arm, c.competitor)]] = c.lo
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.25 * len(groups) + 1)))
    im = ax.imshow(grid, aspect="auto", cmap="RdBu", vmin=-0.25, vmax=0.25)
    ax.set_xticks(range(len(pairs)), [f"{i}>{j}" for i, j in pairs], fontsize=7)
    ax.set_yticks(range(len(groups)), [g if x is None else f"{g}@{x}" for g, x in groups], fontsize=6)
    ax.set_title(f"audit slack lower bounds, verdict {report.verdict} (config {chash})", fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_experiment(cfg: dict, out_dir, seed: int | None = None, replicates: int | None = None,
                   save_transcripts: int | None = None) -> dict:
    """Run all replicates of a config and write the artifact directory.

    Files: transcripts.jsonl, metrics.csv, regret.csv, constants.json,
    audit.json, regret.svg, audit.svg.  Returns a summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    replicates = int(cfg.get("replicates", 100) if replicates is None else replicates)
    if replicates < 2:
        raise ConfigError("replicates: need at least 2")
    exp = build_experiment(cfg)
    chash = config_hash({**cfg, "seed": seed, "replicates": replicates})
    audit_cfg = cfg.get("audit", {})
    auditor = BicAuditor()
    transcripts = []
    for r in range(replicates):
        tr = exp.run(exp.make_env(seed, r))
        auditor.add(tr)
        transcripts.append(tr)
    report = auditor.report(float(audit_cfg.get("epsilon", 0.01)), int(audit_cfg.get("min_cell", 200)))
    regrets = regret_matrix(exp, transcripts)
    curve = RegretCurve.from_matrix(regrets)
    keep = len(transcripts) if save_transcripts is None else save_transcripts
    with open(out / "transcripts.jsonl", "w") as fh:
        for tr in transcripts[:keep]:
            fh.write(tr.to_jsonl())
    (out / "metrics.csv").write_text(metrics_csv(transcripts, regrets))
    (out / "regret.csv").write_text(curve_csv(curve))
    constants = {**exp.constants, "config_hash": chash, "seed": seed, "replicates": replicates}
    (out / "constants.json").write_text(json.dumps(constants, sort_keys=True, indent=1, default=float))
    (out / "audit.json").write_text(report.to_json())
    regret_svg(curve, out / "regret.svg", chash)
    audit_svg(report, out / "audit.svg", chash)
    return {"verdict": report.verdict, "final_regret": curve.final(), "config_hash": chash,
            "out": str(out)}


def coupled_standalone(exp_prior_env: Environment, algorithm, T: int) -> Transcript:
    """Standalone run of ``algorithm`` on the same (seed, replicate) streams a
    reduction uses for its dedicated agents."""
    env = Environment(exp_prior_env.instance, exp_prior_env.families, exp_prior_env.seed,
                      exp_prior_env.replicate, exp_prior_env.context_probs, exp_prior_env.feedback_fn)
    return run_standalone(algorithm, env, T)


def regret_bound_sqrt(t, T: int, theta: float):
    """sqrt(18 t ln(T theta))."""
    return np.sqrt(18.0 * np.asarray(t, dtype=float) * math.log(T * theta))

