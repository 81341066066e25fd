"""Core value types shared by every algorithm: reward families, instances,
transcripts and keyed random streams.

Arms are 0-based throughout the package: arm 0 has the highest prior mean.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtri


class BicError(Exception):
    """Base class for package errors."""


class ProtocolError(BicError):
    """A bandit algorithm was driven out of next_arm/observe order."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_stream(seed: int, replicate: int = 0, tag: str = "", phase: int = 0) -> np.random.Generator:
    """Return the Philox stream for key ``(replicate, tag, phase)`` under ``seed``.

    Identical keys give identical sequences; distinct keys give independent
    streams (SeedSequence spawn keys feed the counter-based generator).
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(replicate), _tag_code(tag), int(phase)))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Reward families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardFamily:
    """Single-parameter reward distribution D(mu).

    ``kind`` is one of ``"bernoulli"``, ``"gaussian"`` (noise variance
    ``noise_var``) or ``"pointmass"``.
    """

    kind: str = "bernoulli"
    noise_var: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bernoulli", "gaussian", "pointmass"):
            raise ValueError(f"unknown reward family {self.kind!r}")
        if self.kind == "gaussian" and not self.noise_var > 0:
            raise ValueError("gaussian reward family needs noise_var > 0")

    @property
    def bounded(self) -> bool:
        return self.kind in ("bernoulli", "pointmass")

    def check_mean(self, mu) -> None:
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise ValueError("reward means must be finite")
        if self.kind == "bernoulli" and (np.any(mu < 0) or np.any(mu > 1)):
            raise ValueError(f"bernoulli mean outside [0, 1]: {mu}")

    def from_uniform(self, mu, u):
        """Map uniforms ``u`` to rewards; every reward consumes one uniform."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "bernoulli":
            return (u < mu).astype(float)
        if self.kind == "gaussian":
            return mu + np.sqrt(self.noise_var) * ndtri(u)
        return np.broadcast_to(mu, np.shape(u)).astype(float)

    def sample_sum(self, mu, k: int, rng: np.random.Generator):
        """Sum of ``k`` iid rewards for each entry of ``mu`` (vectorised)."""
        mu = np.asarray(mu, dtype=float)
        if k == 0:
            return np.zeros_like(mu)
        if self.kind == "bernoulli":
            return rng.binomial(k, np.clip(mu, 0.0, 1.0)).astype(float)
        if self.kind == "gaussian":
            return k * mu + np.sqrt(k * self.noise_var) * rng.standard_normal(mu.shape)
        return k * mu

    def loglik(self, mu, n, s):
        """Log-likelihood (up to terms free of mu) of ``n`` rewards summing to ``s``."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "bernoulli":
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(s > 0, s * np.log(mu), 0.0)
                b = np.where(n - s > 0, (n - s) * np.log1p(-mu), 0.0)
            return a + b
        if self.kind == "gaussian":
            return (s * mu - 0.5 * n * mu * mu) / self.noise_var
        mean = np.divide(s, n, out=np.zeros(np.broadcast(s, n).shape), where=np.asarray(n) > 0)
        hit = np.isclose(mu, mean, rtol=0.0, atol=1e-9) | (np.asarray(n) == 0)
        return np.where(hit, 0.0, -np.inf)


BERNOULLI = RewardFamily("bernoulli")
POINTMASS = RewardFamily("pointmass")


def draw_reward(family: RewardFamily, mu: float, rng: np.random.Generator) -> float:
    """One reward from D(mu)."""
    family.check_mean(mu)
    return float(family.from_uniform(mu, rng.random()))


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MabInstance:
    """Realised mean rewards: shape (m,) or (m, n_contexts)."""

    means: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if not np.all(np.isfinite(means)):
            raise ValueError("instance means must be finite")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def best(self) -> float:
        return float(self.means.max())

    @property
    def gap(self) -> float:
        """Best mean minus the best strictly-lower mean (0 if all equal)."""
        mu = self.means.ravel()
        top = mu.max()
        lower = mu[mu < top]
        return float(top - lower.max()) if lower.size else 0.0


def sample_instance(prior, rng: np.random.Generator) -> MabInstance:
    """Draw one reward vector from ``prior``."""
    return MabInstance(prior.sample_means(rng, 1)[0])


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------

class _NullPrediction:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NULL_PREDICTION"

    def __reduce__(self):
        return (_NullPrediction, ())


NULL_PREDICTION = _NullPrediction()

CSV_COLUMNS = ("round", "context", "recommendation", "reward", "feedback", "prediction")


def _jsonable(token):
    if token is None or token is NULL_PREDICTION:
        return None
    if isinstance(token, np.generic):
        return token.item()
    if isinstance(token, tuple):
        return [_jsonable(t) for t in token]
    return token


@dataclass(frozen=True)
class Transcript:
    """Per-round record of one algorithm run.

    Rounds are implicit and 1-based: row ``r`` is round ``r + 1``.  ``phase``
    labels the structural role of each round (pooled by the BIC audit).
    """

    recommendation: np.ndarray
    reward: np.ndarray
    phase: tuple[str, ...]
    instance: MabInstance
    seed: int
    replicate: int
    context: np.ndarray | None = None
    feedback: tuple | None = None
    prediction: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.recommendation)
        if len(self.reward) != n or len(self.phase) != n:
            raise ValueError("transcript columns have different lengths")
        for col in (self.context, self.feedback, self.prediction):
            if col is not None and len(col) != n:
                raise ValueError("transcript columns have different lengths")

    def __len__(self):
        return len(self.recommendation)

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    def mean_rewards(self) -> np.ndarray:
        """mu of the recommended arm in every round."""
        mu = self.instance.means
        if self.context is None:
            return mu[self.recommendation]
        return mu[self.recommendation, self.context]

    def rows(self):
        for r in range(len(self)):
            yield {
                "round": r + 1,
                "context": None if self.context is None else int(self.context[r]),
                "recommendation": int(self.recommendation[r]),
                "reward": float(self.reward[r]),
                "feedback": None if self.feedback is None else _jsonable(self.feedback[r]),
                "prediction": None if self.prediction is None else _jsonable(self.prediction[r]),
                "phase": self.phase[r],
            }

    def to_jsonl(self, with_meta: bool = True) -> str:
        lines = []
        if with_meta:
            header = {
                "meta": {
                    "seed": self.seed,
                    "replicate": self.replicate,
                    "instance": self.instance.means.tolist(),
                    **{k: _jsonable(v) for k, v in self.meta.items()},
                }
            }
            lines.append(json.dumps(header, sort_keys=True))
        lines.extend(json.dumps(row, sort_keys=True) for row in self.rows())
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_COLUMNS})
        return buf.getvalue()

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        meta: dict[str, Any] = {}
        rows = []
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj:
                meta = dict(obj["meta"])
            else:
                rows.append(obj)
        expected = list(range(1, len(rows) + 1))
        if [r["round"] for r in rows] != expected:
            raise ValueError("transcript rounds must be contiguous from 1")
        has_ctx = any(r["context"] is not None for r in rows)
        has_fb = any(r["feedback"] is not None for r in rows)
        has_pred = any(r["prediction"] is not None for r in rows)
        seed = meta.pop("seed", 0)
        replicate = meta.pop("replicate", 0)
        instance = MabInstance(meta.pop("instance", [0.0]))
        return cls(
            recommendation=np.array([r["recommendation"] for r in rows], dtype=np.int64),
            reward=np.array([r["reward"] for r in rows], dtype=float),
            phase=tuple(r.get("phase", "") for r in rows),
            instance=instance,
            seed=seed,
            replicate=replicate,
            context=np.array([r["context"] for r in rows], dtype=np.int64) if has_ctx else None,
            feedback=tuple(r["feedback"] for r in rows) if has_fb else None,
            prediction=tuple(NULL_PREDICTION if r["prediction"] is None else r["prediction"] for r in rows)
            if has_pred
            else None,
            meta=meta,
        )


class TranscriptBuilder:
    """Accumulates rows phase by phase, then freezes into a Transcript."""

    def __init__(self, with_context: bool = False, with_feedback: bool = False, with_prediction: bool = False):
        self.recs: list[int] = []
        self.rewards: list[float] = []
        self.phases: list[str] = []
        self.contexts: list[int] | None = [] if with_context else None
        self.feedback: list | None = [] if with_feedback else None
        self.predictions: list | None = [] if with_prediction else None

    def __len__(self):
        return len(self.recs)

    def extend(self, recs: Sequence[int], rewards: Sequence[float], phase: str,
               contexts=None, feedback=None, predictions=None) -> None:
        n = len(recs)
        self.recs.extend(int(a) for a in recs)
        self.rewards.extend(float(r) for r in rewards)
        self.phases.extend([phase] * n)
        if self.contexts is not None:
            self.contexts.extend(int(x) for x in contexts)
        if self.feedback is not None:
            self.feedback.extend(feedback if feedback is not None else [None] * n)
        if self.predictions is not None:
            self.predictions.extend(predictions if predictions is not None else [NULL_PREDICTION] * n)

    def build(self, instance: MabInstance, seed: int, replicate: int, **meta) -> Transcript:
        return Transcript(
            recommendation=np.array(self.recs, dtype=np.int64),
            reward=np.array(self.rewards, dtype=float),
            phase=tuple(self.phases),
            instance=instance,
            seed=seed,
            replicate=replicate,
            context=None if self.contexts is None else np.array(self.contexts, dtype=np.int64),
            feedback=None if self.feedback is None else tuple(self.feedback),
            prediction=None if self.predictions is None else tuple(self.predictions),
            meta=meta,
        )


def concat_transcripts(parts: Sequence[Transcript], **meta) -> Transcript:
    """Join consecutive stage transcripts of the same run."""
    first = parts[0]

    def cat(attr):
        cols = [getattr(p, attr) for p in parts]
        if all(c is None for c in cols):
            return None
        out = []
        for p, c in zip(parts, cols):
            if c is None:
                fill = NULL_PREDICTION if attr == "prediction" else None
                out.extend([fill] * len(p))
            else:
                out.extend(list(c))
        return out

    ctx = cat("context")
    fb = cat("feedback")
    pred = cat("prediction")
    merged = {}
    for p in parts:
        merged.update(p.meta)
    merged.update(meta)
    return Transcript(
        recommendation=np.concatenate([p.recommendation for p in parts]).astype(np.int64),
        reward=np.concatenate([p.reward for p in parts]).astype(float),
        phase=tuple(ph for p in parts for ph in p.phase),
        instance=first.instance,
        seed=first.seed,
        replicate=first.replicate,
        context=None if ctx is None else np.array(ctx, dtype=np.int64),
        feedback=None if fb is None else tuple(fb),
        prediction=None if pred is None else tuple(pred),
        meta=merged,
    )
