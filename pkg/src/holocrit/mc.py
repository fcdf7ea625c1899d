"""Seeded substreams and Monte Carlo estimate records.

Every batch estimator splits its ``n`` samples into fixed-size chunks; chunk
``c`` of stream ``s`` under seed ``seed`` draws from
``SeedSequence(seed, spawn_key=(s, c))``. Chunking depends only on ``n``, so
results are identical for any worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

CHUNK = 1024


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.stream < 0:
            raise DomainError("stream index must be nonnegative")

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream, chunk))
        return np.random.default_rng(ss)

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)

    def to_dict(self):
        return {"seed": self.seed, "stream": self.stream}


def as_stream(stream) -> RngStream:
    if isinstance(stream, RngStream):
        return stream
    if isinstance(stream, (int, np.integer)):
        return RngStream(int(stream))
    raise TypeError(f"expected RngStream or int seed, got {type(stream).__name__}")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("HOLOCRIT_THREADS", "1")))
    except ValueError:
        return 1


def chunk_bounds(n: int, chunk: int = CHUNK):
    return [(start, min(chunk, n - start)) for start in range(0, n, chunk)]


def map_chunks(fn: Callable, n: int, stream: RngStream, workers: Optional[int] = None, chunk: int = CHUNK):
    """Apply ``fn(generator, size, start)`` to each chunk, results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    jobs = [(stream.generator(i), size, start) for i, (start, size) in enumerate(bounds)]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _finite_or_none(v: float) -> Optional[float]:
    return v if math.isfinite(v) else None


@dataclass
class CountEstimate:
    """Monte Carlo mean with standard error.

    ``log_mean`` is always populated. ``mean``/``stderr`` are ``None`` when the
    linear value does not fit in a double (``log_domain`` is then True).
    """

    mean: Optional[float]
    stderr: Optional[float]
    n: int
    seed: Optional[RngStream] = None
    log_mean: float = -math.inf
    log_stderr: float = -math.inf
    zero_hits: bool = False
    log_domain: bool = False
    note: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, x, seed=None, note=""):
        x = np.asarray(x, dtype=float)
        n = x.size
        mean = float(x.mean()) if n else 0.0
        sd = float(x.std(ddof=1)) if n > 1 else math.inf
        se = sd / math.sqrt(n) if n else math.inf
        hits = bool(np.any(x != 0))
        est = cls(
            mean=mean,
            stderr=se,
            n=n,
            seed=seed,
            log_mean=math.log(mean) if mean > 0 else -math.inf,
            log_stderr=math.log(se) if se > 0 else -math.inf,
            zero_hits=not hits,
            note=note,
        )
        if not hits:
            est.note = est.note or _zero_hit_note(n)
        return est

    @classmethod
    def from_log_weights(cls, logw, log_scale=0.0, seed=None, note=""):
        """Estimate ``exp(log_scale) * E[w]`` from per-sample ``log w`` (``-inf`` allowed)."""
        logw = np.asarray(logw, dtype=float)
        n = logw.size
        top = float(np.max(logw)) if n else -math.inf
        if not math.isfinite(top):
            return cls(mean=0.0, stderr=0.0, n=n, seed=seed, zero_hits=True, note=note or _zero_hit_note(n))
        scaled = np.exp(logw - top)
        m = float(scaled.mean())
        sd = float(scaled.std(ddof=1)) if n > 1 else math.inf
        log_mean = log_scale + top + math.log(m)
        log_se = log_scale + top + math.log(sd / math.sqrt(n)) if sd > 0 else -math.inf
        mean = math.exp(log_mean) if log_mean < 709.0 else math.inf
        se = math.exp(log_se) if log_se < 709.0 else math.inf
        return cls(
            mean=_finite_or_none(mean),
            stderr=_finite_or_none(se),
            n=n,
            seed=seed,
            log_mean=log_mean,
            log_stderr=log_se,
            log_domain=not math.isfinite(mean),
            note=note,
        )

    @property
    def rel_stderr(self) -> float:
        if not math.isfinite(self.log_mean):
            return math.inf
        return math.exp(self.log_stderr - self.log_mean)

    def zscore(self, target: float) -> float:
        if self.mean is None:
            raise OverflowError("estimate only available in log domain")
        if self.stderr == 0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.stderr

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "seed": self.seed.to_dict() if self.seed is not None else None,
            "log_mean": self.log_mean if math.isfinite(self.log_mean) else None,
            "log_stderr": self.log_stderr if math.isfinite(self.log_stderr) else None,
            "zero_hits": self.zero_hits,
            "log_domain": self.log_domain,
            "note": self.note,
            **self.extra,
        }


def _zero_hit_note(n):
    # rule of three: one-sided 95% upper bound on the hit probability
    return f"no hits in {n} samples; one-sided 95% bound on hit probability {3.0 / max(n, 1):.3g}"


def combined_z(a: CountEstimate, b: CountEstimate) -> float:
    se = math.hypot(a.stderr, b.stderr)
    diff = a.mean - b.mean
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / se


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)
