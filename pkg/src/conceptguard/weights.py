"""Factor weights from rule confidences or exact maximum likelihood."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .graph import Assignment, FactorGraph
from .rules import Rule
from .scoring import ENUMERATION_CAP, world_potentials

logger = logging.getLogger(__name__)

PRIOR = "prior"
MLE = "mle"


class MissingConfidenceError(ValueError):
    pass


class NonFiniteLikelihoodError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightConfig:
    mode: str = PRIOR
    learning_rate: float = 0.05
    epochs: int = 200
    w_min: float = 0.01
    w_max: float = 1.0
    init: float = 0.5

    def __post_init__(self):
        if self.mode not in (PRIOR, MLE):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0.0 < self.w_min <= self.w_max <= 1.0:
            raise ValueError("clamp bounds must satisfy 0 < w_min <= w_max <= 1")


def prior_weights(rules: Sequence[Rule]) -> np.ndarray:
    missing = [r.id for r in rules if r.confidence is None]
    if missing:
        raise MissingConfidenceError(
            f"rules {missing} carry no confidence; use MLE weight mode instead"
        )
    return np.array([r.confidence for r in rules], dtype=float)


def nll_and_gradient(
    graph: FactorGraph,
    dataset: Sequence[Assignment],
    w,
    cap: int = ENUMERATION_CAP,
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``dataset`` and its gradient in ``w``.

    grad_i = sum over samples of E_w[psi_i | category] - psi_i(sample).
    """
    w = np.asarray(w, dtype=float)
    n_factors = len(graph)
    if w.shape != (n_factors,):
        raise ValueError(f"expected {n_factors} weights, got shape {w.shape}")
    nll = 0.0
    grad = np.zeros(n_factors)
    if n_factors == 0:
        return len(dataset) * graph.num_concepts * math.log(2.0), grad
    per_category = Counter()
    observed = np.zeros(n_factors)
    observed_score = 0.0
    for a in dataset:
        psi = graph.potentials(a).astype(float)
        observed += psi
        observed_score += float(psi @ w)
        per_category[a.category] += 1
    log_z_total = 0.0
    expected = np.zeros(n_factors)
    for category in sorted(per_category):
        count = per_category[category]
        table = world_potentials(graph, category, cap).astype(float)
        scores = table @ w
        log_z_total += count * float(logsumexp(scores))
        expected += count * (softmax(scores) @ table)
    nll = log_z_total - observed_score
    grad = expected - observed
    return nll, grad


def mle_fit(
    graph: FactorGraph,
    dataset: Sequence[Assignment],
    config: WeightConfig | None = None,
    history: list | None = None,
) -> np.ndarray:
    """Projected fixed-step gradient descent on the mean NLL.

    Returns the weights with the lowest NLL seen.  ``history``, if given,
    receives the NLL of every iterate.
    """
    config = config or WeightConfig(mode=MLE)
    n = max(1, len(dataset))
    w = np.full(len(graph), config.init, dtype=float)
    w = np.clip(w, config.w_min, config.w_max)
    if config.epochs == 0:
        return np.full(len(graph), config.init, dtype=float)
    best_w, best_nll = w.copy(), math.inf
    for epoch in range(config.epochs + 1):
        nll, grad = nll_and_gradient(graph, dataset, w)
        if not math.isfinite(nll):
            raise NonFiniteLikelihoodError(f"NLL became {nll} at epoch {epoch}, weights {w.tolist()}")
        if history is not None:
            history.append(nll)
        if nll < best_nll:
            best_w, best_nll = w.copy(), nll
        if epoch == config.epochs:
            break
        w_next = np.clip(w - config.learning_rate * grad / n, config.w_min, config.w_max)
        if np.array_equal(w_next, w):
            break
        w = w_next
    logger.debug("MLE finished at nll=%.6g", best_nll)
    return best_w


def write_weights(path: str | Path, weights) -> None:
    lines = [f"{i} {float(w)!r}\n" for i, w in enumerate(weights)]
    Path(path).write_text("".join(lines))


def read_weights(path: str | Path, num_rules: int | None = None) -> np.ndarray:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rid, w = line.split()
            values[int(rid)] = float(w)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected '<rule id> <weight>'") from None
    n = num_rules if num_rules is not None else len(values)
    if sorted(values) != list(range(n)):
        raise ValueError(f"{path}: weights must cover rule ids 0..{n - 1}")
    return np.array([values[i] for i in range(n)], dtype=float)
