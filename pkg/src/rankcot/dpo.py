"""DPO loss over sequence log-probabilities, with an analytic gradient.

    margin = beta * ((pc - rc) - (pr - rr))
    loss   = -log sigmoid(margin) = softplus(-margin)

where ``pc``/``pr`` are the policy log-probs of the chosen/rejected sequence
and ``rc``/``rr`` the frozen reference log-probs. Log-probs are summed token
log-probabilities in nats and are not length-normalized.
"""

from __future__ import annotations

import csv
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from rankcot.errors import InputError

DEFAULT_BETA = 0.1

FIELDS = ("logp_policy_chosen", "logp_ref_chosen", "logp_policy_rejected", "logp_ref_rejected")


def softplus(x: float) -> float:
    """``log(1 + exp(x))`` without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class DpoInputs:
    logp_policy_chosen: float
    logp_ref_chosen: float
    logp_policy_rejected: float
    logp_ref_rejected: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        for name in FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and > 0, got {self.beta}")

    @property
    def margin(self) -> float:
        chosen = self.logp_policy_chosen - self.logp_ref_chosen
        rejected = self.logp_policy_rejected - self.logp_ref_rejected
        return self.beta * (chosen - rejected)


@dataclass(frozen=True)
class DpoResult:
    loss: float
    margin: float
    grad: tuple[float, float, float, float]


def dpo_loss(inputs: DpoInputs) -> DpoResult:
    """Loss, margin and gradient w.r.t. the four log-probs.

    Gradient order follows :data:`FIELDS`. The reference model is frozen, so
    its two partials are zero.
    """
    margin = inputs.margin
    loss = softplus(-margin)
    g = inputs.beta * sigmoid(-margin)
    return DpoResult(loss=loss, margin=margin, grad=(-g, 0.0, g, 0.0))


def dpo_grad_check(inputs: DpoInputs, eps: float = 1e-6) -> float:
    """Max relative error between the analytic and central-difference gradient.

    Only the two policy log-probs are perturbed. The step actually taken,
    ``(x + eps) - (x - eps)``, is used as the denominator to cancel rounding
    of the perturbed inputs.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    analytic = dpo_loss(inputs).grad
    worst = 0.0
    for idx, name in ((0, "logp_policy_chosen"), (2, "logp_policy_rejected")):
        x = getattr(inputs, name)
        hi, lo = x + eps, x - eps
        f_hi = dpo_loss(replace(inputs, **{name: hi})).loss
        f_lo = dpo_loss(replace(inputs, **{name: lo})).loss
        numeric = (f_hi - f_lo) / (hi - lo)
        scale = max(abs(analytic[idx]), abs(numeric))
        if scale == 0.0:
            continue
        worst = max(worst, abs(analytic[idx] - numeric) / scale)
    return worst


def pair_preference_rate(pairs: Sequence[DpoInputs]) -> float:
    """Fraction of pairs with a strictly positive margin."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    return sum(1 for p in pairs if p.margin > 0) / len(pairs)


def mean_loss(pairs: Iterable[DpoInputs]) -> float:
    losses = [dpo_loss(p).loss for p in pairs]
    if not losses:
        raise ValueError("pairs must be non-empty")
    return math.fsum(losses) / len(losses)


def read_dpo_csv(path: str | os.PathLike, beta: float = DEFAULT_BETA) -> list[DpoInputs]:
    """Read rows with the four log-prob columns; an optional ``beta`` column overrides ``beta``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                values = {name: float(row[name]) for name in FIELDS}
                row_beta = float(row["beta"]) if row.get("beta") else beta
                rows.append(DpoInputs(**values, beta=row_beta))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return rows
