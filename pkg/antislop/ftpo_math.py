"""
FTPO loss on final-position logit vectors.

    L = L_pref + lambda_target * L_target + lambda_nontarget * L_nontarget

L_pref pushes every chosen logit above the rejected one by a margin m, with
a taper weight that switches a chosen token off once it wins by m. The two
MSE terms tether the target tokens (chosen + rejected, outside a dead zone)
and the rest of the vocabulary to the reference logits.

Everything here is plain numpy; no training happens in this module.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

import numpy as np
from pydantic import BaseModel, Field

from antislop.backends import MockModelSpec
from antislop.models import FtpoSample

logger = logging.getLogger(__name__)


class FtpoLossParams(BaseModel):
    m: float = Field(default=2.0, gt=0.0, description="Preference margin in logits")
    tau_target: float = Field(default=0.5, ge=0.0, description="Zero-penalty half-width for target tokens")
    lambda_target: float = Field(default=0.05, ge=0.0)
    lambda_nontarget: float = Field(default=0.4, ge=0.0)
    detach_taper_weight: bool = False


@dataclass
class FtpoInstance:
    """Logits at one position: policy y, reference y_ref, rejected r, chosen C."""
    y: np.ndarray
    y_ref: np.ndarray
    rejected: int
    chosen: list[int]
    _target: np.ndarray = field(init=False, repr=False)
    _nontarget: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.y_ref = np.asarray(self.y_ref, dtype=float)
        self.chosen = [int(c) for c in self.chosen]
        size = self.y.shape[0]
        if self.y.ndim != 1 or self.y_ref.shape != self.y.shape:
            raise ValueError(f"y and y_ref must be 1-d of equal length, got {self.y.shape} and {self.y_ref.shape}")
        if not self.chosen:
            raise ValueError("chosen must not be empty")
        if len(set(self.chosen)) != len(self.chosen):
            raise ValueError("chosen indices must be distinct")
        if self.rejected in self.chosen:
            raise ValueError(f"rejected index {self.rejected} is also chosen")
        if not all(0 <= i < size for i in (*self.chosen, self.rejected)):
            raise ValueError(f"token index outside vocabulary of size {size}")
        if size < len(self.chosen) + 2:
            raise ValueError("vocabulary needs at least one non-target token")

        self._target = np.array([*self.chosen, self.rejected])
        mask = np.ones(size, dtype=bool)
        mask[self._target] = False
        self._nontarget = np.flatnonzero(mask)

    @property
    def target(self) -> np.ndarray:
        return self._target

    @property
    def nontarget(self) -> np.ndarray:
        return self._nontarget

    def margins(self) -> np.ndarray:
        """Delta_c = y[c] - y[r] per chosen token."""
        return self.y[self.chosen] - self.y[self.rejected]

    def with_logits(self, y: np.ndarray) -> "FtpoInstance":
        return FtpoInstance(y=y, y_ref=self.y_ref, rejected=self.rejected, chosen=list(self.chosen))


def softplus(x):
    """log(1 + e^x) without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-softplus(-x))


def taper_weights(inst: FtpoInstance, m: float) -> np.ndarray:
    return np.clip((m - inst.margins()) / m, 0.0, 1.0)


def pref_loss(inst: FtpoInstance, m: float) -> tuple[float, np.ndarray]:
    """
    Taper-weighted mean of softplus(m - Delta_c) over chosen tokens.

    Returns (value, weights). All weights zero means every chosen token
    already wins by m; the loss is then 0.
    """
    weights = taper_weights(inst, m)
    total_weight = weights.sum()
    if total_weight == 0:
        return 0.0, weights
    value = float((weights * softplus(m - inst.margins())).sum() / total_weight)
    return value, weights


def target_mse(inst: FtpoInstance, tau_target: float) -> float:
    dev = np.abs(inst.y[inst.target] - inst.y_ref[inst.target])
    return float(np.mean(np.maximum(dev - tau_target, 0.0) ** 2))


def nontarget_mse(inst: FtpoInstance) -> float:
    dev = inst.y[inst.nontarget] - inst.y_ref[inst.nontarget]
    return float(np.mean(dev ** 2))


def total_loss(inst: FtpoInstance, params: FtpoLossParams) -> tuple[float, dict[str, float]]:
    """Weighted sum and its components {pref, target, nontarget}."""
    pref, _ = pref_loss(inst, params.m)
    target = target_mse(inst, params.tau_target)
    nontarget = nontarget_mse(inst)
    value = pref + params.lambda_target * target + params.lambda_nontarget * nontarget
    return value, {"pref": pref, "target": target, "nontarget": nontarget}


def grad_pref(inst: FtpoInstance, m: float, detach_weights: bool = False) -> np.ndarray:
    """
    d L_pref / d y.

    The taper weight is differentiated as a factor (slope -1/m strictly
    inside (0, m), 0 elsewhere) unless detach_weights is set.
    """
    grad = np.zeros_like(inst.y)
    deltas = inst.margins()
    weights = np.clip((m - deltas) / m, 0.0, 1.0)
    total_weight = weights.sum()
    if total_weight == 0:
        return grad

    sp = softplus(m - deltas)
    d_sp = -sigmoid(m - deltas)
    if detach_weights:
        d_delta = weights * d_sp / total_weight
    else:
        d_weights = np.where((deltas > 0) & (deltas < m), -1.0 / m, 0.0)
        weighted_sum = (weights * sp).sum()
        d_delta = ((d_weights * sp + weights * d_sp) * total_weight - weighted_sum * d_weights) / total_weight ** 2

    grad[inst.chosen] += d_delta
    grad[inst.rejected] -= d_delta.sum()
    return grad


def grad_target(inst: FtpoInstance, tau_target: float) -> np.ndarray:
    grad = np.zeros_like(inst.y)
    dev = inst.y[inst.target] - inst.y_ref[inst.target]
    excess = np.maximum(np.abs(dev) - tau_target, 0.0)
    grad[inst.target] = 2.0 * excess * np.sign(dev) / len(inst.target)
    return grad


def grad_nontarget(inst: FtpoInstance) -> np.ndarray:
    grad = np.zeros_like(inst.y)
    dev = inst.y[inst.nontarget] - inst.y_ref[inst.nontarget]
    grad[inst.nontarget] = 2.0 * dev / len(inst.nontarget)
    return grad


def grad_total(inst: FtpoInstance, params: FtpoLossParams) -> np.ndarray:
    """Analytic gradient of total_loss with respect to every y[j]."""
    return (
        grad_pref(inst, params.m, params.detach_taper_weight)
        + params.lambda_target * grad_target(inst, params.tau_target)
        + params.lambda_nontarget * grad_nontarget(inst)
    )


def finite_difference_grad(inst: FtpoInstance, params: FtpoLossParams, step: float = 1e-4) -> np.ndarray:
    """Central differences of total_loss; the reference for grad_total."""
    grad = np.zeros_like(inst.y)
    for j in range(inst.y.shape[0]):
        up, down = inst.y.copy(), inst.y.copy()
        up[j] += step
        down[j] -= step
        grad[j] = (total_loss(inst.with_logits(up), params)[0] - total_loss(inst.with_logits(down), params)[0]) / (2 * step)
    return grad


def near_kink(inst: FtpoInstance, params: FtpoLossParams, tol: float = 1e-3) -> bool:
    """True when a margin or target deviation sits within tol of a non-smooth point."""
    deltas = inst.margins()
    if np.any(np.abs(deltas) < tol) or np.any(np.abs(deltas - params.m) < tol):
        return True
    dev = np.abs(inst.y[inst.target] - inst.y_ref[inst.target])
    return bool(np.any(np.abs(dev - params.tau_target) < tol))


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------

class LogitProvider(Protocol):
    """Supplies (y, y_ref) for a prompt and maps token texts onto indices."""

    def token_index(self, text: str) -> Optional[int]:
        ...

    def logits(self, prompt_text: str) -> tuple[np.ndarray, np.ndarray]:
        ...


class MockLogitProvider:
    """
    Logits read off table-driven mock models: log p for tokens in the
    context's distribution, `floor` for the rest of the vocabulary. Without
    a policy spec the policy equals the reference.
    """

    def __init__(self, reference: MockModelSpec, policy: Optional[MockModelSpec] = None, floor: float = -30.0):
        if policy is not None and policy.vocabulary != reference.vocabulary:
            raise ValueError("policy and reference mock models must share one vocabulary")
        self.reference = reference
        self.policy = policy or reference
        self.floor = floor

    def token_index(self, text: str) -> Optional[int]:
        return self.reference.token_id(text)

    def _vector(self, spec: MockModelSpec, prompt_text: str) -> np.ndarray:
        vec = np.full(len(spec.vocabulary), self.floor)
        for token, prob in spec.distribution_for(prompt_text):
            vec[spec.token_id(token)] = np.log(prob)
        return vec

    def logits(self, prompt_text: str) -> tuple[np.ndarray, np.ndarray]:
        return self._vector(self.policy, prompt_text), self._vector(self.reference, prompt_text)


class FtpoBatchReport(BaseModel):
    mean_loss: float
    components: dict[str, float]
    pref_accuracy: float
    delta_chosen: float
    delta_rejected: float
    delta_other: float
    abs_delta_chosen: float
    abs_delta_rejected: float
    abs_delta_other: float
    n_samples: int
    skipped: int
    target_accuracy: Optional[float] = None
    reached_target_accuracy: Optional[bool] = None


@dataclass
class _BatchTotals:
    """Running sums; merge() is associative so partial batches can be combined."""
    n: int = 0
    skipped: int = 0
    wins: int = 0
    loss: float = 0.0
    components: dict[str, float] = field(default_factory=lambda: {"pref": 0.0, "target": 0.0, "nontarget": 0.0})
    delta_chosen: float = 0.0
    delta_rejected: float = 0.0
    delta_other: float = 0.0
    abs_delta_chosen: float = 0.0
    abs_delta_rejected: float = 0.0
    abs_delta_other: float = 0.0

    def merge(self, other: "_BatchTotals") -> "_BatchTotals":
        return _BatchTotals(
            n=self.n + other.n,
            skipped=self.skipped + other.skipped,
            wins=self.wins + other.wins,
            loss=self.loss + other.loss,
            components={k: self.components[k] + other.components[k] for k in self.components},
            delta_chosen=self.delta_chosen + other.delta_chosen,
            delta_rejected=self.delta_rejected + other.delta_rejected,
            delta_other=self.delta_other + other.delta_other,
            abs_delta_chosen=self.abs_delta_chosen + other.abs_delta_chosen,
            abs_delta_rejected=self.abs_delta_rejected + other.abs_delta_rejected,
            abs_delta_other=self.abs_delta_other + other.abs_delta_other,
        )


def instance_for(sample: FtpoSample, provider: LogitProvider) -> Optional[FtpoInstance]:
    """Resolve a sample against the provider; None when a token has no index."""
    rejected = provider.token_index(sample.rejected.text)
    chosen = [provider.token_index(c.text) for c in sample.chosen]
    if rejected is None or any(c is None for c in chosen):
        return None
    y, y_ref = provider.logits(sample.prompt_text)
    try:
        return FtpoInstance(y=y, y_ref=y_ref, rejected=rejected, chosen=chosen)
    except ValueError as e:
        logger.debug(f"Skipping sample: {e}")
        return None


def _evaluate(sample: FtpoSample, provider: LogitProvider, params: FtpoLossParams) -> _BatchTotals:
    inst = instance_for(sample, provider)
    if inst is None:
        return _BatchTotals(skipped=1)
    value, components = total_loss(inst, params)
    dev = inst.y - inst.y_ref
    return _BatchTotals(
        n=1,
        wins=int(inst.y[inst.chosen].max() > inst.y[inst.rejected]),
        loss=value,
        components=components,
        delta_chosen=float(dev[inst.chosen].mean()),
        delta_rejected=float(dev[inst.rejected]),
        delta_other=float(dev[inst.nontarget].mean()),
        abs_delta_chosen=float(np.abs(dev[inst.chosen]).mean()),
        abs_delta_rejected=float(abs(dev[inst.rejected])),
        abs_delta_other=float(np.abs(dev[inst.nontarget]).mean()),
    )


def batch_eval(
    samples: Iterable[FtpoSample],
    provider: LogitProvider,
    params: FtpoLossParams,
    target_accuracy: Optional[float] = None,
) -> FtpoBatchReport:
    """
    Mean loss, preference accuracy and mean logit shifts (policy minus
    reference) for chosen, rejected and other tokens, both signed and as
    magnitudes.

    Samples whose tokens the provider cannot index are skipped and counted.
    """
    totals = _BatchTotals()
    for sample in samples:
        totals = totals.merge(_evaluate(sample, provider, params))
    if totals.skipped:
        logger.warning(f"Skipped {totals.skipped} FTPO samples with unresolvable tokens")

    n = max(totals.n, 1)
    accuracy = totals.wins / n
    return FtpoBatchReport(
        mean_loss=totals.loss / n,
        components={k: v / n for k, v in totals.components.items()},
        pref_accuracy=accuracy,
        delta_chosen=totals.delta_chosen / n,
        delta_rejected=totals.delta_rejected / n,
        delta_other=totals.delta_other / n,
        abs_delta_chosen=totals.abs_delta_chosen / n,
        abs_delta_rejected=totals.abs_delta_rejected / n,
        abs_delta_other=totals.abs_delta_other / n,
        n_samples=totals.n,
        skipped=totals.skipped,
        target_accuracy=target_accuracy,
        reached_target_accuracy=None if target_accuracy is None else accuracy >= target_accuracy,
    )
