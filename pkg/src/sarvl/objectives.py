"""The three self-supervision losses (contrastive, matching, masked-token) and the
FIFO feature queue that supplies extra contrastive negatives.

All losses are plain torch expressions over float64 tensors, so they stay
differentiable when the inputs carry gradients and reduce to exact scalar
arithmetic when they do not.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import torch

from .errors import ConfigurationError, ContractError, UsageError

PROB_EPS = 1e-12
UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class Temperature:
    """Softmax temperature for the contrastive loss."""

    tau: float = 0.07

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.tau}")


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the weighted sum of the three losses."""

    itc: float = 1.0
    itm: float = 1.0
    mlm: float = 1.0

    def __post_init__(self):
        if min(self.itc, self.itm, self.mlm) < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.itc == self.itm == self.mlm == 0:
            raise ConfigurationError("at least one loss weight must be positive")

    @classmethod
    def alignment_weighted(cls) -> "LossWeights":
        """Alternate preset with the contrastive weight lowered to 0.4."""
        return cls(itc=0.4, itm=1.0, mlm=1.0)


@dataclass(frozen=True)
class QueueSnapshot:
    """Immutable view of the queue contents at one instant."""

    images: torch.Tensor  # (N_img, d)
    texts: torch.Tensor   # (N_txt, d)


class FeatureQueue:
    """Fixed-capacity FIFO of detached unit-norm embeddings, one lane per modality.

    Capacity bounds each modality lane independently; pushing into a full lane
    evicts exactly the oldest entry of that lane. Readers take `snapshot()`
    copies, so later pushes never alter a set of negatives already in use.
    """

    MODALITIES = ("image", "text")

    def __init__(self, capacity: int, dim: int):
        if capacity <= 0:
            raise ConfigurationError(f"queue capacity must be positive, got {capacity}")
        if dim <= 0:
            raise ConfigurationError(f"queue embedding dim must be positive, got {dim}")
        self.capacity = capacity
        self.dim = dim
        self._lanes = {m: deque(maxlen=capacity) for m in self.MODALITIES}

    def __len__(self) -> int:
        return sum(len(lane) for lane in self._lanes.values())

    def size(self, modality: str) -> int:
        return len(self._lanes[self._check_modality(modality)])

    def _check_modality(self, modality: str) -> str:
        if modality not in self.MODALITIES:
            raise UsageError(f"unknown modality {modality!r}, expected one of {self.MODALITIES}")
        return modality

    def push(self, embedding: torch.Tensor, modality: str) -> "FeatureQueue":
        """Append one embedding; evicts the oldest same-modality entry when full."""
        self._check_modality(modality)
        emb = torch.as_tensor(embedding, dtype=torch.float64).detach().reshape(-1)
        if emb.numel() != self.dim:
            raise ContractError(f"queue expects dim {self.dim}, got {emb.numel()}")
        _check_unit_norm(emb.unsqueeze(0), "queued embedding")
        self._lanes[modality].append(emb.clone())
        return self

    def push_batch(self, embeddings: torch.Tensor, modality: str) -> "FeatureQueue":
        for row in torch.as_tensor(embeddings, dtype=torch.float64).detach():
            self.push(row, modality)
        return self

    def entries(self, modality: str) -> list:
        return list(self._lanes[self._check_modality(modality)])

    def snapshot(self) -> QueueSnapshot:
        """Detached copy of both lanes; unaffected by subsequent pushes."""
        return QueueSnapshot(images=self._stack("image"), texts=self._stack("text"))

    def _stack(self, modality: str) -> torch.Tensor:
        lane = self._lanes[modality]
        if not lane:
            return torch.zeros((0, self.dim), dtype=torch.float64)
        return torch.stack([e.clone() for e in lane])


def queue_push(queue: FeatureQueue, embedding: torch.Tensor, modality: str) -> FeatureQueue:
    """Functional alias for `FeatureQueue.push`."""
    return queue.push(embedding, modality)


def _check_unit_norm(batch: torch.Tensor, what: str) -> None:
    norms = torch.linalg.vector_norm(batch, dim=-1)
    bad = torch.abs(norms - 1.0) > UNIT_NORM_TOL
    if bool(bad.any()):
        worst = float(norms[bad][0])
        raise ContractError(f"{what} must be unit-norm within {UNIT_NORM_TOL}, got norm {worst:.6g}")


def _as_temperature(tau: Union[Temperature, float]) -> float:
    if isinstance(tau, Temperature):
        return tau.tau
    value = float(tau)
    if value <= 0:
        raise ConfigurationError(f"temperature must be positive, got {value}")
    return value


def itc_loss(
    v_batch: torch.Tensor,
    t_batch: torch.Tensor,
    queue: Union[FeatureQueue, QueueSnapshot, None] = None,
    tau: Union[Temperature, float] = Temperature(),
) -> torch.Tensor:
    """Symmetric InfoNCE over cosine similarities.

    Row i's candidates are its own pairing, the other in-batch rows, and the
    queued entries of the opposite modality; the result is the mean of the
    image-to-text and text-to-image directional means.
    """
    v = torch.as_tensor(v_batch, dtype=torch.float64)
    t = torch.as_tensor(t_batch, dtype=torch.float64)
    if v.ndim != 2 or t.ndim != 2 or v.shape != t.shape:
        raise ContractError(f"expected matching (B, d) batches, got {tuple(v.shape)} and {tuple(t.shape)}")
    if v.shape[0] < 1:
        raise ContractError("batch must contain at least one pair")
    _check_unit_norm(v, "image embedding")
    _check_unit_norm(t, "text embedding")

    snap = queue.snapshot() if isinstance(queue, FeatureQueue) else queue
    temp = _as_temperature(tau)
    b = v.shape[0]
    diag = torch.arange(b)

    def directional(queries, keys, extra):
        if extra is not None and extra.shape[0] > 0:
            _check_unit_norm(extra, "queued embedding")
            keys = torch.cat([keys, extra.to(dtype=torch.float64)], dim=0)
        logits = queries @ keys.T / temp
        return -torch.log_softmax(logits, dim=1)[diag, diag].mean()

    loss_i2t = directional(v, t, None if snap is None else snap.texts)
    loss_t2i = directional(t, v, None if snap is None else snap.images)
    return (loss_i2t + loss_t2i) / 2


def itm_loss(p: Union[torch.Tensor, float], y: int) -> torch.Tensor:
    """Binary cross-entropy on a match probability; p is clamped to (0, 1)."""
    if y not in (0, 1):
        raise ContractError(f"match label must be 0 or 1, got {y!r}")
    prob = torch.as_tensor(p, dtype=torch.float64)
    if prob.ndim != 0:
        raise ContractError("itm_loss expects a scalar probability")
    prob = torch.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    if y == 1:
        return -torch.log(prob)
    return -torch.log1p(-prob)


def mlm_loss(
    logits: torch.Tensor,
    target_ids: Sequence[int],
    masked_positions: Iterable[int],
) -> torch.Tensor:
    """Mean negative log-likelihood of the targets at the masked positions.

    The mean (rather than the sum) keeps the loss scale independent of how
    many positions were masked.
    """
    scores = torch.as_tensor(logits, dtype=torch.float64)
    if scores.ndim != 2:
        raise ContractError(f"expected (len, vocab) logits, got shape {tuple(scores.shape)}")
    positions = sorted(set(int(i) for i in masked_positions))
    if not positions:
        raise UsageError("mlm_loss requires at least one masked position")
    targets = list(target_ids)
    seq_len, vocab = scores.shape
    for pos in positions:
        if not 0 <= pos < seq_len:
            raise ContractError(f"masked position {pos} outside sequence of length {seq_len}")
        if not 0 <= int(targets[pos]) < vocab:
            raise ContractError(f"target id {targets[pos]} outside vocab of {vocab}")
    log_probs = torch.log_softmax(scores, dim=1)
    idx = torch.as_tensor(positions, dtype=torch.long)
    tgt = torch.as_tensor([int(targets[p]) for p in positions], dtype=torch.long)
    return -log_probs[idx, tgt].mean()


def total_loss(
    l_itc: Union[torch.Tensor, float],
    l_itm: Union[torch.Tensor, float],
    l_mlm: Union[torch.Tensor, float],
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Weighted sum of the three losses."""
    parts = [torch.as_tensor(x, dtype=torch.float64) for x in (l_itc, l_itm, l_mlm)]
    for part in parts:
        if not bool(torch.isfinite(part)):
            raise ContractError("total_loss requires finite inputs")
    return weights.itc * parts[0] + weights.itm * parts[1] + weights.mlm * parts[2]
