"""Linear-chain CRF over frozen token embeddings.

Emissions come from a trained linear map on the embeddings; transitions,
start, and end scores are explicit parameter tables. All inference runs in
log space with the max-shift log-sum-exp trick, so long sentences cannot
underflow. Sequence score:

    score(y) = start[y_1] + sum_t unary_t[y_t]
             + sum_{t>=2} transitions[y_{t-1}, y_t] + end[y_n]
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"CRF1"


class CrfError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


def _logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.reshape(())
    return np.squeeze(out, axis=axis)


@dataclass
class CrfModel:
    labels: list[str]
    emission_weights: np.ndarray  # (L, D)
    emission_bias: np.ndarray     # (L,)
    transitions: np.ndarray       # (L, L), [from, to]
    start_scores: np.ndarray      # (L,)
    end_scores: np.ndarray        # (L,)

    def __post_init__(self):
        L = len(self.labels)
        if L < 1:
            raise CrfError("need at least one label")
        self.emission_weights = np.asarray(self.emission_weights, dtype=np.float64)
        self.emission_bias = np.asarray(self.emission_bias, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.start_scores = np.asarray(self.start_scores, dtype=np.float64)
        self.end_scores = np.asarray(self.end_scores, dtype=np.float64)
        shapes = {
            "emission_weights": (self.emission_weights.shape, (L, self.dim)),
            "emission_bias": (self.emission_bias.shape, (L,)),
            "transitions": (self.transitions.shape, (L, L)),
            "start_scores": (self.start_scores.shape, (L,)),
            "end_scores": (self.end_scores.shape, (L,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise CrfError(f"{name}: expected shape {want}, got {got}")
        for name in shapes:
            if not np.all(np.isfinite(getattr(self, name))):
                raise CrfError(f"{name}: non-finite parameter")

    @property
    def label_count(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.emission_weights.shape[1]

    @classmethod
    def zeros(cls, labels: list[str], dim: int) -> "CrfModel":
        L = len(labels)
        return cls(
            labels=list(labels),
            emission_weights=np.zeros((L, dim)),
            emission_bias=np.zeros(L),
            transitions=np.zeros((L, L)),
            start_scores=np.zeros(L),
            end_scores=np.zeros(L),
        )

    def unary_scores(self, emb: np.ndarray) -> np.ndarray:
        """(n, D) embeddings -> (n, L) per-token label scores."""
        emb = np.asarray(emb, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[1] != self.dim:
            raise CrfError(
                f"embedding shape {emb.shape} does not match model dim {self.dim}"
            )
        if emb.shape[0] < 1:
            raise CrfError("need at least one token")
        return emb @ self.emission_weights.T + self.emission_bias

    def sequence_score(self, emb: np.ndarray, labels: list[int]) -> float:
        unary = self.unary_scores(emb)
        return self._score_from_unary(unary, labels)

    def _score_from_unary(self, unary: np.ndarray, labels: list[int]) -> float:
        n = unary.shape[0]
        if len(labels) != n:
            raise CrfError(f"label sequence length {len(labels)} != {n} tokens")
        for y in labels:
            if not (0 <= y < self.label_count):
                raise CrfError(f"invalid label id {y}")
        total = self.start_scores[labels[0]] + self.end_scores[labels[-1]]
        total += sum(unary[t, labels[t]] for t in range(n))
        total += sum(self.transitions[labels[t - 1], labels[t]] for t in range(1, n))
        return float(total)

    def copy(self) -> "CrfModel":
        return CrfModel(
            labels=list(self.labels),
            emission_weights=self.emission_weights.copy(),
            emission_bias=self.emission_bias.copy(),
            transitions=self.transitions.copy(),
            start_scores=self.start_scores.copy(),
            end_scores=self.end_scores.copy(),
        )


@dataclass
class MarginalTable:
    """Per-token posterior label distribution, rows summing to 1."""
    probs: np.ndarray  # (n, L)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise CrfError("marginals must be a 2-D table")
        if np.any(self.probs < -1e-12) or np.any(self.probs > 1 + 1e-12):
            raise CrfError("marginal entries outside [0, 1]")
        sums = self.probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise CrfError("marginal rows must sum to 1 within 1e-9")

    def row(self, i: int) -> np.ndarray:
        return self.probs[i]

    def __len__(self) -> int:
        return self.probs.shape[0]


def _forward(model: CrfModel, unary: np.ndarray) -> np.ndarray:
    n, L = unary.shape
    alpha = np.empty((n, L))
    alpha[0] = model.start_scores + unary[0]
    for t in range(1, n):
        # alpha[t, j] = logsumexp_i(alpha[t-1, i] + T[i, j]) + unary[t, j]
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + model.transitions, axis=0) + unary[t]
    return alpha


def _backward(model: CrfModel, unary: np.ndarray) -> np.ndarray:
    n, L = unary.shape
    beta = np.empty((n, L))
    beta[n - 1] = model.end_scores
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp(
            model.transitions + (unary[t + 1] + beta[t + 1])[None, :], axis=1
        )
    return beta


def log_partition(model: CrfModel, emb: np.ndarray) -> float:
    unary = model.unary_scores(emb)
    alpha = _forward(model, unary)
    return float(_logsumexp(alpha[-1] + model.end_scores))


def marginals(model: CrfModel, emb: np.ndarray) -> MarginalTable:
    unary = model.unary_scores(emb)
    alpha = _forward(model, unary)
    beta = _backward(model, unary)
    log_z = _logsumexp(alpha[-1] + model.end_scores)
    probs = np.exp(alpha + beta - log_z)
    # Guard rounding: renormalize rows that drift at the 1e-15 level.
    probs /= probs.sum(axis=1, keepdims=True)
    return MarginalTable(probs=probs)


def viterbi(model: CrfModel, emb: np.ndarray) -> tuple[list[int], float]:
    """Best label sequence and its score; ties resolve to the lowest label id."""
    unary = model.unary_scores(emb)
    n, L = unary.shape
    delta = model.start_scores + unary[0]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + model.transitions  # (from, to)
        back[t] = np.argmax(cand, axis=0)          # argmax picks lowest index on ties
        delta = cand[back[t], np.arange(L)] + unary[t]
    delta = delta + model.end_scores
    last = int(np.argmax(delta))
    path = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    path.reverse()
    return path, float(np.max(delta))


@dataclass
class CrfGradient:
    emission_weights: np.ndarray
    emission_bias: np.ndarray
    transitions: np.ndarray
    start_scores: np.ndarray
    end_scores: np.ndarray

    @classmethod
    def zeros_like(cls, model: CrfModel) -> "CrfGradient":
        return cls(
            emission_weights=np.zeros_like(model.emission_weights),
            emission_bias=np.zeros_like(model.emission_bias),
            transitions=np.zeros_like(model.transitions),
            start_scores=np.zeros_like(model.start_scores),
            end_scores=np.zeros_like(model.end_scores),
        )

    def add_(self, other: "CrfGradient") -> None:
        self.emission_weights += other.emission_weights
        self.emission_bias += other.emission_bias
        self.transitions += other.transitions
        self.start_scores += other.start_scores
        self.end_scores += other.end_scores

    def scale_(self, factor: float) -> None:
        self.emission_weights *= factor
        self.emission_bias *= factor
        self.transitions *= factor
        self.start_scores *= factor
        self.end_scores *= factor


def nll_and_gradient(model: CrfModel, emb: np.ndarray,
                     gold: list[int]) -> tuple[float, CrfGradient]:
    """Negative log-likelihood of the gold sequence and its exact gradient.

    Gradient = expected feature counts under the model minus gold feature
    counts, with expectations from forward-backward.
    """
    emb = np.asarray(emb, dtype=np.float64)
    unary = model.unary_scores(emb)
    n, L = unary.shape
    alpha = _forward(model, unary)
    beta = _backward(model, unary)
    log_z = float(_logsumexp(alpha[-1] + model.end_scores))
    gold_score = model._score_from_unary(unary, gold)
    loss = log_z - gold_score

    node = np.exp(alpha + beta - log_z)  # (n, L) unary marginals
    node /= node.sum(axis=1, keepdims=True)

    grad = CrfGradient.zeros_like(model)
    resid = node.copy()
    resid[np.arange(n), gold] -= 1.0
    grad.emission_weights = resid.T @ emb
    grad.emission_bias = resid.sum(axis=0)
    grad.start_scores = node[0].copy()
    grad.start_scores[gold[0]] -= 1.0
    grad.end_scores = node[-1].copy()
    grad.end_scores[gold[-1]] -= 1.0
    for t in range(1, n):
        # P(y_{t-1}=i, y_t=j) from the standard edge-marginal identity.
        edge = np.exp(
            alpha[t - 1][:, None] + model.transitions
            + (unary[t] + beta[t])[None, :] - log_z
        )
        edge /= edge.sum()
        grad.transitions += edge
        grad.transitions[gold[t - 1], gold[t]] -= 1.0
    return loss, grad


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    emission_lr: float = 1e-3
    crf_lr: float = 5e-2
    weight_decay: float = 0.0
    seed: int = 13
    shuffle: bool = True

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "emission_lr": self.emission_lr,
            "crf_lr": self.crf_lr,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }


@dataclass
class TrainResult:
    model: CrfModel
    epoch_losses: list[float] = field(default_factory=list)


def train(dataset: list[tuple[np.ndarray, list[int]]], labels: list[str],
          config: TrainConfig) -> TrainResult:
    """Mini-batch gradient descent with decoupled weight decay.

    Two learning-rate groups: the emission map uses ``emission_lr``, the CRF
    tables (transitions, start, end) use ``crf_lr``. Deterministic for a
    fixed seed: shuffling comes from a seeded generator and batches reduce
    in order.
    """
    if not dataset:
        raise CrfError("empty training dataset")
    dim = np.asarray(dataset[0][0]).shape[1]
    for emb, gold in dataset:
        if np.asarray(emb).shape[1] != dim:
            raise CrfError("inconsistent embedding dims in training data")
        if np.asarray(emb).shape[0] != len(gold):
            raise CrfError("gold label length does not match token count")

    model = CrfModel.zeros(labels, dim)
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    order = np.arange(len(dataset))
    for epoch in range(config.epochs):
        if config.shuffle:
            order = rng.permutation(len(dataset))
        total = 0.0
        for batch_start in range(0, len(dataset), config.batch_size):
            batch = order[batch_start:batch_start + config.batch_size]
            grad = CrfGradient.zeros_like(model)
            for idx in batch:
                emb, gold = dataset[idx]
                loss, g = nll_and_gradient(model, np.asarray(emb, dtype=np.float64), gold)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, sample {idx}"
                    )
                total += loss
                grad.add_(g)
            grad.scale_(1.0 / len(batch))
            model.emission_weights -= config.emission_lr * grad.emission_weights
            if config.weight_decay:
                model.emission_weights -= (
                    config.emission_lr * config.weight_decay * model.emission_weights
                )
            model.emission_bias -= config.emission_lr * grad.emission_bias
            model.transitions -= config.crf_lr * grad.transitions
            model.start_scores -= config.crf_lr * grad.start_scores
            model.end_scores -= config.crf_lr * grad.end_scores
        losses.append(total / len(dataset))
    return TrainResult(model=model, epoch_losses=losses)


def save_checkpoint(model: CrfModel, path: str | Path,
                    sidecar: dict | None = None) -> None:
    """Write the binary checkpoint plus a JSON sidecar next to it.

    Layout: magic "CRF1", uint32 L, uint32 D, then float64 little-endian
    arrays in order: emission_weights, emission_bias, transitions,
    start_scores, end_scores.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", model.label_count, model.dim))
        for arr in (model.emission_weights, model.emission_bias,
                    model.transitions, model.start_scores, model.end_scores):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
    meta = dict(sidecar or {})
    meta.setdefault("labels", list(model.labels))
    meta["dim"] = model.dim
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar_path.write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> tuple[CrfModel, dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CrfError(f"{path}: not a CRF checkpoint")
    L, D = struct.unpack_from("<II", data, 4)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    labels = meta["labels"]
    if len(labels) != L:
        raise CrfError(f"{path}: sidecar lists {len(labels)} labels, header says {L}")
    offset = 12
    arrays = []
    for count in (L * D, L, L * L, L, L):
        end = offset + 8 * count
        if end > len(data):
            raise CrfError(f"{path}: truncated checkpoint")
        arrays.append(np.frombuffer(data[offset:end], dtype="<f8").copy())
        offset = end
    model = CrfModel(
        labels=labels,
        emission_weights=arrays[0].reshape(L, D),
        emission_bias=arrays[1],
        transitions=arrays[2].reshape(L, L),
        start_scores=arrays[3],
        end_scores=arrays[4],
    )
    return model, meta
