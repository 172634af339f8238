"""Quantile value network: cosine fraction embedding, Hadamard combine, head.

The network maps a state feature vector and a list of fractions to one
quantile value per action. Gradients are computed by hand in reverse mode;
there is no autodiff framework underneath, which keeps the arithmetic
inspectable and the dependency list short.

Shapes use B for batch, K for fractions per sample, A for actions, S for the
raw state dimension, d for the hidden width and n for the cosine basis size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .staircase import FractionSet

CHECKPOINT_FORMAT = 1


@dataclass
class HuberParams:
    """Threshold for the quadratic-to-linear switch."""

    kappa: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0.0):
            raise ValueError("kappa must be a positive real")


def quantile_huber(delta: float, tau: float, params: HuberParams) -> float:
    """Asymmetric Huber loss |τ − 1{δ<0}| · L_κ(δ)/κ."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    k = params.kappa
    a = abs(delta)
    if a <= k:
        huber = 0.5 * delta * delta
    else:
        huber = k * (a - 0.5 * k)
    weight = abs(tau - (1.0 if delta < 0.0 else 0.0))
    return weight * huber / k


def _huber_weighted(delta: np.ndarray, tau_row: np.ndarray, kappa: float) -> np.ndarray:
    a = np.abs(delta)
    huber = np.where(a <= kappa, 0.5 * delta * delta, kappa * (a - 0.5 * kappa))
    weight = np.abs(tau_row[np.newaxis, :] - (delta < 0.0))
    return weight * huber / kappa


def _huber_weighted_grad(delta: np.ndarray, tau_row: np.ndarray, kappa: float) -> np.ndarray:
    # dL_κ/dδ is δ inside the threshold and κ·sign(δ) outside; the indicator
    # weight is piecewise constant so it passes through untouched
    dhuber = np.clip(delta, -kappa, kappa)
    weight = np.abs(tau_row[np.newaxis, :] - (delta < 0.0))
    return weight * dhuber / kappa


def td_error_matrix(
    reward: float,
    discount: float,
    target_next_quantiles: np.ndarray,
    current_quantiles: np.ndarray,
) -> np.ndarray:
    """δ_ij = r + γ·target_i − current_j (rows index the target side)."""
    t = np.asarray(target_next_quantiles, dtype=float)
    c = np.asarray(current_quantiles, dtype=float)
    if t.shape != c.shape or t.ndim != 1:
        raise ValueError("quantile lists must be equal-length vectors")
    return (reward + discount * t)[:, np.newaxis] - c[np.newaxis, :]


def quantile_loss(delta: np.ndarray, midpoints: np.ndarray, params: HuberParams) -> float:
    """(1/N)·Σᵢⱼ ρ_{τ̂ⱼ}(δ_ij); the column index picks the fraction."""
    d = np.asarray(delta, dtype=float)
    m = np.asarray(midpoints, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[1] != m.size:
        raise ValueError("delta must be N x N with N matching the midpoints")
    return float(np.sum(_huber_weighted(d, m, params.kappa))) / m.size


def quantile_loss_delta_gradient(
    delta: np.ndarray, midpoints: np.ndarray, params: HuberParams
) -> np.ndarray:
    """Elementwise dL/dδ for the loss above, same shape as delta."""
    d = np.asarray(delta, dtype=float)
    m = np.asarray(midpoints, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[1] != m.size:
        raise ValueError("delta must be N x N with N matching the midpoints")
    return _huber_weighted_grad(d, m, params.kappa) / m.size


def action_value(fractions: FractionSet, quantiles_at_midpoints) -> float:
    """Expected value of the staircase: segment widths weighting the quantiles."""
    q = np.asarray(quantiles_at_midpoints, dtype=float)
    w = fractions.widths
    if q.shape != w.shape:
        raise ValueError("need one quantile per segment")
    return float(np.dot(w, q))


# ---------------------------------------------------------------------------
# Network


@dataclass
class CosineEmbedding:
    """ReLU(Σ_{i=0}^{n−1} cos(iπτ)·w_ij + b_j), producing d features."""

    weights: np.ndarray  # (n_basis, d)
    biases: np.ndarray  # (d,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError("embedding weights must be (n_basis, d) with d biases")

    @property
    def n_basis(self) -> int:
        return self.weights.shape[0]


def cosine_basis(taus: np.ndarray, n_basis: int) -> np.ndarray:
    """Matrix of cos(iπτ) for i = 0 .. n_basis−1; leading column is all ones."""
    t = np.atleast_1d(np.asarray(taus, dtype=float))
    return np.cos(np.arange(n_basis) * np.pi * t[..., np.newaxis])


def embed_fraction(emb: CosineEmbedding, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    pre = cosine_basis(np.array([tau]), emb.n_basis) @ emb.weights + emb.biases
    return np.maximum(pre[0], 0.0)


@dataclass
class ForwardRecord:
    """Cached intermediates from a batched forward pass, consumed by backward."""

    states: np.ndarray  # (B, S)
    basis: np.ndarray  # (B, K, n)
    pre_encoder: np.ndarray  # (B, d)
    encoded: np.ndarray  # (B, d)
    pre_embed: np.ndarray  # (B, K, d)
    embedded: np.ndarray  # (B, K, d)
    combined: np.ndarray  # (B, K, d)


@dataclass
class QuantileValueNet:
    """State encoder, fraction embedding, and per-action quantile head."""

    encoder_weight: np.ndarray  # (S, d)
    encoder_bias: np.ndarray  # (d,)
    embedding: CosineEmbedding
    head_weight: np.ndarray  # (d, A)
    head_bias: np.ndarray  # (A,)

    def __post_init__(self):
        d = self.encoder_weight.shape[1]
        if self.encoder_bias.shape != (d,):
            raise ValueError("encoder bias dimension mismatch")
        if self.embedding.weights.shape[1] != d:
            raise ValueError("embedding output dimension must match the encoder")
        if self.head_weight.shape[0] != d or self.head_bias.shape != (self.head_weight.shape[1],):
            raise ValueError("head dimensions mismatch")

    @classmethod
    def initialize(
        cls,
        state_dim: int,
        action_count: int,
        hidden_dim: int = 64,
        n_basis: int = 64,
        rng: np.random.Generator | None = None,
    ) -> "QuantileValueNet":
        rng = rng or np.random.default_rng()

        def layer(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            encoder_weight=layer(state_dim, (state_dim, hidden_dim)),
            encoder_bias=layer(state_dim, (hidden_dim,)),
            embedding=CosineEmbedding(
                layer(n_basis, (n_basis, hidden_dim)), layer(n_basis, (hidden_dim,))
            ),
            head_weight=layer(hidden_dim, (hidden_dim, action_count)),
            head_bias=layer(hidden_dim, (action_count,)),
        )

    @property
    def state_dim(self) -> int:
        return self.encoder_weight.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.encoder_weight.shape[1]

    @property
    def action_count(self) -> int:
        return self.head_weight.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live views keyed by stable names; mutating them mutates the net."""
        return {
            "encoder.weight": self.encoder_weight,
            "encoder.bias": self.encoder_bias,
            "embedding.weight": self.embedding.weights,
            "embedding.bias": self.embedding.biases,
            "head.weight": self.head_weight,
            "head.bias": self.head_bias,
        }

    def forward_batch(self, states: np.ndarray, taus: np.ndarray):
        """Quantile values (B, K, A) plus the record needed for backward."""
        x = np.atleast_2d(np.asarray(states, dtype=float))  # (B, S)
        t = np.atleast_2d(np.asarray(taus, dtype=float))  # (B, K)
        if x.shape[0] != t.shape[0]:
            raise ValueError("states and taus disagree on batch size")
        if x.shape[1] != self.state_dim:
            raise ValueError("state dimension mismatch")

        pre_enc = x @ self.encoder_weight + self.encoder_bias
        enc = np.maximum(pre_enc, 0.0)
        basis = cosine_basis(t, self.embedding.n_basis)  # (B, K, n)
        pre_emb = basis @ self.embedding.weights + self.embedding.biases
        emb = np.maximum(pre_emb, 0.0)
        combined = enc[:, np.newaxis, :] * emb
        out = combined @ self.head_weight + self.head_bias
        record = ForwardRecord(x, basis, pre_enc, enc, pre_emb, emb, combined)
        return out, record

    def forward(self, state: np.ndarray, taus: np.ndarray) -> np.ndarray:
        """Single-state convenience wrapper returning (K, A)."""
        out, _ = self.forward_batch(
            np.asarray(state, dtype=float)[np.newaxis, :],
            np.atleast_1d(np.asarray(taus, dtype=float))[np.newaxis, :],
        )
        return out[0]

    def backward(self, record: ForwardRecord, upstream: np.ndarray) -> dict[str, np.ndarray]:
        """Exact reverse-mode gradients, summed over the batch.

        ``upstream`` holds dLoss/dOutput with shape (B, K, A). ReLU takes
        subgradient 0 at 0 (strict positivity mask).
        """
        g = np.asarray(upstream, dtype=float)
        if g.shape != record.combined.shape[:2] + (self.action_count,):
            raise ValueError("upstream gradient shape mismatch")

        d = self.hidden_dim
        flat_combined = record.combined.reshape(-1, d)
        flat_up = g.reshape(-1, self.action_count)
        grad_head_w = flat_combined.T @ flat_up
        grad_head_b = flat_up.sum(axis=0)

        d_combined = g @ self.head_weight.T  # (B, K, d)
        d_enc = np.sum(d_combined * record.embedded, axis=1)  # (B, d)
        d_emb = d_combined * record.encoded[:, np.newaxis, :]  # (B, K, d)

        d_pre_enc = d_enc * (record.pre_encoder > 0.0)
        d_pre_emb = d_emb * (record.pre_embed > 0.0)

        grad_enc_w = record.states.T @ d_pre_enc
        grad_enc_b = d_pre_enc.sum(axis=0)
        n = self.embedding.n_basis
        grad_emb_w = record.basis.reshape(-1, n).T @ d_pre_emb.reshape(-1, d)
        grad_emb_b = d_pre_emb.reshape(-1, d).sum(axis=0)

        return {
            "encoder.weight": grad_enc_w,
            "encoder.bias": grad_enc_b,
            "embedding.weight": grad_emb_w,
            "embedding.bias": grad_emb_b,
            "head.weight": grad_head_w,
            "head.bias": grad_head_b,
        }

    def clone(self) -> "QuantileValueNet":
        return QuantileValueNet(
            encoder_weight=self.encoder_weight.copy(),
            encoder_bias=self.encoder_bias.copy(),
            embedding=CosineEmbedding(
                self.embedding.weights.copy(), self.embedding.biases.copy()
            ),
            head_weight=self.head_weight.copy(),
            head_bias=self.head_bias.copy(),
        )


# ---------------------------------------------------------------------------
# Checkpoints


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """JSON checkpoint: named arrays with explicit shapes, plus metadata."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(a.shape), "data": np.asarray(a, dtype=float).ravel().tolist()}
            for name, a in arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {payload.get('format')!r}")
    arrays = {
        name: np.array(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
    return arrays, payload.get("meta", {})


def save_net(path: str, net: QuantileValueNet, meta: dict | None = None) -> None:
    save_arrays(path, net.parameters(), meta)


def load_net(path: str) -> QuantileValueNet:
    arrays, _ = load_arrays(path)
    try:
        return QuantileValueNet(
            encoder_weight=arrays["encoder.weight"],
            encoder_bias=arrays["encoder.bias"],
            embedding=CosineEmbedding(arrays["embedding.weight"], arrays["embedding.bias"]),
            head_weight=arrays["head.weight"],
            head_bias=arrays["head.bias"],
        )
    except KeyError as missing:
        raise ValueError(f"checkpoint is missing parameter {missing}") from None
