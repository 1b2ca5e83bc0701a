"""Tiny transformer encoder, Adam, seeded RNG streams and JSON checkpoints."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose (``model-init``, ``data-order``, ...).

    Streams with different names never share state, so re-seeding one component
    leaves the others untouched.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


class Module:
    """Container whose ``Tensor`` attributes and sub-modules are its parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise ValueError(f"state dict keys do not match: {missing[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, scale: float = 1.0,
                 bias: bool = True):
        self.weight = _param(rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out)))
        self.bias = _param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out if self.bias is None else out + self.bias


class LayerNorm(Module):
    def __init__(self, h: int):
        self.gamma = _param(np.ones(h))
        self.beta = _param(np.zeros(h))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)


class SelfAttention(Module):
    def __init__(self, h: int, n_heads: int, rng: np.random.Generator):
        if h % n_heads:
            raise ValueError(f"hidden width {h} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(h, h, rng)
        # a key bias only shifts each score row, which softmax ignores
        self.k = Linear(h, h, rng, bias=False)
        self.v = Linear(h, h, rng)
        self.o = Linear(h, h, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, h = x.shape
        nh, dh = self.n_heads, h // self.n_heads

        def heads(z):
            return ag.transpose(z.reshape(b, t, nh, dh), (0, 2, 1, 3))

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            # padded keys get a large negative logit; every row keeps at least one valid key
            scores = scores + np.where(mask, 0.0, -1e9)[:, None, None, :]
        attn = ag.softmax(scores, axis=-1)
        ctx = ag.transpose(attn @ v, (0, 2, 1, 3)).reshape(b, t, h)
        return self.o(ctx)


class Block(Module):
    """Post-norm transformer block: attention and feed-forward, each with a residual."""

    def __init__(self, h: int, h_mid: int, n_heads: int, rng: np.random.Generator):
        self.attn = SelfAttention(h, n_heads, rng)
        self.ln1 = LayerNorm(h)
        self.ff1 = Linear(h, h_mid, rng)
        self.ff2 = Linear(h_mid, h, rng)
        self.ln2 = LayerNorm(h)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = self.ln1(x + self.attn(x, mask))
        return self.ln2(x + self.ff2(ag.gelu(self.ff1(x))))


class EncoderStack(Module):
    def __init__(self, n_layers: int, h: int, h_mid: int, n_heads: int, rng: np.random.Generator):
        self.blocks = [Block(h, h_mid, n_heads, rng) for _ in range(n_layers)]

    def __call__(self, x: Tensor, mask=None) -> list[Tensor]:
        states = []
        for blk in self.blocks:
            x = blk(x, mask)
            states.append(x)
        return states


@dataclass(frozen=True)
class EncoderSpec:
    n_layers: int = 2
    h_units: int = 16
    h_mid: int = 32
    n_heads: int = 2
    vocab_size: int = 64
    n_classes: int = 2
    head_kind: str = "classification"
    max_len: int = 64

    def __post_init__(self):
        if min(self.n_layers, self.h_units, self.h_mid, self.n_heads,
               self.vocab_size, self.n_classes, self.max_len) < 1:
            raise ValueError("encoder sizes must be positive")
        if self.h_units % self.n_heads:
            raise ValueError("h_units must be divisible by n_heads")
        if self.head_kind not in ("classification", "tagging"):
            raise ValueError(f"unknown head kind {self.head_kind!r}")


class EncoderModel(Module):
    """Token embedding + positional embedding + transformer blocks + task head.

    The classification head reads the masked mean of the last hidden state; the
    tagging head scores every position.
    """

    def __init__(self, spec: EncoderSpec, seed: int = 0):
        self.spec = spec
        rng = rng_stream(seed, "model-init")
        self.tok = _param(rng.normal(0.0, 1.0, size=(spec.vocab_size, spec.h_units)))
        self.pos = _param(rng.normal(0.0, 0.1, size=(spec.max_len, spec.h_units)))
        self.stack = EncoderStack(spec.n_layers, spec.h_units, spec.h_mid, spec.n_heads, rng)
        self.head = Linear(spec.h_units, spec.n_classes, rng)

    @property
    def n_layers(self) -> int:
        return self.spec.n_layers

    def embed(self, tokens: np.ndarray) -> Tensor:
        """Token embeddings (without positions) for a ``(B, T)`` id array."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] < 1:
            raise ValueError("tokens must be a non-empty (batch, length) array")
        if tokens.min() < 0 or tokens.max() >= self.spec.vocab_size:
            raise ValueError("token id out of range for this vocabulary")
        return ag.embedding(self.tok, tokens)

    def forward_embedded(self, x: Tensor, mask: np.ndarray | None = None):
        """Run on ``(B, T, h_units)`` embeddings. Returns ``(logits, hidden_states)``."""
        b, t, h = x.shape
        if h != self.spec.h_units:
            raise ValueError(f"embedded input width {h} != h_units {self.spec.h_units}")
        if t < 1:
            raise ValueError("empty sequence")
        if t > self.spec.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.spec.max_len}")
        x = x + self.pos[:t]
        states = self.stack(x, mask)
        last = states[-1]
        if self.spec.head_kind == "tagging":
            return self.head(last), states
        return self.head(masked_mean(last, mask)), states

    def forward(self, tokens: np.ndarray, mask: np.ndarray | None = None):
        return self.forward_embedded(self.embed(tokens), mask)

    __call__ = forward


def masked_mean(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Mean over the position axis of ``(B, T, h)``, ignoring padded positions."""
    if mask is None:
        return x.mean(axis=1)
    w = mask.astype(np.float64)
    w = w / w.sum(axis=1, keepdims=True)
    return (x * w[:, :, None]).sum(axis=1)


def encoder_forward(model: EncoderModel, tokens) -> tuple[Tensor, list[Tensor]]:
    """Single-sequence forward pass.

    ``tokens`` is either an integer sequence or a ``T x h_units`` embedded matrix.
    Returns logits (``1 x C`` or ``T x C``) and one ``T x h_units`` state per layer.
    """
    if isinstance(tokens, Tensor) or (np.asarray(tokens).ndim == 2):
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        if x.shape[0] < 1:
            raise ValueError("empty sequence")
        logits, states = model.forward_embedded(x.reshape(1, *x.shape))
    else:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("empty sequence")
        logits, states = model.forward(ids[None, :])
    if model.spec.head_kind == "tagging":
        logits = logits[0]
    return logits, [s[0] for s in states]


# ---------------------------------------------------------------- optimiser

@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(state: OptimState, params: Sequence[np.ndarray],
                   grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"grad shape {np.shape(g)} != param shape {np.shape(p)}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, clip: float | None = 1.0):
        self.params = list(params)
        self.state = OptimState(lr=lr)
        self.clip = clip

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if self.clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip:
                grads = [g * (self.clip / norm) for g in grads]
        optimizer_step(self.state, [p.data for p in self.params], grads)


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: EncoderModel, path) -> None:
    doc = {
        "kind": "EncoderModel",
        "spec": vars(model.spec),
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in model.state_dict().items()},
    }
    from .io import atomic_write_text
    atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path) -> EncoderModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "EncoderModel":
        raise ValueError(f"{path} is not an encoder checkpoint")
    model = EncoderModel(EncoderSpec(**doc["spec"]))
    model.load_state_dict({k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                           for k, v in doc["params"].items()})
    return model
