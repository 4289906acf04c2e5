"""Miniature transformer encoder with a single-layer relevance head.

Pre-norm multi-head self-attention blocks over token + position + segment
embeddings, a final layer norm, and a logistic classifier on the leading
classification token. Forward scoring, point-wise cross-entropy training
with full manual backpropagation, and a finite-difference gradient check.

Entity tokens are not rows of the token table: their input vectors arrive
through a provider callable and are treated as constants during training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLoss, ParseError
from .tokenizer import ModelInput

LN_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 512
    n_tokens: int = 64
    dropout: float = 0.0
    seed: int = 0
    init_scale: float = 0.05

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_positions", "n_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.init_scale <= 0.0:
            raise ValueError("init_scale must be positive")
        if self.dropout > 0.0:
            warnings.warn("dropout > 0 voids the bitwise-determinism contract")


@dataclass
class EncoderWeights:
    config: EncoderConfig
    params: dict[str, np.ndarray]

    def clone(self) -> "EncoderWeights":
        return EncoderWeights(self.config, {k: v.copy() for k, v in self.params.items()})

    def token_vectors(self, vocab) -> dict[str, np.ndarray]:
        """Native rows keyed by surface, for alignment fitting."""
        table = self.params["token_table"]
        return {vocab.surface_of(i): table[i] for i in range(vocab.n_native)}

    def save(self, path) -> None:
        cfg = self.config
        header = "\t".join(
            f"{k}={getattr(cfg, k)}"
            for k in ("d_model", "n_layers", "n_heads", "d_ff", "max_positions",
                      "n_tokens", "dropout", "seed", "init_scale")
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for name in sorted(self.params):
                tensor = self.params[name]
                shape = " ".join(str(s) for s in tensor.shape)
                fh.write(f"{name}\t{shape}\n")
                fh.write(" ".join(repr(v) for v in tensor.ravel()) + "\n")

    @classmethod
    def load(cls, path) -> "EncoderWeights":
        with open(path, encoding="utf-8") as fh:
            fields = dict(item.split("=", 1) for item in fh.readline().split())
            try:
                config = EncoderConfig(
                    d_model=int(fields["d_model"]),
                    n_layers=int(fields["n_layers"]),
                    n_heads=int(fields["n_heads"]),
                    d_ff=int(fields["d_ff"]),
                    max_positions=int(fields["max_positions"]),
                    n_tokens=int(fields["n_tokens"]),
                    dropout=float(fields["dropout"]),
                    seed=int(fields["seed"]),
                    init_scale=float(fields.get("init_scale", "0.05")),
                )
            except KeyError as missing:
                raise ParseError(f"weights header missing field {missing}", line=1) from None
            params = {}
            while True:
                header = fh.readline()
                if not header:
                    break
                name, _, shape_str = header.rstrip("\n").partition("\t")
                if not name:
                    continue
                shape = tuple(int(s) for s in shape_str.split()) if shape_str.strip() else ()
                values = np.array([float(v) for v in fh.readline().split()])
                params[name] = values.reshape(shape)
        return cls(config, params)


@dataclass
class ScoreOutput:
    """Relevance probability with introspection tensors.

    ``attentions`` has shape (n_layers, n_heads, n, n) with rows summing
    to 1; ``final_hidden`` is (n, d_model).
    """

    probability: float
    final_hidden: np.ndarray
    attentions: np.ndarray
    logit: float = 0.0


@dataclass
class TrainingBatch:
    inputs: list[ModelInput]
    labels: list[int]

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("labels must align 1:1 with inputs")


def init(config: EncoderConfig) -> EncoderWeights:
    """Seeded deterministic initialization."""
    rng = np.random.default_rng(config.seed)
    d, ff = config.d_model, config.d_ff

    def dense(*shape):
        return rng.normal(0.0, config.init_scale, size=shape)

    params = {
        "token_table": dense(config.n_tokens, d),
        "position_table": dense(config.max_positions, d),
        "segment_table": dense(2, d),
    }
    for i in range(config.n_layers):
        prefix = f"layer{i}"
        params[f"{prefix}.ln1.gain"] = np.ones(d)
        params[f"{prefix}.ln1.bias"] = np.zeros(d)
        for proj in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.attn.{proj}"] = dense(d, d)
        for proj in ("bq", "bk", "bv", "bo"):
            params[f"{prefix}.attn.{proj}"] = np.zeros(d)
        params[f"{prefix}.ln2.gain"] = np.ones(d)
        params[f"{prefix}.ln2.bias"] = np.zeros(d)
        params[f"{prefix}.ffn.w1"] = dense(d, ff)
        params[f"{prefix}.ffn.b1"] = np.zeros(ff)
        params[f"{prefix}.ffn.w2"] = dense(ff, d)
        params[f"{prefix}.ffn.b2"] = np.zeros(d)
    params["final_norm.gain"] = np.ones(d)
    params["final_norm.bias"] = np.zeros(d)
    params["classifier.weight"] = dense(d)
    params["classifier.bias"] = np.zeros(())
    return EncoderWeights(config, params)


def _gelu(x):
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _gelu_grad(x):
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = (x - mu) * inv_std
    return x_hat * gain + bias, (x_hat, inv_std)

def _layer_norm_backward(d_out, cache, gain):
    x_hat, inv_std = cache
    d_gain = (d_out * x_hat).sum(axis=0)
    d_bias = d_out.sum(axis=0)
    d_hat = d_out * gain
    dx = inv_std * (
        d_hat
        - d_hat.mean(axis=-1, keepdims=True)
        - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _softmax(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _embed(weights: EncoderWeights, model_input: ModelInput, entity_vectors):
    cfg = weights.config
    n = len(model_input.token_ids)
    if n > cfg.max_positions:
        raise ValueError(f"input length {n} exceeds max_positions {cfg.max_positions}")
    token_table = weights.params["token_table"]
    x = np.empty((n, cfg.d_model))
    for pos, tid in enumerate(model_input.token_ids):
        if tid < cfg.n_tokens:
            x[pos] = token_table[tid]
        else:
            if entity_vectors is None:
                raise ValueError(f"entity token id {tid} but no entity vector provider")
            x[pos] = entity_vectors(tid)
    x += weights.params["position_table"][:n]
    x += weights.params["segment_table"][np.asarray(model_input.segment_ids)]
    return x


def _forward_full(weights: EncoderWeights, model_input: ModelInput, entity_vectors=None,
                  dropout_rng=None):
    """Forward pass retaining every intermediate needed for backprop."""
    cfg = weights.config
    p = weights.params
    n_heads, d = cfg.n_heads, cfg.d_model
    d_head = d // n_heads
    scale = 1.0 / math.sqrt(d_head)
    drop = cfg.dropout if dropout_rng is not None else 0.0

    x = _embed(weights, model_input, entity_vectors)
    n = x.shape[0]
    cache = {"input": model_input, "x0": x, "layers": [], "dropout": drop}
    attentions = np.empty((cfg.n_layers, n_heads, n, n))

    for i in range(cfg.n_layers):
        prefix = f"layer{i}"
        layer: dict = {"x_in": x}
        a, layer["ln1"] = _layer_norm(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
        layer["a"] = a
        q = a @ p[f"{prefix}.attn.wq"] + p[f"{prefix}.attn.bq"]
        k = a @ p[f"{prefix}.attn.wk"] + p[f"{prefix}.attn.bk"]
        v = a @ p[f"{prefix}.attn.wv"] + p[f"{prefix}.attn.bv"]
        qh = q.reshape(n, n_heads, d_head).transpose(1, 0, 2)
        kh = k.reshape(n, n_heads, d_head).transpose(1, 0, 2)
        vh = v.reshape(n, n_heads, d_head).transpose(1, 0, 2)
        probs = _softmax(qh @ kh.transpose(0, 2, 1) * scale)
        attentions[i] = probs
        ctx = (probs @ vh).transpose(1, 0, 2).reshape(n, d)
        attn_out = ctx @ p[f"{prefix}.attn.wo"] + p[f"{prefix}.attn.bo"]
        if drop > 0.0:
            mask = (dropout_rng.random(attn_out.shape) >= drop) / (1.0 - drop)
            attn_out *= mask
            layer["attn_mask"] = mask
        layer.update(qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx)
        x = x + attn_out

        layer["x_mid"] = x
        f, layer["ln2"] = _layer_norm(x, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])
        layer["f"] = f
        h1 = f @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"]
        u = _gelu(h1)
        ffn_out = u @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]
        if drop > 0.0:
            mask = (dropout_rng.random(ffn_out.shape) >= drop) / (1.0 - drop)
            ffn_out *= mask
            layer["ffn_mask"] = mask
        layer.update(h1=h1, u=u)
        x = x + ffn_out
        cache["layers"].append(layer)

    cache["x_final_in"] = x
    hidden, cache["final_ln"] = _layer_norm(x, p["final_norm.gain"], p["final_norm.bias"])
    cache["hidden"] = hidden
    logit = float(hidden[0] @ p["classifier.weight"] + p["classifier.bias"])
    cache["logit"] = logit
    return cache, attentions


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def forward(weights: EncoderWeights, model_input: ModelInput, entity_vectors=None) -> ScoreOutput:
    """Pure scoring pass; concurrently callable on shared weights."""
    cache, attentions = _forward_full(weights, model_input, entity_vectors)
    s = min(max(_sigmoid(cache["logit"]), 1e-15), 1.0 - 1e-15)
    return ScoreOutput(s, cache["hidden"], attentions, logit=cache["logit"])


def _backward(weights: EncoderWeights, cache, d_logit: float):
    """Gradients of d_logit * logit w.r.t. every parameter and nothing else."""
    cfg = weights.config
    p = weights.params
    n_heads, d = cfg.n_heads, cfg.d_model
    d_head = d // n_heads
    scale = 1.0 / math.sqrt(d_head)
    grads = {name: np.zeros_like(tensor) for name, tensor in p.items()}

    hidden = cache["hidden"]
    d_hidden = np.zeros_like(hidden)
    d_hidden[0] = d_logit * p["classifier.weight"]
    grads["classifier.weight"] += d_logit * hidden[0]
    grads["classifier.bias"] += d_logit

    dx, d_gain, d_bias = _layer_norm_backward(d_hidden, cache["final_ln"], p["final_norm.gain"])
    grads["final_norm.gain"] += d_gain
    grads["final_norm.bias"] += d_bias

    for i in reversed(range(cfg.n_layers)):
        prefix = f"layer{i}"
        layer = cache["layers"][i]
        n = layer["x_in"].shape[0]

        # x_out = x_mid + ffn_out
        d_ffn_out = dx if "ffn_mask" not in layer else dx * layer["ffn_mask"]
        grads[f"{prefix}.ffn.w2"] += layer["u"].T @ d_ffn_out
        grads[f"{prefix}.ffn.b2"] += d_ffn_out.sum(axis=0)
        d_u = d_ffn_out @ p[f"{prefix}.ffn.w2"].T
        d_h1 = d_u * _gelu_grad(layer["h1"])
        grads[f"{prefix}.ffn.w1"] += layer["f"].T @ d_h1
        grads[f"{prefix}.ffn.b1"] += d_h1.sum(axis=0)
        d_f = d_h1 @ p[f"{prefix}.ffn.w1"].T
        d_mid, d_gain, d_bias = _layer_norm_backward(d_f, layer["ln2"], p[f"{prefix}.ln2.gain"])
        grads[f"{prefix}.ln2.gain"] += d_gain
        grads[f"{prefix}.ln2.bias"] += d_bias
        dx = dx + d_mid

        # x_mid = x_in + attn_out
        d_attn_out = dx if "attn_mask" not in layer else dx * layer["attn_mask"]
        grads[f"{prefix}.attn.wo"] += layer["ctx"].T @ d_attn_out
        grads[f"{prefix}.attn.bo"] += d_attn_out.sum(axis=0)
        d_ctx = (d_attn_out @ p[f"{prefix}.attn.wo"].T).reshape(n, n_heads, d_head).transpose(1, 0, 2)
        probs, qh, kh, vh = layer["probs"], layer["qh"], layer["kh"], layer["vh"]
        d_probs = d_ctx @ vh.transpose(0, 2, 1)
        d_vh = probs.transpose(0, 2, 1) @ d_ctx
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        d_qh = d_scores @ kh * scale
        d_kh = d_scores.transpose(0, 2, 1) @ qh * scale
        d_q = d_qh.transpose(1, 0, 2).reshape(n, d)
        d_k = d_kh.transpose(1, 0, 2).reshape(n, d)
        d_v = d_vh.transpose(1, 0, 2).reshape(n, d)
        a = layer["a"]
        d_a = d_q @ p[f"{prefix}.attn.wq"].T
        d_a += d_k @ p[f"{prefix}.attn.wk"].T
        d_a += d_v @ p[f"{prefix}.attn.wv"].T
        grads[f"{prefix}.attn.wq"] += a.T @ d_q
        grads[f"{prefix}.attn.wk"] += a.T @ d_k
        grads[f"{prefix}.attn.wv"] += a.T @ d_v
        grads[f"{prefix}.attn.bq"] += d_q.sum(axis=0)
        grads[f"{prefix}.attn.bk"] += d_k.sum(axis=0)
        grads[f"{prefix}.attn.bv"] += d_v.sum(axis=0)
        d_in, d_gain, d_bias = _layer_norm_backward(d_a, layer["ln1"], p[f"{prefix}.ln1.gain"])
        grads[f"{prefix}.ln1.gain"] += d_gain
        grads[f"{prefix}.ln1.bias"] += d_bias
        dx = dx + d_in

    # Embedding tables; entity positions contribute no token-table gradient.
    model_input = cache["input"]
    for pos, tid in enumerate(model_input.token_ids):
        if tid < cfg.n_tokens:
            grads["token_table"][tid] += dx[pos]
        grads["position_table"][pos] += dx[pos]
        grads["segment_table"][model_input.segment_ids[pos]] += dx[pos]
    return grads


def example_loss_and_grads(weights, model_input, label, entity_vectors=None,
                           dropout_rng=None, want_grads=True):
    """Cross-entropy loss of one example and, optionally, its gradients."""
    cache, _ = _forward_full(weights, model_input, entity_vectors, dropout_rng)
    z = cache["logit"]
    # Stable: -label*log(s) - (1-label)*log(1-s) with s = sigmoid(z).
    loss = max(z, 0.0) - label * z + math.log1p(math.exp(-abs(z)))
    if not want_grads:
        return loss, None
    d_logit = _sigmoid(z) - label
    return loss, _backward(weights, cache, d_logit)


def batch_loss(weights, batch: TrainingBatch, entity_vectors=None) -> float:
    """Point-wise cross-entropy summed over the batch."""
    total = 0.0
    for model_input, label in zip(batch.inputs, batch.labels):
        loss, _ = example_loss_and_grads(
            weights, model_input, label, entity_vectors, want_grads=False
        )
        total += loss
    return total


def train_pointwise(
    weights: EncoderWeights,
    batches: list[TrainingBatch],
    lr: float,
    epochs: int,
    entity_vectors=None,
    warmup_steps: int = 0,
) -> tuple[EncoderWeights, list[float]]:
    """Plain SGD on the point-wise loss; mutates and returns ``weights``.

    Gradients are averaged within each batch. With ``warmup_steps`` the
    learning rate ramps linearly from 0 over that many batch updates.
    """
    if not batches:
        raise ValueError("batches must be non-empty")
    dropout_rng = (
        np.random.default_rng(weights.config.seed + 1)
        if weights.config.dropout > 0.0
        else None
    )
    loss_trace = []
    step = 0
    for epoch in range(epochs):
        total_loss = 0.0
        n_examples = 0
        for batch_idx, batch in enumerate(batches):
            grads = None
            batch_total = 0.0
            for model_input, label in zip(batch.inputs, batch.labels):
                loss, g = example_loss_and_grads(
                    weights, model_input, label, entity_vectors, dropout_rng
                )
                if not math.isfinite(loss):
                    raise NonFiniteLoss(
                        f"epoch {epoch} batch {batch_idx}: loss={loss!r}, "
                        f"logit overflow or corrupted weights"
                    )
                batch_total += loss
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
            step += 1
            lr_t = lr if warmup_steps <= 0 else lr * min(1.0, step / warmup_steps)
            scale = lr_t / len(batch.inputs)
            for name, tensor in weights.params.items():
                tensor -= scale * grads[name]
            total_loss += batch_total
            n_examples += len(batch.inputs)
        loss_trace.append(total_loss / n_examples)
    # A final-batch update can blow up after the last loss check.
    for name, tensor in weights.params.items():
        if not np.all(np.isfinite(tensor)):
            raise NonFiniteLoss(f"non-finite values in {name} after training")
    return weights, loss_trace


def grad_check(
    weights: EncoderWeights,
    model_input: ModelInput,
    label: int,
    entity_vectors=None,
    n_samples: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    subset: str | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_samples`` parameter coordinates (optionally restricted to
    names starting with ``subset``). Coordinates with near-zero gradient
    are judged on absolute deviation via the denominator floor.
    """
    _, grads = example_loss_and_grads(weights, model_input, label, entity_vectors)

    names = sorted(n for n in weights.params if subset is None or n.startswith(subset))
    sizes = [weights.params[n].size for n in names]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)

    worst = 0.0
    for flat in sorted(int(i) for i in picks):
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[slot]
        tensor = weights.params[name]
        idx = np.unravel_index(flat - offsets[slot], tensor.shape) if tensor.shape else ()
        original = tensor[idx]
        tensor[idx] = original + step
        loss_plus, _ = example_loss_and_grads(
            weights, model_input, label, entity_vectors, want_grads=False
        )
        tensor[idx] = original - step
        loss_minus, _ = example_loss_and_grads(
            weights, model_input, label, entity_vectors, want_grads=False
        )
        tensor[idx] = original
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = grads[name][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
        worst = max(worst, err)
    return worst
