"""Minimal dense neural network core with reverse-mode gradients.

Tensors are contiguous 2-D float64 arrays. Every operation records its
backward closure on a tape; ``backward(loss)`` walks the tape in reverse
topological order and accumulates gradients on parameter tensors. The op
set is exactly what the attention Q-network needs, nothing more.

The network maps a K x m matrix of neighbor observations (target
intersection in row 0) to one Q-value per phase:

    H   = relu(obs @ embed_w + embed_b)                 (K x n)
    e_h = (H[0] @ query_w[h]) . (H @ key_w[h])^T        (per head, 1 x K)
    a_h = softmax(e_h / temperature)
    mix = concat_h(a_h @ (H @ value_w[h])) / heads      (1 x n)
    hm  = relu(mix @ proj_w + proj_b)                   (1 x n)
    q   = hm @ head_w + head_b                          (1 x p)

All forward ops are checked finite; a NaN or Inf anywhere trips an
assertion rather than propagating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Multiply-accumulate counter, active inside count_ops().
_OP_COUNTER: list | None = None


class OpCounter:
    def __init__(self):
        self.macs = 0


class count_ops:
    """Context manager counting multiply-accumulates of forward ops."""

    def __enter__(self) -> OpCounter:
        global _OP_COUNTER
        self._saved = _OP_COUNTER
        counter = OpCounter()
        _OP_COUNTER = counter
        return counter

    def __exit__(self, *exc):
        global _OP_COUNTER
        _OP_COUNTER = self._saved
        return False


def _tally(macs: int) -> None:
    if _OP_COUNTER is not None:
        _OP_COUNTER.macs += macs


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        assert np.isfinite(arr).all(), "non-finite values entering a tensor"
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad or t._parents:
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad += g


def _check(data: np.ndarray) -> np.ndarray:
    assert np.isfinite(data).all(), "non-finite values produced by a tensor op"
    return data


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ "
            f"({b.shape[0]}x{b.shape[1]})")
    _tally(a.shape[0] * a.shape[1] * b.shape[1])
    out = Tensor(_check(a.data @ b.data), parents=(a, b))

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; a 1-row b broadcasts across a's rows (bias)."""
    if a.shape[1] != b.shape[1] or (b.shape[0] not in (1, a.shape[0])):
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    _tally(a.shape[0] * a.shape[1])
    out = Tensor(_check(a.data + b.data), parents=(a, b))
    broadcast = b.shape[0] == 1 and a.shape[0] > 1

    def backward(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0, keepdims=True) if broadcast else g)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")
    out = Tensor(_check(a.data - b.data), parents=(a, b))

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    _tally(a.data.size)
    mask = a.data > 0.0  # gradient at exactly 0 is defined as 0
    out = Tensor(_check(np.where(mask, a.data, 0.0)), parents=(a,))

    def backward(g):
        _accum(a, g * mask)

    out._backward = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    _tally(a.data.size)
    out = Tensor(_check(a.data * s), parents=(a,))

    def backward(g):
        _accum(a, g * s)

    out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    _tally(a.data.size)
    out = Tensor(_check(a.data * a.data), parents=(a,))

    def backward(g):
        _accum(a, 2.0 * a.data * g)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(_check(a.data.T), parents=(a,))

    def backward(g):
        _accum(a, g.T)

    out._backward = backward
    return out


def gather_row(a: Tensor, i: int) -> Tensor:
    if not 0 <= i < a.shape[0]:
        raise ValueError(f"row {i} out of range for shape {a.shape}")
    out = Tensor(_check(a.data[i:i + 1]), parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[i] = g[0]
        _accum(a, full)

    out._backward = backward
    return out


def gather_col(a: Tensor, j: int) -> Tensor:
    if not 0 <= j < a.shape[1]:
        raise ValueError(f"column {j} out of range for shape {a.shape}")
    out = Tensor(_check(a.data[:, j:j + 1]), parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, j:j + 1] = g
        _accum(a, full)

    out._backward = backward
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("nothing to concatenate")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ValueError("concat_cols needs equal row counts")
    out = Tensor(_check(np.concatenate([p.data for p in parts], axis=1)),
                 parents=tuple(parts))
    widths = [p.shape[1] for p in parts]

    def backward(g):
        at = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, at:at + w])
            at += w

    out._backward = backward
    return out


def vstack(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("nothing to stack")
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise ValueError("vstack needs equal column counts")
    out = Tensor(_check(np.concatenate([p.data for p in parts], axis=0)),
                 parents=tuple(parts))
    heights = [p.shape[0] for p in parts]

    def backward(g):
        at = 0
        for p, h in zip(parts, heights):
            _accum(p, g[at:at + h])
            at += h

    out._backward = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    _tally(a.data.size)
    n = a.data.size
    out = Tensor(_check(np.array([[a.data.mean()]])), parents=(a,))

    def backward(g):
        _accum(a, np.full_like(a.data, g[0, 0] / n))

    out._backward = backward
    return out


def softmax_rows(a: Tensor, temperature: float) -> Tensor:
    """Row-wise softmax of a / temperature, stabilized by max subtraction."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    _tally(3 * a.data.size)
    z = a.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    out = Tensor(_check(probs), parents=(a,))

    def backward(g):
        dot = (g * probs).sum(axis=1, keepdims=True)
        _accum(a, probs * (g - dot) / temperature)

    out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a 1x1 loss; gradients land on parameters."""
    if not isinstance(loss, Tensor):
        raise ValueError("backward expects a Tensor")
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be scalar (1x1), got {loss.shape}")
    if not loss._parents:
        raise ValueError("loss has no recorded computation graph")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for t in topo:
        t.grad = None
    loss.grad = np.ones((1, 1))
    for t in reversed(topo):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# -- the Q-network -------------------------------------------------------------

@dataclass
class NetConfig:
    obs_dim: int = 52
    hidden: int = 32
    heads: int = 4
    actions: int = 4
    temperature: float = 1.0

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(
                f"hidden width {self.hidden} not divisible by {self.heads} heads")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class QNetworkParams:
    cfg: NetConfig
    embed_w: Tensor
    embed_b: Tensor
    query_w: list[Tensor]
    key_w: list[Tensor]
    value_w: list[Tensor]
    proj_w: Tensor
    proj_b: Tensor
    head_w: Tensor
    head_b: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        out = [("embed_w", self.embed_w), ("embed_b", self.embed_b)]
        for h in range(self.cfg.heads):
            out.append((f"query_w.{h}", self.query_w[h]))
            out.append((f"key_w.{h}", self.key_w[h]))
            out.append((f"value_w.{h}", self.value_w[h]))
        out.extend([("proj_w", self.proj_w), ("proj_b", self.proj_b),
                    ("head_w", self.head_w), ("head_b", self.head_b)])
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def copy(self) -> "QNetworkParams":
        clone = init_params(self.cfg, seed=0)
        for (_, src), (_, dst) in zip(self.named(), clone.named()):
            dst.data = src.data.copy()
        return clone


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(cfg: NetConfig, seed: int) -> QNetworkParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    m, n, d, p = cfg.obs_dim, cfg.hidden, cfg.head_dim, cfg.actions
    return QNetworkParams(
        cfg=cfg,
        embed_w=tensor(_glorot(rng, m, n), requires_grad=True),
        embed_b=tensor(np.zeros((1, n)), requires_grad=True),
        query_w=[tensor(_glorot(rng, n, d), requires_grad=True)
                 for _ in range(cfg.heads)],
        key_w=[tensor(_glorot(rng, n, d), requires_grad=True)
               for _ in range(cfg.heads)],
        value_w=[tensor(_glorot(rng, n, d), requires_grad=True)
                 for _ in range(cfg.heads)],
        proj_w=tensor(_glorot(rng, n, n), requires_grad=True),
        proj_b=tensor(np.zeros((1, n)), requires_grad=True),
        head_w=tensor(_glorot(rng, n, p), requires_grad=True),
        head_b=tensor(np.zeros((1, p)), requires_grad=True),
    )


def embed(obs_matrix, params: QNetworkParams) -> Tensor:
    """Hidden features of each neighbor row: relu(obs @ W + b)."""
    obs = obs_matrix if isinstance(obs_matrix, Tensor) else tensor(obs_matrix)
    if obs.shape[1] != params.cfg.obs_dim:
        raise ValueError(
            f"observation width {obs.shape[1]} != expected {params.cfg.obs_dim}")
    return relu(add(matmul(obs, params.embed_w), params.embed_b))


def attention_scores(hidden: Tensor, target_row: int,
                     params: QNetworkParams) -> Tensor:
    """Per-head importance of every neighbor to the target row (heads x K)."""
    target = gather_row(hidden, target_row)
    rows = []
    for h in range(params.cfg.heads):
        q = matmul(target, params.query_w[h])  # 1 x d
        k = matmul(hidden, params.key_w[h])  # K x d
        rows.append(transpose(matmul(k, transpose(q))))  # 1 x K
    return vstack(rows)


def attention_weights(scores: Tensor, temperature: float) -> Tensor:
    """Per-head softmax over neighbors; each row sums to one."""
    return softmax_rows(scores, temperature)


def aggregate(hidden: Tensor, alpha: Tensor, params: QNetworkParams) -> Tensor:
    """Head-averaged attention-weighted neighbor mix, projected and activated."""
    if alpha.shape != (params.cfg.heads, hidden.shape[0]):
        raise ValueError(
            f"alpha shape {alpha.shape} != (heads={params.cfg.heads}, "
            f"K={hidden.shape[0]})")
    mixed = []
    for h in range(params.cfg.heads):
        values = matmul(hidden, params.value_w[h])  # K x d
        mixed.append(matmul(gather_row(alpha, h), values))  # 1 x d
    combined = scale(concat_cols(mixed), 1.0 / params.cfg.heads)  # 1 x n
    return relu(add(matmul(combined, params.proj_w), params.proj_b))


def q_values(hm: Tensor, params: QNetworkParams) -> Tensor:
    """One value per phase action, no activation."""
    return add(matmul(hm, params.head_w), params.head_b)


def forward_q(params: QNetworkParams, obs_matrix, target_row: int = 0) -> Tensor:
    hidden = embed(obs_matrix, params)
    scores = attention_scores(hidden, target_row, params)
    alpha = attention_weights(scores, params.cfg.temperature)
    hm = aggregate(hidden, alpha, params)
    return q_values(hm, params)


def forward_q_data(params: QNetworkParams, obs_matrix: np.ndarray,
                   target_row: int = 0) -> np.ndarray:
    """Tape-free forward pass for action selection and TD targets."""
    cfg = params.cfg
    hidden = obs_matrix @ params.embed_w.data + params.embed_b.data
    np.maximum(hidden, 0.0, out=hidden)
    _tally(obs_matrix.shape[0] * obs_matrix.shape[1] * cfg.hidden)
    target = hidden[target_row:target_row + 1]
    mixed = []
    for h in range(cfg.heads):
        q = target @ params.query_w[h].data  # 1 x d
        k = hidden @ params.key_w[h].data  # K x d
        scores = (k @ q.T).T / cfg.temperature  # 1 x K
        scores -= scores.max()
        ez = np.exp(scores)
        alpha = ez / ez.sum()
        values = hidden @ params.value_w[h].data
        mixed.append(alpha @ values)
        _tally(2 * hidden.shape[0] * cfg.hidden * cfg.head_dim
               + hidden.shape[0] * cfg.head_dim
               + hidden.shape[0] * cfg.head_dim)
    combined = np.concatenate(mixed, axis=1) / cfg.heads
    hm = combined @ params.proj_w.data + params.proj_b.data
    np.maximum(hm, 0.0, out=hm)
    _tally(cfg.hidden * cfg.hidden)
    out = hm @ params.head_w.data + params.head_b.data
    _tally(cfg.hidden * cfg.actions)
    assert np.isfinite(out).all()
    return out[0]


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def params_to_dict(params: QNetworkParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "obs_dim": params.cfg.obs_dim,
            "hidden": params.cfg.hidden,
            "heads": params.cfg.heads,
            "actions": params.cfg.actions,
            "temperature": params.cfg.temperature,
        },
        "tensors": {
            name: {"shape": list(t.data.shape), "data": t.data.flatten().tolist()}
            for name, t in params.named()
        },
    }


def params_from_dict(doc: dict) -> QNetworkParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    cfg = NetConfig(**doc["config"])
    params = init_params(cfg, seed=0)
    stored = doc["tensors"]
    for name, t in params.named():
        if name not in stored:
            raise ValueError(f"checkpoint missing tensor {name}")
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {shape}, "
                f"expected {t.data.shape}")
        t.data = np.array(entry["data"], dtype=np.float64).reshape(shape)
    return params


def save_params(path: str, params: QNetworkParams) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)
        fh.write("\n")


def load_params(path: str) -> QNetworkParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
