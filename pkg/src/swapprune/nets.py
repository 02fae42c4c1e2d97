"""Small dense classifiers, datasets, per-sample gradients, and row noise.

The network is deliberately tiny: dense layers, relu or tanh hidden
activations, softmax cross-entropy on top, and the whole parameter set kept
as one flat float64 vector so pruning can treat it as a plain array.  The
flat layout is layer by layer, each layer's weight matrix ``(fan_in,
fan_out)`` flattened row-major followed by its bias.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Dataset",
    "NoiseSpec",
    "Split",
    "TinyMlp",
    "evaluate",
    "forward_logits",
    "forward_loss",
    "init_mlp",
    "inject_noise",
    "load_csv_split",
    "load_idx_images",
    "load_idx_labels",
    "loss_gradient",
    "per_sample_gradients",
    "save_csv_split",
    "synth_dataset",
    "train",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss stops being finite."""


class NoiseCalibrationError(RuntimeError):
    """Raised when the requested noise level cannot be reached."""


@dataclass(frozen=True)
class Split:
    """One dataset split: float features ``(N, d)`` and int labels ``(N,)``."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Dataset:
    train: Split
    test: Split
    num_classes: int


@dataclass(frozen=True)
class TinyMlp:
    """Dense classifier with all parameters in one flat vector.

    ``layer_dims`` runs input -> hidden... -> classes; ``flat_weights``
    stores each layer's ``(fan_in, fan_out)`` matrix row-major, bias after
    the matrix, layers in order.
    """

    layer_dims: tuple[int, ...]
    flat_weights: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output sizes")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer_dims must be positive, got {self.layer_dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be 'relu' or 'tanh', got {self.activation!r}")
        expected = num_params(self.layer_dims)
        if self.flat_weights.shape != (expected,):
            raise ValueError(
                f"flat_weights must have shape ({expected},) for dims "
                f"{self.layer_dims}, got {self.flat_weights.shape}"
            )

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def with_weights(self, flat: np.ndarray) -> "TinyMlp":
        return replace(self, flat_weights=np.asarray(flat, dtype=float))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Unflatten into ``[(W, b), ...]`` views of the flat vector."""
        out = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = self.flat_weights[offset : offset + fan_in * fan_out]
            offset += fan_in * fan_out
            b = self.flat_weights[offset : offset + fan_out]
            offset += fan_out
            out.append((w.reshape(fan_in, fan_out), b))
        return out


def num_params(layer_dims: tuple[int, ...]) -> int:
    return sum(
        fan_in * fan_out + fan_out
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:])
    )


def flatten_layers(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of :meth:`TinyMlp.layers`; bit-exact round trip."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=float).reshape(-1))
        parts.append(np.asarray(b, dtype=float).reshape(-1))
    return np.concatenate(parts)


def init_mlp(layer_dims, activation: str = "relu", seed: int = 0) -> TinyMlp:
    """Scaled-normal weight init (biases zero), seeded."""
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / fan_in) if activation == "relu" else np.sqrt(1.0 / fan_in)
        layers.append((scale * rng.standard_normal((fan_in, fan_out)), np.zeros(fan_out)))
    return TinyMlp(dims, flatten_layers(layers), activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(float)
    t = np.tanh(z)
    return 1.0 - t * t


def _forward_cached(mlp: TinyMlp, X: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    layers = mlp.layers()
    a = X
    acts = [a]
    pre = []
    for li, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        a = _act(z, mlp.activation) if li < len(layers) - 1 else z
        acts.append(a)
    return acts, pre


def forward_logits(mlp: TinyMlp, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != mlp.layer_dims[0]:
        raise ValueError(
            f"X must have shape (N, {mlp.layer_dims[0]}), got {X.shape}"
        )
    acts, _ = _forward_cached(mlp, X)
    return acts[-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels.astype(int)


def forward_loss(mlp: TinyMlp, X: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, guarded against overflow.

    With all-zero weights the logits are uniform and the loss is exactly
    ``log(num_classes)``.
    """
    logits = forward_logits(mlp, X)
    labels = _check_labels(labels, logits.shape[0], mlp.num_classes)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def _backprop(mlp: TinyMlp, X, labels, per_sample: bool):
    """Shared reverse pass.

    ``per_sample=True`` returns the ``(N, p)`` matrix of gradients of each
    sample's own loss; otherwise the flat gradient of the batch mean loss.
    """
    X = np.asarray(X, dtype=float)
    acts, pre = _forward_cached(mlp, X)
    logits = acts[-1]
    labels = _check_labels(labels, X.shape[0], mlp.num_classes)
    n = X.shape[0]
    delta = np.exp(_log_softmax(logits))
    delta[np.arange(n), labels] -= 1.0
    if not per_sample:
        delta = delta / n
    layers = mlp.layers()
    grads_w = [None] * len(layers)
    grads_b = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        a_prev = acts[li]
        if per_sample:
            grads_w[li] = np.einsum("ni,no->nio", a_prev, delta)
            grads_b[li] = delta
        else:
            grads_w[li] = a_prev.T @ delta
            grads_b[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ layers[li][0].T) * _act_grad(pre[li - 1], mlp.activation)
    if per_sample:
        rows = [
            np.concatenate([gw.reshape(n, -1), gb], axis=1)
            for gw, gb in zip(grads_w, grads_b)
        ]
        return np.concatenate(rows, axis=1)
    return flatten_layers(list(zip(grads_w, grads_b)))


def loss_gradient(mlp: TinyMlp, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Flat gradient of the batch mean cross-entropy."""
    return _backprop(mlp, X, labels, per_sample=False)


def per_sample_gradients(mlp: TinyMlp, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Matrix whose row ``i`` is the gradient of sample ``i``'s loss.

    No batch averaging: the mean of the rows equals
    :func:`loss_gradient` on the same batch.
    """
    return _backprop(mlp, X, labels, per_sample=True)


def train(
    mlp: TinyMlp,
    split: Split,
    epochs: int,
    lr: float,
    seed: int = 0,
    batch_size: int = 32,
) -> TinyMlp:
    """Plain mini-batch gradient descent; deterministic for a fixed seed."""
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    rng = np.random.default_rng(seed)
    w = mlp.flat_weights.copy()
    net = mlp.with_weights(w)
    n = len(split)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            g = loss_gradient(net, split.features[idx], split.labels[idx])
            w = w - lr * g
            net = net.with_weights(w)
        loss = forward_loss(net, split.features, split.labels)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch + 1}; lower lr"
            )
    return net


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    top5: float | None = None


def evaluate(mlp: TinyMlp, split: Split) -> EvalResult:
    """Mean cross-entropy and top-1 accuracy (top-5 when there are >= 5 classes).

    Logit ties resolve toward the lowest class index, so an all-zero network
    on ``c`` balanced classes scores exactly ``1/c`` top-1.
    """
    logits = forward_logits(mlp, split.features)
    labels = _check_labels(labels=split.labels, n=logits.shape[0], c=mlp.num_classes)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    pred = np.argmax(logits, axis=1)
    acc = float((pred == labels).mean())
    top5 = None
    if mlp.num_classes >= 5:
        order = np.argsort(-logits, axis=1, kind="stable")[:, :5]
        top5 = float((order == labels[:, None]).any(axis=1).mean())
    return EvalResult(loss=loss, accuracy=acc, top5=top5)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def synth_dataset(
    seed: int,
    n: int,
    dim: int,
    classes: int,
    blob_spread: float,
) -> Dataset:
    """Gaussian blobs around unit-norm random class centers, 80/20 split."""
    if n < classes or classes < 2 or dim < 1:
        raise ValueError(
            f"need n >= classes >= 2 and dim >= 1, got n={n}, classes={classes}, dim={dim}"
        )
    if blob_spread < 0:
        raise ValueError(f"blob_spread must be >= 0, got {blob_spread}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.arange(n) % classes
    features = centers[labels] + blob_spread * rng.standard_normal((n, dim))
    order = rng.permutation(n)
    features, labels = features[order], labels[order]
    n_train = int(round(0.8 * n))
    return Dataset(
        train=Split(features[:n_train], labels[:n_train]),
        test=Split(features[n_train:], labels[n_train:]),
        num_classes=classes,
    )


def load_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file -> float array ``(N, rows * cols)`` in [0, 1]."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(
                f"{path}: bad IDX image magic 0x{magic:08x}, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}"
            )
        data = f.read()
    expected = n * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} pixels, found {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(float) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """Big-endian IDX label file -> int array ``(N,)``."""
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated IDX label header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(
                f"{path}: bad IDX label magic 0x{magic:08x}, expected "
                f"0x{IDX_LABELS_MAGIC:08x}"
            )
        data = f.read()
    if len(data) != n:
        raise ValueError(f"{path}: expected {n} labels, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).astype(int)


def load_csv_split(path) -> Split:
    """CSV with a header of feature columns followed by ``label``."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: expected a header ending in 'label'")
        d = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {d + 1} columns, got {len(row)}"
                )
            feats.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return Split(np.asarray(feats, dtype=float), np.asarray(labels, dtype=int))


def save_csv_split(path, split: Split) -> None:
    d = split.features.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, label in zip(split.features, split.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


# ---------------------------------------------------------------------------
# Row noise with calibrated amplitude
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian row noise calibrated to a target entry std.

    ``fraction`` of the rows (rounded down) receive noise scaled so the std
    over all entries of the perturbed matrix hits ``(1 + level) * std(G)``
    within 1%.  ``level`` is the extra-std multiplier: 1 doubles the entry
    std, 2 triples it.
    """

    fraction: float
    level: float
    cal_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction!r}")
        if self.level <= 0 and self.fraction > 0:
            raise ValueError(f"level must be > 0, got {self.level!r}")


def inject_noise(G: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Perturb a seeded row subset of ``G`` to a calibrated total entry std.

    Row choice and noise draws come from ``spec.cal_seed`` only, so the same
    spec on the same matrix is reproducible bit for bit.  A fraction of zero
    returns the matrix unchanged.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ValueError(f"G must be 2-D, got shape {G.shape}")
    if spec.fraction == 0.0:
        return G.copy()
    n = G.shape[0]
    n_rows = int(np.floor(spec.fraction * n))
    sigma = float(G.std())
    target = (1.0 + spec.level) * sigma
    if n_rows == 0 or sigma == 0.0:
        raise NoiseCalibrationError(
            f"cannot reach target std {target!r}: fraction {spec.fraction} selects "
            f"{n_rows} of {n} rows and the clean std is {sigma!r}; achievable "
            f"maximum is {sigma!r}"
        )
    rng = np.random.default_rng(spec.cal_seed)
    rows = rng.choice(n, size=n_rows, replace=False)
    noise = rng.standard_normal((n_rows, G.shape[1]))

    def std_at(s: float) -> float:
        out = G.copy()
        out[rows] += s * noise
        return float(out.std())

    # std is continuous in the scale and unbounded above, so double out to a
    # bracket and bisect.
    lo, hi = 0.0, max(sigma, 1e-12)
    for _ in range(200):
        if std_at(hi) >= target:
            break
        hi *= 2.0
    else:
        raise NoiseCalibrationError(
            f"failed to bracket target std {target!r}; achievable maximum "
            f"in the search range was {std_at(hi)!r}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = std_at(mid)
        if abs(val - target) <= 1e-3 * target:
            lo = hi = mid
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    out = G.copy()
    out[rows] += s * noise
    return out
