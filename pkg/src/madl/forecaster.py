"""Stacked LSTM regressor in numpy, trained with BPTT and Adam.

Gate order in every concatenated weight block is (input, forget, output,
candidate).  A layer with ``H`` units and ``D`` inputs stores ``W`` of shape
``(D, 4H)``, ``U`` of shape ``(H, 4H)`` and ``b`` of shape ``(4H,)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import Loss, exact_loss, training_loss_and_grad
from .market_data import SequenceSet

logger = logging.getLogger(__name__)

GATES = ("input", "forget", "output", "candidate")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: tuple[int, ...] = (8, 4)
    sequence_length: int = 10
    dropout_rate: float = 0.0
    l2_coefficient: float = 0.0
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int | None = None  # None: full batch
    loss_choice: Loss = Loss.MADL
    surrogate_steepness: float = 100.0
    max_grad_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "loss_choice", Loss.parse(self.loss_choice))
        if not self.layer_sizes or min(self.layer_sizes) < 1:
            raise ValueError("layer_sizes needs at least one positive entry")
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.surrogate_steepness > 0:
            raise ValueError("surrogate_steepness must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        d["loss_choice"] = self.loss_choice.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LstmLayerParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-gate view ``(W_g, U_g, b_g)``."""
        h = self.hidden
        j = GATES.index(name)
        sl = slice(j * h, (j + 1) * h)
        return self.W[:, sl], self.U[:, sl], self.b[sl]


@dataclass
class ModelParams:
    layers: list[LstmLayerParams]
    head_w: np.ndarray  # (H_last, 1)
    head_b: np.ndarray  # (1,)

    def tensors(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.U, layer.b]
        return out + [self.head_w, self.head_b]

    def names(self) -> list[str]:
        out = []
        for i in range(len(self.layers)):
            out += [f"layer{i}.W", f"layer{i}.U", f"layer{i}.b"]
        return out + ["head.w", "head.b"]

    def is_weight(self) -> list[bool]:
        """Which tensors carry the L2 penalty (everything except biases)."""
        return [not name.endswith(".b") for name in self.names()]

    def with_tensors(self, tensors) -> "ModelParams":
        tensors = list(tensors)
        layers = [LstmLayerParams(*tensors[3 * i:3 * i + 3]) for i in range(len(self.layers))]
        return ModelParams(layers, tensors[-2], tensors[-1])

    def copy(self) -> "ModelParams":
        return self.with_tensors(t.copy() for t in self.tensors())

    def zeros_like(self) -> "ModelParams":
        return self.with_tensors(np.zeros_like(t) for t in self.tensors())


def _glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: NetworkConfig, input_dim: int = 1) -> ModelParams:
    """Glorot-uniform weights per gate, forget bias 1, other biases 0."""
    rng = np.random.default_rng(config.seed)
    layers = []
    d = input_dim
    for h in config.layer_sizes:
        W = np.concatenate([_glorot(rng, d, h, (d, h)) for _ in GATES], axis=1)
        U = np.concatenate([_glorot(rng, h, h, (h, h)) for _ in GATES], axis=1)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        layers.append(LstmLayerParams(W, U, b))
        d = h
    head_w = _glorot(rng, d, 1, (d, 1))
    return ModelParams(layers, head_w, np.zeros(1))


def _sigmoid(x):
    # Branch-free stable logistic.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class ForwardCache:
    x: np.ndarray
    layer_inputs: list = field(default_factory=list)  # (B, T, D) per layer
    gates: list = field(default_factory=list)  # (i, f, o, g) arrays of (B, T, H)
    cells: list = field(default_factory=list)  # (B, T+1, H), index 0 is the zero state
    hiddens: list = field(default_factory=list)  # (B, T+1, H)
    masks: list = field(default_factory=list)  # (B, T, H) or None
    head_input: np.ndarray | None = None
    params: ModelParams | None = None
    consumed: bool = False


def _dropout_masks(params: ModelParams, shape_bt: tuple[int, int], rate: float, seed) -> list:
    if rate <= 0.0:
        return [None] * len(params.layers)
    rng = np.random.default_rng(seed)
    keep = 1.0 - rate
    return [(rng.random(shape_bt + (layer.hidden,)) < keep) / keep for layer in params.layers]


def forward(params: ModelParams, inputs, mode: str = "infer", dropout_rate: float = 0.0,
            dropout_mask_seed=None) -> tuple[np.ndarray, ForwardCache]:
    """Run the stack over ``inputs`` of shape (B, T) or (B, T, 1).

    Returns one forecast per sequence from the linear head on the last
    layer's final hidden state, and the cache needed by :func:`backward`.
    Dropout (inverted scaling) hits every layer's output sequence in
    ``"train"`` mode only.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = inputs.inputs if isinstance(inputs, SequenceSet) else inputs
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] != params.layers[0].W.shape[0]:
        raise ValueError(f"input shape {x.shape} incompatible with first layer input dim {params.layers[0].W.shape[0]}")
    B, T, _ = x.shape
    masks = _dropout_masks(params, (B, T), dropout_rate, dropout_mask_seed) if mode == "train" else [None] * len(params.layers)
    cache = ForwardCache(x=x, masks=masks, params=params)
    seq = x
    for layer, mask in zip(params.layers, masks):
        H = layer.hidden
        if seq.shape[2] != layer.W.shape[0]:
            raise ValueError("layer input dims do not chain")
        xw = seq @ layer.W + layer.b  # (B, T, 4H)
        h = np.zeros((B, T + 1, H))
        c = np.zeros((B, T + 1, H))
        gi = np.empty((B, T, H))
        gf = np.empty((B, T, H))
        go = np.empty((B, T, H))
        gg = np.empty((B, T, H))
        for t in range(T):
            a = xw[:, t] + h[:, t] @ layer.U
            gi[:, t] = _sigmoid(a[:, :H])
            gf[:, t] = _sigmoid(a[:, H:2 * H])
            go[:, t] = _sigmoid(a[:, 2 * H:3 * H])
            gg[:, t] = np.tanh(a[:, 3 * H:])
            c[:, t + 1] = gf[:, t] * c[:, t] + gi[:, t] * gg[:, t]
            h[:, t + 1] = go[:, t] * np.tanh(c[:, t + 1])
        cache.layer_inputs.append(seq)
        cache.gates.append((gi, gf, go, gg))
        cache.cells.append(c)
        cache.hiddens.append(h)
        seq = h[:, 1:]
        if mask is not None:
            seq = seq * mask
    cache.head_input = seq[:, -1]
    forecasts = (cache.head_input @ params.head_w)[:, 0] + params.head_b[0]
    return forecasts, cache


def backward(cache: ForwardCache, d_forecast, l2_coefficient: float = 0.0) -> ModelParams:
    """Exact gradients of ``loss + l2 * sum(weights**2)`` given dLoss/dForecast.

    The cache is single-use; passing it twice raises.
    """
    if cache is None or cache.params is None or cache.head_input is None:
        raise ValueError("missing forward cache")
    if cache.consumed:
        raise ValueError("stale forward cache (already used for a backward pass)")
    params = cache.params
    d_forecast = np.asarray(d_forecast, dtype=np.float64).ravel()
    B, T, _ = cache.x.shape
    if d_forecast.shape != (B,):
        raise ValueError(f"expected {B} forecast gradients, got {d_forecast.shape}")
    cache.consumed = True

    grads = params.zeros_like()
    grads.head_w[:] = cache.head_input.T @ d_forecast[:, None]
    grads.head_b[:] = d_forecast.sum()

    d_seq = np.zeros((B, T, params.layers[-1].hidden))
    d_seq[:, -1] = d_forecast[:, None] * params.head_w[:, 0][None, :]
    for li in range(len(params.layers) - 1, -1, -1):
        layer, g = params.layers[li], grads.layers[li]
        H = layer.hidden
        mask = cache.masks[li]
        if mask is not None:
            d_seq = d_seq * mask
        gi, gf, go, gg = cache.gates[li]
        c, h, seq_in = cache.cells[li], cache.hiddens[li], cache.layer_inputs[li]
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = d_seq[:, t] + dh_next
            tc = np.tanh(c[:, t + 1])
            do = dh * tc
            dc = dh * go[:, t] * (1.0 - tc * tc) + dc_next
            di = dc * gg[:, t]
            df = dc * c[:, t]
            dg = dc * gi[:, t]
            dc_next = dc * gf[:, t]
            dz[:, t, :H] = di * gi[:, t] * (1.0 - gi[:, t])
            dz[:, t, H:2 * H] = df * gf[:, t] * (1.0 - gf[:, t])
            dz[:, t, 2 * H:3 * H] = do * go[:, t] * (1.0 - go[:, t])
            dz[:, t, 3 * H:] = dg * (1.0 - gg[:, t] * gg[:, t])
            dh_next = dz[:, t] @ layer.U.T
        flat_dz = dz.reshape(B * T, 4 * H)
        g.W[:] = seq_in.reshape(B * T, -1).T @ flat_dz
        g.U[:] = h[:, :-1].reshape(B * T, H).T @ flat_dz
        g.b[:] = flat_dz.sum(axis=0)
        d_seq = dz @ layer.W.T

    if l2_coefficient:
        for gt, pt, is_w in zip(grads.tensors(), params.tensors(), params.is_weight()):
            if is_w:
                gt += 2.0 * l2_coefficient * pt
    return grads


def l2_penalty(params: ModelParams, l2_coefficient: float) -> float:
    return float(l2_coefficient * sum(np.sum(t * t) for t, w in zip(params.tensors(), params.is_weight()) if w))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, **kw) -> "AdamState":
        return cls([np.zeros_like(t) for t in params.tensors()], [np.zeros_like(t) for t in params.tensors()], **kw)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              learning_rate: float) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    p_list, g_list = params.tensors(), grads.tensors()
    if len(p_list) != len(g_list) or len(p_list) != len(state.m):
        raise ValueError("parameter, gradient and state structures differ")
    for p, g in zip(p_list, g_list):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m_new, v_new, p_new = [], [], []
    for p, g, m, v in zip(p_list, g_list, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p_new.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        m_new.append(m)
        v_new.append(v)
    return params.with_tensors(p_new), AdamState(m_new, v_new, t, b1, b2, state.eps)


def clip_by_global_norm(grads: ModelParams, max_norm: float | None) -> ModelParams:
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors()))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return grads.with_tensors(g * scale for g in grads.tensors())


def predict(params: ModelParams, inputs) -> np.ndarray:
    return forward(params, inputs, mode="infer")[0]


@dataclass
class TrainingTrace:
    """Exact losses evaluated in inference mode; index 0 is before any update."""

    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)  # surrogate + L2 per epoch, train mode


def _batches(n: int, batch_size: int | None):
    if batch_size is None or batch_size >= n:
        yield slice(0, n)
        return
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def train(config: NetworkConfig, train_set: SequenceSet, valid_set: SequenceSet | None = None,
          init: ModelParams | None = None) -> tuple[ModelParams, TrainingTrace]:
    """Fit a fresh (or given) model for ``config.epochs`` passes over ``train_set``.

    Batches are contiguous and visited in order, so a run is fully determined
    by the config seed.  With the default ``batch_size=None`` every epoch is
    one full-batch step.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.inputs.shape[1] != config.sequence_length:
        raise ValueError(f"sequence length {train_set.inputs.shape[1]} != config {config.sequence_length}")
    if np.ptp(train_set.targets) == 0:
        logger.warning("training targets are constant")
    params = init_params(config) if init is None else init.copy()
    state = AdamState.zeros_like(params)
    has_valid = valid_set is not None and len(valid_set) > 0
    trace = TrainingTrace()

    def record():
        trace.train_loss.append(exact_loss(config.loss_choice, train_set.targets, predict(params, train_set)))
        if has_valid:
            trace.valid_loss.append(exact_loss(config.loss_choice, valid_set.targets, predict(params, valid_set)))

    record()
    for epoch in range(config.epochs):
        total = 0.0
        for bi, sl in enumerate(_batches(len(train_set), config.batch_size)):
            forecasts, cache = forward(params, train_set.inputs[sl], mode="train",
                                       dropout_rate=config.dropout_rate,
                                       dropout_mask_seed=(config.seed, epoch, bi))
            value, d_f = training_loss_and_grad(config.loss_choice, train_set.targets[sl], forecasts,
                                                config.surrogate_steepness)
            grads = backward(cache, d_f, config.l2_coefficient)
            grads = clip_by_global_norm(grads, config.max_grad_norm)
            total += value + l2_penalty(params, config.l2_coefficient)
            params, state = adam_step(params, grads, state, config.learning_rate)
        trace.objective.append(total)
        record()
    return params, trace


@dataclass
class GridSearchResult:
    best: NetworkConfig
    best_index: int
    scores: list[float]
    models: list[ModelParams]


def grid_search(grid, train_set: SequenceSet, valid_set: SequenceSet,
                selection_loss: Loss | str = Loss.MADL) -> GridSearchResult:
    """Train every candidate, score ``selection_loss`` exactly on ``valid_set``.

    The lowest score wins; ties go to the earliest candidate.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    selection_loss = Loss.parse(selection_loss)
    scores, models = [], []
    for i, cfg in enumerate(grid):
        params, _ = train(cfg, train_set, valid_set)
        score = exact_loss(selection_loss, valid_set.targets, predict(params, valid_set))
        logger.info("candidate %d %s: %s=%.6g", i, cfg.digest(), selection_loss.value, score)
        scores.append(score)
        models.append(params)
    best_index = int(np.argmin(scores))  # argmin returns the first minimum
    return GridSearchResult(grid[best_index], best_index, scores, models)


def save_checkpoint(path, params: ModelParams, config: NetworkConfig) -> Path:
    """Write params and config to an ``.npz`` file (format version 1).

    Arrays are stored under their :meth:`ModelParams.names`; the metadata
    entry holds JSON with the format version, config and config digest.
    """
    path = Path(path)
    meta = {"format_version": CHECKPOINT_VERSION, "config": config.to_dict(), "config_hash": config.digest()}
    arrays = dict(zip(params.names(), params.tensors()))
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path) -> tuple[ModelParams, NetworkConfig]:
    with np.load(Path(path)) as data:
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        config = NetworkConfig.from_dict(meta["config"])
        if config.digest() != meta["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        n_layers = len(config.layer_sizes)
        layers = [LstmLayerParams(data[f"layer{i}.W"], data[f"layer{i}.U"], data[f"layer{i}.b"]) for i in range(n_layers)]
        return ModelParams(layers, data["head.w"], data["head.b"]), config
