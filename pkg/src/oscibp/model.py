"""Hybrid convolutional-recurrent regressor for one pressure target.

The network reads a square pulse-morphology grid (rows are waveform
samples, columns are cuff pressures), convolves along the pressure axis
with the morphology rows as input channels, feeds the filtered sequence
to stacked LSTMs, and regresses a single pressure value through a ReLU
dense stack with a linear output node.

Separate models are trained for systolic and diastolic pressure; the
architecture is identical, only the target differs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import LstmParams, Tensor
from .errors import CheckpointError, InvalidConfigurationError, ShapeError

__all__ = [
    "ModelConfig",
    "BpRegressor",
    "VARIANTS",
    "init",
    "forward",
    "variant",
    "count_parameters",
    "activation_shapes",
    "save_model",
    "load_model",
]

# CLI/variant names to LSTM depth.
VARIANTS = {"cnn": 0, "cnn_lstm1": 1, "cnn_lstm2": 2}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``grid_size`` is both the number of morphology rows (conv input
    channels) and the number of pressure columns (sequence length).
    """

    n_kernels: int = 10
    kernel_width: int = 107
    lstm_layers: int = 2
    lstm_hidden: int = 10
    dense_widths: tuple[int, ...] = (1000, 500, 250, 100, 50)
    grid_size: int = 215
    reverse_sequence: bool = False

    def validate(self) -> None:
        if self.n_kernels < 1:
            raise InvalidConfigurationError("n_kernels must be >= 1")
        if not 1 <= self.kernel_width <= self.grid_size:
            raise InvalidConfigurationError(
                f"kernel_width must be in [1, grid_size], got {self.kernel_width}")
        if self.lstm_layers not in (0, 1, 2):
            raise InvalidConfigurationError("lstm_layers must be 0, 1, or 2")
        if self.lstm_hidden < 1:
            raise InvalidConfigurationError("lstm_hidden must be >= 1")
        if not self.dense_widths or any(w < 1 for w in self.dense_widths):
            raise InvalidConfigurationError("dense_widths must be positive and non-empty")
        if self.grid_size < 1:
            raise InvalidConfigurationError("grid_size must be >= 1")

    @property
    def flat_width(self) -> int:
        """Width of the flattened features entering the dense stack."""
        if self.lstm_layers == 0:
            return self.n_kernels * self.grid_size
        return self.grid_size * self.lstm_hidden


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class BpRegressor:
    """Parameter container plus the forward graph builder."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        g = config.grid_size
        w = config.kernel_width
        self.conv_kernels = Tensor(np.zeros((config.n_kernels, g, w)),
                                   requires_grad=True, name="conv.kernels")
        self.conv_bias = Tensor(np.zeros(config.n_kernels),
                                requires_grad=True, name="conv.bias")
        self.lstms: list[LstmParams] = []
        d_in = config.n_kernels
        for _ in range(config.lstm_layers):
            layer = LstmParams(d_in, config.lstm_hidden)
            for _, t in layer.tensors():
                t.requires_grad = True
            self.lstms.append(layer)
            d_in = config.lstm_hidden
        self.dense_weights: list[Tensor] = []
        self.dense_biases: list[Tensor] = []
        widths = list(config.dense_widths) + [1]
        prev = config.flat_width
        for i, width in enumerate(widths):
            self.dense_weights.append(Tensor(np.zeros((width, prev)),
                                             requires_grad=True, name=f"dense{i}.w"))
            self.dense_biases.append(Tensor(np.zeros(width),
                                            requires_grad=True, name=f"dense{i}.b"))
            prev = width

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("conv.kernels", self.conv_kernels), ("conv.bias", self.conv_bias)]
        for i, layer in enumerate(self.lstms):
            for name, t in layer.tensors():
                out.append((f"lstm{i}.{name}", t))
        for i, (w, b) in enumerate(zip(self.dense_weights, self.dense_biases)):
            out.append((f"dense{i}.w", w))
            out.append((f"dense{i}.b", b))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def weight_tensors(self) -> list[Tensor]:
        """Everything except biases; this is what L1 regularization sees."""
        ws = [self.conv_kernels]
        for layer in self.lstms:
            ws.extend(layer.weight_tensors())
        ws.extend(self.dense_weights)
        return ws

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_output_offset(self, value: float) -> None:
        """Point the final bias at ``value`` (mmHg).

        A fresh model predicts near zero, which is 60-200 mmHg away from
        any plausible pressure; warm-starting the output bias at the
        training-label mean lets the optimizer spend its steps on the
        residual structure instead of on closing that gap.
        """
        self.dense_biases[-1].data = np.array([float(value)])

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in state:
                raise CheckpointError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"parameter {name!r} has shape {arr.shape}, expected {t.shape}")
            t.data = arr.copy()

    # -- forward ------------------------------------------------------------

    def forward_graph(self, values: np.ndarray, trace: list | None = None) -> Tensor:
        """Build the forward graph for one grid ``(G, G)`` or a batch
        ``(B, G, G)``; returns a scalar tensor or a ``(B,)`` tensor."""
        arr = np.asarray(values, dtype=np.float64)
        g = self.config.grid_size
        batched = arr.ndim == 3
        if arr.shape[-2:] != (g, g) or arr.ndim not in (2, 3):
            raise ShapeError(f"expected ({g}, {g}) grid values, got {arr.shape}")

        def note(t: Tensor) -> Tensor:
            if trace is not None:
                trace.append(t.shape[1:] if batched else t.shape)
            return t

        x = note(Tensor(arr))
        h = note(ad.relu(ad.conv1d(x, self.conv_kernels, self.conv_bias,
                                   *_pad_split(self.config.kernel_width))))
        if self.config.lstm_layers > 0:
            h = note(ad.swap_last_axes(h))
            if self.config.reverse_sequence:
                h = note(ad.flip_time(h))
            for layer in self.lstms:
                h = note(ad.lstm_layer(h, layer))
        flat = (arr.shape[0], self.config.flat_width) if batched else (self.config.flat_width,)
        h = note(ad.reshape(h, flat))
        for w, b in zip(self.dense_weights[:-1], self.dense_biases[:-1]):
            h = note(ad.dense(h, w, b, activation="relu"))
        out = ad.dense(h, self.dense_weights[-1], self.dense_biases[-1], activation="linear")
        out = note(ad.reshape(out, (arr.shape[0],) if batched else ()))
        return out

    def predict(self, values: np.ndarray) -> float:
        return float(self.forward_graph(values).data)

    def predict_batch(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.forward_graph(values).data, dtype=np.float64)


def _pad_split(width: int) -> tuple[int, int]:
    left = (width - 1) // 2
    return left, width - 1 - left


def init(config: ModelConfig, seed: int) -> BpRegressor:
    """Create a model with Glorot-uniform weights and zero biases.

    Weights are drawn uniformly from +-sqrt(6 / (fan_in + fan_out)) per
    tensor; the draw order is fixed so a seed fully determines the model.
    """
    model = BpRegressor(config)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    c = config
    # conv kernels: fans follow the C_in*W / C_out*W convention
    model.conv_kernels.data = _glorot(
        rng, model.conv_kernels.shape, c.grid_size * c.kernel_width,
        c.n_kernels * c.kernel_width)
    for layer in model.lstms:
        d, h = layer.input_size, layer.hidden_size
        for gate in ("input", "forget", "cell", "output"):
            layer.w[gate].data = _glorot(rng, (h, d), d, h)
            layer.u[gate].data = _glorot(rng, (h, h), h, h)
    for w in model.dense_weights:
        d_out, d_in = w.shape
        w.data = _glorot(rng, w.shape, d_in, d_out)
    return model


def forward(model: BpRegressor, grid) -> float:
    """Predict one pressure value (mmHg) from a grid or raw value array."""
    values = getattr(grid, "values", grid)
    return model.predict(values)


def variant(config: ModelConfig, lstm_layers: int, seed: int) -> BpRegressor:
    """Initialize an architecture variant differing only in LSTM depth."""
    return init(replace(config, lstm_layers=lstm_layers), seed)


def count_parameters(model: BpRegressor, prefix: str = "") -> int:
    return sum(t.size for name, t in model.named_parameters() if name.startswith(prefix))


def activation_shapes(config: ModelConfig) -> list[tuple[int, ...]]:
    """Expected per-sample shapes through the forward pass."""
    g, k = config.grid_size, config.n_kernels
    shapes: list[tuple[int, ...]] = [(g, g), (k, g)]
    if config.lstm_layers > 0:
        shapes.append((g, k))
        if config.reverse_sequence:
            shapes.append((g, k))
        shapes.extend((g, config.lstm_hidden) for _ in range(config.lstm_layers))
    shapes.append((config.flat_width,))
    shapes.extend((w,) for w in config.dense_widths)
    shapes.append(())
    return shapes


# ---------------------------------------------------------------------------
# checkpoints

_MODEL_MAGIC = b"OBPM"
_MODEL_VERSION = 1


def save_model(model: BpRegressor, path, target: str | None = None) -> None:
    """Write config, target tag, and all parameters; bit-exact round trip."""
    header = {
        "n_kernels": model.config.n_kernels,
        "kernel_width": model.config.kernel_width,
        "lstm_layers": model.config.lstm_layers,
        "lstm_hidden": model.config.lstm_hidden,
        "dense_widths": list(model.config.dense_widths),
        "grid_size": model.config.grid_size,
        "reverse_sequence": model.config.reverse_sequence,
        "target": target,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(np.uint32(_MODEL_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        ad.write_tensor_block(fh, [(n, t.data) for n, t in model.named_parameters()])


def load_model(path) -> tuple[BpRegressor, str | None]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != _MODEL_VERSION:
            raise CheckpointError(f"unsupported model checkpoint version {version}")
        blob_len = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        state = ad.read_tensor_block(fh)
    config = ModelConfig(
        n_kernels=header["n_kernels"],
        kernel_width=header["kernel_width"],
        lstm_layers=header["lstm_layers"],
        lstm_hidden=header["lstm_hidden"],
        dense_widths=tuple(header["dense_widths"]),
        grid_size=header["grid_size"],
        reverse_sequence=header["reverse_sequence"],
    )
    model = BpRegressor(config)
    model.load_state(state)
    return model, header.get("target")
