"""Three-stage regression network: shared dense slice encoder, stacked LSTM,
dense head.  Forward and backward passes are explicit numpy, float64.

Stage 1 applies a ReLU dense stack to every time slice with shared weights.
Stage 2 runs stacked LSTM layers over the slice sequence; every layer passes
its full hidden sequence upward and the last layer's final hidden state feeds
Stage 3, a ReLU dense stack with a linear output layer.

The LSTM cell follows the usual gate equations: forget/input/output gates are
sigmoids of W.[h_prev, s_t] + b, the candidate cell is a tanh, the cell state
is forget*cell_prev + input*candidate, and the hidden state is
output*tanh(cell).  Gate parameters are stored per gate with hidden-state
rows first; computation fuses them in gate order forget, input, cell, output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GATE_NAMES = ("forget", "input", "cell", "output")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class NetworkSpec:
    """Widths of the three stages plus input slice geometry.

    stage3 activations default to ReLU everywhere except the final linear
    layer; the final width is the predicted component count.
    """

    feature_count: int
    sequence_length: int
    stage1: tuple[int, ...]
    stage2: tuple[int, ...]
    stage3: tuple[int, ...]
    stage3_activations: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stage1", tuple(int(w) for w in self.stage1))
        object.__setattr__(self, "stage2", tuple(int(w) for w in self.stage2))
        object.__setattr__(self, "stage3", tuple(int(w) for w in self.stage3))
        if not self.stage3_activations:
            acts = ("relu",) * (len(self.stage3) - 1) + ("linear",)
            object.__setattr__(self, "stage3_activations", acts)
        else:
            object.__setattr__(self, "stage3_activations",
                               tuple(self.stage3_activations))
        if self.feature_count < 1 or self.sequence_length < 1:
            raise ValueError("feature_count and sequence_length must be >= 1")
        if not self.stage2 or not self.stage3:
            raise ValueError("need at least one LSTM layer and one output layer")
        if any(w < 1 for w in self.stage1 + self.stage2 + self.stage3):
            raise ValueError("all layer widths must be >= 1")
        if len(self.stage3_activations) != len(self.stage3):
            raise ValueError("one activation per stage-3 layer required")
        if any(a not in ("relu", "linear") for a in self.stage3_activations):
            raise ValueError(f"unsupported activation in {self.stage3_activations}")

    @property
    def output_count(self) -> int:
        return self.stage3[-1]


@dataclass
class DenseLayer:
    weights: np.ndarray              # (fan_in, fan_out)
    bias: np.ndarray                 # (fan_out,)
    activation: str = "relu"

    def apply(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weights + self.bias
        return _relu(z) if self.activation == "relu" else z


@dataclass
class LstmLayer:
    """One LSTM layer; each gate matrix has hidden rows first, then input rows."""

    weights_forget: np.ndarray       # (hidden + input, hidden)
    weights_input: np.ndarray
    weights_cell: np.ndarray
    weights_output: np.ndarray
    bias_forget: np.ndarray          # (hidden,)
    bias_input: np.ndarray
    bias_cell: np.ndarray
    bias_output: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.weights_forget.shape[1]

    @property
    def input_size(self) -> int:
        return self.weights_forget.shape[0] - self.hidden_size

    def gate_weights(self):
        return (self.weights_forget, self.weights_input,
                self.weights_cell, self.weights_output)

    def gate_biases(self):
        return (self.bias_forget, self.bias_input,
                self.bias_cell, self.bias_output)

    def fused(self):
        """(input->gates, hidden->gates, bias) with gate blocks in canonical order."""
        h = self.hidden_size
        wx = np.concatenate([w[h:, :] for w in self.gate_weights()], axis=1)
        wh = np.concatenate([w[:h, :] for w in self.gate_weights()], axis=1)
        b = np.concatenate(self.gate_biases())
        return wx, wh, b


@dataclass
class Network:
    spec: NetworkSpec
    stage1: list[DenseLayer] = field(default_factory=list)
    stage2: list[LstmLayer] = field(default_factory=list)
    stage3: list[DenseLayer] = field(default_factory=list)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) order: stages in order; per LSTM layer the
        gate blocks forget/input/cell/output, weights before bias."""
        out = []
        for i, layer in enumerate(self.stage1):
            out.append((f"stage1.{i}.weights", layer.weights))
            out.append((f"stage1.{i}.bias", layer.bias))
        for i, layer in enumerate(self.stage2):
            for gate, w, b in zip(GATE_NAMES, layer.gate_weights(), layer.gate_biases()):
                out.append((f"stage2.{i}.weights_{gate}", w))
                out.append((f"stage2.{i}.bias_{gate}", b))
        for i, layer in enumerate(self.stage3):
            out.append((f"stage3.{i}.weights", layer.weights))
            out.append((f"stage3.{i}.bias", layer.bias))
        return out

    def parameter_count(self) -> int:
        return sum(a.size for _, a in self.parameters())

    def set_parameters(self, arrays: list[np.ndarray]):
        """Overwrite parameters in canonical order (shapes must match)."""
        current = self.parameters()
        if len(arrays) != len(current):
            raise ValueError(f"expected {len(current)} arrays, got {len(arrays)}")
        for (name, dst), src in zip(current, arrays):
            if dst.shape != src.shape:
                raise ValueError(f"{name}: shape {src.shape} != {dst.shape}")
            dst[...] = src


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_network(spec: NetworkSpec, seed: int) -> Network:
    """Glorot-uniform weights, zero biases; LSTM forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)
    net = Network(spec=spec)
    width = spec.feature_count
    for w in spec.stage1:
        net.stage1.append(DenseLayer(weights=_glorot(rng, width, w),
                                     bias=np.zeros(w), activation="relu"))
        width = w
    for h in spec.stage2:
        gates = {}
        for gate in GATE_NAMES:
            gates[f"weights_{gate}"] = _glorot(rng, h + width, h)
            gates[f"bias_{gate}"] = np.ones(h) if gate == "forget" else np.zeros(h)
        net.stage2.append(LstmLayer(**gates))
        width = h
    for w, act in zip(spec.stage3, spec.stage3_activations):
        net.stage3.append(DenseLayer(weights=_glorot(rng, width, w),
                                     bias=np.zeros(w), activation=act))
        width = w
    return net


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def lstm_forward(layer: LstmLayer, sequence: np.ndarray):
    """Run one LSTM layer over a slice sequence from zero initial state.

    sequence: (k, d) or (batch, k, d).  Returns (hidden_sequence, cache) with
    hidden_sequence matching the leading dims of the input and the cache
    holding per-step gates and states for backpropagation.
    """
    squeeze = sequence.ndim == 2
    seq = sequence[None] if squeeze else sequence
    batch, k, d = seq.shape
    if d != layer.input_size:
        raise ValueError(f"slice feature length {d} != layer input width {layer.input_size}")
    h = layer.hidden_size
    wx, wh, b = layer.fused()
    z_in = seq.reshape(batch * k, d) @ wx
    z_in = z_in.reshape(batch, k, 4 * h) + b

    forget = np.empty((batch, k, h))
    in_gate = np.empty((batch, k, h))
    candidate = np.empty((batch, k, h))
    out_gate = np.empty((batch, k, h))
    cell = np.empty((batch, k, h))
    cell_tanh = np.empty((batch, k, h))
    hidden = np.empty((batch, k, h))

    h_prev = np.zeros((batch, h))
    c_prev = np.zeros((batch, h))
    for t in range(k):
        z = z_in[:, t, :] + h_prev @ wh
        f = _sigmoid(z[:, :h])
        i = _sigmoid(z[:, h:2 * h])
        cbar = np.tanh(z[:, 2 * h:3 * h])
        o = _sigmoid(z[:, 3 * h:])
        c = f * c_prev + i * cbar
        tc = np.tanh(c)
        ht = o * tc
        forget[:, t], in_gate[:, t], candidate[:, t], out_gate[:, t] = f, i, cbar, o
        cell[:, t], cell_tanh[:, t], hidden[:, t] = c, tc, ht
        h_prev, c_prev = ht, c

    cache = {"sequence": seq, "forget": forget, "input": in_gate,
             "candidate": candidate, "output": out_gate, "cell": cell,
             "cell_tanh": cell_tanh, "hidden": hidden, "wx": wx, "wh": wh}
    return (hidden[0] if squeeze else hidden), cache


def forward_batch(network: Network, features: np.ndarray, want_cache: bool = False):
    """Predictions for a feature batch (batch, k, feature_count) -> (batch, m)."""
    a = features
    stage1_acts = [a]
    for layer in network.stage1:
        a = layer.apply(a)
        stage1_acts.append(a)
    lstm_caches = []
    for layer in network.stage2:
        a, cache = lstm_forward(layer, a)
        lstm_caches.append(cache)
    last = a[:, -1, :]
    stage3_acts = [last]
    for layer in network.stage3:
        last = layer.apply(last)
        stage3_acts.append(last)
    if not want_cache:
        return last
    return last, {"stage1_acts": stage1_acts, "lstm_caches": lstm_caches,
                  "stage3_acts": stage3_acts}


def stage_forward(network: Network, window) -> np.ndarray:
    """Prediction (m,) for a single window sample (or raw (k, F) slice array)."""
    slices = window if isinstance(window, np.ndarray) else window.slices
    if slices.shape != (network.spec.sequence_length, network.spec.feature_count):
        raise ValueError(f"window slices {slices.shape} do not match spec "
                         f"({network.spec.sequence_length}, {network.spec.feature_count})")
    return forward_batch(network, slices[None])[0]


def mse_loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over output components per sample, then mean over the batch."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    return float(np.mean((predictions - targets) ** 2))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _dense_backward(layer: DenseLayer, x: np.ndarray, out: np.ndarray,
                    grad_out: np.ndarray):
    """Gradients for y = act(x @ W + b); x may have extra leading dims."""
    if layer.activation == "relu":
        grad_out = grad_out * (out > 0.0)
    lead = x.shape[:-1]
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    grad_w = x2.T @ g2
    grad_b = g2.sum(axis=0)
    grad_x = (g2 @ layer.weights.T).reshape(*lead, x.shape[-1])
    return grad_w, grad_b, grad_x


def _lstm_backward(layer: LstmLayer, cache: dict, grad_hidden_seq: np.ndarray):
    """Backpropagation through time for one layer.

    grad_hidden_seq: (batch, k, hidden) gradients w.r.t. every hidden output.
    Returns (per-gate weight grads, per-gate bias grads, grad wrt input seq).
    """
    seq = cache["sequence"]
    batch, k, d = seq.shape
    h = layer.hidden_size
    forget, in_gate = cache["forget"], cache["input"]
    candidate, out_gate = cache["candidate"], cache["output"]
    cell, cell_tanh = cache["cell"], cache["cell_tanh"]
    hidden = cache["hidden"]
    wx, wh = cache["wx"], cache["wh"]

    grad_z = np.empty((batch, k, 4 * h))
    dh_rec = np.zeros((batch, h))
    dc_rec = np.zeros((batch, h))
    for t in range(k - 1, -1, -1):
        dh = grad_hidden_seq[:, t, :] + dh_rec
        do = dh * cell_tanh[:, t]
        dc = dh * out_gate[:, t] * (1.0 - cell_tanh[:, t] ** 2) + dc_rec
        c_prev = cell[:, t - 1] if t > 0 else 0.0
        df = dc * c_prev
        di = dc * candidate[:, t]
        dcbar = dc * in_gate[:, t]
        dc_rec = dc * forget[:, t]
        f, i, o = forget[:, t], in_gate[:, t], out_gate[:, t]
        grad_z[:, t, :h] = df * f * (1.0 - f)
        grad_z[:, t, h:2 * h] = di * i * (1.0 - i)
        grad_z[:, t, 2 * h:3 * h] = dcbar * (1.0 - candidate[:, t] ** 2)
        grad_z[:, t, 3 * h:] = do * o * (1.0 - o)
        dh_rec = grad_z[:, t, :] @ wh.T

    h_prev = np.zeros((batch, k, h))
    h_prev[:, 1:, :] = hidden[:, :-1, :]
    gz2 = grad_z.reshape(batch * k, 4 * h)
    grad_wx = seq.reshape(batch * k, d).T @ gz2          # (d, 4h)
    grad_wh = h_prev.reshape(batch * k, h).T @ gz2       # (h, 4h)
    grad_b = gz2.sum(axis=0)
    grad_seq = (gz2 @ wx.T).reshape(batch, k, d)

    weight_grads, bias_grads = [], []
    for g in range(4):
        block = slice(g * h, (g + 1) * h)
        weight_grads.append(np.concatenate([grad_wh[:, block], grad_wx[:, block]], axis=0))
        bias_grads.append(grad_b[block])
    return weight_grads, bias_grads, grad_seq


def backward(network: Network, features: np.ndarray, targets: np.ndarray):
    """Analytic loss gradients for a batch.

    Returns (gradients, loss) where gradients is a list of arrays aligned
    with network.parameters() order.
    """
    predictions, cache = forward_batch(network, features, want_cache=True)
    batch, m = predictions.shape
    loss = mse_loss(predictions, targets)
    grad = 2.0 * (predictions - targets) / (batch * m)

    stage3_grads = []
    acts = cache["stage3_acts"]
    for idx in range(len(network.stage3) - 1, -1, -1):
        gw, gb, grad = _dense_backward(network.stage3[idx], acts[idx],
                                       acts[idx + 1], grad)
        stage3_grads.append((gw, gb))
    stage3_grads.reverse()

    k = network.spec.sequence_length
    last_width = network.stage2[-1].hidden_size
    grad_hidden = np.zeros((batch, k, last_width))
    grad_hidden[:, -1, :] = grad
    stage2_grads = []
    for idx in range(len(network.stage2) - 1, -1, -1):
        wgs, bgs, grad_hidden = _lstm_backward(network.stage2[idx],
                                               cache["lstm_caches"][idx],
                                               grad_hidden)
        stage2_grads.append((wgs, bgs))
    stage2_grads.reverse()

    grad_seq = grad_hidden
    stage1_grads = []
    acts1 = cache["stage1_acts"]
    for idx in range(len(network.stage1) - 1, -1, -1):
        gw, gb, grad_seq = _dense_backward(network.stage1[idx], acts1[idx],
                                           acts1[idx + 1], grad_seq)
        stage1_grads.append((gw, gb))
    stage1_grads.reverse()

    flat: list[np.ndarray] = []
    for gw, gb in stage1_grads:
        flat.extend([gw, gb])
    for wgs, bgs in stage2_grads:
        for w, b in zip(wgs, bgs):
            flat.extend([w, b])
    for gw, gb in stage3_grads:
        flat.extend([gw, gb])
    return flat, loss
