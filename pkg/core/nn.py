"""Dense tensors, tape-based reverse-mode autodiff and the feed-forward models.

Every public function takes the full parameter vector ``w`` as an argument and
mutates nothing shared, so the same (spec, w, batch) always gives the same
loss and gradient bit-for-bit.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, LabelError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'tanh')


@dataclass(frozen=True)
class ConvStem:
    channels: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class ModelSpec:
    layer_dims: tuple
    activation: str = 'relu'
    conv_stem: ConvStem = None
    input_shape: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'layer_dims', tuple(int(v) for v in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ConfigError(f'layer_dims needs at least 2 entries, got {self.layer_dims}')
        if any(v < 1 for v in self.layer_dims):
            raise ConfigError(f'layer_dims entries must be >= 1, got {self.layer_dims}')
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f'activation must be one of {ACTIVATIONS}, got {self.activation!r}')
        if self.conv_stem is None:
            return
        if self.input_shape is None or len(self.input_shape) != 3:
            raise ConfigError('conv_stem requires input_shape=(C, H, W)')
        object.__setattr__(self, 'input_shape', tuple(int(v) for v in self.input_shape))
        channels, out_h, out_w = self.conv_output_shape
        if min(channels, out_h, out_w) < 1:
            raise ConfigError(f'conv_stem {self.conv_stem} does not fit input {self.input_shape}')
        if self.layer_dims[0] != channels * out_h * out_w:
            raise ConfigError(
                f'layer_dims[0]={self.layer_dims[0]} must equal the conv output size '
                f'{channels}x{out_h}x{out_w}={channels * out_h * out_w}'
            )

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    @property
    def conv_output_shape(self):
        _, height, width = self.input_shape
        stem = self.conv_stem
        out_h = (height - stem.kernel) // stem.stride + 1
        out_w = (width - stem.kernel) // stem.stride + 1
        return stem.channels, out_h, out_w

    @property
    def input_size(self):
        if self.conv_stem is not None:
            return math.prod(self.input_shape)
        return self.layer_dims[0]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    start: int
    stop: int
    shape: tuple

    @property
    def is_weight(self):
        return self.name.endswith('.weight')


def _param_shapes(spec):
    shapes = []
    if spec.conv_stem is not None:
        stem = spec.conv_stem
        in_channels = spec.input_shape[0]
        shapes.append(('conv.weight', (stem.channels, in_channels, stem.kernel, stem.kernel)))
        shapes.append(('conv.bias', (stem.channels,)))
    dims = spec.layer_dims
    for index, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        shapes.append((f'dense{index}.weight', (fan_out, fan_in)))
        shapes.append((f'dense{index}.bias', (fan_out,)))
    return shapes


def layout_table(spec):
    """Layer order, weight before bias, each block row-major."""
    entries = []
    offset = 0
    for name, shape in _param_shapes(spec):
        size = math.prod(shape)
        entries.append(LayoutEntry(name, offset, offset + size, shape))
        offset += size
    return entries


def parameter_count(spec):
    return layout_table(spec)[-1].stop


def init_params(spec, seed):
    rng = np.random.default_rng(seed)
    w = np.zeros(parameter_count(spec), dtype=np.float64)
    for entry in layout_table(spec):
        if not entry.is_weight:
            continue
        fan_in = math.prod(entry.shape[1:])
        bound = math.sqrt(6.0 / fan_in)
        w[entry.start:entry.stop] = rng.uniform(-bound, bound, size=entry.stop - entry.start)
    return w


def _check_params(spec, w):
    w = np.asarray(w, dtype=np.float64)
    expected = parameter_count(spec)
    if w.ndim != 1 or w.shape[0] != expected:
        raise ShapeError(f'parameter vector has shape {w.shape}, model expects ({expected},)')
    return w


def _views(spec, w):
    pairs = []
    table = layout_table(spec)
    for weight, bias in zip(table[0::2], table[1::2]):
        pairs.append((
            w[weight.start:weight.stop].reshape(weight.shape),
            w[bias.start:bias.stop],
        ))
    return pairs


def unflatten(spec, w):
    w = _check_params(spec, w)
    return [(weight.copy(), bias.copy()) for weight, bias in _views(spec, w)]


def flatten(params, spec=None):
    parts = []
    for weight, bias in params:
        parts.append(np.asarray(weight, dtype=np.float64).ravel())
        parts.append(np.asarray(bias, dtype=np.float64).ravel())
    w = np.concatenate(parts) if parts else np.zeros(0)
    if spec is not None:
        if len(params) * 2 != len(layout_table(spec)):
            raise ShapeError(f'expected {len(layout_table(spec)) // 2} layers, got {len(params)}')
        for entry, array in zip(layout_table(spec), (a for pair in params for a in pair)):
            if tuple(np.shape(array)) != entry.shape:
                raise ShapeError(f'{entry.name} has shape {np.shape(array)}, expected {entry.shape}')
    return w


class Tensor:
    """A node of the autodiff tape: dense float64 data plus its backward rule."""

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self, grad=None):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def linear(x, weight, bias):
    out = x.data @ weight.data.T + bias.data

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad @ weight.data)
        weight._accumulate(grad.T @ x.data)
        bias._accumulate(grad.sum(axis=0))

    return Tensor(out, (x, weight, bias), backward)


def relu(x):
    mask = x.data > 0

    def backward(grad):
        x._accumulate(grad * mask)

    return Tensor(np.where(mask, x.data, 0.0), (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(grad):
        x._accumulate(grad * (1.0 - out * out))

    return Tensor(out, (x,), backward)


def reshape(x, shape):
    def backward(grad):
        x._accumulate(grad.reshape(x.shape))

    return Tensor(x.data.reshape(shape), (x,), backward)


def conv2d(x, weight, bias, stride):
    channels, in_channels, kernel, _ = weight.shape
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    batch, _, out_h, out_w = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, in_channels * kernel * kernel)
    kernel_matrix = weight.data.reshape(channels, -1)
    out = (cols @ kernel_matrix.T + bias.data).reshape(batch, out_h, out_w, channels)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(grad):
        flat = grad.transpose(0, 2, 3, 1).reshape(-1, channels)
        weight._accumulate((flat.T @ cols).reshape(weight.shape))
        bias._accumulate(flat.sum(axis=0))
        if not x.requires_grad:
            return
        dcols = (flat @ kernel_matrix).reshape(batch, out_h, out_w, in_channels, kernel, kernel)
        dx = np.zeros_like(x.data)
        span_h = stride * (out_h - 1) + 1
        span_w = stride * (out_w - 1) + 1
        for i in range(kernel):
            for j in range(kernel):
                dx[:, :, i:i + span_h:stride, j:j + span_w:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        x._accumulate(dx)

    return Tensor(out, (x, weight, bias), backward)


def _check_labels(labels, batch, classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != batch:
        raise ShapeError(f'labels have shape {labels.shape}, expected ({batch},)')
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f'labels must be integers, got dtype {labels.dtype}')
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(f'labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]')
    return labels


def softmax_cross_entropy(logits, labels):
    batch, classes = logits.shape
    labels = _check_labels(labels, batch, classes)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    def backward(grad):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        logits._accumulate(probs * (grad / batch))

    return Tensor(loss, (logits,), backward)


def cross_entropy(logits, labels):
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f'logits must be (batch, classes), got {logits.shape}')
    return float(softmax_cross_entropy(logits, labels).data)


def _check_batch(spec, batch):
    inputs = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    if inputs.ndim < 2 or inputs.shape[0] < 1:
        raise ShapeError(f'batch must have a leading batch dimension, got shape {inputs.shape}')
    size = inputs.shape[0]
    if spec.conv_stem is not None:
        if inputs.shape[1:] == spec.input_shape:
            return inputs
        if inputs.ndim == 2 and inputs.shape[1] == spec.input_size:
            return inputs.reshape((size,) + spec.input_shape)
        raise ShapeError(f'batch shape {inputs.shape} does not match input shape {spec.input_shape}')
    if inputs.ndim != 2 or inputs.shape[1] != spec.layer_dims[0]:
        raise ShapeError(f'batch shape {inputs.shape} does not match input width {spec.layer_dims[0]}')
    return inputs


def _activate(spec, h):
    return relu(h) if spec.activation == 'relu' else tanh(h)


def _graph(spec, w, batch, requires_grad):
    w = _check_params(spec, w)
    inputs = _check_batch(spec, batch)
    params = [
        (Tensor(weight, requires_grad=requires_grad), Tensor(bias, requires_grad=requires_grad))
        for weight, bias in _views(spec, w)
    ]
    h = Tensor(inputs)
    dense = params
    if spec.conv_stem is not None:
        weight, bias = params[0]
        h = _activate(spec, conv2d(h, weight, bias, spec.conv_stem.stride))
        h = reshape(h, (inputs.shape[0], -1))
        dense = params[1:]
    last = len(dense) - 1
    for index, (weight, bias) in enumerate(dense):
        h = linear(h, weight, bias)
        if index != last:
            h = _activate(spec, h)
    return h, params


def forward(spec, w, batch):
    logits, _ = _graph(spec, w, batch, requires_grad=False)
    return Tensor(logits.data)


def backward(spec, w, batch, labels):
    logits, params = _graph(spec, w, batch, requires_grad=True)
    loss = softmax_cross_entropy(logits, labels)
    loss.backward()
    parts = []
    for tensor in (t for pair in params for t in pair):
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        parts.append(grad.ravel())
    return float(loss.data), np.concatenate(parts)


def predict(spec, w, inputs):
    return forward(spec, w, inputs).data.argmax(axis=1)


def evaluate(spec, w, inputs, labels, batch_size=1024):
    """Mean loss and accuracy over a whole dataset, in fixed-order chunks."""
    total = inputs.shape[0]
    loss_sum = 0.0
    correct = 0
    for start in range(0, total, batch_size):
        chunk = inputs[start:start + batch_size]
        chunk_labels = labels[start:start + batch_size]
        logits = forward(spec, w, chunk)
        loss_sum += cross_entropy(logits, chunk_labels) * chunk.shape[0]
        correct += int((logits.data.argmax(axis=1) == chunk_labels).sum())
    return loss_sum / total, correct / total


class BatchObjective:
    """Loss of one fixed mini-batch as a function of the full parameter vector."""

    def __init__(self, spec, inputs, labels):
        self.spec = spec
        self.inputs = inputs
        self.labels = labels

    def loss(self, w):
        return cross_entropy(forward(self.spec, w, self.inputs), self.labels)

    def loss_and_grad(self, w):
        return backward(self.spec, w, self.inputs, self.labels)
