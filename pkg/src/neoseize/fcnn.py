"""Fully convolutional seizure network on raw 8 s EEG epochs.

The network maps a standardized 256-sample epoch (8 s at 32 Hz) to two
class probabilities using only convolution, ReLU, batch normalization,
average pooling and global average pooling (GAP)::

    conv1 (1->32) relu      253
    conv2 (32->32) relu     250
    conv3 (32->32) relu     247
    batch norm              247
    avg pool (8, 2)         120
    conv4 (32->32) relu     117
    conv5 (32->32) relu     114
    avg pool (4, 2)          56
    conv6 (32->2) relu       53
    GAP + softmax             2

Public tensors use the ``(batch, maps, time)`` layout. Internally the
forward and backward passes work channel-last, ``(batch, time, maps)``,
so each convolution is a single matrix product over unfolded windows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 4
N_MAPS = 32
N_CLASSES = 2
INPUT_LENGTH = 256
SEIZURE_CLASS = 1

LAYER_LENGTHS = (253, 250, 247, 120, 117, 114, 56, 53)
LAYER_PARAMS = (160, 4128, 4128, 64, 4128, 4128, 258)

# (name, kind, kernel/width, stride) in network order
ARCHITECTURE = (
    ("conv1", "conv", KERNEL, 1),
    ("conv2", "conv", KERNEL, 1),
    ("conv3", "conv", KERNEL, 1),
    ("bn", "bn", None, None),
    ("pool1", "pool", 8, 2),
    ("conv4", "conv", KERNEL, 1),
    ("conv5", "conv", KERNEL, 1),
    ("pool2", "pool", 4, 2),
    ("conv6", "conv", KERNEL, 1),
)
CONV_NAMES = ("conv1", "conv2", "conv3", "conv4", "conv5", "conv6")


@dataclass
class ConvLayer:
    """1-D convolution with ``weight[out, in, 4]`` and per-map ``bias[out]``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 3 or self.weight.shape[2] != KERNEL:
            raise ValueError(
                f"conv weight must have shape (out, in, {KERNEL}), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal the number of output maps")

    @property
    def n_params(self):
        return self.weight.size + self.bias.size


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    @property
    def n_params(self):
        # trainable parameters only; running statistics are buffers
        return self.gamma.size + self.beta.size


@dataclass
class FcnnModel:
    conv1: ConvLayer
    conv2: ConvLayer
    conv3: ConvLayer
    bn: BatchNormLayer
    conv4: ConvLayer
    conv5: ConvLayer
    conv6: ConvLayer
    pool1: tuple = (8, 2)
    pool2: tuple = (4, 2)

    @property
    def dtype(self):
        return self.conv1.weight.dtype

    def params(self):
        """Trainable parameters as an ordered ``name -> array`` dict (live references)."""
        out = {}
        for name in ("conv1", "conv2", "conv3"):
            layer = getattr(self, name)
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        out["bn.gamma"] = self.bn.gamma
        out["bn.beta"] = self.bn.beta
        for name in ("conv4", "conv5", "conv6"):
            layer = getattr(self, name)
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        return out

    def copy(self):
        return self.astype(self.dtype)

    def astype(self, dtype):
        """Deep copy with every parameter and buffer cast to ``dtype``."""
        def conv(layer):
            return ConvLayer(layer.weight.astype(dtype, copy=True),
                             layer.bias.astype(dtype, copy=True))
        bn = self.bn
        return FcnnModel(
            conv1=conv(self.conv1), conv2=conv(self.conv2), conv3=conv(self.conv3),
            bn=BatchNormLayer(bn.gamma.astype(dtype, copy=True),
                              bn.beta.astype(dtype, copy=True),
                              bn.running_mean.astype(dtype, copy=True),
                              bn.running_var.astype(dtype, copy=True),
                              bn.epsilon, bn.momentum),
            conv4=conv(self.conv4), conv5=conv(self.conv5), conv6=conv(self.conv6),
            pool1=tuple(self.pool1), pool2=tuple(self.pool2),
        )


@dataclass
class ForwardTrace:
    """Per-layer outputs of one forward pass.

    ``outputs`` maps layer names to ``(batch, maps, time)`` arrays. ``logits``
    are the GAP values of the final (post-ReLU) maps and ``probs`` their
    softmax. ``cache["conv6.pre"]`` keeps the conv6 pre-activation for ranking
    in :func:`localize`.
    """

    outputs: dict
    logits: np.ndarray
    probs: np.ndarray
    mode: str
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def lengths(self):
        return tuple(self.outputs[name].shape[-1] for name in
                     ("conv1", "conv2", "conv3", "pool1", "conv4", "conv5", "pool2", "conv6"))

    @property
    def final_maps(self):
        return self.outputs["conv6"]

    @property
    def seizure_map_pre(self):
        return np.swapaxes(self.cache["conv6.pre"], 1, 2)[:, SEIZURE_CLASS, :]


# ---------------------------------------------------------------------------
# layer primitives (public layout: maps x time)


def conv1d_forward(x, layer):
    """Valid stride-1 cross-correlation, ``y[k, i] = sum_c sum_j W[k, c, j] x[c, i + j] + b[k]``.

    ``x`` is ``(in_maps, L)`` or ``(batch, in_maps, L)``. ReLU is not applied.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[-1] < KERNEL:
        raise ValueError(f"input length {x.shape[-1]} shorter than kernel {KERNEL}")
    if x.shape[1] != layer.weight.shape[1]:
        raise ValueError(
            f"input has {x.shape[1]} maps, layer expects {layer.weight.shape[1]}")
    y = _conv_fwd(np.ascontiguousarray(np.swapaxes(x, 1, 2)), layer.weight, layer.bias)
    y = np.swapaxes(y, 1, 2)
    return y[0] if squeeze else y


def relu(x):
    return np.maximum(x, 0)


def avgpool_forward(x, width, stride):
    """Average pooling along the last axis with floor boundary semantics."""
    x = np.asarray(x)
    if x.shape[-1] < width:
        raise ValueError(f"input length {x.shape[-1]} shorter than pool width {width}")
    moved = np.moveaxis(x, -1, -2)  # time to axis -2, like the internal layout
    return np.moveaxis(_pool_fwd(moved, width, stride), -2, -1)


def batchnorm_forward(x, layer, mode="train"):
    """Batch normalization of ``x[batch, 32, L]`` per feature map.

    Train mode normalizes with the statistics over (batch, time) and updates
    the running statistics of ``layer`` in place; infer mode uses them.
    """
    y, _ = _bn_fwd(np.swapaxes(np.asarray(x), 1, 2), layer, mode)
    return np.swapaxes(y, 1, 2)


def gap(x):
    """Global average pooling over time: ``(..., maps, L) -> (..., maps)``."""
    return np.mean(x, axis=-1)


def softmax(logits):
    z = np.asarray(logits)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(float)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# channel-last kernels used by forward/backward


def _conv_fwd(x, weight, bias):
    """Channel-last valid convolution, ``(B, L, C) -> (B, L - 3, O)``.

    The batch is flattened to ``(B * L, C)`` rows; tap ``j`` is a matmul on
    the row block shifted by ``j``. Rows that straddle two batch elements
    only land in the discarded tail of each output sequence.
    """
    n_out, n_in, k = weight.shape
    batch, length, _ = x.shape
    out_len = length - k + 1
    if n_in == 1:
        cols = sliding_window_view(x[:, :, 0], k, axis=1).reshape(batch * out_len, k)
        y = cols @ weight[:, 0, :].T
        y += bias
        return y.reshape(batch, out_len, n_out)
    flat = x.reshape(batch * length, n_in)
    rows = batch * length - (k - 1)
    taps = np.ascontiguousarray(weight.transpose(2, 1, 0))  # (k, in, out)
    full = np.empty((batch * length, n_out), dtype=x.dtype)
    full[rows:] = 0
    np.matmul(flat[0:rows], taps[0], out=full[:rows])
    tmp = np.empty((rows, n_out), dtype=x.dtype)
    for j in range(1, k):
        np.matmul(flat[j:j + rows], taps[j], out=tmp)
        full[:rows] += tmp
    y = full.reshape(batch, length, n_out)[:, :out_len, :]
    return y + bias


def _conv_bwd(dy, x, weight, need_dx=True, mask=None):
    """Gradients of :func:`_conv_fwd`; ``mask`` (ReLU gate) multiplies ``dy`` first."""
    n_out, n_in, k = weight.shape
    batch, length, _ = x.shape
    out_len = dy.shape[1]
    rows = batch * length - (k - 1)
    padded = np.empty((batch, length, n_out), dtype=x.dtype)
    padded[:, out_len:] = 0
    if mask is None:
        padded[:, :out_len] = dy
    else:
        np.multiply(dy, mask, out=padded[:, :out_len])
    dbias = padded.sum(axis=(0, 1))
    if n_in == 1 and not need_dx:
        cols = sliding_window_view(x[:, :, 0], k, axis=1).reshape(batch * out_len, k)
        g = padded[:, :out_len].reshape(batch * out_len, n_out)
        return None, (g.T @ cols)[:, None, :], dbias
    dflat = padded.reshape(batch * length, n_out)[:rows]
    flat = x.reshape(batch * length, n_in)
    taps = np.ascontiguousarray(weight.transpose(2, 0, 1))  # (k, out, in)
    dweight = np.empty_like(weight)
    for j in range(k):
        dweight[:, :, j] = dflat.T @ flat[j:j + rows]
    if not need_dx:
        return None, dweight, dbias
    dx = np.empty((batch * length, n_in), dtype=x.dtype)
    dx[rows:] = 0
    np.matmul(dflat, taps[0], out=dx[:rows])
    tmp = np.empty((rows, n_in), dtype=x.dtype)
    for j in range(1, k):
        np.matmul(dflat, taps[j], out=tmp)
        dx[j:j + rows] += tmp
    return dx.reshape(batch, length, n_in), dweight, dbias


def _pool_fwd(x, width, stride):
    # pools along axis -2 (time in the channel-last layout)
    length = x.shape[-2]
    out_len = (length - width) // stride + 1
    span = stride * (out_len - 1) + 1
    acc = x[..., 0:span:stride, :].copy()
    for j in range(1, width):
        acc += x[..., j:j + span:stride, :]
    acc /= width
    return acc


def _pool_bwd(dy, width, stride, in_len):
    out_len = dy.shape[-2]
    span = stride * (out_len - 1) + 1
    dx = np.zeros(dy.shape[:-2] + (in_len, dy.shape[-1]), dtype=dy.dtype)
    scaled = dy / width
    for j in range(width):
        dx[..., j:j + span:stride, :] += scaled
    return dx


def _bn_fwd(x, layer, mode):
    # x: (B, L, C); statistics over (B, L)
    if mode == "train":
        count = x.shape[0] * x.shape[1]
        if count < 2:
            raise ValueError("batch norm in train mode needs batch * length >= 2")
        mean = x.mean(axis=(0, 1))
        centered = x - mean
        var = np.mean(centered * centered, axis=(0, 1))
        m = layer.momentum
        layer.running_mean[...] = m * layer.running_mean + (1 - m) * mean
        layer.running_var[...] = m * layer.running_var + (1 - m) * var
    elif mode == "infer":
        mean, var = layer.running_mean, layer.running_var
        centered = x - mean
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    xhat = centered * inv_std
    return xhat * layer.gamma + layer.beta, (xhat, inv_std)


def _bn_bwd(dy, cache, layer):
    xhat, inv_std = cache
    dgamma = np.sum(dy * xhat, axis=(0, 1))
    dbeta = np.sum(dy, axis=(0, 1))
    dxhat = dy * layer.gamma
    count = dy.shape[0] * dy.shape[1]
    dx = (inv_std / count) * (count * dxhat
                              - dxhat.sum(axis=(0, 1))
                              - xhat * np.sum(dxhat * xhat, axis=(0, 1)))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# whole network


def _as_batch(epochs, dtype):
    x = np.asarray(epochs, dtype=dtype)
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim == 3 and x.shape[1] == 1:
        x = x[:, 0, :]
    if x.ndim != 2 or x.shape[1] != INPUT_LENGTH:
        raise ValueError(
            f"expected epochs of length {INPUT_LENGTH}, got array of shape {np.shape(epochs)}")
    return x[:, :, None]


def forward(model, epochs, mode="infer"):
    """Run the network on one epoch (256,) or a batch (B, 256).

    Returns a :class:`ForwardTrace`; its ``cache`` is what :func:`backward`
    consumes. In train mode the batch-norm running statistics are updated.
    """
    x = _as_batch(epochs, model.dtype)
    cache = {"input": x}
    outputs = {}
    h = x
    for name, kind, size, stride in ARCHITECTURE:
        if kind == "conv":
            layer = getattr(model, name)
            cache[f"{name}.input"] = h
            pre = _conv_fwd(h, layer.weight, layer.bias)
            h = np.maximum(pre, 0, out=pre) if name != "conv6" else np.maximum(pre, 0)
            cache[f"{name}.output"] = h
            if name == "conv6":
                cache["conv6.pre"] = pre
        elif kind == "bn":
            h, cache["bn"] = _bn_fwd(h, model.bn, mode)
        else:
            width, stride = getattr(model, name)
            cache[f"{name}.in_len"] = h.shape[1]
            h = _pool_fwd(h, width, stride)
        outputs[name] = np.swapaxes(h, 1, 2)
    lengths = tuple(outputs[n].shape[-1] for n in
                    ("conv1", "conv2", "conv3", "pool1", "conv4", "conv5", "pool2", "conv6"))
    if lengths != LAYER_LENGTHS:
        raise AssertionError(f"shape chain {lengths} differs from {LAYER_LENGTHS}")
    logits = h.mean(axis=1)
    probs = softmax(logits)
    return ForwardTrace(outputs=outputs, logits=logits, probs=probs, mode=mode, cache=cache)


def backward(model, trace, target):
    """Gradients of the mean categorical cross-entropy w.r.t. every parameter.

    ``target`` holds class indices (0 background, 1 seizure), one per batch
    element. Returns a dict keyed like :meth:`FcnnModel.params`.
    """
    target = np.atleast_1d(np.asarray(target, dtype=int))
    probs = trace.probs
    batch = probs.shape[0]
    if target.shape != (batch,):
        raise ValueError(f"target must have {batch} entries")
    dlogits = probs.copy()
    dlogits[np.arange(batch), target] -= 1.0
    dlogits /= batch
    return _backward_from_logits(model, trace, dlogits)


def _backward_from_logits(model, trace, dlogits):
    cache = trace.cache
    grads = {}
    final = cache["conv6.output"]
    dh = np.broadcast_to((dlogits / final.shape[1])[:, None, :], final.shape)
    for name, kind, size, stride in reversed(ARCHITECTURE):
        if kind == "conv":
            layer = getattr(model, name)
            dh, dw, db = _conv_bwd(dh, cache[f"{name}.input"], layer.weight,
                                   need_dx=name != "conv1",
                                   mask=cache[f"{name}.output"] > 0)
            grads[f"{name}.weight"] = dw
            grads[f"{name}.bias"] = db
        elif kind == "bn":
            dh, dgamma, dbeta = _bn_bwd(dh, cache["bn"], model.bn)
            grads["bn.gamma"] = dgamma
            grads["bn.beta"] = dbeta
        else:
            width, stride = getattr(model, name)
            dh = _pool_bwd(dh, width, stride, cache[f"{name}.in_len"])
    return {name: grads[name] for name in model.params()}


def predict_proba(model, epochs, batch_size=4096):
    """Seizure probability for each row of ``epochs`` (infer mode)."""
    epochs = np.asarray(epochs)
    if epochs.ndim == 1:
        epochs = epochs[None]
    out = np.empty(len(epochs))
    for start in range(0, len(epochs), batch_size):
        trace = forward(model, epochs[start:start + batch_size], mode="infer")
        out[start:start + batch_size] = trace.probs[:, SEIZURE_CLASS]
    return out


# ---------------------------------------------------------------------------
# construction and accounting


def _glorot_conv(rng, n_out, n_in, dtype):
    fan_in, fan_out = n_in * KERNEL, n_out * KERNEL
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(n_out, n_in, KERNEL))
    return ConvLayer(w.astype(dtype), np.zeros(n_out, dtype=dtype))


def init_model(seed=0, dtype=np.float32):
    """Glorot-uniform weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    return FcnnModel(
        conv1=_glorot_conv(rng, N_MAPS, 1, dtype),
        conv2=_glorot_conv(rng, N_MAPS, N_MAPS, dtype),
        conv3=_glorot_conv(rng, N_MAPS, N_MAPS, dtype),
        bn=BatchNormLayer(gamma=np.ones(N_MAPS, dtype), beta=np.zeros(N_MAPS, dtype),
                          running_mean=np.zeros(N_MAPS, dtype),
                          running_var=np.ones(N_MAPS, dtype)),
        conv4=_glorot_conv(rng, N_MAPS, N_MAPS, dtype),
        conv5=_glorot_conv(rng, N_MAPS, N_MAPS, dtype),
        conv6=_glorot_conv(rng, N_CLASSES, N_MAPS, dtype),
    )


def count_params(model):
    """Return ``(per_layer, total_with_bn, total_without_bn)``.

    ``per_layer`` follows the parameterized rows of the architecture table:
    conv1, conv2, conv3, batch norm, conv4, conv5, conv6.
    """
    per_layer = [model.conv1.n_params, model.conv2.n_params, model.conv3.n_params,
                 model.bn.n_params,
                 model.conv4.n_params, model.conv5.n_params, model.conv6.n_params]
    total = sum(per_layer)
    return per_layer, total, total - model.bn.n_params


def _rf_chain():
    """Receptive field (size, jump, start offset) after each conv layer."""
    size, jump, start = 1, 1, 0
    result = []
    for name, kind, k, stride in ARCHITECTURE:
        if kind == "bn":
            continue
        size += (k - 1) * jump
        jump *= stride
        if kind == "conv":
            result.append((size, jump, start))
    return result


def receptive_field(layer_index):
    """Receptive field ``(size_samples, jump_samples)`` of conv layer 1..6."""
    if not 1 <= layer_index <= len(CONV_NAMES):
        raise ValueError(f"layer_index must be in 1..{len(CONV_NAMES)}, got {layer_index}")
    size, jump, _ = _rf_chain()[layer_index - 1]
    return size, jump


def final_window(index, length=INPUT_LENGTH):
    """Input span ``[start, end)`` seen by position ``index`` of the final maps."""
    size, jump, offset = _rf_chain()[-1]
    start = offset + jump * index
    return max(start, 0), min(start + size, length)


def localize(model, epoch, top_n=1, trace=None):
    """Rank final-map positions by seizure evidence and map them back to input windows.

    The class probabilities depend only on the difference of the two GAP
    logits, so position ``i`` adds ``relu(s[i]) - relu(b[i])`` to the seizure
    log-odds (times ``1/53``), where ``s`` and ``b`` are the seizure and
    background maps. That contribution is the reported score. Ranking uses
    the pre-activation contrast ``s[i] - b[i]`` so positions where both maps
    are clipped to zero remain ordered.

    Returns up to ``top_n`` tuples ``(start_sample, end_sample, score)`` with
    ``end_sample`` exclusive, ordered by decreasing evidence.
    """
    if trace is None:
        trace = forward(model, epoch, mode="infer")
    pre = trace.cache["conv6.pre"][0]  # (time, class)
    seiz, back = pre[:, SEIZURE_CLASS], pre[:, 1 - SEIZURE_CLASS]
    contrast = seiz - back
    top_n = int(np.clip(top_n, 1, contrast.size))
    order = np.argsort(-contrast, kind="stable")[:top_n]
    score = np.maximum(seiz, 0) - np.maximum(back, 0)
    return [(*final_window(int(i)), float(score[i])) for i in order]


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"FCN1"
_VERSION = 1


def _model_arrays(model):
    bn = model.bn
    return [model.conv1.weight, model.conv1.bias, model.conv2.weight, model.conv2.bias,
            model.conv3.weight, model.conv3.bias,
            bn.gamma, bn.beta, bn.running_mean, bn.running_var,
            model.conv4.weight, model.conv4.bias, model.conv5.weight, model.conv5.bias,
            model.conv6.weight, model.conv6.bias]


def save_model(model, path):
    """Write ``model`` as little-endian float32 arrays with dimension headers."""
    arrays = _model_arrays(model)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HH", _VERSION, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class ModelFormatError(ValueError):
    pass


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: not an FCN model file (bad magic)")
    try:
        version, n_arrays = struct.unpack_from("<HH", blob, 4)
        if version != _VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        pos = 8
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(shape))
            if pos + 4 * n > len(blob):
                raise ModelFormatError(f"{path}: truncated model file")
            arrays.append(np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
                          .reshape(shape).astype(np.float32))
            pos += 4 * n
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated model file") from exc
    if n_arrays != 16 or pos != len(blob):
        raise ModelFormatError(f"{path}: unexpected layout")
    (w1, b1, w2, b2, w3, b3, g, be, rm, rv, w4, b4, w5, b5, w6, b6) = arrays
    return FcnnModel(ConvLayer(w1, b1), ConvLayer(w2, b2), ConvLayer(w3, b3),
                     BatchNormLayer(g, be, rm, rv),
                     ConvLayer(w4, b4), ConvLayer(w5, b5), ConvLayer(w6, b6))
