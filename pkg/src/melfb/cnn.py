"""Small convolutional networks on mel-like feature maps, in plain numpy.

Layers follow the usual pattern ``pool(leaky_relu(correlate(S, w) + b))``
with valid (unpadded) cross-correlation and block pooling that drops
incomplete edge blocks.  The network input is a single 2-D map
(frequency x time) that first passes a per-frequency affine transform
(batch normalisation in inference form).

Gradients are back-propagated by hand for the binary cross-entropy of the
sigmoid output.  Max-pooling routes the gradient to the first maximal
entry of each block in row-major order.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "LEAKY_SLOPE",
    "ConvLayer",
    "DenseStage",
    "Network",
    "ARCHITECTURES",
    "leaky_relu",
    "leaky_relu_grad",
    "sigmoid",
    "sigmoid_grad",
    "correlate_valid",
    "pool",
    "pool_stack",
    "conv_layer_forward",
    "dense_forward",
    "build_architecture",
    "network_forward",
    "forward_trace",
    "network_gradient",
    "binary_cross_entropy",
]

LEAKY_SLOPE = 0.01

# feature stage as ((maps, maps), pool) blocks, and dense hidden units
ARCHITECTURES = {
    "small_two": {"blocks": (((32, 16), (3, 3)), ((32, 16), (3, 3))),
                  "dense": (64, 16)},
    "small_one": {"blocks": (((32, 16), (3, 3)), ((32, 16), (3, 3))),
                  "dense": (32,)},
}


def leaky_relu(x, c=LEAKY_SLOPE):
    """``x`` for ``x > 0``, ``c x`` otherwise."""
    if c < 0:
        raise ValueError("leaky slope must be non-negative")
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, c * x)


def leaky_relu_grad(x, c=LEAKY_SLOPE):
    """Derivative of :func:`leaky_relu`; the value at 0 is ``c``."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, c)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # split by sign so that exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def correlate_valid(stack, weights, bias=None):
    """Valid 2-D cross-correlation summed over input maps.

    Parameters
    ----------
    stack : ndarray, shape (K_in, M, N)
    weights : ndarray, shape (K_out, K_in, a, b)
    bias : ndarray, shape (K_out,), optional

    Returns
    -------
    ndarray, shape (K_out, M - a + 1, N - b + 1)
    """
    stack = np.asarray(stack, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if stack.ndim != 3 or weights.ndim != 4:
        raise ValueError("expected a 3-D stack and 4-D kernels")
    k_out, k_in, a, b = weights.shape
    if stack.shape[0] != k_in:
        raise ValueError(
            f"stack has {stack.shape[0]} maps, kernels expect {k_in}")
    if stack.shape[1] < a or stack.shape[2] < b:
        raise ValueError(
            f"map of size {stack.shape[1:]} is smaller than kernel {(a, b)}")
    win = sliding_window_view(stack, (a, b), axis=(1, 2))
    out = np.moveaxis(np.tensordot(win, weights, axes=([0, 3, 4], [1, 2, 3])),
                      -1, 0)
    if bias is not None:
        out += np.asarray(bias, dtype=float)[:, None, None]
    return out


def _blocks(x, a, b):
    # (..., M, N) -> (..., M // a, N // b, a * b), row-major inside a block
    m, n = x.shape[-2:]
    mo, no = m // a, n // b
    x = x[..., :mo * a, :no * b]
    x = x.reshape(x.shape[:-2] + (mo, a, no, b))
    x = np.moveaxis(x, -3, -2)
    return x.reshape(x.shape[:-2] + (a * b,))


def pool(s, a, b, p=np.inf):
    """Block ``p``-norm pooling with ``a x b`` blocks (``p = inf``: max).

    Trailing rows and columns that do not fill a block are dropped.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        raise ValueError("pool expects a 2-D array")
    return pool_stack(s[None], a, b, p)[0]


def pool_stack(stack, a, b, p=np.inf):
    """:func:`pool` applied to every map of a ``(K, M, N)`` stack."""
    stack = np.asarray(stack, dtype=float)
    if a < 1 or b < 1:
        raise ValueError("pool sizes must be positive")
    if a > stack.shape[-2] or b > stack.shape[-1]:
        raise ValueError(
            f"pool {(a, b)} exceeds map size {stack.shape[-2:]}")
    blk = _blocks(stack, a, b)
    if np.isinf(p):
        return blk.max(axis=-1)
    if p <= 0:
        raise ValueError("p must be positive")
    return np.sum(np.abs(blk) ** p, axis=-1) ** (1.0 / p)


def _pool_backward(stack, grad_out, a, b, p):
    blk = _blocks(stack, a, b)
    if np.isinf(p):
        first = blk.argmax(axis=-1)  # first maximum in row-major order
        gb = np.zeros_like(blk)
        np.put_along_axis(gb, first[..., None], grad_out[..., None], axis=-1)
    else:
        norm = np.sum(np.abs(blk) ** p, axis=-1, keepdims=True) ** (1.0 / p)
        safe = np.where(norm > 0, norm, 1.0)
        gb = (np.abs(blk) ** (p - 1) * np.sign(blk) / safe ** (p - 1)
              * grad_out[..., None])
    k, m, n = stack.shape
    mo, no = m // a, n // b
    gb = gb.reshape(k, mo, no, a, b)
    gb = np.moveaxis(gb, 3, 2).reshape(k, mo * a, no * b)
    out = np.zeros_like(stack)
    out[:, :mo * a, :no * b] = gb
    return out


@dataclass
class ConvLayer:
    """Kernels ``(K_out, K_in, a, b)``, biases, pooling block and slope."""

    weights: np.ndarray
    bias: np.ndarray
    pool: tuple = (1, 1)
    slope: float = LEAKY_SLOPE
    p: float = np.inf

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 4:
            raise ValueError("kernels must be a 4-D array")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("one bias per output map is required")
        self.pool = tuple(int(v) for v in self.pool)
        if self.slope < 0:
            raise ValueError("leaky slope must be non-negative")

    @property
    def n_params(self):
        return self.weights.size + self.bias.size

    def output_shape(self, in_shape):
        _, m, n = in_shape
        _, _, a, b = self.weights.shape
        m, n = m - a + 1, n - b + 1
        if m < 1 or n < 1:
            raise ValueError(f"convolution underflows input {in_shape}")
        pa, pb = self.pool
        if pa > m or pb > n:
            raise ValueError(f"pooling {self.pool} underflows map {(m, n)}")
        return self.weights.shape[0], m // pa, n // pb


@dataclass
class DenseStage:
    """Hidden leaky-ReLU layers followed by a single sigmoid unit.

    ``matrices[j]`` maps layer ``j`` to layer ``j + 1``; the last one has a
    single row.
    """

    matrices: list
    biases: list
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.matrices = [np.asarray(m, dtype=float) for m in self.matrices]
        self.biases = [np.asarray(v, dtype=float) for v in self.biases]
        if not self.matrices or len(self.matrices) != len(self.biases):
            raise ValueError("need one bias per matrix and at least one layer")
        for j, (m, v) in enumerate(zip(self.matrices, self.biases)):
            if m.ndim != 2 or v.shape != (m.shape[0],):
                raise ValueError(f"dense layer {j}: bad shapes")
            if j and m.shape[1] != self.matrices[j - 1].shape[0]:
                raise ValueError(f"dense layer {j}: shapes do not chain")
        if self.matrices[-1].shape[0] != 1:
            raise ValueError("the output layer must have one unit")

    @property
    def n_inputs(self):
        return self.matrices[0].shape[1]

    @property
    def n_params(self):
        return sum(m.size + v.size for m, v in zip(self.matrices, self.biases))


@dataclass
class Network:
    """Input normalisation, convolutional layers and a dense stage."""

    input_shape: tuple
    scale: np.ndarray
    shift: np.ndarray
    convs: list
    dense: DenseStage
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.scale = np.asarray(self.scale, dtype=float)
        self.shift = np.asarray(self.shift, dtype=float)
        m = self.input_shape[0]
        if self.scale.shape != (m,) or self.shift.shape != (m,):
            raise ValueError("normalisation needs one scale and shift per row")
        shape = self.feature_shape()
        if int(np.prod(shape)) != self.dense.n_inputs:
            raise ValueError(
                f"feature stage yields {shape} = {int(np.prod(shape))} values, "
                f"dense stage expects {self.dense.n_inputs}")

    def layer_shapes(self):
        shapes = [(1,) + self.input_shape]
        for layer in self.convs:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def feature_shape(self):
        return self.layer_shapes()[-1]

    @property
    def n_feature_params(self):
        return self.scale.size + self.shift.size + sum(
            c.n_params for c in self.convs)

    @property
    def n_classifier_params(self):
        return self.dense.n_params

    @property
    def n_params(self):
        return self.n_feature_params + self.n_classifier_params

    def parameters(self):
        """Ordered ``(name, array)`` pairs; the arrays are live references."""
        out = [("norm.scale", self.scale), ("norm.shift", self.shift)]
        for i, c in enumerate(self.convs):
            out += [(f"conv{i}.weights", c.weights), (f"conv{i}.bias", c.bias)]
        for j, (m, v) in enumerate(zip(self.dense.matrices, self.dense.biases)):
            out += [(f"dense{j}.weights", m), (f"dense{j}.bias", v)]
        return out

    def architecture(self):
        """Plain description sufficient to rebuild the network's shapes."""
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "convs": [{"maps": int(c.weights.shape[0]),
                       "kernel": list(c.weights.shape[2:]),
                       "pool": list(c.pool), "slope": c.slope,
                       "p": None if np.isinf(c.p) else c.p}
                      for c in self.convs],
            "dense": [int(m.shape[0]) for m in self.dense.matrices[:-1]],
            "dense_slope": self.dense.slope,
        }

    def summary(self):
        """Text table of layers, output shapes and parameter counts."""
        rows = [("input", "x".join(map(str, self.input_shape)), 0),
                ("normalisation", "x".join(map(str, self.input_shape)),
                 self.scale.size + self.shift.size)]
        shapes = self.layer_shapes()
        for i, c in enumerate(self.convs):
            k, a, b = c.weights.shape[0], *c.weights.shape[2:]
            label = f"conv{a}x{b}({k})"
            if c.pool != (1, 1):
                label += f"+pool{c.pool[0]}x{c.pool[1]}"
            rows.append((label, "x".join(map(str, shapes[i + 1])), c.n_params))
        flat = int(np.prod(shapes[-1]))
        rows.append(("flatten", str(flat), 0))
        for m, v in zip(self.dense.matrices, self.dense.biases):
            rows.append((f"dense({m.shape[0]})", str(m.shape[0]),
                         m.size + v.size))
        width = max(len(r[0]) for r in rows) + 2
        lines = [f"{'layer':<{width}}{'output':>12}{'params':>10}"]
        lines += [f"{r[0]:<{width}}{r[1]:>12}{r[2]:>10}" for r in rows]
        lines.append(f"total parameters: {self.n_params}")
        lines.append(f"classification parameters: {self.n_classifier_params}")
        lines.append(f"feature parameters: {self.n_feature_params}")
        return "\n".join(lines)


def conv_layer_forward(stack, layer):
    """``pool(leaky_relu(correlate(stack, w) + b))`` for one layer."""
    z = correlate_valid(stack, layer.weights, layer.bias)
    a, b = layer.pool
    return pool_stack(leaky_relu(z, layer.slope), a, b, layer.p)


def dense_forward(features, stage):
    """Output probability of the dense stage for a flattened feature stack."""
    x = np.asarray(features, dtype=float).ravel()
    if x.size != stage.n_inputs:
        raise ValueError(
            f"dense stage expects {stage.n_inputs} inputs, got {x.size}")
    for m, v in zip(stage.matrices[:-1], stage.biases[:-1]):
        x = leaky_relu(m @ x + v, stage.slope)
    return float(sigmoid(stage.matrices[-1] @ x + stage.biases[-1])[0])


def build_architecture(variant="small_two", input_shape=(80, 115), seed=None,
                       pools=None, dense=None, slope=LEAKY_SLOPE):
    """Build ``small_one`` or ``small_two``.

    Each feature block is two 3x3 convolutions (32 then 16 maps) followed by
    3x3 max-pooling; two blocks feed the dense stage.  ``pools`` and
    ``dense`` override the block pooling sizes and hidden units (useful for
    down-scaled copies).  With ``seed=None`` all weights and biases are
    zero and the normalisation is the identity; otherwise weights are drawn
    with He scaling and the normalisation is perturbed around the identity.
    """
    if variant not in ARCHITECTURES:
        raise ValueError(
            f"unknown architecture {variant!r}; choose from "
            f"{sorted(ARCHITECTURES)}")
    spec = ARCHITECTURES[variant]
    blocks = spec["blocks"]
    if pools is not None:
        if len(pools) != len(blocks):
            raise ValueError(f"need {len(blocks)} pooling sizes")
        blocks = tuple((maps, tuple(p)) for (maps, _), p in zip(blocks, pools))
    hidden = spec["dense"] if dense is None else tuple(dense)
    rng = None if seed is None else np.random.default_rng(seed)

    def draw(shape, fan_in):
        if rng is None:
            return np.zeros(shape)
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    def small(shape):
        return np.zeros(shape) if rng is None else 0.1 * rng.standard_normal(shape)

    m = input_shape[0]
    scale = np.ones(m) + small(m)
    shift = small(m)
    convs = []
    k_in = 1
    for maps, pl in blocks:
        for i, k_out in enumerate(maps):
            pool_ab = pl if i == len(maps) - 1 else (1, 1)
            convs.append(ConvLayer(draw((k_out, k_in, 3, 3), 9 * k_in),
                                   small(k_out), pool_ab, slope))
            k_in = k_out
    shape = (1,) + tuple(input_shape)
    for c in convs:
        shape = c.output_shape(shape)
    units = [int(np.prod(shape))] + list(hidden) + [1]
    mats = [draw((units[j + 1], units[j]), units[j])
            for j in range(len(units) - 1)]
    biases = [small(units[j + 1]) for j in range(len(units) - 1)]
    return Network(tuple(input_shape), scale, shift, convs,
                   DenseStage(mats, biases, slope), name=variant)


@dataclass
class Trace:
    """Intermediate values of one forward pass."""

    inputs: list       # stack entering each conv layer
    pre: list          # correlation + bias
    act: list          # after leaky ReLU (before pooling)
    dense_in: list     # input vector of each dense layer
    dense_pre: list    # pre-activation of each dense layer
    output: float
    pools: list = field(default_factory=list)

    def pattern(self):
        """Activation signs and pooling winners; constant between kinks."""
        signs = [np.signbit(z) for z in self.pre + self.dense_pre[:-1]]
        winners = [_blocks(y, a, b).argmax(axis=-1)
                   for y, (a, b) in zip(self.act, self.pools)
                   if (a, b) != (1, 1)]
        return signs + winners

    def same_pattern(self, other):
        return all(np.array_equal(u, v)
                   for u, v in zip(self.pattern(), other.pattern()))


def _check_input(net, x):
    x = np.asarray(x, dtype=float)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} != {net.input_shape}")
    return x


def forward_trace(net, x):
    """Forward pass that keeps every intermediate array."""
    x = _check_input(net, x)
    s = (net.scale[:, None] * x + net.shift[:, None])[None]
    inputs, pre, act = [], [], []
    for c in net.convs:
        inputs.append(s)
        z = correlate_valid(s, c.weights, c.bias)
        y = leaky_relu(z, c.slope)
        pre.append(z)
        act.append(y)
        s = pool_stack(y, *c.pool, c.p)
    v = s.ravel()
    d_in, d_pre = [], []
    stage = net.dense
    for j, (m, b) in enumerate(zip(stage.matrices, stage.biases)):
        d_in.append(v)
        z = m @ v + b
        d_pre.append(z)
        v = leaky_relu(z, stage.slope) if j < len(stage.matrices) - 1 else z
    return Trace(inputs, pre, act, d_in, d_pre, float(sigmoid(v)[0]),
                 [c.pool for c in net.convs])


def network_forward(net, x):
    """Output probability in ``(0, 1)`` for one input map."""
    return forward_trace(net, x).output


def binary_cross_entropy(logit, target):
    """``-t log s(z) - (1 - t) log(1 - s(z))`` evaluated stably."""
    return float(np.logaddexp(0.0, logit) - target * logit)


def network_gradient(net, x, target):
    """Loss and gradient of the binary cross-entropy w.r.t. every parameter.

    Returns
    -------
    loss : float
    grads : dict
        Keyed like :meth:`Network.parameters`.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError("target must lie in [0, 1]")
    x = _check_input(net, x)
    tr = forward_trace(net, x)
    stage = net.dense
    logit = float(tr.dense_pre[-1][0])
    loss = binary_cross_entropy(logit, target)
    grads = {}

    g = np.array([tr.output - target])
    for j in range(len(stage.matrices) - 1, -1, -1):
        if j < len(stage.matrices) - 1:
            g = g * leaky_relu_grad(tr.dense_pre[j], stage.slope)
        grads[f"dense{j}.weights"] = np.outer(g, tr.dense_in[j])
        grads[f"dense{j}.bias"] = g.copy()
        g = stage.matrices[j].T @ g

    g = g.reshape(net.feature_shape())
    for i in range(len(net.convs) - 1, -1, -1):
        c = net.convs[i]
        g = _pool_backward(tr.act[i], g, *c.pool, c.p)
        g = g * leaky_relu_grad(tr.pre[i], c.slope)
        s = tr.inputs[i]
        a, b = c.weights.shape[2:]
        win = sliding_window_view(s, (a, b), axis=(1, 2))
        grads[f"conv{i}.weights"] = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        grads[f"conv{i}.bias"] = g.sum(axis=(1, 2))
        gs = np.zeros_like(s)
        mo, no = g.shape[1:]
        for da in range(a):
            for db in range(b):
                gs[:, da:da + mo, db:db + no] += np.einsum(
                    "omn,oi->imn", g, c.weights[:, :, da, db])
        g = gs

    g = g[0]
    grads["norm.scale"] = np.sum(g * x, axis=1)
    grads["norm.shift"] = g.sum(axis=1)
    return loss, grads
