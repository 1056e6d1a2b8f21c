"""Small fully-connected networks with hand-written backprop, Adam and Polyak updates.

Parameters live in one flat float64 vector per network; the per-layer weight
and bias arrays are views into it, so optimizers can update the flat vector in
place. Weights are stored as (fan_in, fan_out) and applied as ``x @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu")
OUTPUTS = ("identity", "tanh")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}
_OUT_CODE = {name: i for i, name in enumerate(OUTPUTS)}


def param_count(layer_sizes) -> int:
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


class Mlp:
    """Feed-forward network: hidden ``activation`` layers, then an identity or
    ``output_bound * tanh`` output layer.
    """

    def __init__(self, layer_sizes, activation="tanh", output="identity",
                 output_bound=1.0, params=None, rng=None):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        if output == "tanh" and not output_bound > 0:
            raise ValueError("output_bound must be positive")
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.output = output
        self.output_bound = float(output_bound)
        n = param_count(layer_sizes)
        if params is None:
            params = self._init_params(np.random.default_rng(rng))
        params = np.array(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params
        self._bind_views()

    def _init_params(self, rng):
        chunks = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_out))
        return np.concatenate(chunks)

    def _bind_views(self):
        self.weights, self.biases = [], []
        off = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.biases.append(self.params[off:off + fan_out])
            off += fan_out

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.activation, self.output, self.output_bound,
                   params=self.params.copy())

    def load(self, params):
        """Overwrite parameters in place (views stay valid)."""
        params = np.asarray(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise ValueError(f"parameter shape mismatch: {params.shape} vs {self.params.shape}")
        self.params[:] = params

    def same_architecture(self, other: "Mlp") -> bool:
        return (self.layer_sizes == other.layer_sizes and self.activation == other.activation
                and self.output == other.output and self.output_bound == other.output_bound)

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input dimension mismatch: expected (..., {self.in_dim}), got {x.shape}")
        return x, single

    def forward_cached(self, x):
        """Forward pass on a (B, in) batch; returns output and the activations needed by backward."""
        x, single = self._as_batch(x)
        hs = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < last:
                h = np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)
                hs.append(h)
            else:
                h = self.output_bound * np.tanh(z) if self.output == "tanh" else z
        return h, (hs, h, single)

    def forward(self, x):
        out, (_, _, single) = self.forward_cached(x)
        return out[0] if single else out

    __call__ = forward

    def backward_cached(self, cache, grad_out, need_input_grad=True):
        """Backprop ``grad_out`` (dL/d output) through a cached forward pass.

        Returns the flat parameter gradient (summed over the batch) and dL/d input.
        """
        hs, out, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single and g.ndim == 1:
            g = g[None, :]
        if g.shape != out.shape:
            raise ValueError(f"upstream gradient shape {g.shape} does not match output {out.shape}")
        if self.output == "tanh":
            t = out / self.output_bound
            g = g * self.output_bound * (1.0 - t * t)
        grad = np.empty_like(self.params)
        off_end = grad.size
        for i in range(len(self.weights) - 1, -1, -1):
            W = self.weights[i]
            h_in = hs[i]
            fan_in, fan_out = W.shape
            grad[off_end - fan_out:off_end] = g.sum(axis=0)
            off_end -= fan_out
            grad[off_end - fan_in * fan_out:off_end] = (h_in.T @ g).ravel()
            off_end -= fan_in * fan_out
            if i > 0 or need_input_grad:
                g = g @ W.T
                if i > 0:
                    if self.activation == "tanh":
                        g = g * (1.0 - h_in * h_in)
                    else:
                        g = g * (h_in > 0.0)
        input_grad = g if need_input_grad else None
        if single and input_grad is not None:
            input_grad = input_grad[0]
        return grad, input_grad

    def backward(self, x, grad_out):
        _, cache = self.forward_cached(x)
        return self.backward_cached(cache, grad_out)


@dataclass
class Adam:
    """Bias-corrected Adam over one flat parameter vector."""

    size: int
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.size)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Apply one update to ``params`` in place and return it."""
        if params.shape != (self.size,) or np.shape(grad) != (self.size,):
            raise ValueError(f"expected length {self.size}, got {params.shape} and {np.shape(grad)}")
        self.step_count += 1
        m, v = self.first_moment, self.second_moment
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** self.step_count)
        v_hat = v / (1.0 - self.beta2 ** self.step_count)
        params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps_hat)
        return params


def polyak_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """target <- (1 - tau) * target + tau * online, in place."""
    if target.shape != online.shape:
        raise ValueError(f"length mismatch: {target.shape} vs {online.shape}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0:
        target[:] = online
    else:
        # written as a step toward online so equal vectors stay bitwise unchanged
        target += tau * (online - target)
    return target


class CriticPair:
    """Two online Q-networks and their slow-moving targets."""

    def __init__(self, in_dim, hidden=(64, 64), activation="tanh", rng=None):
        rng = np.random.default_rng(rng)
        sizes = (in_dim, *hidden, 1)
        self.q1 = Mlp(sizes, activation, rng=rng)
        self.q2 = Mlp(sizes, activation, rng=rng)
        self.target_q1 = self.q1.copy()
        self.target_q2 = self.q2.copy()

    def soft_update(self, tau):
        polyak_update(self.target_q1.params, self.q1.params, tau)
        polyak_update(self.target_q2.params, self.q2.params, tau)


class FeaturePreprocessor:
    """Trunk network plus a frozen copy that is refreshed every ``update_period`` env steps."""

    def __init__(self, online: Mlp, update_period: int = 2000):
        if update_period < 1:
            raise ValueError("update_period must be a positive integer")
        self.online = online
        self.target = online.copy()
        self.update_period = int(update_period)

    def refresh(self, env_step: int) -> bool:
        if env_step > 0 and env_step % self.update_period == 0:
            self.target.load(self.online.params)
            return True
        return False


def refresh_target_preprocessor(fp: FeaturePreprocessor, env_step: int) -> FeaturePreprocessor:
    fp.refresh(env_step)
    return fp


def make_trunk(obs_dim, feature_dim=50, rng=None) -> Mlp:
    return Mlp((obs_dim, feature_dim), output="tanh", output_bound=1.0, rng=rng)


# snapshot layout, little-endian:
#   uint32 n | n x int64 descriptor (layer sizes..., activation code, output code) |
#   float64 output bound | float64 parameters in layer order (W row-major, then b)
def snapshot_bytes(net: Mlp) -> bytes:
    desc = (*net.layer_sizes, _ACT_CODE[net.activation], _OUT_CODE[net.output])
    head = struct.pack("<I", len(desc)) + struct.pack(f"<{len(desc)}q", *desc)
    return head + struct.pack("<d", net.output_bound) + net.params.astype("<f8").tobytes()


def snapshot_from_bytes(buf: bytes, offset: int = 0):
    """Parse one snapshot starting at ``offset``; returns (net, next_offset)."""
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    desc = struct.unpack_from(f"<{n}q", buf, offset)
    offset += 8 * n
    sizes, act, out = desc[:-2], ACTIVATIONS[desc[-2]], OUTPUTS[desc[-1]]
    (bound,) = struct.unpack_from("<d", buf, offset)
    offset += 8
    count = param_count(sizes)
    params = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
    offset += 8 * count
    return Mlp(sizes, act, out, bound, params=params), offset


def save_snapshots(path, nets) -> None:
    Path(path).write_bytes(b"".join(snapshot_bytes(n) for n in nets))


def load_snapshots(path) -> list[Mlp]:
    buf = Path(path).read_bytes()
    nets, offset = [], 0
    while offset < len(buf):
        net, offset = snapshot_from_bytes(buf, offset)
        nets.append(net)
    return nets
