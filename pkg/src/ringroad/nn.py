"""Minimal dense networks with hand-written reverse- and forward-mode passes.

Everything is float64 numpy: the trust-region solver downstream is sensitive
to roundoff, and the parameter counts here (2x64 hidden layers) make single
precision pointless. Parameters flatten to one vector in layer order
(W0, b0, W1, b1, ...), which is also the checkpoint layout.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"RNGRDCK1"
CHECKPOINT_VERSION = 1

LOG_2PI = float(np.log(2.0 * np.pi))


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((rows, cols)) if rows >= cols else rng.standard_normal((cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Feed-forward net: affine-tanh hidden layers, identity or tanh output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], out_activation: str = "identity"):
        if out_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {out_activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must pair up")
        # C-contiguous canonical layout keeps matmul results bit-stable across
        # construction, flatten round-trips, and checkpoint reloads
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.out_activation = out_activation
        self.sizes = (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)
        for w, b, fan_in, fan_out in zip(self.weights, self.biases, self.sizes, self.sizes[1:]):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError("inconsistent layer shapes")
        self.n_params = sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def create(
        cls,
        sizes: tuple[int, ...],
        rng: np.random.Generator,
        out_activation: str = "identity",
        hidden_gain: float = np.sqrt(2.0),
        out_scale: float = 1.0,
    ) -> "Mlp":
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            gain = out_scale if i == len(sizes) - 2 else hidden_gain
            weights.append(orthogonal_init(rng, fan_out, fan_in, gain))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, out_activation)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.out_activation)

    def _check_input(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        return x, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning (output, cache) for a later backward call."""
        x2, single = self._check_input(x)
        activations = [x2]
        a = x2
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if i < last:
                a = np.tanh(z)
            else:
                a = np.tanh(z) if self.out_activation == "tanh" else z
            activations.append(a)
        y = activations[-1][0] if single else activations[-1]
        return y, (activations, single)

    def backward(self, cache, output_gradient: np.ndarray):
        """Exact reverse-mode gradients.

        Returns (flat parameter gradient summed over the batch, gradient with
        respect to the input). `cache` must come from forward_cached on the
        same parameters.
        """
        activations, single = cache
        gy = np.asarray(output_gradient, dtype=np.float64)
        if single and gy.ndim == 1:
            gy = gy[None, :]
        if gy.shape != activations[-1].shape:
            raise ValueError("output_gradient shape mismatch")
        g = gy
        if self.out_activation == "tanh":
            g = g * (1.0 - activations[-1] ** 2)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = activations[i]
            grads_w[i] = g.T @ a_in
            grads_b[i] = g.sum(axis=0)
            gx = g @ self.weights[i]
            if i > 0:
                g = gx * (1.0 - a_in**2)
        flat = np.concatenate([arr.ravel() for pair in zip(grads_w, grads_b) for arr in pair])
        return flat, (gx[0] if single else gx)

    def jvp(self, x: np.ndarray, v_flat: np.ndarray) -> np.ndarray:
        """Directional derivative of the output along a parameter direction."""
        x2, single = self._check_input(x)
        vw, vb = self._unflatten(v_flat)
        a = x2
        t = np.zeros_like(a)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            zt = t @ w.T + a @ vw[i].T + vb[i]
            z = a @ w.T + b
            if i < last or self.out_activation == "tanh":
                a = np.tanh(z)
                t = (1.0 - a**2) * zt
            else:
                a = z
                t = zt
        return t[0] if single else t

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for pair in zip(self.weights, self.biases) for arr in pair])

    def _unflatten(self, flat: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected flat vector of length {self.n_params}")
        ws, bs = [], []
        off = 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[off : off + w.size].reshape(w.shape))
            off += w.size
            bs.append(flat[off : off + b.size])
            off += b.size
        return ws, bs

    def set_from_flat(self, flat: np.ndarray):
        ws, bs = self._unflatten(flat)
        self.weights = [w.copy() for w in ws]
        self.biases = [b.copy() for b in bs]


class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    def __init__(self, n: int):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Bias-corrected adaptive-moment update; returns the new parameters."""
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        raise ValueError("adam_step: non-finite gradients")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads**2
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray | float:
    """Diagonal-Gaussian log density; batched over the leading axis."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    single = mean.ndim == 1 and action.ndim == 1
    m = np.atleast_2d(mean)
    a = np.atleast_2d(action)
    z = (a - m) / np.exp(log_std)
    lp = -0.5 * (z**2).sum(axis=1) - np.sum(log_std) - 0.5 * m.shape[1] * LOG_2PI
    return float(lp[0]) if single else lp


def diag_gaussian_kl(
    mean0: np.ndarray, log_std0: np.ndarray, mean1: np.ndarray, log_std1: np.ndarray
) -> np.ndarray:
    """KL(N0 || N1) per batch row for diagonal Gaussians."""
    var0 = np.exp(2.0 * log_std0)
    var1 = np.exp(2.0 * log_std1)
    per_dim = log_std1 - log_std0 + (var0 + (mean0 - mean1) ** 2) / (2.0 * var1) - 0.5
    return per_dim.sum(axis=-1)


class GaussianPolicy:
    """Gaussian action head: state-dependent mean, state-independent log std."""

    def __init__(self, mean_net: Mlp, log_std: np.ndarray):
        if mean_net.out_activation != "identity":
            raise ValueError("the Gaussian mean net must have an identity output")
        self.mean_net = mean_net
        self.log_std = np.asarray(log_std, dtype=np.float64)
        if self.log_std.shape != (mean_net.sizes[-1],):
            raise ValueError("log_std length must match the action dimension")

    @classmethod
    def create(
        cls,
        obs_dim: int,
        act_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        init_log_std: float = -0.5,
        out_scale: float = 0.01,
    ) -> "GaussianPolicy":
        net = Mlp.create((obs_dim, *hidden, act_dim), rng, "identity", out_scale=out_scale)
        return cls(net, np.full(act_dim, init_log_std))

    @property
    def n_params(self) -> int:
        return self.mean_net.n_params + self.log_std.size

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.mean_net.forward(obs)

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        return gaussian_log_prob(self.mean(obs), self.log_std, action)

    def entropy(self) -> float:
        return float(np.sum(self.log_std + 0.5 * (1.0 + LOG_2PI)))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.mean_net.flatten(), self.log_std])

    def set_from_flat(self, flat: np.ndarray):
        n = self.mean_net.n_params
        self.mean_net.set_from_flat(flat[:n])
        self.log_std = np.asarray(flat[n:], dtype=np.float64).copy()

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())


def save_checkpoint(path, metadata: dict, arrays: list[tuple[str, np.ndarray]]):
    """Write the binary checkpoint: magic, version, JSON header, raw float64.

    The header lists array names and shapes in file order; payloads are
    concatenated little-endian doubles in that same order.
    """
    meta = dict(metadata)
    meta["arrays"] = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated checkpoint")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return meta, arrays


def mlp_arrays(prefix: str, net: Mlp) -> list[tuple[str, np.ndarray]]:
    """Named weight/bias arrays for checkpointing, in flatten order."""
    out = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out.append((f"{prefix}.W{i}", w))
        out.append((f"{prefix}.b{i}", b))
    return out


def mlp_from_arrays(prefix: str, arrays: dict[str, np.ndarray], out_activation: str) -> Mlp:
    weights, biases = [], []
    i = 0
    while f"{prefix}.W{i}" in arrays:
        weights.append(arrays[f"{prefix}.W{i}"])
        biases.append(arrays[f"{prefix}.b{i}"])
        i += 1
    if not weights:
        raise ValueError(f"checkpoint holds no arrays under {prefix!r}")
    return Mlp(weights, biases, out_activation)
