"""Small dense and recurrent Q-networks with explicit reverse-mode gradients.

Each network keeps its parameters in an ordered ``params`` dict.  ``forward``
returns outputs plus a cache; ``backward(cache, d_out)`` returns a gradient
dict with the same keys.  Nothing here knows about reinforcement learning.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit


class NonFiniteError(FloatingPointError):
    """A loss or gradient was NaN/inf; the update was not applied."""


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def _sigmoid(x):
    return expit(x)


class Network:
    params: dict

    def copy(self):
        return copy.deepcopy(self)

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise KeyError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k in self.params:
            arr = np.asarray(state[k])
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k] = arr.astype(self.params[k].dtype, copy=True)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


class MlpQNet(Network):
    """Q(s, a) for an explicit action encoding: [state, action] -> hidden ReLU layers -> 1.

    ``forward`` scores a block of actions per state so enumerated action sets
    are evaluated without re-running the state half of the first layer.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden: Sequence[int] = (128, 128, 64),
                 seed: int = 0, dtype=np.float64):
        if state_dim < 1 or action_dim < 1 or any(h < 1 for h in hidden):
            raise ValueError("dimensions must be positive")
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)
        rng = np.random.default_rng(seed)
        sizes = [state_dim + action_dim, *hidden, 1]
        self.params = {}
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"W{i}"] = xavier_uniform(rng, fi, fo, dtype)
            self.params[f"b{i}"] = np.zeros(fo, dtype=dtype)
        self.n_layers = len(sizes) - 1

    def forward(self, states: np.ndarray, actions: np.ndarray):
        """Score actions for each state.

        states: (B, state_dim).  actions: (A, action_dim), shared by all
        states, or (B, A, action_dim).  Returns q of shape (B, A) and a cache.
        """
        p = self.params
        dt = self.dtype
        states = np.asarray(states, dtype=dt)
        actions = np.asarray(actions, dtype=dt)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ValueError(f"expected states (B, {self.state_dim}), got {states.shape}")
        if actions.shape[-1] != self.action_dim or actions.ndim not in (2, 3):
            raise ValueError(f"expected actions (..., {self.action_dim}), got {actions.shape}")
        if actions.ndim == 3 and actions.shape[0] != states.shape[0]:
            raise ValueError("per-state action blocks must match the batch size")
        B = states.shape[0]
        A = actions.shape[-2]
        W0 = p["W0"]
        zs = states @ W0[: self.state_dim]
        za = actions @ W0[self.state_dim :]
        z = (zs[:, None, :] + za) + p["b0"]
        z = z.reshape(B * A, -1)
        pre, post = [z], []
        h = np.maximum(z, 0.0)
        post.append(h)
        for i in range(1, self.n_layers):
            z = h @ p[f"W{i}"] + p[f"b{i}"]
            if i < self.n_layers - 1:
                pre.append(z)
                h = np.maximum(z, 0.0)
                post.append(h)
        q = z.reshape(B, A)
        return q, (states, actions, pre, post, B, A)

    def __call__(self, states, actions) -> np.ndarray:
        return self.forward(states, actions)[0]

    def backward(self, cache, dq: np.ndarray) -> dict:
        states, actions, pre, post, B, A = cache
        p = self.params
        grads = {}
        d = np.asarray(dq, dtype=self.dtype).reshape(B * A, 1)
        for i in range(self.n_layers - 1, 0, -1):
            h = post[i - 1]
            grads[f"W{i}"] = h.T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            d = (d @ p[f"W{i}"].T) * (pre[i - 1] > 0)
        d = d.reshape(B, A, -1)
        grads["b0"] = d.sum(axis=(0, 1))
        gs = states.T @ d.sum(axis=1)
        if actions.ndim == 2:
            ga = actions.T @ d.sum(axis=0)
        else:
            ga = np.einsum("bad,bah->dh", actions, d)
        grads["W0"] = np.concatenate([gs, ga], axis=0)
        return {k: grads[k] for k in p}


class LstmQNet(Network):
    """Sequence Q-network: FC feature extractor, stacked LSTM, linear head over actions.

    Dropout follows each feature layer and sits between LSTM layers (not
    after the last one).  It is active only when ``train=True`` and uses the
    caller's generator, so a fixed seed reproduces the masks.
    """

    def __init__(self, state_dim: int, num_actions: int, hidden: int = 32, feature_hidden: int = 32,
                 n_layers: int = 2, dropout: float = 0.1, seed: int = 0, dtype=np.float64):
        if min(state_dim, num_actions, hidden, feature_hidden, n_layers) < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.state_dim, self.num_actions = state_dim, num_actions
        self.hidden, self.feature_hidden, self.n_layers, self.dropout = hidden, feature_hidden, n_layers, dropout
        rng = np.random.default_rng(seed)
        H = hidden
        self.params = {
            "fe0_W": xavier_uniform(rng, state_dim, feature_hidden, dtype),
            "fe0_b": np.zeros(feature_hidden, dtype=dtype),
            "fe1_W": xavier_uniform(rng, feature_hidden, feature_hidden, dtype),
            "fe1_b": np.zeros(feature_hidden, dtype=dtype),
        }
        for layer in range(n_layers):
            fan_in = feature_hidden if layer == 0 else H
            self.params[f"lstm{layer}_Wx"] = xavier_uniform(rng, fan_in, 4 * H, dtype)
            self.params[f"lstm{layer}_Wh"] = xavier_uniform(rng, H, 4 * H, dtype)
            self.params[f"lstm{layer}_b"] = np.zeros(4 * H, dtype=dtype)
        self.params["head_W"] = xavier_uniform(rng, H, num_actions, dtype)
        self.params["head_b"] = np.zeros(num_actions, dtype=dtype)

    def zero_state(self, batch: int):
        shape = (self.n_layers, batch, self.hidden)
        return np.zeros(shape, dtype=self.dtype), np.zeros(shape, dtype=self.dtype)

    def _mask(self, rng, shape, train):
        if not train or self.dropout == 0.0:
            return None
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        keep = 1.0 - self.dropout
        return (rng.random(shape) < keep).astype(self.dtype) / keep

    def forward(self, x: np.ndarray, state=None, train: bool = False, rng: Optional[np.random.Generator] = None):
        """Run a batch of sequences.

        x: (B, L, state_dim).  state: optional (h, c), each (n_layers, B, hidden).
        Returns q (B, L, num_actions), the final (h, c), and a cache.
        """
        p = self.params
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[2] != self.state_dim:
            raise ValueError(f"expected (B, L, {self.state_dim}) input, got {x.shape}")
        B, L, _ = x.shape
        if L < 1:
            raise ValueError("sequence must be nonempty")
        h0, c0 = self.zero_state(B) if state is None else state
        if h0.shape != (self.n_layers, B, self.hidden):
            raise ValueError("initial hidden state has the wrong shape")

        a0 = x @ p["fe0_W"] + p["fe0_b"]
        f0 = np.maximum(a0, 0.0)
        m0 = self._mask(rng, f0.shape, train)
        f0d = f0 if m0 is None else f0 * m0
        a1 = f0d @ p["fe1_W"] + p["fe1_b"]
        f1 = np.maximum(a1, 0.0)
        m1 = self._mask(rng, f1.shape, train)
        inp = f1 if m1 is None else f1 * m1

        layer_caches, masks_between = [], []
        h_last, c_last = [], []
        for layer in range(self.n_layers):
            if layer > 0:
                m = self._mask(rng, inp.shape, train)
                masks_between.append(m)
                if m is not None:
                    inp = inp * m
            out, hT, cT, lc = self._lstm_forward(layer, inp, h0[layer], c0[layer])
            layer_caches.append(lc)
            h_last.append(hT)
            c_last.append(cT)
            inp = out
        q = inp @ p["head_W"] + p["head_b"]
        cache = (x, a0, f0, m0, f0d, a1, f1, m1, layer_caches, masks_between, inp)
        return q, (np.stack(h_last), np.stack(c_last)), cache

    def __call__(self, x, state=None, train=False, rng=None):
        return self.forward(x, state, train, rng)[0]

    def _lstm_forward(self, layer, inp, h, c):
        p = self.params
        Wx, Wh, b = p[f"lstm{layer}_Wx"], p[f"lstm{layer}_Wh"], p[f"lstm{layer}_b"]
        H = self.hidden
        B, L, _ = inp.shape
        xz = inp @ Wx + b
        outs = np.empty((B, L, H), dtype=self.dtype)
        steps = []
        for t in range(L):
            z = xz[:, t] + h @ Wh
            sz = _sigmoid(z)
            i, f, o = sz[:, :H], sz[:, H : 2 * H], sz[:, 3 * H :]
            g = np.tanh(z[:, 2 * H : 3 * H])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((h, c, i, f, g, o, tc))
            h, c = h_new, c_new
            outs[:, t] = h
        return outs, h, c, (inp, steps)

    def _lstm_backward(self, layer, lc, dout, grads):
        p = self.params
        Wx, Wh = p[f"lstm{layer}_Wx"], p[f"lstm{layer}_Wh"]
        inp, steps = lc
        B, L, _ = inp.shape
        H = self.hidden
        dz_all = np.empty((B, L, 4 * H), dtype=self.dtype)
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H), dtype=self.dtype)
        dc_next = np.zeros((B, H), dtype=self.dtype)
        for t in range(L - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dout[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1
            )
            dz_all[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
        grads[f"lstm{layer}_Wh"] = dWh
        grads[f"lstm{layer}_Wx"] = inp.reshape(B * L, -1).T @ dz_all.reshape(B * L, -1)
        grads[f"lstm{layer}_b"] = dz_all.sum(axis=(0, 1))
        return dz_all @ Wx.T

    def backward(self, cache, dq: np.ndarray) -> dict:
        """Gradients of sum(dq * q) w.r.t. all parameters (initial state held fixed)."""
        p = self.params
        x, a0, f0, m0, f0d, a1, f1, m1, layer_caches, masks_between, top = cache
        B, L, _ = x.shape
        dq = np.asarray(dq, dtype=self.dtype)
        grads = {
            "head_W": top.reshape(B * L, -1).T @ dq.reshape(B * L, -1),
            "head_b": dq.sum(axis=(0, 1)),
        }
        d = dq @ p["head_W"].T
        for layer in range(self.n_layers - 1, -1, -1):
            d = self._lstm_backward(layer, layer_caches[layer], d, grads)
            if layer > 0 and masks_between[layer - 1] is not None:
                d = d * masks_between[layer - 1]
        if m1 is not None:
            d = d * m1
        d = d * (a1 > 0)
        grads["fe1_W"] = f0d.reshape(B * L, -1).T @ d.reshape(B * L, -1)
        grads["fe1_b"] = d.sum(axis=(0, 1))
        d = d @ p["fe1_W"].T
        if m0 is not None:
            d = d * m0
        d = d * (a0 > 0)
        grads["fe0_W"] = x.reshape(B * L, -1).T @ d.reshape(B * L, -1)
        grads["fe0_b"] = d.sum(axis=(0, 1))
        return {k: grads[k] for k in p}


# -- optimization -------------------------------------------------------------


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in params:
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(state[f"v.{k}"], dtype=self.v[k].dtype)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float):
    """Scale gradients so their joint L2 norm is at most ``max_norm``; returns (grads, norm)."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def backward_and_step(net: Network, grads: Mapping[str, np.ndarray], optimizer: Adam,
                      clip_norm: Optional[float] = 1.0, loss: Optional[float] = None) -> float:
    """Clip and apply one Adam update; returns the pre-clip gradient norm.

    Raises NonFiniteError (leaving parameters untouched) if the loss or any
    gradient is not finite.
    """
    if loss is not None and not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss!r}")
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteError(f"non-finite gradients in {bad}")
    clipped, norm = clip_by_global_norm(grads, clip_norm)
    optimizer.step(net.params, clipped)
    return norm


def soft_update(target: Network, online: Network, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target."""
    for k, v in online.params.items():
        t = target.params[k]
        t *= 1.0 - tau
        t += tau * v


# -- checkpoints --------------------------------------------------------------


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Named tensors plus a JSON metadata blob in one ``.npz`` file."""
    payload = {k: np.asarray(v) for k, v in tensors.items()}
    payload["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_tensors(path):
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        tensors = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return tensors, meta
