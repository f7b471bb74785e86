"""Minimal numpy network toolkit sized for the control policy.

Two 16-unit GRU branches (content factors and network factors over the past
6 intervals), concatenated into a 32-wide ReLU layer, then either a 7-way
softmax head (actor) or a scalar linear head (critic). Forward passes cache
activations; backward passes produce exact reverse-mode gradients, checked
against central finite differences in the test suite.

Everything is float64 and deterministic given parameters and inputs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumMismatch, IoError, NonFinite, ShapeMismatch, VersionMismatch

CONTENT_DIM = 4       # si, ti, iflag, crf
NETWORK_DIM = 3       # stall, rtt, loss
HIDDEN_DIM = 16
DENSE_DIM = 32
N_ACTIONS = 7
SEQ_LEN = 6

RMSPROP_DECAY = 0.99
RMSPROP_EPS = 1e-6

CHECKPOINT_MAGIC = b"RABR"
CHECKPOINT_VERSION = 1


def _check_finite(name: str, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite(f"non-finite values in {name}")


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy (natural log)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return -t.sum(axis=-1)


class GruLayer:
    """Single GRU layer; h' = (1-z)*h + z*candidate, gates are sigmoids."""

    GATE_NAMES = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")

    def __init__(self, input_dim: int, hidden_dim: int = HIDDEN_DIM,
                 rng: np.random.Generator | None = None):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        rng = rng or np.random.default_rng(0)
        h, d = hidden_dim, input_dim
        self.wz = glorot(rng, h, d); self.uz = glorot(rng, h, h); self.bz = np.zeros(h)
        self.wr = glorot(rng, h, d); self.ur = glorot(rng, h, h); self.br = np.zeros(h)
        self.wh = glorot(rng, h, d); self.uh = glorot(rng, h, h); self.bh = np.zeros(h)

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.GATE_NAMES}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """x: (B, T, input_dim) -> final hidden (B, hidden_dim) plus cache."""
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeMismatch(f"expected (B, T, {self.input_dim}), got {x.shape}")
        B, T, _ = x.shape
        h = np.zeros((B, self.hidden_dim))
        cache = {"x": x, "h": [h], "z": [], "r": [], "c": []}
        for t in range(T):
            xt = x[:, t, :]
            z = sigmoid(xt @ self.wz.T + h @ self.uz.T + self.bz)
            r = sigmoid(xt @ self.wr.T + h @ self.ur.T + self.br)
            c = np.tanh(xt @ self.wh.T + (r * h) @ self.uh.T + self.bh)
            h = (1.0 - z) * h + z * c
            cache["z"].append(z); cache["r"].append(r); cache["c"].append(c)
            cache["h"].append(h)
        _check_finite("gru forward", h)
        return h, cache

    def backward(self, dh_final: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        """Backprop through time from the final hidden; returns parameter grads."""
        x = cache["x"]
        B, T, _ = x.shape
        grads = {n: np.zeros_like(getattr(self, n)) for n in self.GATE_NAMES}
        dh = dh_final.copy()
        for t in range(T - 1, -1, -1):
            xt = x[:, t, :]
            h_prev = cache["h"][t]
            z, r, c = cache["z"][t], cache["r"][t], cache["c"][t]
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            dc_pre = dc * (1.0 - c * c)
            grads["wh"] += dc_pre.T @ xt
            grads["uh"] += dc_pre.T @ (r * h_prev)
            grads["bh"] += dc_pre.sum(axis=0)
            drh = dc_pre @ self.uh
            dr = drh * h_prev
            dh_prev += drh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            grads["wz"] += dz_pre.T @ xt
            grads["uz"] += dz_pre.T @ h_prev
            grads["bz"] += dz_pre.sum(axis=0)
            grads["wr"] += dr_pre.T @ xt
            grads["ur"] += dr_pre.T @ h_prev
            grads["br"] += dr_pre.sum(axis=0)
            dh_prev += dz_pre @ self.uz + dr_pre @ self.ur
            dh = dh_prev
        return grads


class TwoBranchNet:
    """GRU(content) + GRU(network) -> concat -> dense ReLU -> linear head."""

    def __init__(self, out_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.out_dim = out_dim
        self.gru_content = GruLayer(CONTENT_DIM, HIDDEN_DIM, rng)
        self.gru_network = GruLayer(NETWORK_DIM, HIDDEN_DIM, rng)
        self.w1 = glorot(rng, DENSE_DIM, 2 * HIDDEN_DIM)
        self.b1 = np.zeros(DENSE_DIM)
        self.w2 = glorot(rng, out_dim, DENSE_DIM)
        self.b2 = np.zeros(out_dim)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in (("gc", self.gru_content), ("gn", self.gru_network)):
            for n, v in layer.params().items():
                out[f"{prefix}.{n}"] = v
        out.update({"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2})
        return out

    def forward(self, content: np.ndarray, network: np.ndarray
                ) -> tuple[np.ndarray, dict]:
        """content (B,T,4), network (B,T,3) -> logits (B, out_dim) + cache."""
        hc, cache_c = self.gru_content.forward(content)
        hn, cache_n = self.gru_network.forward(network)
        hcat = np.concatenate([hc, hn], axis=1)
        pre1 = hcat @ self.w1.T + self.b1
        h1 = np.maximum(pre1, 0.0)
        logits = h1 @ self.w2.T + self.b2
        _check_finite("net forward", logits)
        cache = {"cache_c": cache_c, "cache_n": cache_n, "hcat": hcat,
                 "pre1": pre1, "h1": h1}
        return logits, cache

    def backward(self, dlogits: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        grads = {}
        grads["w2"] = dlogits.T @ cache["h1"]
        grads["b2"] = dlogits.sum(axis=0)
        dh1 = dlogits @ self.w2
        dpre1 = dh1 * (cache["pre1"] > 0)
        grads["w1"] = dpre1.T @ cache["hcat"]
        grads["b1"] = dpre1.sum(axis=0)
        dhcat = dpre1 @ self.w1
        gc = self.gru_content.backward(dhcat[:, :HIDDEN_DIM], cache["cache_c"])
        gn = self.gru_network.backward(dhcat[:, HIDDEN_DIM:], cache["cache_n"])
        for n, v in gc.items():
            grads[f"gc.{n}"] = v
        for n, v in gn.items():
            grads[f"gn.{n}"] = v
        _check_finite("net backward", *grads.values())
        return grads


class RmsProp:
    def __init__(self, decay: float = RMSPROP_DECAY, eps: float = RMSPROP_EPS):
        self.decay = decay
        self.eps = eps
        self.cache: dict[str, np.ndarray] = {}

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float) -> None:
        for name, p in params.items():
            g = grads[name]
            _check_finite(f"gradient {name}", g)
            v = self.cache.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.cache[name] = v
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p -= lr * g / (np.sqrt(v) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        return self.cache


@dataclass
class PolicyModel:
    """Actor (7-way softmax) + critic (scalar) with shared architecture."""
    actor: TwoBranchNet = field(default_factory=lambda: TwoBranchNet(N_ACTIONS, seed=1))
    critic: TwoBranchNet = field(default_factory=lambda: TwoBranchNet(1, seed=2))
    actor_opt: RmsProp = field(default_factory=RmsProp)
    critic_opt: RmsProp = field(default_factory=RmsProp)

    @classmethod
    def init(cls, seed: int = 0) -> "PolicyModel":
        return cls(actor=TwoBranchNet(N_ACTIONS, seed=seed * 2 + 1),
                   critic=TwoBranchNet(1, seed=seed * 2 + 2))

    def actor_forward(self, content: np.ndarray, network: np.ndarray) -> np.ndarray:
        """Action probabilities; accepts (T,4)/(T,3) or batched (B,T,*)."""
        content, network, squeeze = _batchify(content, network)
        logits, _ = self.actor.forward(content, network)
        probs = softmax(logits)
        return probs[0] if squeeze else probs

    def critic_forward(self, content: np.ndarray, network: np.ndarray) -> np.ndarray:
        content, network, squeeze = _batchify(content, network)
        values, _ = self.critic.forward(content, network)
        return float(values[0, 0]) if squeeze else values[:, 0]

    def copy(self) -> "PolicyModel":
        import copy
        return copy.deepcopy(self)

    def param_tables(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("actor", self.actor), ("critic", self.critic)):
            for n, v in net.params().items():
                out[f"{prefix}.{n}"] = v
        return out


def _batchify(content, network):
    content = np.asarray(content, dtype=np.float64)
    network = np.asarray(network, dtype=np.float64)
    squeeze = content.ndim == 2
    if squeeze:
        content = content[None]
        network = network[None]
    if content.shape[1:] != (SEQ_LEN, CONTENT_DIM) or network.shape[1:] != (SEQ_LEN, NETWORK_DIM):
        raise ShapeMismatch(
            f"expected (*,{SEQ_LEN},{CONTENT_DIM}) and (*,{SEQ_LEN},{NETWORK_DIM}), "
            f"got {content.shape} and {network.shape}")
    return content, network, squeeze


# --- losses with exact gradients ---------------------------------------------

def actor_loss_and_grads(model: PolicyModel, content: np.ndarray, network: np.ndarray,
                         actions: np.ndarray, advantages: np.ndarray, beta: float
                         ) -> tuple[float, dict[str, np.ndarray]]:
    """Policy-gradient loss  -sum_t [log pi(a_t|s_t) A_t + beta H(pi_t)].

    Advantages are constants (no gradient flows into the critic).
    """
    logits, cache = model.actor.forward(content, network)
    p = softmax(logits)
    B = p.shape[0]
    idx = np.arange(B)
    logp = np.log(p[idx, actions])
    ent = entropy(p)
    loss = float(-(logp * advantages + beta * ent).sum())
    # d(-logp_a * A)/dlogits = -A * (onehot - p)
    onehot = np.zeros_like(p)
    onehot[idx, actions] = 1.0
    dlogits = -advantages[:, None] * (onehot - p)
    # dH/dlogits = -p * (log p + H);  loss has -beta*H
    with np.errstate(divide="ignore"):
        logp_full = np.where(p > 0, np.log(p), 0.0)
    dlogits += beta * p * (logp_full + ent[:, None])
    grads = model.actor.backward(dlogits, cache)
    return loss, grads


def critic_loss_and_grads(model: PolicyModel, content: np.ndarray, network: np.ndarray,
                          returns: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Squared error sum_t (G_t - V(s_t))^2 with exact gradients."""
    values, cache = model.critic.forward(content, network)
    v = values[:, 0]
    err = returns - v
    loss = float((err * err).sum())
    dlogits = (-2.0 * err)[:, None]
    grads = model.critic.backward(dlogits, cache)
    return loss, grads


def discounted_returns(rewards: np.ndarray, gamma: float, bootstrap: float = 0.0
                       ) -> np.ndarray:
    """Backward recursion G_t = r_t + gamma * G_{t+1}; G after the end = bootstrap."""
    G = bootstrap
    out = np.empty_like(np.asarray(rewards, dtype=np.float64))
    for t in range(len(rewards) - 1, -1, -1):
        G = rewards[t] + gamma * G
        out[t] = G
    return out


# --- checkpointing -----------------------------------------------------------

def save_checkpoint(model: PolicyModel, path) -> None:
    """Versioned binary: magic, version, named float64-LE tensors, CRC32."""
    body = bytearray()
    tables = model.param_tables()
    body += struct.pack("<I", len(tables))
    for name in sorted(tables):
        arr = np.ascontiguousarray(tables[name], dtype="<f8")
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    payload = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + bytes(body)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    try:
        with open(path, "wb") as f:
            f.write(payload + struct.pack("<I", crc))
    except OSError as e:
        raise IoError(str(e)) from None


def load_checkpoint(path) -> PolicyModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(str(e)) from None
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise IoError(f"{path}: not a checkpoint file")
    payload, crc_bytes = blob[:-4], blob[-4:]
    if len(crc_bytes) < 4 or zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise ChecksumMismatch(f"{path}: CRC mismatch")
    version = struct.unpack("<I", payload[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    off = 8
    (count,) = struct.unpack_from("<I", payload, off); off += 4
    tables = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", payload, off); off += 2
        name = payload[off:off + nlen].decode("utf-8"); off += nlen
        (ndim,) = struct.unpack_from("<B", payload, off); off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off); off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        tables[name] = arr.astype(np.float64)
    model = PolicyModel.init(seed=0)
    current = model.param_tables()
    if set(current) != set(tables):
        raise IoError(f"{path}: tensor table mismatch")
    for name, arr in tables.items():
        dst = current[name]
        if dst.shape != arr.shape:
            raise IoError(f"{path}: shape mismatch for {name}")
        dst[...] = arr
    return model
