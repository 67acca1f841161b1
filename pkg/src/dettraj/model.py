"""Det2TrajFormer: a transformer encoder over identity-free detection tokens.

Each detection is embedded by an affine map plus a sinusoidal encoding of its
frame index; ``T_pred`` learnable query tokens are appended and the whole set
goes through pre-norm self-attention blocks. Query outputs feed the forecasting
head(s); detection outputs feed the pretraining heads (unmasking, denoising,
person-id embedding).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter

MAGIC = b"RTRJ1"
MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    d: int = 128
    layers: int = 9
    heads: int = 4
    d_id: int = 64
    T_obs: int = 9
    T_pred: int = 12
    n_futures: int = 1
    ff: int | None = None

    def __post_init__(self):
        if self.ff is None:
            self.ff = 4 * self.d
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"model config {k} must be positive, got {v}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")


def parameter_count(cfg):
    """Closed-form number of scalars in a model built from ``cfg``."""
    d, f = cfg.d, cfg.ff
    block = 2 * d + (3 * d * d + 2 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
    return (3 * d + cfg.T_pred * d + cfg.layers * block + 2 * d
            + cfg.n_futures * (2 * d + 2) + 2 * (2 * d + 2) + (d * cfg.d_id + cfg.d_id))


def time_encode(t, d):
    """Sinusoidal encoding of integer position(s) ``t``: sin on even, cos on odd dims."""
    t = np.asarray(t, dtype=np.float64)
    i = np.arange(0, d, 2)
    freq = 1.0 / (10000.0 ** (i / d))
    ang = t[..., None] * freq
    out = np.zeros(t.shape + (d,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)[..., : d // 2]
    return out


class Det2TrajFormer:
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d, f = cfg.d, cfg.ff
        self.params = {}

        def affine(name, n_in, n_out):
            bound = 1.0 / np.sqrt(n_in)
            self._add(f"{name}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
            self._add(f"{name}.b", np.zeros(n_out))

        affine("embed", 2, d)
        self._add("queries", rng.normal(0.0, 0.02, size=(cfg.T_pred, d)))
        for l in range(cfg.layers):
            p = f"block{l}"
            self._add(f"{p}.ln1.g", np.ones(d))
            self._add(f"{p}.ln1.b", np.zeros(d))
            bound = 1.0 / np.sqrt(d)
            self._add(f"{p}.attn.Wqkv", rng.uniform(-bound, bound, size=(d, 3 * d)))
            # key bias omitted: it shifts every logit of a query equally
            self._add(f"{p}.attn.bq", np.zeros(d))
            self._add(f"{p}.attn.bv", np.zeros(d))
            affine(f"{p}.attn.out", d, d)
            self._add(f"{p}.ln2.g", np.ones(d))
            self._add(f"{p}.ln2.b", np.zeros(d))
            affine(f"{p}.ff1", d, f)
            affine(f"{p}.ff2", f, d)
        self._add("ln_f.g", np.ones(d))
        self._add("ln_f.b", np.zeros(d))
        bound = 1.0 / np.sqrt(d)
        self._add("head_f.W", rng.uniform(-bound, bound, size=(cfg.n_futures, d, 2)))
        self._add("head_f.b", np.zeros((cfg.n_futures, 1, 2)))
        affine("head_m", d, 2)
        affine("head_d", d, 2)
        affine("head_r", d, cfg.d_id)
        self._te = time_encode(np.arange(cfg.T_obs + 1), d)

    def _add(self, name, value):
        self.params[name] = Parameter(np.asarray(value, dtype=np.float64), name)

    def __getitem__(self, name):
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def time_table(self, T):
        if T >= len(self._te):
            self._te = time_encode(np.arange(T + 1), self.cfg.d)
        return self._te

    # ------------------------------------------------------------ forward

    def _linear(self, x, name):
        return ad.add(ad.matmul(x, self[f"{name}.W"]), self[f"{name}.b"])

    def _ln(self, x, name):
        return ad.add(ad.mul(ad.layer_norm(x), self[f"{name}.g"]), self[f"{name}.b"])

    def _attention(self, x, key_mask, p):
        B, n, d = x.shape
        H = self.cfg.heads
        dh = d // H
        qkv = ad.matmul(x, self[f"{p}.attn.Wqkv"])
        bias = ad.concat([self[f"{p}.attn.bq"], ad.Tensor(np.zeros(d)), self[f"{p}.attn.bv"]], axis=0)
        qkv = ad.add(qkv, bias)
        qkv = ad.transpose(ad.reshape(qkv, (B, n, 3, H, dh)), (2, 0, 3, 1, 4))  # (3, B, H, n, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        attn = ad.softmax(ad.add(scores, key_mask))
        out = ad.matmul(attn, v)                                  # (B, H, n, dh)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, n, d))
        return self._linear(out, f"{p}.attn.out")

    def encode(self, positions, time_index, valid):
        """Batched encoder pass.

        ``positions`` (B, n, 2), ``time_index`` (B, n) ints, ``valid`` (B, n)
        bools marking real detections. Returns (H_hat (B, n, d), Q_hat (B, T_pred, d)).
        """
        positions = np.asarray(positions, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        if positions.ndim != 3 or positions.shape[-1] != 2:
            raise ValueError(f"positions must be (B, n, 2), got {positions.shape}")
        if not valid.any(axis=1).all():
            raise ValueError("every sample needs at least one real detection token")
        B, n, _ = positions.shape
        cfg = self.cfg
        # padding slots are zeroed so their content cannot leak anywhere
        pos = np.where(valid[..., None], positions, 0.0)
        tix = np.where(valid, np.asarray(time_index), 0)
        te = self.time_table(int(tix.max()))[tix]
        tok = ad.add(self._linear(ad.Tensor(pos), "embed"), te)
        queries = ad.add(ad.Tensor(np.zeros((B, 1, 1))), ad.reshape(self["queries"], (1, cfg.T_pred, cfg.d)))
        x = ad.concat([tok, queries], axis=1)
        key_ok = np.concatenate([valid, np.ones((B, cfg.T_pred), dtype=bool)], axis=1)
        key_mask = np.where(key_ok, 0.0, MASK_VALUE)[:, None, None, :]
        for l in range(cfg.layers):
            p = f"block{l}"
            x = ad.add(x, self._attention(self._ln(x, f"{p}.ln1"), key_mask, p))
            h = self._ln(x, f"{p}.ln2")
            h = self._linear(ad.relu(self._linear(h, f"{p}.ff1")), f"{p}.ff2")
            x = ad.add(x, h)
        x = self._ln(x, "ln_f")
        return x[:, :n], x[:, n:]

    def forecast(self, Q_hat):
        """(B, T_pred, d) -> (B, N, T_pred, 2) in centered coordinates."""
        B = Q_hat.shape[0]
        q = ad.reshape(Q_hat, (B, 1, self.cfg.T_pred, self.cfg.d))
        return ad.add(ad.matmul(q, self["head_f.W"]), self["head_f.b"])

    def pretext_outputs(self, H_hat):
        """Per-token (unmask (B,n,2), denoise (B,n,2), id embedding (B,n,d_id))."""
        return (self._linear(H_hat, "head_m"), self._linear(H_hat, "head_d"),
                self._linear(H_hat, "head_r"))

    def predict(self, positions, time_index, valid=None):
        """Forecasts as a numpy array; accepts a single window or a batch."""
        positions = np.asarray(positions, dtype=np.float64)
        single = positions.ndim == 2
        if single:
            positions, time_index = positions[None], np.asarray(time_index)[None]
            valid = None if valid is None else np.asarray(valid)[None]
        if valid is None:
            valid = np.ones(positions.shape[:2], dtype=bool)
        with ad.no_grad():
            _, Q_hat = self.encode(positions, time_index, valid)
            out = self.forecast(Q_hat).data
        return out[0] if single else out

    # ------------------------------------------------------------ state

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)


def save_checkpoint(model, path, extra=None):
    """Magic, 8-byte little-endian header length, JSON header, raw <f8 payloads."""
    manifest = [{"name": k, "shape": list(p.data.shape)} for k, p in model.params.items()]
    header = {"config": asdict(model.cfg), "params": manifest}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint_header(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n)), len(MAGIC) + 8 + n


def load_checkpoint(path):
    header, offset = read_checkpoint_header(path)
    model = Det2TrajFormer(ModelConfig(**header["config"]))
    with open(path, "rb") as fh:
        fh.seek(offset)
        state = {}
        for entry in header["params"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            state[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    model.load_state_dict(state)
    return model
