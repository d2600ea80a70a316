"""Time-aware transformer delay model: forward pass, analytic gradients, checkpoints.

Architecture, front to back:
  - a shared 3-layer perceptron decouples each history sample (chunk size,
    measured throughput) into a network-state vector;
  - an encoder-only transformer (input projection + sinusoidal position
    encoding + one self-attention/feed-forward layer) learns dependencies
    across the history;
  - a key-query time-attention block turns sample ages into keys and the
    state matrix into one query, producing weights over history positions;
  - a feed-forward head fuses the attention-pooled encoding with the
    requested chunk size into a log-delay estimate (exponentiated at
    inference so delays stay positive).

Everything is float64 numpy with hand-derived backward passes; gradients are
finite-difference-checked in the test suite parameter tensor by parameter
tensor.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1
_LN_EPS = 1e-5


@dataclass(frozen=True)
class PredictorConfig:
    history_len: int = 8        # T samples per window
    state_dim: int = 16         # decoupled network-state width
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    decoupler_hidden: int = 16
    head_hidden: int = 32

    def __post_init__(self):
        if self.history_len < 1 or self.state_dim < 1:
            raise ValueError("history_len and state_dim must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class Normalizer:
    """Per-feature z-scoring fitted on the training split; targets stay raw
    (they are log-transformed instead)."""

    mean_x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    std_x: np.ndarray = field(default_factory=lambda: np.ones(2))
    mean_delta: float = 0.0
    std_delta: float = 1.0
    mean_dstar: float = 0.0
    std_dstar: float = 1.0

    @staticmethod
    def fit(x: np.ndarray, deltas: np.ndarray, d_star: np.ndarray) -> "Normalizer":
        def _std(v):
            s = float(np.std(v))
            return s if s > 1e-9 else 1.0
        return Normalizer(
            mean_x=x.reshape(-1, 2).mean(axis=0),
            std_x=np.maximum(x.reshape(-1, 2).std(axis=0), 1e-9),
            mean_delta=float(deltas.mean()), std_delta=_std(deltas),
            mean_dstar=float(d_star.mean()), std_dstar=_std(d_star),
        )

    def apply(self, x, deltas, d_star):
        return (
            (x - self.mean_x) / self.std_x,
            (deltas - self.mean_delta) / self.std_delta,
            (d_star - self.mean_dstar) / self.std_dstar,
        )


def position_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(0, d_model, 2).astype(np.float64)
    angle = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def init_params(config: PredictorConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    T, s, d = config.history_len, config.state_dim, config.d_model
    h, ff, hh = config.decoupler_hidden, config.ff_dim, config.head_hidden

    def he(n_in, n_out):
        return rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))

    def xavier(n_in, n_out):
        return rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))

    p = {
        "dec_w1": he(2, h), "dec_b1": np.zeros(h),
        "dec_w2": he(h, h), "dec_b2": np.zeros(h),
        "dec_w3": xavier(h, s), "dec_b3": np.zeros(s),
        "enc_in_w": xavier(s, d), "enc_in_b": np.zeros(d),
        "att_wq": xavier(d, d), "att_bq": np.zeros(d),
        "att_wk": xavier(d, d), "att_bk": np.zeros(d),
        "att_wv": xavier(d, d), "att_bv": np.zeros(d),
        "att_wo": xavier(d, d), "att_bo": np.zeros(d),
        "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
        "ff_w1": he(d, ff), "ff_b1": np.zeros(ff),
        "ff_w2": xavier(ff, d), "ff_b2": np.zeros(d),
        "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
        "time_wk": rng.normal(0.0, 0.5, size=s), "time_bk": np.zeros(s),
        "time_wq": rng.normal(0.0, np.sqrt(1.0 / T), size=T), "time_bq": np.zeros(s),
        "head_w1": he(1 + d, hh), "head_b1": np.zeros(hh),
        "head_w2": he(hh, hh), "head_b2": np.zeros(hh),
        "head_w3": xavier(hh, 1), "head_b3": np.zeros(1),
    }
    return p


@dataclass
class DelayModel:
    config: PredictorConfig
    params: dict[str, np.ndarray]
    norm: Normalizer = field(default_factory=Normalizer)

    @staticmethod
    def create(config: PredictorConfig | None = None, seed: int = 0) -> "DelayModel":
        cfg = config or PredictorConfig()
        return DelayModel(cfg, init_params(cfg, seed))

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


class NumericError(FloatingPointError):
    """A forward or backward pass produced a non-finite intermediate."""


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in layer {name!r}")


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    return dx, dg, db


def forward_batch(params: dict, config: PredictorConfig, x_std: np.ndarray,
                  delta_std: np.ndarray, dstar_std: np.ndarray,
                  want_cache: bool = False):
    """Standardized inputs -> predicted log-delay [B]; optionally the cache
    needed for the backward pass (cache carries the attention weights too)."""
    B, T, _ = x_std.shape
    if T != config.history_len:
        raise ValueError(f"window length {T} != configured history_len {config.history_len}")
    s, d, H = config.state_dim, config.d_model, config.n_heads
    dh = d // H
    p = params

    # shared decoupler
    a1_pre = x_std @ p["dec_w1"] + p["dec_b1"]
    a1 = np.maximum(a1_pre, 0.0)
    a2_pre = a1 @ p["dec_w2"] + p["dec_b2"]
    a2 = np.maximum(a2_pre, 0.0)
    v = a2 @ p["dec_w3"] + p["dec_b3"]                      # [B,T,s]

    # encoder
    p0 = v @ p["enc_in_w"] + p["enc_in_b"]
    pe = position_encoding(T, d)
    pin = p0 + pe                                            # [B,T,d]
    q = pin @ p["att_wq"] + p["att_bq"]
    k = pin @ p["att_wk"] + p["att_bk"]
    vv = pin @ p["att_wv"] + p["att_bv"]
    qh = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    vh = vv.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)     # [B,H,T,T]
    attn_self = _softmax_last(scores)
    oh = attn_self @ vh                                      # [B,H,T,dh]
    omerge = oh.transpose(0, 2, 1, 3).reshape(B, T, d)
    o = omerge @ p["att_wo"] + p["att_bo"]
    z1, ln1c = _layernorm(pin + o, p["ln1_g"], p["ln1_b"])
    f1_pre = z1 @ p["ff_w1"] + p["ff_b1"]
    f1 = np.maximum(f1_pre, 0.0)
    f2 = f1 @ p["ff_w2"] + p["ff_b2"]
    henc, ln2c = _layernorm(z1 + f2, p["ln2_g"], p["ln2_b"])  # [B,T,d]

    # key-query time attention
    kt_pre = delta_std[:, :, None] * p["time_wk"] + p["time_bk"]
    kt = np.tanh(kt_pre)                                      # [B,T,s]
    qv_pre = np.einsum("t,bts->bs", p["time_wq"], v) + p["time_bq"]
    qv = np.maximum(qv_pre, 0.0)                              # [B,s]
    phi = np.einsum("bts,bs->bt", kt, qv) / np.sqrt(s)        # [B,T]
    attn_time = _softmax_last(phi)                            # [B,T]
    hstar = np.einsum("bt,btd->bd", attn_time, henc)          # [B,d]

    # fusion head
    u = np.concatenate([dstar_std[:, None], hstar], axis=1)   # [B,1+d]
    g1_pre = u @ p["head_w1"] + p["head_b1"]
    g1 = np.maximum(g1_pre, 0.0)
    g2_pre = g1 @ p["head_w2"] + p["head_b2"]
    g2 = np.maximum(g2_pre, 0.0)
    y = (g2 @ p["head_w3"] + p["head_b3"])[:, 0]              # [B] log-delay

    for name, arr in (("decoupler", v), ("encoder", henc), ("time-attention", attn_time),
                      ("head", y)):
        _check_finite(name, arr)

    if not want_cache:
        return y, attn_time
    cache = dict(x=x_std, delta=delta_std, a1=a1, a2=a2, v=v, pin=pin,
                 qh=qh, kh=kh, vh=vh, attn_self=attn_self, omerge=omerge,
                 ln1c=ln1c, z1=z1, f1=f1, ln2c=ln2c, henc=henc,
                 kt=kt, qv=qv, attn_time=attn_time, hstar=hstar,
                 u=u, g1=g1, g2=g2, y=y)
    return y, cache


def backward_batch(params: dict, config: PredictorConfig, cache: dict,
                   dy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss wrt every parameter, given dLoss/dy [B]."""
    p = params
    B, T, _ = cache["x"].shape
    s, d, H = config.state_dim, config.d_model, config.n_heads
    dh = d // H
    g = {}

    # head
    dyc = dy[:, None]                                         # [B,1]
    g["head_w3"] = cache["g2"].T @ dyc
    g["head_b3"] = dyc.sum(axis=0)
    dg2 = dyc @ p["head_w3"].T
    dg2 *= cache["g2"] > 0
    g["head_w2"] = cache["g1"].T @ dg2
    g["head_b2"] = dg2.sum(axis=0)
    dg1 = dg2 @ p["head_w2"].T
    dg1 *= cache["g1"] > 0
    g["head_w1"] = cache["u"].T @ dg1
    g["head_b1"] = dg1.sum(axis=0)
    du = dg1 @ p["head_w1"].T
    dhstar = du[:, 1:]                                        # [B,d]

    # time attention
    attn_time, henc, kt, qv, v = (cache[k2] for k2 in ("attn_time", "henc", "kt", "qv", "v"))
    dattn = np.einsum("bd,btd->bt", dhstar, henc)
    dhenc = attn_time[:, :, None] * dhstar[:, None, :]
    dphi = attn_time * (dattn - (dattn * attn_time).sum(axis=-1, keepdims=True))
    dphi = dphi / np.sqrt(s)
    dkt = dphi[:, :, None] * qv[:, None, :]
    dqv = np.einsum("bt,bts->bs", dphi, kt)
    dqv *= qv > 0
    g["time_wq"] = np.einsum("bs,bts->t", dqv, v)
    g["time_bq"] = dqv.sum(axis=0)
    dv = p["time_wq"][None, :, None] * dqv[:, None, :]        # query path into v
    dkt_pre = dkt * (1.0 - kt * kt)
    g["time_wk"] = (dkt_pre * cache["delta"][:, :, None]).sum(axis=(0, 1))
    g["time_bk"] = dkt_pre.sum(axis=(0, 1))

    # encoder block (reverse order)
    dz1f2, g["ln2_g"], g["ln2_b"] = _layernorm_back(dhenc, p["ln2_g"], cache["ln2c"])
    df2 = dz1f2
    g["ff_w2"] = np.einsum("bti,bto->io", cache["f1"], df2)
    g["ff_b2"] = df2.sum(axis=(0, 1))
    df1 = df2 @ p["ff_w2"].T
    df1 *= cache["f1"] > 0
    g["ff_w1"] = np.einsum("bti,bto->io", cache["z1"], df1)
    g["ff_b1"] = df1.sum(axis=(0, 1))
    dz1 = dz1f2 + df1 @ p["ff_w1"].T
    dpin_o, g["ln1_g"], g["ln1_b"] = _layernorm_back(dz1, p["ln1_g"], cache["ln1c"])
    do = dpin_o
    g["att_wo"] = np.einsum("bti,bto->io", cache["omerge"], do)
    g["att_bo"] = do.sum(axis=(0, 1))
    domerge = do @ p["att_wo"].T
    doh = domerge.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    attn_self, qh, kh, vh = cache["attn_self"], cache["qh"], cache["kh"], cache["vh"]
    dattn_self = doh @ vh.transpose(0, 1, 3, 2)
    dvh = attn_self.transpose(0, 1, 3, 2) @ doh
    dscores = attn_self * (dattn_self - (dattn_self * attn_self).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(dh)
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
    dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
    dvv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)
    pin = cache["pin"]
    g["att_wq"] = np.einsum("bti,bto->io", pin, dq)
    g["att_bq"] = dq.sum(axis=(0, 1))
    g["att_wk"] = np.einsum("bti,bto->io", pin, dk)
    g["att_bk"] = dk.sum(axis=(0, 1))
    g["att_wv"] = np.einsum("bti,bto->io", pin, dvv)
    g["att_bv"] = dvv.sum(axis=(0, 1))
    dpin = dpin_o + dq @ p["att_wq"].T + dk @ p["att_wk"].T + dvv @ p["att_wv"].T
    g["enc_in_w"] = np.einsum("bti,bto->io", v, dpin)
    g["enc_in_b"] = dpin.sum(axis=(0, 1))
    dv += dpin @ p["enc_in_w"].T

    # shared decoupler
    g["dec_w3"] = np.einsum("bti,bto->io", cache["a2"], dv)
    g["dec_b3"] = dv.sum(axis=(0, 1))
    da2 = dv @ p["dec_w3"].T
    da2 *= cache["a2"] > 0
    g["dec_w2"] = np.einsum("bti,bto->io", cache["a1"], da2)
    g["dec_b2"] = da2.sum(axis=(0, 1))
    da1 = da2 @ p["dec_w2"].T
    da1 *= cache["a1"] > 0
    g["dec_w1"] = np.einsum("bti,bto->io", cache["x"], da1)
    g["dec_b1"] = da1.sum(axis=(0, 1))

    for name, arr in g.items():
        _check_finite(name, arr)
        g[name] = arr.reshape(params[name].shape)
    return g


def mse_loss_and_grads(model: DelayModel, x_std, delta_std, dstar_std, target_log):
    """One training objective evaluation: mean squared log-delay error."""
    y, cache = forward_batch(model.params, model.config, x_std, delta_std, dstar_std,
                             want_cache=True)
    resid = y - target_log
    loss = float(np.mean(resid * resid))
    dy = 2.0 * resid / resid.size
    grads = backward_batch(model.params, model.config, cache, dy)
    return loss, grads, cache["attn_time"]


def predict_log_delay(model: DelayModel, x_raw, delta_raw, dstar_raw):
    """Raw-unit windows -> predicted log-delay (and the attention weights)."""
    xs, ds, dst = model.norm.apply(
        np.asarray(x_raw, dtype=np.float64),
        np.asarray(delta_raw, dtype=np.float64),
        np.asarray(dstar_raw, dtype=np.float64),
    )
    return forward_batch(model.params, model.config, xs, ds, dst)


def predict_delay_seconds(model: DelayModel, x_raw, delta_raw, dstar_raw) -> np.ndarray:
    y, _ = predict_log_delay(model, x_raw, delta_raw, dstar_raw)
    return np.exp(y)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: DelayModel, path: str) -> None:
    """Versioned npz with every parameter tensor; round-trips bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "norm": {
            "mean_x": model.norm.mean_x.tolist(),
            "std_x": model.norm.std_x.tolist(),
            "mean_delta": model.norm.mean_delta,
            "std_delta": model.norm.std_delta,
            "mean_dstar": model.norm.mean_dstar,
            "std_dstar": model.norm.std_dstar,
        },
    }
    buf = io.BytesIO()
    np.savez(buf, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **model.params)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> DelayModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        config = PredictorConfig(**meta["config"])
        params = {k: data[k].copy() for k in data.files if k != "_meta"}
    norm = Normalizer(
        mean_x=np.asarray(meta["norm"]["mean_x"]),
        std_x=np.asarray(meta["norm"]["std_x"]),
        mean_delta=meta["norm"]["mean_delta"],
        std_delta=meta["norm"]["std_delta"],
        mean_dstar=meta["norm"]["mean_dstar"],
        std_dstar=meta["norm"]["std_dstar"],
    )
    expected = set(init_params(config, 0))
    if set(params) != expected:
        raise ValueError("checkpoint parameter tensors do not match the configuration")
    return DelayModel(config, params, norm)
