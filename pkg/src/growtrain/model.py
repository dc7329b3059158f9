"""Toy-scale Transformer encoder with a masked-LM head.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by canonical
names (``layer{i}.w_q``, ``head.w``, ...), which keeps the optimizer,
checkpointing, and growth operators simple.  Forward passes cache what the
hand-written backward needs; there is no autograd.

Reduced configurations used by early growth stages:

- ``ffn_mode="shared"`` with k copies: FFN runs on thin matrices W1'
  (D x H/k) and W2' (H/k x D).
- ``ffn_mode="factorized"`` with rank h: each FFN matrix is a product of
  two thin factors.
- ``pool_k > 1``: the query stream of the *first* attention layer is
  mean-pooled (masked positions exempted, see ``build_pooling``); all
  later layers run at the pooled length.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .errors import InputError, ShapeError, ValidationError
from .rng import Rng

INIT_STD = 0.02
LN_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    L: int
    D: int
    H: int
    M: int
    N_max: int
    V: int
    dropout_p: float = 0.1
    ffn_mode: str = "full"  # "full" | "shared" | "factorized"
    ffn_k: int = 1          # copies under "shared"
    ffn_h: int = 0          # rank under "factorized"
    pool_k: int = 1
    attn_scale: bool = True

    def validate(self) -> None:
        if min(self.L, self.D, self.H, self.M, self.N_max, self.V) < 1:
            raise ValidationError("model dims must be positive")
        if self.D % self.M != 0:
            raise ValidationError(f"D={self.D} not divisible by M={self.M}")
        if self.ffn_mode == "shared":
            if self.ffn_k < 1 or self.H % self.ffn_k != 0:
                raise ValidationError(
                    f"shared FFN needs k >= 1 dividing H, got k={self.ffn_k}, H={self.H}")
        elif self.ffn_mode == "factorized":
            if not 1 <= self.ffn_h <= min(self.D, self.H):
                raise ValidationError(
                    f"factorized FFN needs 1 <= h <= min(D, H), got h={self.ffn_h}")
        elif self.ffn_mode != "full":
            raise ValidationError(f"unknown ffn_mode {self.ffn_mode!r}")
        if self.pool_k < 1:
            raise ValidationError(f"pool_k must be >= 1, got {self.pool_k}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def with_(self, **kw) -> "ModelConfig":
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "L": self.L, "D": self.D, "H": self.H, "M": self.M,
            "N_max": self.N_max, "V": self.V, "dropout_p": self.dropout_p,
            "ffn_mode": self.ffn_mode, "ffn_k": self.ffn_k, "ffn_h": self.ffn_h,
            "pool_k": self.pool_k, "attn_scale": self.attn_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        cfg = ModelConfig(**d)
        cfg.validate()
        return cfg


def ffn_shapes(config: ModelConfig) -> dict[str, tuple]:
    D, H = config.D, config.H
    if config.ffn_mode == "full":
        return {"ffn.w1": (D, H), "ffn.w2": (H, D)}
    if config.ffn_mode == "shared":
        hk = H // config.ffn_k
        return {"ffn.w1s": (D, hk), "ffn.w2s": (hk, D)}
    h = config.ffn_h
    return {"ffn.w11": (D, h), "ffn.w12": (h, H),
            "ffn.w21": (H, h), "ffn.w22": (h, D)}


def expected_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Canonical name -> shape map for every parameter tensor."""
    D = config.D
    shapes: dict[str, tuple] = {
        "token_emb": (config.V, D),
        "pos_emb": (config.N_max, D),
        "head.w": (D, config.V),
        "head.b": (config.V,),
    }
    per_ffn = ffn_shapes(config)
    for i in range(config.L):
        p = f"layer{i}."
        shapes[p + "w_q"] = (D, D)
        shapes[p + "w_k_t"] = (D, D)
        shapes[p + "w_v1"] = (D, D)
        shapes[p + "w_v2_t"] = (D, D)
        shapes[p + "ln_attn.gain"] = (D,)
        shapes[p + "ln_attn.bias"] = (D,)
        shapes[p + "ln_ffn.gain"] = (D,)
        shapes[p + "ln_ffn.bias"] = (D,)
        for name, shape in per_ffn.items():
            shapes[p + name] = shape
    return shapes


def shape_audit(params: dict, config: ModelConfig) -> None:
    """Raise ValidationError naming the first tensor whose shape is wrong."""
    expected = expected_shapes(config)
    for name in sorted(expected):
        if name not in params:
            raise ValidationError(f"missing parameter tensor {name!r}")
        got = tuple(params[name].shape)
        if got != expected[name]:
            raise ValidationError(
                f"parameter {name!r} has shape {got}, expected {expected[name]}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise ValidationError(f"unexpected parameter tensor {extra[0]!r}")


def init_params(config: ModelConfig, rng: Rng) -> dict:
    """Truncated-normal(0, 0.02) matrices, zero biases, unit LN gains."""
    config.validate()
    params = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(("gain",)):
            params[name] = np.ones(shape)
        elif name.endswith(("bias", ".b")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.fork(f"init.{name}").truncated_normal(shape, INIT_STD)
    return params


def zero_grads(params: dict) -> dict:
    return {name: np.zeros_like(t) for name, t in params.items()}


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def build_pooling(n: int, masked_positions, k: int):
    """Masked-position-preserving mean pooling as an explicit linear map.

    Each masked position forms its own output row; every maximal run of
    unmasked positions between masked ones is chunked into windows of k and
    each window averaged.  Returns (P, pooled_masked) where P has shape
    (n', n) and ``pooled_masked[j]`` is the output row holding masked
    position j.
    """
    masked = list(masked_positions)
    is_masked = np.zeros(n, dtype=bool)
    is_masked[masked] = True
    groups: list[list[int]] = []
    pooled_of_pos: dict[int, int] = {}
    run: list[int] = []

    def flush_run():
        for s in range(0, len(run), k):
            groups.append(run[s:s + k])
        run.clear()

    for pos in range(n):
        if is_masked[pos]:
            flush_run()
            pooled_of_pos[pos] = len(groups)
            groups.append([pos])
        else:
            run.append(pos)
    flush_run()

    P = np.zeros((len(groups), n))
    for row, members in enumerate(groups):
        P[row, members] = 1.0 / len(members)
    pooled_masked = np.array([pooled_of_pos[p] for p in masked], dtype=np.int64)
    return P, pooled_masked


def pooled_length(n: int, k: int) -> int:
    """ceil(n / k): the no-mask pooled length, used by the cost model (the
    masked-row exemption makes the true length data-dependent)."""
    return -(-n // k)


# ---------------------------------------------------------------------------
# Feedforward block
# ---------------------------------------------------------------------------

def _ffn_weights(params: dict, layer: int, config: ModelConfig) -> dict:
    p = f"layer{layer}."
    return {name: params[p + name] for name in ffn_shapes(config)}


def ffn_apply(x: np.ndarray, params: dict, layer: int, config: ModelConfig,
              rng: Rng, training: bool, activation=None):
    """FFN body (no residual, no layer-norm).  Returns (y, cache)."""
    act, act_grad = activation if activation is not None else (ops.gelu, ops.gelu_grad)
    w = _ffn_weights(params, layer, config)
    p = config.dropout_p
    if config.ffn_mode == "full":
        pre = ops.matmul(x, w["ffn.w1"])
    elif config.ffn_mode == "shared":
        pre = ops.matmul(x, w["ffn.w1s"])
    else:
        mid1 = ops.matmul(x, w["ffn.w11"])
        pre = ops.matmul(mid1, w["ffn.w12"])
    a = act(pre)
    mask1 = ops.dropout_mask(a.shape, p, rng, training)
    a_d = a if mask1 is None else a * mask1
    if config.ffn_mode == "full":
        y = ops.matmul(a_d, w["ffn.w2"])
    elif config.ffn_mode == "shared":
        y = ops.matmul(a_d, w["ffn.w2s"])
    else:
        mid2 = ops.matmul(a_d, w["ffn.w21"])
        y = ops.matmul(mid2, w["ffn.w22"])
    mask2 = ops.dropout_mask(y.shape, p, rng, training)
    out = y if mask2 is None else y * mask2
    cache = {"x": x, "pre": pre, "a": a, "a_d": a_d, "mask1": mask1,
             "mask2": mask2, "act_grad": act_grad, "w": w, "layer": layer,
             "config": config}
    if config.ffn_mode == "factorized":
        cache["mid1"] = mid1
        cache["mid2"] = mid2
    return out, cache


def ffn_backward(g: np.ndarray, cache: dict):
    """Adjoint of ffn_apply.  Returns (dx, weight grads dict keyed like Params)."""
    config: ModelConfig = cache["config"]
    w = cache["w"]
    prefix = f"layer{cache['layer']}."
    grads: dict[str, np.ndarray] = {}
    if cache["mask2"] is not None:
        g = g * cache["mask2"]
    if config.ffn_mode == "full":
        g_ad, grads[prefix + "ffn.w2"] = ops.matmul_backward(g, cache["a_d"], w["ffn.w2"])
    elif config.ffn_mode == "shared":
        g_ad, grads[prefix + "ffn.w2s"] = ops.matmul_backward(g, cache["a_d"], w["ffn.w2s"])
    else:
        g_mid2, grads[prefix + "ffn.w22"] = ops.matmul_backward(g, cache["mid2"], w["ffn.w22"])
        g_ad, grads[prefix + "ffn.w21"] = ops.matmul_backward(g_mid2, cache["a_d"], w["ffn.w21"])
    g_a = g_ad if cache["mask1"] is None else g_ad * cache["mask1"]
    g_pre = g_a * cache["act_grad"](cache["pre"])
    if config.ffn_mode == "full":
        dx, grads[prefix + "ffn.w1"] = ops.matmul_backward(g_pre, cache["x"], w["ffn.w1"])
    elif config.ffn_mode == "shared":
        dx, grads[prefix + "ffn.w1s"] = ops.matmul_backward(g_pre, cache["x"], w["ffn.w1s"])
    else:
        g_mid1, grads[prefix + "ffn.w12"] = ops.matmul_backward(g_pre, cache["mid1"], w["ffn.w12"])
        dx, grads[prefix + "ffn.w11"] = ops.matmul_backward(g_mid1, cache["x"], w["ffn.w11"])
    return dx, grads


def ffn_forward(x: np.ndarray, params: dict, layer: int, config: ModelConfig,
                rng: Rng, training: bool = False, activation=None) -> np.ndarray:
    y, _ = ffn_apply(x, params, layer, config, rng, training, activation)
    return y


# ---------------------------------------------------------------------------
# Attention block
# ---------------------------------------------------------------------------

def attention_apply(x_q: np.ndarray, x_kv: np.ndarray, params: dict, layer: int,
                    config: ModelConfig, rng: Rng, training: bool):
    """Multi-head attention body (no residual, no layer-norm).

    Per head m: scores = (x_q Wq_m)(x_kv Wk_m^T)^T, softmax rows, optional
    1/sqrt(D/M) scaling, dropout on the probabilities, context times the
    m-th output block.  Head contributions are summed (equivalent to
    concat-then-project).
    """
    D, M = config.D, config.M
    if x_q.shape[1] != D or x_kv.shape[1] != D:
        raise ShapeError(
            f"attention: inputs must have width D={D}, got {x_q.shape} / {x_kv.shape}")
    dh = D // M
    scale = 1.0 / np.sqrt(dh) if config.attn_scale else 1.0
    p = f"layer{layer}."
    w_q, w_k_t = params[p + "w_q"], params[p + "w_k_t"]
    w_v1, w_v2_t = params[p + "w_v1"], params[p + "w_v2_t"]
    out = np.zeros((x_q.shape[0], D))
    heads = []
    for m in range(M):
        cols = slice(m * dh, (m + 1) * dh)
        q = ops.matmul(x_q, w_q[:, cols])
        k = ops.matmul(x_kv, w_k_t[:, cols])
        v = ops.matmul(x_kv, w_v1[:, cols])
        scores = (q @ k.T) * scale
        probs = ops.softmax_rows(scores)
        mask = ops.dropout_mask(probs.shape, config.dropout_p, rng, training)
        probs_d = probs if mask is None else probs * mask
        ctx = probs_d @ v
        out += ctx @ w_v2_t[:, cols].T
        heads.append({"q": q, "k": k, "v": v, "probs": probs, "mask": mask,
                      "probs_d": probs_d, "ctx": ctx})
    cache = {"x_q": x_q, "x_kv": x_kv, "heads": heads, "scale": scale,
             "layer": layer, "config": config,
             "w": {"w_q": w_q, "w_k_t": w_k_t, "w_v1": w_v1, "w_v2_t": w_v2_t}}
    return out, cache


def attention_backward(g: np.ndarray, cache: dict):
    """Adjoint of attention_apply.  Returns (dx_q, dx_kv, weight grads)."""
    config: ModelConfig = cache["config"]
    D, M = config.D, config.M
    dh = D // M
    x_q, x_kv = cache["x_q"], cache["x_kv"]
    w = cache["w"]
    prefix = f"layer{cache['layer']}."
    g_xq = np.zeros_like(x_q)
    g_xkv = np.zeros_like(x_kv)
    gw = {name: np.zeros_like(t) for name, t in w.items()}
    for m, h in enumerate(cache["heads"]):
        cols = slice(m * dh, (m + 1) * dh)
        # out += ctx @ w_v2_t[:, cols].T
        g_ctx = g @ w["w_v2_t"][:, cols]
        gw["w_v2_t"][:, cols] += g.T @ h["ctx"]
        g_probs_d = g_ctx @ h["v"].T
        g_v = h["probs_d"].T @ g_ctx
        g_probs = g_probs_d if h["mask"] is None else g_probs_d * h["mask"]
        g_scores = ops.softmax_rows_backward(g_probs, h["probs"]) * cache["scale"]
        g_q = g_scores @ h["k"]
        g_k = g_scores.T @ h["q"]
        d_xq, gw_q = ops.matmul_backward(g_q, x_q, w["w_q"][:, cols])
        g_xq += d_xq
        gw["w_q"][:, cols] += gw_q
        d_xkv, gw_k = ops.matmul_backward(g_k, x_kv, w["w_k_t"][:, cols])
        g_xkv += d_xkv
        gw["w_k_t"][:, cols] += gw_k
        d_xkv2, gw_v1 = ops.matmul_backward(g_v, x_kv, w["w_v1"][:, cols])
        g_xkv += d_xkv2
        gw["w_v1"][:, cols] += gw_v1
    grads = {prefix + name: t for name, t in gw.items()}
    return g_xq, g_xkv, grads


def attention_forward(x_q: np.ndarray, x_kv: np.ndarray, params: dict, layer: int,
                      config: ModelConfig, rng: Rng, training: bool = False) -> np.ndarray:
    y, _ = attention_apply(x_q, x_kv, params, layer, config, rng, training)
    return y


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def _check_positions(n: int, masked_positions, config: ModelConfig) -> None:
    if n > config.N_max:
        raise InputError(f"sequence length {n} exceeds N_max={config.N_max}")
    prev = -1
    for pos in masked_positions:
        if not prev < pos < n:
            raise InputError(
                f"masked positions must be strictly increasing within [0, {n})")
        prev = pos


def encoder_apply(token_ids, masked_positions, params: dict, config: ModelConfig,
                  rng: Rng, training: bool, activation=None):
    """Forward pass through all layers.  Returns (logits, hidden, cache).

    Pre-norm residual blocks: x <- x + Att(LN(x)); x <- x + FFN(LN(x)).
    With pool_k > 1 the first layer pools the query stream and its residual
    path; layers >= 2 run at the pooled length.
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    n = token_ids.shape[0]
    _check_positions(n, masked_positions, config)
    masked = np.asarray(list(masked_positions), dtype=np.int64)

    x = params["token_emb"][token_ids] + params["pos_emb"][:n]
    x0 = x
    if config.pool_k > 1:
        P, pooled_masked = build_pooling(n, masked, config.pool_k)
    else:
        P, pooled_masked = None, masked

    layers = []
    for i in range(config.L):
        lp = f"layer{i}."
        rng_a = rng.fork(f"layer{i}.attn")
        rng_f = rng.fork(f"layer{i}.ffn")
        x_in = x
        ln1 = ops.layer_norm(x_in, params[lp + "ln_attn.gain"],
                             params[lp + "ln_attn.bias"], LN_EPS)
        if i == 0 and P is not None:
            att, acache = attention_apply(P @ ln1, ln1, params, i, config, rng_a, training)
            x = P @ x_in + att
        else:
            att, acache = attention_apply(ln1, ln1, params, i, config, rng_a, training)
            x = x_in + att
        x_mid = x
        ln2 = ops.layer_norm(x_mid, params[lp + "ln_ffn.gain"],
                             params[lp + "ln_ffn.bias"], LN_EPS)
        f, fcache = ffn_apply(ln2, params, i, config, rng_f, training, activation)
        x = x_mid + f
        layers.append({"x_in": x_in, "x_mid": x_mid, "attn": acache, "ffn": fcache})

    hidden = x
    rows = hidden[pooled_masked] if pooled_masked.size else np.zeros((0, config.D))
    logits = rows @ params["head.w"] + params["head.b"]
    cache = {"token_ids": token_ids, "n": n, "P": P, "pooled_masked": pooled_masked,
             "x0": x0, "layers": layers, "hidden": hidden, "rows": rows,
             "params": params, "config": config}
    return logits, hidden, cache


def encoder_backward(g_logits: np.ndarray, cache: dict) -> dict:
    """Adjoint of encoder_apply; returns gradients shaped exactly like Params."""
    params, config = cache["params"], cache["config"]
    grads = zero_grads(params)
    rows, hidden = cache["rows"], cache["hidden"]

    grads["head.w"] += rows.T @ g_logits
    grads["head.b"] += g_logits.sum(axis=0)
    g_hidden = np.zeros_like(hidden)
    if cache["pooled_masked"].size:
        g_hidden[cache["pooled_masked"]] += g_logits @ params["head.w"].T

    g_x = g_hidden
    P = cache["P"]
    for i in reversed(range(config.L)):
        lc = cache["layers"][i]
        lp = f"layer{i}."
        # FFN block: x = x_mid + f(LN(x_mid))
        g_f = g_x
        g_ln2, fgrads = ffn_backward(g_f, lc["ffn"])
        for name, t in fgrads.items():
            grads[name] += t
        d_xmid, dgain, dbias = ops.layer_norm_backward(
            g_ln2, lc["x_mid"], params[lp + "ln_ffn.gain"], LN_EPS)
        grads[lp + "ln_ffn.gain"] += dgain
        grads[lp + "ln_ffn.bias"] += dbias
        g_x = g_x + d_xmid
        # Attention block
        g_xq, g_xkv, agrads = attention_backward(g_x, lc["attn"])
        for name, t in agrads.items():
            grads[name] += t
        if i == 0 and P is not None:
            g_ln1 = P.T @ g_xq + g_xkv
            d_xin, dgain, dbias = ops.layer_norm_backward(
                g_ln1, lc["x_in"], params[lp + "ln_attn.gain"], LN_EPS)
            g_x = P.T @ g_x + d_xin
        else:
            g_ln1 = g_xq + g_xkv
            d_xin, dgain, dbias = ops.layer_norm_backward(
                g_ln1, lc["x_in"], params[lp + "ln_attn.gain"], LN_EPS)
            g_x = g_x + d_xin
        grads[lp + "ln_attn.gain"] += dgain
        grads[lp + "ln_attn.bias"] += dbias

    np.add.at(grads["token_emb"], cache["token_ids"], g_x)
    grads["pos_emb"][:cache["n"]] += g_x
    return grads


def encoder_forward(token_ids, masked_positions, params: dict, config: ModelConfig,
                    rng: Rng, training: bool = False):
    """Public forward surface: returns (logits at masked positions, hidden)."""
    logits, hidden, _ = encoder_apply(token_ids, masked_positions, params,
                                      config, rng, training)
    return logits, hidden


def mlm_loss(batch, params: dict, config: ModelConfig, rng: Rng, training: bool):
    """Mean cross-entropy over all masked positions in the batch.

    ``batch`` is (ids, masked_positions, targets) with shapes (B, n), (B, m),
    (B, m).  Returns (loss, gradient dict shaped like Params).
    """
    ids, masked, targets = batch
    ids = np.asarray(ids, dtype=np.int64)
    masked = np.asarray(masked, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    B = ids.shape[0]
    if masked.size == 0:
        raise InputError("mlm_loss: batch has no masked positions")
    total = 0.0
    grads = zero_grads(params)
    for j in range(B):
        logits, _, cache = encoder_apply(ids[j], masked[j], params, config,
                                         rng.fork(f"seq{j}"), training)
        loss_j, g_logits = ops.cross_entropy_logits(logits, targets[j])
        total += loss_j
        gj = encoder_backward(g_logits / B, cache)
        for name, t in gj.items():
            grads[name] += t
    return total / B, grads


def mlm_loss_value(batch, params: dict, config: ModelConfig,
                   rng: Rng | None = None, training: bool = False) -> float:
    """Forward-only batch loss (no gradients)."""
    ids, masked, targets = batch
    ids = np.asarray(ids, dtype=np.int64)
    masked = np.asarray(masked, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if masked.size == 0:
        raise InputError("mlm_loss_value: batch has no masked positions")
    rng = rng if rng is not None else Rng(0)
    total = 0.0
    for j in range(ids.shape[0]):
        logits, _ = encoder_forward(ids[j], masked[j], params, config,
                                    rng.fork(f"seq{j}"), training)
        loss_j, _ = ops.cross_entropy_logits(logits, targets[j])
        total += loss_j
    return total / ids.shape[0]


def param_count(config: ModelConfig) -> dict[str, int]:
    """Itemized parameter counts matching the analytic formulas."""
    D, H, L = config.D, config.H, config.L
    attn = 4 * D * D
    if config.ffn_mode == "full":
        ffn = 2 * D * H
    elif config.ffn_mode == "shared":
        ffn = 2 * D * (H // config.ffn_k)
    else:
        ffn = 2 * config.ffn_h * (D + H)
    ln = 4 * D  # two layer-norms, gain + bias each
    counts = {
        "attention_per_layer": attn,
        "ffn_per_layer": ffn,
        "layer_norm_per_layer": ln,
        "embeddings": (config.V + config.N_max) * D,
        "mlm_head": D * config.V + config.V,
    }
    counts["total"] = L * (attn + ffn + ln) + counts["embeddings"] + counts["mlm_head"]
    return counts
