"""From-scratch LSTM Q-network over scalar sequences.

One LSTM layer consumes the window one value per timestep; a linear head maps
the final hidden state to the two action values (q0, q1). Gradients are
hand-derived backpropagation through time for the squared error on the chosen
action's output, verified against finite differences in the test suite.

Parameters are treated as immutable snapshots: every update returns new
arrays, so a snapshot handed to a concurrent scorer never changes under it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# parameter fields in a fixed order, used by the optimizer and checkpoints
PARAM_FIELDS = (
    "w_i", "w_f", "w_g", "w_o",
    "u_i", "u_f", "u_g", "u_o",
    "b_i", "b_f", "b_g", "b_o",
    "w_out", "b_out",
)


@dataclass
class QNetParams:
    """LSTM gate weights plus the two-unit linear head.

    ``w_*`` are input weights (hidden,), ``u_*`` recurrent weights
    (hidden, hidden), ``b_*`` gate biases (hidden,). The forget-gate bias is
    initialized to 1.0 everywhere.
    """

    w_i: np.ndarray
    w_f: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_g: np.ndarray
    u_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    hidden_size: int

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "QNetParams":
        return QNetParams(
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
            hidden_size=self.hidden_size,
        )

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


@dataclass
class ForwardCache:
    """Per-timestep activations needed to backpropagate one batch."""

    x: np.ndarray        # (batch, steps)
    gates: np.ndarray    # (steps, 4, batch, hidden): i, f, g, o
    c: np.ndarray        # (steps + 1, batch, hidden); c[0] is the zero state
    tanh_c: np.ndarray   # (steps, batch, hidden)
    h: np.ndarray        # (steps + 1, batch, hidden); h[0] is the zero state

    @property
    def steps(self) -> int:
        return self.x.shape[1]


@dataclass
class OptimizerState:
    """Adaptive-moment accumulators shaped like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def qnet_init(hidden_size: int, seed: int = 0) -> QNetParams:
    """Uniform[-k, k] weights with k = 1/sqrt(hidden_size); forget bias 1.0."""
    if hidden_size < 1:
        raise ValueError("hidden_size must be >= 1")
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(hidden_size)

    def u(*shape):
        return rng.uniform(-k, k, size=shape)

    return QNetParams(
        w_i=u(hidden_size), w_f=u(hidden_size), w_g=u(hidden_size), w_o=u(hidden_size),
        u_i=u(hidden_size, hidden_size), u_f=u(hidden_size, hidden_size),
        u_g=u(hidden_size, hidden_size), u_o=u(hidden_size, hidden_size),
        b_i=np.zeros(hidden_size), b_f=np.ones(hidden_size),
        b_g=np.zeros(hidden_size), b_o=np.zeros(hidden_size),
        w_out=u(2, hidden_size), b_out=np.zeros(2),
        hidden_size=hidden_size,
    )


def _sigmoid(z: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    # sigmoid(z) = (tanh(z/2) + 1) / 2: one saturating ufunc pass, no overflow
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def _fused(params: QNetParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = np.concatenate([params.w_i, params.w_f, params.w_g, params.w_o])
    u = np.concatenate([params.u_i, params.u_f, params.u_g, params.u_o], axis=0)
    b = np.concatenate([params.b_i, params.b_f, params.b_g, params.b_o])
    return w, u, b


_INFERENCE_CHUNK = 2048


def forward_batch(
    params: QNetParams, X: np.ndarray, need_cache: bool = True
) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the recurrence over a (batch, steps) matrix of scalar inputs.

    Returns the (batch, 2) action values and, when ``need_cache`` is set, the
    activations required for backprop. Inference-only calls skip the cache
    and process large batches in chunks to stay memory-friendly.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if not np.isfinite(X).all():
        raise ValueError("non-finite network input")
    if need_cache:
        return _forward_cached(params, X)
    if len(X) > _INFERENCE_CHUNK:
        q = np.empty((len(X), 2))
        for start in range(0, len(X), _INFERENCE_CHUNK):
            stop = start + _INFERENCE_CHUNK
            q[start:stop] = _forward_nocache(params, X[start:stop])
        return q, None
    return _forward_nocache(params, X), None


def _forward_cached(params: QNetParams, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    batch, steps = X.shape
    hidden = params.hidden_size
    w_cat, u_cat, b_cat = _fused(params)

    gates = np.empty((steps, 4, batch, hidden))
    c = np.zeros((steps + 1, batch, hidden))
    tanh_c = np.empty((steps, batch, hidden))
    h = np.zeros((steps + 1, batch, hidden))

    for t in range(steps):
        z = X[:, t, None] * w_cat[None, :] + h[t] @ u_cat.T + b_cat
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        i = _sigmoid(zi)
        f = _sigmoid(zf)
        g = np.tanh(zg)
        o = _sigmoid(zo)
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        c[t + 1] = f * c[t] + i * g
        tanh_c[t] = np.tanh(c[t + 1])
        h[t + 1] = o * tanh_c[t]

    q = h[steps] @ params.w_out.T + params.b_out
    return q, ForwardCache(x=X, gates=gates, c=c, tanh_c=tanh_c, h=h)


def _forward_nocache(params: QNetParams, X: np.ndarray) -> np.ndarray:
    batch, steps = X.shape
    hidden = params.hidden_size
    w_cat, u_cat, b_cat = _fused(params)
    u_t = np.ascontiguousarray(u_cat.T)

    z = np.empty((batch, 4 * hidden))
    xw = np.empty((batch, 4 * hidden))
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    tmp = np.empty((batch, hidden))
    for t in range(steps):
        np.matmul(h, u_t, out=z)
        np.multiply(X[:, t, None], w_cat[None, :], out=xw)
        z += xw
        z += b_cat
        zi, zf, zg, zo = z[:, :hidden], z[:, hidden : 2 * hidden], z[:, 2 * hidden : 3 * hidden], z[:, 3 * hidden :]
        _sigmoid(zi, out=zi)
        _sigmoid(zf, out=zf)
        np.tanh(zg, out=zg)
        _sigmoid(zo, out=zo)
        # c = f*c + i*g
        np.multiply(zf, c, out=c)
        np.multiply(zi, zg, out=tmp)
        c += tmp
        # h = o * tanh(c)
        np.tanh(c, out=tmp)
        np.multiply(zo, tmp, out=h)

    return h @ params.w_out.T + params.b_out


def qnet_forward(params: QNetParams, window) -> tuple[float, float, ForwardCache]:
    """Action values (q0, q1) for a single window of scalar inputs."""
    vals = np.asarray(window.values if hasattr(window, "values") else window, dtype=float)
    q, cache = forward_batch(params, vals[None, :])
    return float(q[0, 0]), float(q[0, 1]), cache


def _backward(params: QNetParams, cache: ForwardCache, dq: np.ndarray, actions: np.ndarray) -> QNetParams:
    """BPTT for d(loss)/d(params) given dq = d(loss)/d(q_selected) per element."""
    batch, steps = cache.x.shape
    hidden = params.hidden_size
    _, u_cat, _ = _fused(params)

    h_final = cache.h[steps]
    d_w_out = np.zeros_like(params.w_out)
    d_b_out = np.zeros_like(params.b_out)
    for a in (0, 1):
        sel = actions == a
        if sel.any():
            d_w_out[a] = dq[sel, None].T @ h_final[sel]
            d_b_out[a] = dq[sel].sum()

    dh = dq[:, None] * params.w_out[actions]
    dc = np.zeros((batch, hidden))
    d_u_cat = np.zeros((4 * hidden, hidden))
    d_w_cat = np.zeros(4 * hidden)
    d_b_cat = np.zeros(4 * hidden)

    for t in range(steps - 1, -1, -1):
        i, f, g, o = cache.gates[t]
        tc = cache.tanh_c[t]
        c_prev = cache.c[t]
        h_prev = cache.h[t]

        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        df = dct * c_prev
        di = dct * g
        dg = dct * i

        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        d_u_cat += dz.T @ h_prev
        d_w_cat += dz.T @ cache.x[:, t]
        d_b_cat += dz.sum(axis=0)

        dh = dz @ u_cat
        dc = dct * f

    dw = np.split(d_w_cat, 4)
    du = np.split(d_u_cat, 4, axis=0)
    db = np.split(d_b_cat, 4)
    return QNetParams(
        w_i=dw[0], w_f=dw[1], w_g=dw[2], w_o=dw[3],
        u_i=du[0], u_f=du[1], u_g=du[2], u_o=du[3],
        b_i=db[0], b_f=db[1], b_g=db[2], b_o=db[3],
        w_out=d_w_out, b_out=d_b_out,
        hidden_size=hidden,
    )


def qnet_loss_grad(params: QNetParams, batch) -> tuple[float, QNetParams]:
    """Mean squared error of the chosen action's output against its target.

    ``batch`` holds (window, action, target) triples; only Q(s, a) of the
    chosen action contributes. Returns the loss and exact parameter-shaped
    gradients.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    windows, actions, targets = zip(*batch)
    X = np.stack([np.asarray(w.values if hasattr(w, "values") else w, dtype=float) for w in windows])
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    if not np.isin(actions, (0, 1)).all():
        raise ValueError("actions must be 0 or 1")

    q, cache = forward_batch(params, X)
    q_sel = q[np.arange(len(actions)), actions]
    diff = q_sel - targets
    loss = float(np.mean(diff * diff))
    dq = 2.0 * diff / len(actions)
    grads = _backward(params, cache, dq, actions)
    return loss, grads


def adam_init(params: QNetParams) -> OptimizerState:
    zeros = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    return OptimizerState(m=zeros, v={k: a.copy() for k, a in zeros.items()})


def adam_step(
    params: QNetParams,
    grads: QNetParams,
    state: OptimizerState,
    lr: float = 1e-3,
) -> tuple[QNetParams, OptimizerState]:
    """One adaptive-moment update with bias correction; purely functional."""
    t = state.step + 1
    new_m, new_v, new_fields = {}, {}, {}
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_fields[name] = getattr(params, name) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return (
        QNetParams(**new_fields, hidden_size=params.hidden_size),
        OptimizerState(m=new_m, v=new_v, step=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps),
    )


def clip_grad_norm(grads: QNetParams, max_norm: float) -> QNetParams:
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((a * a).sum()) for a in grads.arrays().values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return QNetParams(
        **{name: a * scale for name, a in grads.arrays().items()},
        hidden_size=grads.hidden_size,
    )


def target_sync(eval_params: QNetParams) -> QNetParams:
    """Deep copy of the evaluation network for stable bootstrap targets."""
    return eval_params.copy()


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: QNetParams, opt_state: OptimizerState | None, step: int, window_size: int) -> None:
    """Write a versioned npz with weights, optimizer state and counters."""
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "hidden_size": np.int64(params.hidden_size),
        "window_size": np.int64(window_size),
        "step": np.int64(step),
        "has_optimizer": np.int64(opt_state is not None),
    }
    for name, a in params.arrays().items():
        payload[f"param_{name}"] = a
    if opt_state is not None:
        payload["opt_step"] = np.int64(opt_state.step)
        payload["opt_hyper"] = np.array([opt_state.beta1, opt_state.beta2, opt_state.eps])
        for name in PARAM_FIELDS:
            payload[f"m_{name}"] = opt_state.m[name]
            payload[f"v_{name}"] = opt_state.v[name]
    np.savez(path, **payload)


def _expected_shapes(hidden: int) -> dict[str, tuple]:
    shapes = {}
    for g in "ifgo":
        shapes[f"w_{g}"] = (hidden,)
        shapes[f"u_{g}"] = (hidden, hidden)
        shapes[f"b_{g}"] = (hidden,)
    shapes["w_out"] = (2, hidden)
    shapes["b_out"] = (2,)
    return shapes


def load_checkpoint(path) -> tuple[QNetParams, OptimizerState | None, int, int]:
    """Load a checkpoint, validating version and array shapes."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hidden = int(data["hidden_size"])
        shapes = _expected_shapes(hidden)
        fields = {}
        for name in PARAM_FIELDS:
            a = data[f"param_{name}"]
            if a.shape != shapes[name]:
                raise ValueError(f"checkpoint array {name} has shape {a.shape}, expected {shapes[name]}")
            fields[name] = a
        params = QNetParams(**fields, hidden_size=hidden)
        opt_state = None
        if int(data["has_optimizer"]):
            beta1, beta2, eps = data["opt_hyper"]
            opt_state = OptimizerState(
                m={name: data[f"m_{name}"] for name in PARAM_FIELDS},
                v={name: data[f"v_{name}"] for name in PARAM_FIELDS},
                step=int(data["opt_step"]),
                beta1=float(beta1), beta2=float(beta2), eps=float(eps),
            )
        return params, opt_state, int(data["step"]), int(data["window_size"])
