"""Single-layer GRU with a linear per-step output head, written against numpy.

Gate convention (column-vector form)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    hh = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hh
    y  = W_out h' + b_out

Arrays are batched as ``(B, T, F)`` inputs and ``(B, hs)`` hidden states.
Backward stops at the initial hidden state: whatever produced ``h0`` is
treated as a constant (truncated BPTT at segment boundaries).

Input projections are computed one timestep at a time with a fixed-shape
product and the output head is a row-wise reduction, so a step's arithmetic
does not depend on how many timesteps share the call. That keeps chained
segment forwards bit-identical to a single long forward.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError

PARAM_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h", "W_out", "b_out")


@dataclass
class GruModel:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        self.validate()

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def output_size(self) -> int:
        return self.W_out.shape[0]

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        F, hs, V = self.input_size, self.hidden_size, self.output_size
        return {
            "W_z": (hs, F), "W_r": (hs, F), "W_h": (hs, F),
            "U_z": (hs, hs), "U_r": (hs, hs), "U_h": (hs, hs),
            "b_z": (hs,), "b_r": (hs,), "b_h": (hs,),
            "W_out": (V, hs), "b_out": (V,),
        }

    def validate(self) -> None:
        if self.W_z.ndim != 2 or self.W_out.ndim != 2:
            raise ConfigError("W_z and W_out must be matrices")
        for name, shape in self.expected_shapes().items():
            got = getattr(self, name).shape
            if got != shape:
                raise ConfigError(f"{name} has shape {got}, expected {shape}")

    def params(self) -> dict[str, np.ndarray]:
        """Parameter arrays by name. These are the live arrays, not copies."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GruModel":
        return GruModel(**{k: v.copy() for k, v in self.params().items()})

    def zeros_like(self) -> "GruModel":
        return GruModel(**{k: np.zeros_like(v) for k, v in self.params().items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params().values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params().values()])

    def save(self, path: str | Path) -> None:
        """Write all parameters to an ``.npz`` archive keyed by parameter name."""
        with open(path, "wb") as fh:
            np.savez(fh, **self.params())

    @classmethod
    def load(cls, path: str | Path) -> "GruModel":
        with np.load(path) as data:
            missing = [n for n in PARAM_NAMES if n not in data]
            if missing:
                raise ConfigError(f"{path}: missing parameters {missing}")
            return cls(**{n: data[n] for n in PARAM_NAMES})


def init_params(seed: int, F: int, hs: int, V: int = 1) -> GruModel:
    """Uniform(-1/sqrt(hs), 1/sqrt(hs)) weight matrices and zero biases."""
    if min(F, hs, V) < 1:
        raise ConfigError(f"sizes must be >= 1, got F={F}, hs={hs}, V={V}")
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(hs)

    def u(*shape):
        return rng.uniform(-k, k, size=shape)

    return GruModel(
        W_z=u(hs, F), W_r=u(hs, F), W_h=u(hs, F),
        U_z=u(hs, hs), U_r=u(hs, hs), U_h=u(hs, hs),
        b_z=np.zeros(hs), b_r=np.zeros(hs), b_h=np.zeros(hs),
        W_out=u(V, hs), b_out=np.zeros(V),
    )


def zero_model(F: int, hs: int, V: int = 1) -> GruModel:
    z = np.zeros
    return GruModel(z((hs, F)), z((hs, F)), z((hs, F)), z((hs, hs)), z((hs, hs)), z((hs, hs)),
                    z(hs), z(hs), z(hs), z((V, hs)), z(V))


@dataclass
class ForwardCache:
    X: np.ndarray    # (T, B, F + 1), last column all ones
    H: np.ndarray    # (T+1, B, hs), H[0] is h0
    ZR: np.ndarray   # (T, B, 2hs) update and reset gates
    HH: np.ndarray   # (T, B, hs) candidate states
    D: np.ndarray    # (T, B, hs) candidate minus previous state
    RH: np.ndarray   # (T, B, hs) reset gate times previous state
    dims: tuple[int, int, int]


def _sigmoid_(a: np.ndarray) -> np.ndarray:
    # in place; the tanh form is several times faster than scipy's expit here
    a *= 0.5
    np.tanh(a, out=a)
    a *= 0.5
    a += 0.5
    return a


def forward(model: GruModel, X: np.ndarray, h0: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Batched forward. ``X`` is ``(B, T, F)``, ``h0`` is ``(B, hs)``.

    Returns predictions ``(B, T, V)``, final hidden state ``(B, hs)`` and the
    cache needed by :func:`backward`.
    """
    X = np.asarray(X, dtype=np.float64)
    h0 = np.asarray(h0, dtype=np.float64)
    F, hs, V = model.input_size, model.hidden_size, model.output_size
    if X.ndim != 3 or X.shape[2] != F:
        raise ConfigError(f"input batch has shape {X.shape}, expected (B, T, {F})")
    B, T, _ = X.shape
    if T < 1:
        raise ConfigError("segment length must be >= 1")
    if h0.shape != (B, hs):
        raise ConfigError(f"h0 has shape {h0.shape}, expected {(B, hs)}")

    Wx1 = _input_weights(model)
    Uzr = np.concatenate([model.U_z, model.U_r]).T
    UhT = model.U_h.T

    # time-major inputs with a trailing ones column so the bias rides in the product
    X1 = np.empty((T, B, F + 1))
    X1[:, :, :F] = X.transpose(1, 0, 2)
    X1[:, :, F] = 1.0
    H = np.empty((T + 1, B, hs))
    H[0] = h0
    ZR = np.empty((T, B, 2 * hs))
    HH = np.empty((T, B, hs))
    D = np.empty((T, B, hs))
    RH = np.empty((T, B, hs))
    tmp = np.empty((B, hs))
    for t in range(T):
        h = H[t]
        xp = X1[t] @ Wx1
        zr = ZR[t]
        np.add(xp[:, : 2 * hs], h @ Uzr, out=zr)
        _sigmoid_(zr)
        rh = np.multiply(zr[:, hs:], h, out=RH[t])
        hh = HH[t]
        np.add(xp[:, 2 * hs:], rh @ UhT, out=hh)
        np.tanh(hh, out=hh)
        np.subtract(hh, h, out=D[t])
        np.multiply(D[t], zr[:, :hs], out=tmp)
        np.add(h, tmp, out=H[t + 1])

    if not np.isfinite(H[-1]).all():
        raise DivergenceError("non-finite hidden state in forward pass")
    Y = _output_head(model, H[1:]).transpose(1, 0, 2)
    return Y, H[-1].copy(), ForwardCache(X1, H, ZR, HH, D, RH, (F, hs, V))


def _input_weights(model: GruModel) -> np.ndarray:
    """``(F + 1, 3hs)``: input weights of all three gates with the biases as the last row."""
    W = np.concatenate([model.W_z, model.W_r, model.W_h]).T
    b = np.concatenate([model.b_z, model.b_r, model.b_h])
    return np.vstack([W, b])


def _output_head(model: GruModel, H: np.ndarray) -> np.ndarray:
    # row-wise reduction over the hidden axis: each output depends only on its own row
    return np.sum(H[..., None, :] * model.W_out, axis=-1) + model.b_out


def backward(model: GruModel, cache: ForwardCache, dY: np.ndarray) -> GruModel:
    """Parameter gradients for upstream gradient ``dY`` of shape ``(B, T, V)``."""
    F, hs, V = model.input_size, model.hidden_size, model.output_size
    if cache.dims != (F, hs, V):
        raise ConfigError(f"cache was built for dims {cache.dims}, model has {(F, hs, V)}")
    T, B, _ = cache.X.shape
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != (B, T, V):
        raise ConfigError(f"dY has shape {dY.shape}, expected {(B, T, V)}")

    H, ZR, HH, D = cache.H, cache.ZR, cache.HH, cache.D
    Hp = H[:-1]
    dYt = dY.transpose(1, 0, 2)
    dHo = (dYt.reshape(T * B, V) @ model.W_out).reshape(T, B, hs)
    Uzr = np.concatenate([model.U_z, model.U_r])
    Uh = model.U_h

    # gradients w.r.t. the pre-activations of z, r and the candidate, side by side
    dG = np.empty((T, B, 3 * hs))
    dh = np.zeros((B, hs))
    a, c, keep = np.empty((B, hs)), np.empty((B, hs)), np.empty((B, hs))
    for t in range(T - 1, -1, -1):
        z, r, hh, g = ZR[t, :, :hs], ZR[t, :, hs:], HH[t], dG[t]
        dh += dHo[t]
        np.multiply(dh, z, out=a)
        np.multiply(hh, hh, out=c)
        np.subtract(1.0, c, out=c)
        dpre_h = np.multiply(a, c, out=g[:, 2 * hs:])
        drh = dpre_h @ Uh
        np.subtract(1.0, z, out=keep)
        a *= keep
        np.multiply(a, D[t], out=g[:, :hs])
        np.subtract(1.0, r, out=c)
        c *= r
        c *= Hp[t]
        np.multiply(drh, c, out=g[:, hs:2 * hs])
        dh *= keep
        drh *= r
        dh += drh
        dh += g[:, :2 * hs] @ Uzr

    n = T * B
    dGf = dG.reshape(n, 3 * hs)
    gx = cache.X.reshape(n, F + 1).T @ dGf          # (F + 1, 3hs)
    gu = Hp.reshape(n, hs).T @ dGf[:, :2 * hs]      # (hs, 2hs)
    gh = cache.RH.reshape(n, hs).T @ dGf[:, 2 * hs:]
    dYf = dYt.reshape(n, V)
    return GruModel(
        W_z=gx[:F, :hs].T.copy(), W_r=gx[:F, hs:2 * hs].T.copy(), W_h=gx[:F, 2 * hs:].T.copy(),
        U_z=gu[:, :hs].T.copy(), U_r=gu[:, hs:].T.copy(), U_h=gh.T.copy(),
        b_z=gx[F, :hs].copy(), b_r=gx[F, hs:2 * hs].copy(), b_h=gx[F, 2 * hs:].copy(),
        W_out=dYf.T @ H[1:].reshape(n, hs), b_out=dYf.sum(0),
    )


def gru_cell_forward(model: GruModel, x: np.ndarray, h_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (model.input_size,) or h_prev.shape != (model.hidden_size,):
        raise ConfigError(f"cell got x{x.shape}, h{h_prev.shape}; "
                          f"expected ({model.input_size},), ({model.hidden_size},)")
    Y, h, _ = forward(model, x[None, None, :], h_prev[None, :])
    return h[0], Y[0, 0]


def gru_segment_forward(model: GruModel, X: np.ndarray, h0: np.ndarray | None = None):
    """Unbatched forward over one ``(T, F)`` segment. Returns ``(Yhat, h_last, cache)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigError(f"segment must be (T, F), got {X.shape}")
    if h0 is None:
        h0 = np.zeros(model.hidden_size)
    h0 = np.asarray(h0, dtype=np.float64)
    if h0.shape != (model.hidden_size,):
        raise ConfigError(f"h0 has shape {h0.shape}, expected ({model.hidden_size},)")
    Y, h, cache = forward(model, X[None], h0[None])
    return Y[0], h[0], cache


def gru_segment_backward(model: GruModel, cache: ForwardCache, dY: np.ndarray) -> GruModel:
    dY = np.asarray(dY, dtype=np.float64)
    if dY.ndim != 2:
        raise ConfigError(f"dY must be (T, V), got {dY.shape}")
    return backward(model, cache, dY[None])


def mse_and_grad(Yhat: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. ``Yhat``."""
    diff = Yhat - Y
    return float(np.mean(diff * diff)), diff * (2.0 / diff.size)


def segment_loss(model: GruModel, X: np.ndarray, Y: np.ndarray, h0: np.ndarray) -> float:
    Yhat, _, _ = gru_segment_forward(model, X, h0)
    return mse_and_grad(Yhat, Y)[0]


def gradcheck(model: GruModel, X, Y, h0=None, eps: float = 1e-5, backward_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``backward_fn`` defaults to :func:`gru_segment_backward`; passing a broken
    one is how the check itself gets tested.
    """
    backward_fn = backward_fn or gru_segment_backward
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if h0 is None:
        h0 = np.zeros(model.hidden_size)
    Yhat, _, cache = gru_segment_forward(model, X, h0)
    _, dY = mse_and_grad(Yhat, Y)
    grads = backward_fn(model, cache, dY)

    probe = model.copy()
    worst = 0.0
    for name, p in probe.params().items():
        g = getattr(grads, name)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            lp = segment_loss(probe, X, Y, h0)
            p[idx] = orig - eps
            lm = segment_loss(probe, X, Y, h0)
            p[idx] = orig
            num = (lp - lm) / (2 * eps)
            ana = g[idx]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def autoregressive_forward(model: GruModel, X: np.ndarray, h0: np.ndarray, y_prev: np.ndarray):
    """Forward where the last input column is fed the model's own previous output.

    ``X`` is ``(B, T, F-V)`` without the feedback columns; ``y_prev`` ``(B, V)``
    feeds step 1. Per-step arithmetic matches :func:`forward` exactly, so with
    the same feedback values both give identical outputs.
    """
    X = np.asarray(X, dtype=np.float64)
    F, hs, V = model.input_size, model.hidden_size, model.output_size
    B, T, Fb = X.shape
    if Fb + V != F:
        raise ConfigError(f"model takes {F} inputs; {Fb} base features + {V} fed back do not match")
    Wx1 = _input_weights(model)
    Uzr = np.concatenate([model.U_z, model.U_r]).T
    UhT = model.U_h.T
    h = np.array(h0, dtype=np.float64).reshape(B, hs)
    y = np.array(y_prev, dtype=np.float64).reshape(B, V)
    xt = np.empty((B, F + 1))
    xt[:, F] = 1.0
    Y = np.empty((B, T, V))
    for t in range(T):
        xt[:, :Fb] = X[:, t]
        xt[:, Fb:F] = y
        xp = xt @ Wx1
        zr = xp[:, : 2 * hs] + h @ Uzr
        _sigmoid_(zr)
        hh = np.tanh(xp[:, 2 * hs:] + (zr[:, hs:] * h) @ UhT)
        h = h + (hh - h) * zr[:, :hs]
        y = _output_head(model, h)
        Y[:, t] = y
    if not np.isfinite(Y).all():
        raise DivergenceError("non-finite prediction in autoregressive forward")
    return Y, h
