"""Stacked LSTM next-event model with exact backpropagation through time.

Architecture (fixed): LSTM -> LSTM -> dropout -> dense softmax.  The first
cell reads one-hot events, the second reads the first cell's hidden state at
every step, and only the second cell's final hidden state reaches the head.

Batched inputs come in one of two layouts:

* one-hot floats shaped ``(window_size, vocabulary_size, batch)``, the layout
  of :class:`authlstm.dataset.WindowBatch`;
* integer event indices shaped ``(window_size, batch)``.  Multiplying a
  one-hot vector by a matrix selects a column, so this path gathers columns
  instead and yields the same numbers with far less memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np
from scipy import sparse

from .numerics import DTYPE, ShapeError, concat, fast_sigmoid, matvec, sigmoid, softmax

PROB_FLOOR = 1e-15

# gate order inside the stacked weight matrix; the three sigmoid gates first
_GATES = ("f", "i", "o", "c")


class DivergenceError(FloatingPointError):
    """Non-finite gradients: training has diverged."""


class StaleCacheError(RuntimeError):
    """A forward cache was used with a model it was not computed for."""


@dataclass
class LstmCellParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (recurrent weights, input weights, bias), gates in f,i,o,c order."""
        H = self.hidden_size
        W = np.vstack([getattr(self, f"W_{g}") for g in _GATES])
        b = np.concatenate([getattr(self, f"b_{g}") for g in _GATES])
        return W[:, :H], W[:, H:], b


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class LstmModel:
    cell1: LstmCellParams
    cell2: LstmCellParams
    dense_W: np.ndarray
    dense_b: np.ndarray
    dropout_rate: float
    hidden_size: int
    vocabulary_size: int
    window_size: int
    seed: int

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every trainable array, in a fixed order."""
        for cell_name in ("cell1", "cell2"):
            cell = getattr(self, cell_name)
            for f in fields(cell):
                yield f"{cell_name}.{f.name}", getattr(cell, f.name)
        yield "dense_W", self.dense_W
        yield "dense_b", self.dense_b

    def get(self, name: str) -> np.ndarray:
        if "." in name:
            cell, attr = name.split(".")
            return getattr(getattr(self, cell), attr)
        return getattr(self, name)

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "LstmModel":
        """A copy of this model with the named arrays replaced."""
        cells = {}
        for cell_name in ("cell1", "cell2"):
            cell = getattr(self, cell_name)
            cells[cell_name] = LstmCellParams(
                **{f.name: arrays.get(f"{cell_name}.{f.name}", getattr(cell, f.name)) for f in fields(cell)}
            )
        return LstmModel(
            cell1=cells["cell1"],
            cell2=cells["cell2"],
            dense_W=arrays.get("dense_W", self.dense_W),
            dense_b=arrays.get("dense_b", self.dense_b),
            dropout_rate=self.dropout_rate,
            hidden_size=self.hidden_size,
            vocabulary_size=self.vocabulary_size,
            window_size=self.window_size,
            seed=self.seed,
        )

    def copy(self) -> "LstmModel":
        return self.with_arrays({name: a.copy() for name, a in self.named_arrays()})

    def metadata(self) -> dict:
        return {
            "vocabulary_size": self.vocabulary_size,
            "hidden_size": self.hidden_size,
            "window_size": self.window_size,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    def to_dict(self) -> dict:
        """JSON-ready form: metadata plus flat row-major parameter lists."""
        params = {}
        for name, a in self.named_arrays():
            params[name] = {"shape": list(a.shape), "data": a.ravel().tolist()}
        return {"architecture": "lstm-lstm-dropout-dense-softmax", **self.metadata(), "parameters": params}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        try:
            V, H = int(d["vocabulary_size"]), int(d["hidden_size"])
            skeleton = init_model(V, H, int(d["window_size"]), float(d["dropout_rate"]), int(d["seed"]))
            arrays = {}
            for name, ref in skeleton.named_arrays():
                entry = d["parameters"][name]
                a = np.array(entry["data"], dtype=DTYPE).reshape(entry["shape"])
                if a.shape != ref.shape:
                    raise ShapeError(f"{name}: stored shape {a.shape}, expected {ref.shape}")
                arrays[name] = a
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed model document: {exc!r}") from exc
        return skeleton.with_arrays(arrays)


Gradients = dict  # parameter name -> gradient array, same keys/shapes as LstmModel.named_arrays()


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _init_cell(rng: np.random.Generator, hidden: int, inputs: int) -> LstmCellParams:
    W = {g: _glorot(rng, hidden, hidden + inputs) for g in ("f", "i", "c", "o")}
    return LstmCellParams(
        W_f=W["f"], W_i=W["i"], W_c=W["c"], W_o=W["o"],
        b_f=np.ones(hidden), b_i=np.zeros(hidden), b_c=np.zeros(hidden), b_o=np.zeros(hidden),
    )


def init_model(vocabulary_size: int, hidden_size: int, window_size: int,
               dropout_rate: float, seed: int) -> LstmModel:
    """Glorot-uniform weights, zero biases except forget-gate biases of 1."""
    if vocabulary_size < 2:
        raise ValueError(f"vocabulary_size must be >= 2, got {vocabulary_size}")
    if hidden_size < 1 or window_size < 1:
        raise ValueError("hidden_size and window_size must be >= 1")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    cell1 = _init_cell(rng, hidden_size, vocabulary_size)
    cell2 = _init_cell(rng, hidden_size, hidden_size)
    dense_W = _glorot(rng, vocabulary_size, hidden_size)
    return LstmModel(cell1, cell2, dense_W, np.zeros(vocabulary_size), float(dropout_rate),
                     hidden_size, vocabulary_size, window_size, int(seed))


def lstm_step(params: LstmCellParams, x: np.ndarray, prev: LstmState) -> LstmState:
    """One LSTM time step over the concatenation ``[h_prev; x]``.

    Written gate by gate for readability; the batched loops in
    :func:`forward_batch` compute the same thing with stacked matrices.
    """
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"input of size {x.shape[-1]}, cell expects {params.input_size}")
    hx = concat(prev.h, x)
    f = sigmoid(matvec(params.W_f, hx) + params.b_f)
    i = sigmoid(matvec(params.W_i, hx) + params.b_i)
    c_bar = np.tanh(matvec(params.W_c, hx) + params.b_c)
    c = f * prev.c + i * c_bar
    o = sigmoid(matvec(params.W_o, hx) + params.b_o)
    h = o * np.tanh(c)
    return LstmState(h=h, c=c)


@dataclass
class _CellCache:
    inputs: np.ndarray          # (T, I, B) floats or (T, B) ints
    hs: np.ndarray              # (T, H, B)
    cs: np.ndarray              # (T, H, B)
    tcs: np.ndarray             # tanh(cs)
    gates: np.ndarray           # (T, 4H, B) activated, order f,i,o,c


@dataclass
class ForwardCache:
    model: LstmModel
    cell1: _CellCache
    cell2: _CellCache
    mask: np.ndarray | None     # inverted-dropout mask on the final hidden state, (H, B)
    head_in: np.ndarray         # (H, B) after dropout
    probs: np.ndarray           # (B, V), probabilities in the forward's mode
    infer_probs: np.ndarray = field(repr=False, default=None)  # (B, V) with dropout off


# Internally everything is batch-last: a hidden state is (H, B), so every
# gate slice of the stacked (4H, B) pre-activation is a contiguous block.

def _cell_forward(params: LstmCellParams, inputs: np.ndarray) -> _CellCache:
    Wh, Wx, b = params.stacked()
    H = params.hidden_size
    b = b[:, None]
    by_index = inputs.dtype.kind in "iu"
    T, B = inputs.shape[0], inputs.shape[-1]
    if not by_index:
        z_all = np.matmul(Wx, inputs)
    hs = np.empty((T, H, B))
    cs = np.empty((T, H, B))
    tcs = np.empty((T, H, B))
    gates = np.empty((T, 4 * H, B))
    c = np.zeros((H, B))
    for t in range(T):
        z = Wx[:, inputs[t]] if by_index else z_all[t]
        z += b
        if t:
            z += Wh @ hs[t - 1]
        g = gates[t]
        fast_sigmoid(z[: 3 * H], out=g[: 3 * H])
        np.tanh(z[3 * H:], out=g[3 * H:])
        c = g[:H] * c
        c += g[H: 2 * H] * g[3 * H:]
        cs[t] = c
        np.tanh(c, out=tcs[t])
        np.multiply(g[2 * H: 3 * H], tcs[t], out=hs[t])
    return _CellCache(inputs, hs, cs, tcs, gates)


def _selector(indices: np.ndarray, n: int) -> sparse.csr_matrix:
    """Sparse (n, B) matrix whose column b is the one-hot vector of ``indices[b]``."""
    B = len(indices)
    return sparse.csr_matrix((np.ones(B), (indices, np.arange(B))), shape=(n, B))


def _cell_backward(params: LstmCellParams, cache: _CellCache, dh_last: np.ndarray | None,
                   dh_seq: np.ndarray | None, need_dx: bool):
    """BPTT through one cell.

    Upstream gradient arrives either only at the final step (``dh_last``) or
    at every step (``dh_seq``).  Returns (param grads, gradient w.r.t. inputs).
    """
    Wh, Wx, _ = params.stacked()
    H = params.hidden_size
    T, _, B = cache.hs.shape
    by_index = cache.inputs.dtype.kind in "iu"
    dz = np.empty((T, 4 * H, B))
    dh = np.zeros((H, B))
    dc = np.zeros((H, B))
    tmp = np.empty((H, B))
    dWxT = np.zeros((Wx.shape[1], 4 * H)) if by_index else None
    for t in range(T - 1, -1, -1):
        if dh_seq is not None:
            dh += dh_seq[t]
        if t == T - 1 and dh_last is not None:
            dh += dh_last
        g = cache.gates[t]
        f, i, o, cb = g[:H], g[H:2 * H], g[2 * H:3 * H], g[3 * H:]
        tc = cache.tcs[t]
        d = dz[t]
        # output gate
        np.multiply(dh, tc, out=d[2 * H:3 * H])
        np.subtract(1.0, o, out=tmp)
        tmp *= o
        d[2 * H:3 * H] *= tmp
        # cell state
        np.multiply(tc, tc, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= o
        tmp *= dh
        dc += tmp
        # forget gate
        if t:
            np.multiply(dc, cache.cs[t - 1], out=d[:H])
            np.subtract(1.0, f, out=tmp)
            tmp *= f
            d[:H] *= tmp
        else:
            d[:H] = 0.0
        # input gate
        np.multiply(dc, cb, out=d[H:2 * H])
        np.subtract(1.0, i, out=tmp)
        tmp *= i
        d[H:2 * H] *= tmp
        # candidate
        np.multiply(cb, cb, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= i
        np.multiply(dc, tmp, out=d[3 * H:])
        dc *= f
        if by_index:
            dWxT += _selector(cache.inputs[t], dWxT.shape[0]) @ d.T
        if t:
            dh = Wh.T @ d

    dWh = np.zeros((4 * H, H))
    for t in range(1, T):
        dWh += dz[t] @ cache.hs[t - 1].T
    if by_index:
        dWx = dWxT.T
    else:
        dWx = np.matmul(dz, cache.inputs.transpose(0, 2, 1)).sum(axis=0)
    db = dz.sum(axis=(0, 2))
    dW = np.hstack([dWh, dWx])
    grads = {}
    for k, gname in enumerate(_GATES):
        grads[f"W_{gname}"] = dW[k * H:(k + 1) * H]
        grads[f"b_{gname}"] = db[k * H:(k + 1) * H]
    dx = np.matmul(Wx.T, dz) if need_dx else None
    return grads, dx


def _as_batch_last(model: LstmModel, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs)
    T = model.window_size
    if inputs.dtype.kind in "iu":
        if inputs.ndim != 2 or inputs.shape[0] != T:
            raise ShapeError(f"index input {inputs.shape}, expected ({T}, batch)")
        if inputs.size and (inputs.min() < 0 or inputs.max() >= model.vocabulary_size):
            raise ShapeError("event index outside the model vocabulary")
        return inputs
    if inputs.ndim != 3 or inputs.shape[:2] != (T, model.vocabulary_size):
        raise ShapeError(
            f"one-hot input {inputs.shape}, expected ({T}, {model.vocabulary_size}, batch)")
    return np.asarray(inputs, dtype=DTYPE)


def forward_batch(model: LstmModel, inputs: np.ndarray, *, train: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities ``(batch, vocabulary_size)`` and a cache for :func:`backward`.

    In train mode each final hidden unit is zeroed with probability
    ``dropout_rate`` and survivors are scaled by ``1 / (1 - dropout_rate)``.
    """
    x = _as_batch_last(model, inputs)
    c1 = _cell_forward(model.cell1, x)
    c2 = _cell_forward(model.cell2, c1.hs)
    h_final = c2.hs[-1]
    infer_probs = softmax((model.dense_W @ h_final).T + model.dense_b)
    mask = None
    if train and model.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(h_final.T.shape).T < keep) / keep
        head_in = h_final * mask
        probs = softmax((model.dense_W @ head_in).T + model.dense_b)
    else:
        head_in = h_final
        probs = infer_probs
    cache = ForwardCache(model, c1, c2, mask, head_in, probs, infer_probs)
    return probs, cache


def forward(model: LstmModel, window: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Single window (``window_size x vocabulary_size`` one-hot) to a probability vector."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    window = np.asarray(window)
    if window.dtype.kind in "iu":
        batch = window.reshape(-1, 1)
    else:
        batch = window[:, :, None]
    probs, cache = forward_batch(model, batch, train=mode == "train", rng=rng)
    return probs[0], cache


def loss(probabilities: np.ndarray, target: int) -> float:
    """Categorical cross-entropy ``-log p[target]`` with p floored at 1e-15."""
    return float(-np.log(max(float(probabilities[target]), PROB_FLOOR)))


def batch_losses(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = probs[np.arange(len(targets)), targets]
    return -np.log(np.maximum(p, PROB_FLOOR))


def cost(model: LstmModel, inputs: np.ndarray, targets: np.ndarray,
         rng: np.random.Generator | None = None) -> float:
    """Mean loss over the batch; train mode (dropout on) when ``rng`` is given."""
    targets = np.asarray(targets)
    if targets.size == 0:
        raise ValueError("cost of an empty batch")
    probs, _ = forward_batch(model, inputs, train=rng is not None, rng=rng)
    return float(batch_losses(probs, targets).mean())


def backward(model: LstmModel, targets: np.ndarray, cache: ForwardCache) -> Gradients:
    """Exact gradients of the mean batch loss for every model parameter."""
    if cache is None or cache.model is not model:
        raise StaleCacheError("forward cache does not belong to this model")
    targets = np.asarray(targets)
    B = cache.probs.shape[0]
    if targets.shape != (B,):
        raise ShapeError(f"{targets.shape} targets for a batch of {B}")
    dlogits = cache.probs.copy()
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B
    grads: Gradients = {}
    grads_dense_W = dlogits.T @ cache.head_in.T
    grads_dense_b = dlogits.sum(axis=0)
    dh = model.dense_W.T @ dlogits.T
    if cache.mask is not None:
        dh *= cache.mask
    g2, dh1 = _cell_backward(model.cell2, cache.cell2, dh, None, need_dx=True)
    g1, _ = _cell_backward(model.cell1, cache.cell1, None, dh1, need_dx=False)
    for f in fields(LstmCellParams):
        grads[f"cell1.{f.name}"] = g1[f.name]
    for f in fields(LstmCellParams):
        grads[f"cell2.{f.name}"] = g2[f.name]
    grads["dense_W"] = grads_dense_W
    grads["dense_b"] = grads_dense_b
    return grads


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def sgd_step(model: LstmModel, grads: Gradients, learning_rate: float,
             clip_norm: float | None = None) -> LstmModel:
    """``p := p - learning_rate * g``, after global-norm clipping; returns a new model."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError("non-finite gradient norm")
    scale = learning_rate
    if clip_norm is not None and norm > clip_norm:
        scale *= clip_norm / norm
    updated = {name: a - scale * grads[name] for name, a in model.named_arrays()}
    for name, a in updated.items():
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"parameter {name} became non-finite")
    return model.with_arrays(updated)


def numerical_gradients(model: LstmModel, inputs: np.ndarray, targets: np.ndarray,
                        eps: float = 1e-5) -> Gradients:
    """Central finite differences of :func:`cost` (dropout off) for every parameter."""
    probe = model.copy()
    grads: Gradients = {}
    for name, a in probe.named_arrays():
        g = np.empty_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            up = cost(probe, inputs, targets)
            a[idx] = old - eps
            down = cost(probe, inputs, targets)
            a[idx] = old
            g[idx] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def gradient_check(model: LstmModel, inputs: np.ndarray, targets: np.ndarray,
                   eps: float = 1e-5) -> dict[str, float]:
    """Relative error ``|a - n| / max(|a|, |n|)`` per parameter array, analytic vs numeric."""
    _, cache = forward_batch(model, inputs)
    analytic = backward(model, targets, cache)
    numeric = numerical_gradients(model, inputs, targets, eps)
    errors = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        errors[name] = float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0
    return errors
