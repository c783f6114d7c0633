"""Two-layer LSTM policy/value networks over the autodiff tape.

The default trunk is LSTM(64) -> LSTM(32) unrolled across the 60-step state
window; the final hidden state feeds a Leaky-ReLU dense head whose output
block depends on the agent: three Q-values, a dueling value/advantage pair,
three action logits, a state value, or a Gaussian mean plus a free log-std.

RSI arrives on a 0..100 scale while every other feature is O(1), so the
forward pass applies a fixed per-feature affine conditioning from the network
spec before layer 1.  It is part of the architecture, not of the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Var, parameter
from .errors import NonFiniteInput, ShapeMismatch
from .indicators import FEATURE_NAMES

HEAD_KINDS = ("q3", "dueling", "softmax3", "value", "gaussian")
DEFAULT_HIDDEN = (64, 32)
LEAKY_SLOPE = 0.01
LOG_STD_INIT = -0.5

# Conditioning for the canonical 7-feature state: map RSI to [-1, 1].
FEATURE_CENTER = tuple(50.0 if name == "rsi" else 0.0 for name in FEATURE_NAMES)
FEATURE_SCALE = tuple(50.0 if name == "rsi" else 1.0 for name in FEATURE_NAMES)


@dataclass(frozen=True)
class NetworkSpec:
    feature_count: int
    head: str
    hidden: tuple[int, int] = DEFAULT_HIDDEN
    input_center: tuple[float, ...] | None = None
    input_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ShapeMismatch(f"unknown head {self.head!r}")
        if self.feature_count < 1:
            raise ShapeMismatch("feature_count must be >= 1")

    def to_json(self) -> str:
        d = {
            "feature_count": self.feature_count,
            "head": self.head,
            "hidden": list(self.hidden),
            "input_center": None if self.input_center is None else list(self.input_center),
            "input_scale": None if self.input_scale is None else list(self.input_scale),
        }
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        d = json.loads(text)
        return NetworkSpec(
            feature_count=d["feature_count"],
            head=d["head"],
            hidden=tuple(d["hidden"]),
            input_center=None if d["input_center"] is None else tuple(d["input_center"]),
            input_scale=None if d["input_scale"] is None else tuple(d["input_scale"]),
        )


def default_spec(head: str, feature_count: int = len(FEATURE_NAMES)) -> NetworkSpec:
    """Canonical spec for the 7-feature trading state."""
    return NetworkSpec(
        feature_count=feature_count,
        head=head,
        input_center=FEATURE_CENTER[:feature_count],
        input_scale=FEATURE_SCALE[:feature_count],
    )


def _head_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    h2 = spec.hidden[-1]
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("head.w1", (h2, h2)),
        ("head.b1", (h2,)),
    ]
    if spec.head in ("q3", "softmax3"):
        shapes += [("head.w2", (h2, 3)), ("head.b2", (3,))]
    elif spec.head == "value":
        shapes += [("head.w2", (h2, 1)), ("head.b2", (1,))]
    elif spec.head == "dueling":
        shapes += [
            ("head.v_w", (h2, 1)),
            ("head.v_b", (1,)),
            ("head.a_w", (h2, 3)),
            ("head.a_b", (3,)),
        ]
    elif spec.head == "gaussian":
        shapes += [
            ("head.mean_w", (h2, 1)),
            ("head.mean_b", (1,)),
            ("log_std", (1,)),
        ]
    return shapes


def param_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    d_in = spec.feature_count
    for i, h in enumerate(spec.hidden, start=1):
        shapes += [
            (f"lstm{i}.w_x", (d_in, 4 * h)),
            (f"lstm{i}.w_h", (h, 4 * h)),
            (f"lstm{i}.b", (4 * h,)),
        ]
        d_in = h
    shapes += _head_shapes(spec)
    return shapes


class ParamStore:
    """Named float64 parameter arrays with fixed shapes."""

    def __init__(self, spec: NetworkSpec, params: dict[str, Var]):
        self.spec = spec
        self.params = params

    def __getitem__(self, name: str) -> Var:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def variables(self) -> list[Var]:
        return list(self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.params.items()}

    def total_count(self) -> int:
        return sum(v.value.size for v in self.params.values())

    def copy(self) -> "ParamStore":
        return ParamStore(
            self.spec,
            {k: parameter(v.value.copy(), name=k) for k, v in self.params.items()},
        )

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite values in place (used by target-network sync)."""
        for k, v in self.params.items():
            src = arrays[k]
            if src.shape != v.value.shape:
                raise ShapeMismatch(f"{k}: {src.shape} != {v.value.shape}")
            v.value = src.copy()

    def allclose(self, other: "ParamStore") -> bool:
        return all(
            np.array_equal(v.value, other.params[k].value) for k, v in self.params.items()
        )

    def zero_grads(self) -> None:
        for v in self.params.values():
            v.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; disconnected parameters give exact zeros."""
        return {
            k: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for k, v in self.params.items()
        }


def init_params(spec: NetworkSpec, seed: int) -> ParamStore:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
    forget-gate bias 1.0, log-std at its constant init."""
    rng = np.random.default_rng(seed)
    params: dict[str, Var] = {}
    for name, shape in param_shapes(spec):
        if name.endswith(".b") and name.startswith("lstm"):
            h = shape[0] // 4
            b = np.zeros(shape)
            b[h : 2 * h] = 1.0
            params[name] = parameter(b, name=name)
        elif name == "log_std":
            params[name] = parameter(np.full(shape, LOG_STD_INIT), name=name)
        elif len(shape) == 1:
            params[name] = parameter(np.zeros(shape), name=name)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = parameter(rng.uniform(-bound, bound, size=shape), name=name)
    return ParamStore(spec, params)


def forward(
    store: ParamStore,
    windows: np.ndarray,
    tape: Tape | None = None,
    return_hidden: bool = False,
):
    """Run the trunk and head over a (batch, T, F) stack of state windows.

    Returns a dict of output Vars keyed by head:  ``q`` / ``logits`` / ``v`` /
    ``mean`` + ``log_std``.  With ``return_hidden`` the per-step hidden values
    of the last layer are included under ``hidden_seq`` (values, no grads).
    """
    spec = store.spec
    if tape is None:
        tape = Tape(record=False)
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3 or w.shape[2] != spec.feature_count:
        raise ShapeMismatch(f"windows shape {w.shape} incompatible with F={spec.feature_count}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("state windows must be finite")
    n_batch, n_steps, _ = w.shape

    x = w
    if spec.input_center is not None:
        x = x - np.asarray(spec.input_center)
    if spec.input_scale is not None:
        x = x / np.asarray(spec.input_scale)
    seq = tape.leaf(np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n_steps * n_batch, -1))

    h = None
    hidden_seq = None
    for li, n_hidden in enumerate(spec.hidden, start=1):
        w_x = store[f"lstm{li}.w_x"]
        w_h = store[f"lstm{li}.w_h"]
        bias = store[f"lstm{li}.b"]
        xproj = tape.affine(seq, w_x, bias)
        h = tape.leaf(np.zeros((n_batch, n_hidden)))
        c = tape.leaf(np.zeros((n_batch, n_hidden)))
        steps: list[Var] = []
        for t in range(n_steps):
            pre = tape.recur_pre(xproj, t * n_batch, (t + 1) * n_batch, h, w_h)
            h, c = tape.lstm_cell(pre, c, n_hidden)
            steps.append(h)
        if li < len(spec.hidden):
            seq = tape.concat_rows(steps)
        elif return_hidden:
            hidden_seq = np.stack([s.value for s in steps])

    z1 = tape.leaky_relu(tape.affine(h, store["head.w1"], store["head.b1"]), LEAKY_SLOPE)
    out: dict[str, object] = {}
    if spec.head in ("q3", "softmax3", "value"):
        y = tape.affine(z1, store["head.w2"], store["head.b2"])
        out["q" if spec.head == "q3" else "logits" if spec.head == "softmax3" else "v"] = y
    elif spec.head == "dueling":
        v = tape.affine(z1, store["head.v_w"], store["head.v_b"])
        adv = tape.affine(z1, store["head.a_w"], store["head.a_b"])
        out["q"] = tape.add(tape.sub(adv, tape.mean_cols_keep(adv)), v)
        out["v"] = v
    elif spec.head == "gaussian":
        mean_raw = tape.affine(z1, store["head.mean_w"], store["head.mean_b"])
        out["mean"] = tape.tanh(mean_raw)
        out["log_std"] = store["log_std"]
    if return_hidden:
        out["hidden_seq"] = hidden_seq
    return out


def dueling_aggregate(v: np.ndarray, adv: np.ndarray) -> np.ndarray:
    """Q(s, a) = V(s) + A(s, a) - mean_a A(s, a), value-only helper."""
    return v + adv - adv.mean(axis=1, keepdims=True)


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(store: ParamStore) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.value) for k, p in store.params.items()},
        v={k: np.zeros_like(p.value) for k, p in store.params.items()},
    )


def adam_step(
    store: ParamStore, grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> None:
    """Bias-corrected Adam update applied in place; increments the counter."""
    if lr <= 0:
        raise ShapeMismatch("learning rate must be > 0")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in store.params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} != param {p.value.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def global_norm_clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    if max_norm is None or max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


# -- checkpoint files -----------------------------------------------------------

_PARAMS_MAGIC = "# rlmomentum-params v1"


def save_params(store: ParamStore, path: str | Path) -> None:
    """Flat CSV: one row per array as name,ndim,dims...,row-major values.

    Floats use 17 significant digits, which round-trips IEEE doubles exactly.
    """
    lines = [_PARAMS_MAGIC, f"# spec {store.spec.to_json()}"]
    for name, var in store.params.items():
        a = var.value
        cells = [name, str(a.ndim), *map(str, a.shape)]
        cells += [f"{x:.17g}" for x in a.ravel()]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> ParamStore:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _PARAMS_MAGIC:
        raise ShapeMismatch(f"{path}: not a parameter file")
    spec = NetworkSpec.from_json(lines[1].removeprefix("# spec ").strip())
    params: dict[str, Var] = {}
    for line in lines[2:]:
        if not line:
            continue
        cells = line.split(",")
        name = cells[0]
        ndim = int(cells[1])
        shape = tuple(int(c) for c in cells[2 : 2 + ndim])
        values = np.array([float(c) for c in cells[2 + ndim :]], dtype=np.float64)
        params[name] = parameter(values.reshape(shape), name=name)
    store = ParamStore(spec, params)
    expected = dict(param_shapes(spec))
    for name, shape in expected.items():
        if name not in params or params[name].value.shape != shape:
            raise ShapeMismatch(f"{path}: bad or missing array {name}")
    return store
