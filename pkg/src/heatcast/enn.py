"""
Multi-hidden-layer Elman network.

Forward pass, with f = tanh and g = identity:

    x_1 = f(W_in u + W_c[0] c_0)
    x_i = f(W_h[i-2] x_{i-1} + W_c[i-1] c_{i-1})     i = 2..n
    y   = g(W_out x_n)

Each hidden layer owns one context vector c_i holding that layer's previous
activation. `forward` never mutates context; `step_context` advances it.

Training is per-sample gradient descent on the squared error with the context
treated as a constant input (no back-propagation through time). Weight updates
use the error signals of the output and hidden layers:

    W_out    += eta_out    * d_out x_n^T
    W_h[p-2] += eta_hidden * d_p   x_{p-1}^T
    W_in     += eta_in     * d_1   u^T
    W_c[p-1] += eta_ctx    * d_p   c_{p-1}^T      (pre-step context)

Rates shrink as eta / (1 + decay * (epoch - 1)). Segments keep their hourly
order but are visited in a seeded random order each epoch.
"""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

import common.slog as slog
from heatcast import numerics as nx
from heatcast.dataset import FACTOR_ORDER, NormalizationStats, SuperVectorSet, denormalize
from heatcast.errors import ConfigurationError, DivergenceError, FormatError
from heatcast.evaluation import PredictionPairs, mape

FORMAT_VERSION = 1
DEFAULT_HIDDEN_SIZE = 15
DEFAULT_OUTPUT_SIZE = 1


# === Model ===


@dataclass(eq=False)
class EnnModel:
    w_in: nx.Matrix
    w_hidden: List[nx.Matrix]
    w_out: nx.Matrix
    w_context: List[nx.Matrix]
    context: List[nx.Vector]
    norm_stats: Optional[NormalizationStats] = None
    factor_order: Tuple[str, ...] = ()
    window_length: Optional[int] = None

    def __post_init__(self):
        s, r = self.w_in.shape
        n = len(self.w_context)
        if n < 1:
            raise ConfigurationError("An Elman network needs at least one hidden layer.")
        if len(self.w_hidden) != n - 1 or len(self.context) != n:
            raise ConfigurationError(
                f"{n} context layers need {n - 1} hidden-to-hidden matrices and {n} context vectors."
            )
        for w in self.w_hidden:
            if w.shape != (s, s):
                raise ConfigurationError(f"Hidden matrix shape {w.shape} != {(s, s)}.")
        for w in self.w_context:
            if w.shape != (s, s):
                raise ConfigurationError(f"Context matrix shape {w.shape} != {(s, s)}.")
        for c in self.context:
            if c.shape != (s,):
                raise ConfigurationError(f"Context vector shape {c.shape} != {(s,)}.")
        if self.w_out.shape[1] != s:
            raise ConfigurationError(f"Output matrix shape {self.w_out.shape} does not read {s} hidden nodes.")

    @property
    def n_hidden_layers(self) -> int:
        return len(self.w_context)

    @property
    def input_size(self) -> int:
        return int(self.w_in.shape[1])

    @property
    def hidden_size(self) -> int:
        return int(self.w_in.shape[0])

    @property
    def output_size(self) -> int:
        return int(self.w_out.shape[0])

    def weights(self) -> List[nx.Matrix]:
        """All trainable matrices: w_in, w_hidden..., w_out, w_context..."""
        return [self.w_in, *self.w_hidden, self.w_out, *self.w_context]

    def set_weights(self, matrices: List[nx.Matrix]) -> None:
        for target, source in zip(self.weights(), matrices):
            target[...] = source

    def clone(self) -> "EnnModel":
        return copy.deepcopy(self)


class Activations(NamedTuple):
    u: nx.Vector
    hidden: Tuple[nx.Vector, ...]
    context: Tuple[nx.Vector, ...]
    y: nx.Vector


class Deltas(NamedTuple):
    output: nx.Vector
    hidden: Tuple[nx.Vector, ...]


class Gradients(NamedTuple):
    w_in: nx.Matrix
    w_hidden: Tuple[nx.Matrix, ...]
    w_out: nx.Matrix
    w_context: Tuple[nx.Matrix, ...]


def _uniform(rng: np.random.Generator, rows: int, cols: int, bound: Optional[float]) -> nx.Matrix:
    b = 1.0 / np.sqrt(cols) if bound is None else bound
    return rng.uniform(-b, b, size=(rows, cols))


def init_model(
    n_hidden: int,
    input_size: int,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
    seed: Union[int, np.random.SeedSequence] = 0,
    output_size: int = DEFAULT_OUTPUT_SIZE,
    init_bound: Optional[float] = None,
) -> EnnModel:
    """
    Weights uniform in [-b, b] with b = 1/sqrt(fan_in) unless `init_bound` is
    given; contexts start at zero.
    """
    if n_hidden < 1 or input_size < 1 or hidden_size < 1 or output_size < 1:
        raise ConfigurationError(
            f"Layer counts and sizes must be >= 1 (n={n_hidden}, r={input_size}, s={hidden_size}, m={output_size})."
        )
    rng = np.random.default_rng(seed)
    s = hidden_size
    return EnnModel(
        w_in=_uniform(rng, s, input_size, init_bound),
        w_hidden=[_uniform(rng, s, s, init_bound) for _ in range(n_hidden - 1)],
        w_out=_uniform(rng, output_size, s, init_bound),
        w_context=[_uniform(rng, s, s, init_bound) for _ in range(n_hidden)],
        context=[np.zeros(s) for _ in range(n_hidden)],
    )


# === Recurrence ===


def forward(model: EnnModel, u: nx.Vector) -> Tuple[nx.Vector, Activations]:
    u = np.asarray(u, dtype=np.float64)
    context = tuple(c.copy() for c in model.context)
    x = nx.tanh_sigmoid(nx.mat_vec(model.w_in, u) + nx.mat_vec(model.w_context[0], context[0]))
    hidden = [x]
    for i, w in enumerate(model.w_hidden, start=1):
        x = nx.tanh_sigmoid(nx.mat_vec(w, x) + nx.mat_vec(model.w_context[i], context[i]))
        hidden.append(x)
    y = nx.linear_transfer(nx.mat_vec(model.w_out, x))
    return y, Activations(u=u, hidden=tuple(hidden), context=context, y=y)


def step_context(model: EnnModel, activations: Activations) -> None:
    model.context = [h.copy() for h in activations.hidden]


def reset_context(model: EnnModel) -> None:
    model.context = [np.zeros(model.hidden_size) for _ in range(model.n_hidden_layers)]


# === Training ===


def deltas(model: EnnModel, activations: Activations, target) -> Deltas:
    """Error signals: d_out = (y_d - y) g'(.), d_p = (W_{p+1}^T d_{p+1}) f'(x_p)."""
    y_d = np.atleast_1d(np.asarray(target, dtype=np.float64))
    d_out = (y_d - activations.y) * nx.linear_deriv(activations.y)
    downstream = [model.w_out, *reversed(model.w_hidden)]
    signals = []
    d = d_out
    for w, x in zip(downstream, reversed(activations.hidden)):
        d = (w.T @ d) * nx.tanh_sigmoid_deriv(x)
        signals.append(d)
    return Deltas(output=d_out, hidden=tuple(reversed(signals)))


def gradients(model: EnnModel, activations: Activations, target) -> Gradients:
    """d(0.5 * (y_d - y)^2) / dW for every matrix, context held constant."""
    d = deltas(model, activations, target)
    upstream = (activations.u, *activations.hidden[:-1])
    return Gradients(
        w_in=-np.outer(d.hidden[0], activations.u),
        w_hidden=tuple(-np.outer(d.hidden[p], upstream[p]) for p in range(1, model.n_hidden_layers)),
        w_out=-np.outer(d.output, activations.hidden[-1]),
        w_context=tuple(-np.outer(d.hidden[p], activations.context[p]) for p in range(model.n_hidden_layers)),
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    context_learning_rate: float = 0.01
    input_learning_rate: Optional[float] = None
    hidden_learning_rate: Optional[float] = None
    output_learning_rate: Optional[float] = None
    # rate in epoch e is rate / (1 + learning_rate_decay * (e - 1))
    learning_rate_decay: float = 0.1
    shuffle_segments: bool = True
    epochs: int = 200
    seed: int = 0
    early_stop_patience: int = 20
    hidden_size: int = DEFAULT_HIDDEN_SIZE
    init_bound: Optional[float] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if self.learning_rate_decay < 0:
            raise ConfigurationError(f"learning_rate_decay must be >= 0, got {self.learning_rate_decay}.")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}.")
        if self.context_learning_rate < 0:
            raise ConfigurationError(f"context_learning_rate must be >= 0, got {self.context_learning_rate}.")
        for name in ("input_learning_rate", "hidden_learning_rate", "output_learning_rate"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {value}.")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}.")
        if self.early_stop_patience < 0:
            raise ConfigurationError(f"early_stop_patience must be >= 0, got {self.early_stop_patience}.")
        if self.hidden_size < 1:
            raise ConfigurationError(f"hidden_size must be >= 1, got {self.hidden_size}.")
        if self.init_bound is not None and not self.init_bound > 0:
            raise ConfigurationError(f"init_bound must be > 0, got {self.init_bound}.")

    def rate(self, layer_class: str, epoch: int = 1) -> float:
        if layer_class == "context":
            base = self.context_learning_rate
        else:
            override = getattr(self, f"{layer_class}_learning_rate")
            base = self.learning_rate if override is None else override
        return base / (1.0 + self.learning_rate_decay * (epoch - 1))


@dataclass
class TrainTrace:
    losses: List[float] = field(default_factory=list)
    validation_mape: List[float] = field(default_factory=list)
    final_epoch: int = 0
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "losses": list(self.losses),
            "validation_mape": list(self.validation_mape),
            "final_epoch": self.final_epoch,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


def _check_inputs(model: EnnModel, data: SuperVectorSet) -> None:
    if data.input_size != model.input_size:
        raise ConfigurationError(
            f"Super-vectors have {data.input_size} inputs but the model expects {model.input_size}."
        )


def train_epoch(model: EnnModel, data: SuperVectorSet, cfg: TrainConfig, epoch: int = 1) -> float:
    """
    One pass over the set; returns the mean squared (normalized) error of the
    rows learned from. Rows run in temporal order within each segment and the
    context resets at every segment start, so segments are independent
    sequences; with `shuffle_segments` their order is drawn per epoch.
    """
    _check_inputs(model, data)
    eta_in, eta_hidden = cfg.rate("input", epoch), cfg.rate("hidden", epoch)
    eta_out, eta_ctx = cfg.rate("output", epoch), cfg.rate("context", epoch)
    learn = data.update_mask
    segments = data.segment_slices()
    if cfg.shuffle_segments:
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(segments))
        segments = [segments[i] for i in order]
    total, count = 0.0, 0

    for rows in segments:
        reset_context(model)
        for k in range(rows.start, rows.stop):
            y, act = forward(model, data.inputs[k])
            if learn[k]:
                err = float(data.targets[k] - y[0])
                loss = err * err
                if not np.isfinite(loss):
                    raise DivergenceError(k, loss)
                total += loss
                count += 1

                d = deltas(model, act, data.targets[k])
                nx.outer_update(model.w_out, eta_out, d.output, act.hidden[-1])
                for p in range(model.n_hidden_layers - 1, 0, -1):
                    nx.outer_update(model.w_hidden[p - 1], eta_hidden, d.hidden[p], act.hidden[p - 1])
                nx.outer_update(model.w_in, eta_in, d.hidden[0], act.u)
                for p in range(model.n_hidden_layers):
                    nx.outer_update(model.w_context[p], eta_ctx, d.hidden[p], act.context[p])
            step_context(model, act)

    return total / max(count, 1)


def _attach_metadata(model: EnnModel, data: SuperVectorSet) -> None:
    model.norm_stats = data.stats
    model.factor_order = data.factor_order
    model.window_length = data.window_length


def fit(
    model: EnnModel,
    train: SuperVectorSet,
    validation: Optional[SuperVectorSet],
    cfg: TrainConfig,
) -> TrainTrace:
    """
    Runs up to cfg.epochs epochs. With validation data and a non-zero patience,
    stops once validation MAPE has not improved for `patience` epochs and
    restores the weights of the best epoch.
    """
    _check_inputs(model, train)
    _attach_metadata(model, train)
    if validation is not None:
        _check_inputs(model, validation)
    trace = TrainTrace()
    watch = validation is not None and cfg.early_stop_patience > 0
    best_mape, best_weights, since_best = np.inf, None, 0

    for epoch in range(1, cfg.epochs + 1):
        loss = train_epoch(model, train, cfg, epoch)
        trace.losses.append(loss)
        trace.final_epoch = epoch
        context = {"epoch": epoch, "loss": loss}

        if validation is not None:
            val_mape = mape(predict_pairs(model, validation))
            trace.validation_mape.append(val_mape)
            context["validation_mape"] = val_mape
        slog.debug("Epoch finished.", context=context)

        if not watch:
            continue
        if val_mape < best_mape:
            best_mape, since_best = val_mape, 0
            best_weights = [w.copy() for w in model.weights()]
            trace.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                trace.stopped_early = True
                break

    if watch and best_weights is not None:
        model.set_weights(best_weights)
    reset_context(model)
    return trace


# === Inference ===


def _check_compatible(model: EnnModel, data: SuperVectorSet) -> None:
    _check_inputs(model, data)
    if model.norm_stats is None:
        raise ConfigurationError("Model carries no normalization statistics; train or load it first.")
    if model.norm_stats != data.stats:
        raise ConfigurationError("Super-vectors were normalized with statistics different from the model's.")
    if model.window_length is not None and model.window_length != data.window_length:
        raise ConfigurationError(
            f"Model was trained on {model.window_length}-hour windows, data uses {data.window_length}."
        )
    if model.factor_order and tuple(model.factor_order) != data.factor_order:
        raise ConfigurationError(
            f"Model factors {list(model.factor_order)} differ from data factors {list(data.factor_order)}."
        )


def _predict_normalized(model: EnnModel, data: SuperVectorSet) -> np.ndarray:
    starts = data.segment_starts
    out = np.empty(len(data))
    reset_context(model)
    for k in range(len(data)):
        if starts[k]:
            reset_context(model)
        y, act = forward(model, data.inputs[k])
        out[k] = y[0]
        step_context(model, act)
    reset_context(model)
    return out


def predict_pairs(model: EnnModel, data: SuperVectorSet) -> PredictionPairs:
    _check_compatible(model, data)
    predicted = denormalize(_predict_normalized(model, data), data.stats.channel("demand"))
    return PredictionPairs(
        actual=data.denormalized_targets(),
        predicted=predicted,
        timestamps=np.array(data.target_hours),
    )


def predict_series(model: EnnModel, data: SuperVectorSet) -> List[Tuple[np.datetime64, float]]:
    pairs = predict_pairs(model, data)
    return [(hour, float(mw)) for hour, mw in zip(pairs.timestamps, pairs.predicted)]


# === Persistence ===


def model_to_dict(model: EnnModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dims": {
            "n": model.n_hidden_layers,
            "r": model.input_size,
            "s": model.hidden_size,
            "m": model.output_size,
        },
        "weights": {
            "w_in": model.w_in.tolist(),
            "w_hidden": [w.tolist() for w in model.w_hidden],
            "w_out": model.w_out.tolist(),
            "w_context": [w.tolist() for w in model.w_context],
        },
        "norm_stats": model.norm_stats.to_dict() if model.norm_stats is not None else None,
        "factor_order": list(model.factor_order),
        "window_length": model.window_length,
    }


def _matrix(raw, shape: Tuple[int, int], name: str) -> nx.Matrix:
    try:
        m = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(f"Weight '{name}' is not a numeric matrix.")
    if m.shape != shape:
        raise FormatError(f"Weight '{name}' has shape {m.shape}, dims require {shape}.")
    return m


def model_from_dict(data: dict) -> EnnModel:
    if not isinstance(data, dict):
        raise FormatError("Model document must be a JSON object.")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported model format_version {version!r}; expected {FORMAT_VERSION}.")
    try:
        dims = data["dims"]
        n, r, s, m = (int(dims[k]) for k in ("n", "r", "s", "m"))
        weights = data["weights"]
        w_hidden = weights["w_hidden"]
        w_context = weights["w_context"]
        if len(w_hidden) != n - 1 or len(w_context) != n:
            raise FormatError(f"Expected {n - 1} hidden and {n} context matrices.")
        factor_order = tuple(data["factor_order"])
        unknown = [f for f in factor_order if f not in FACTOR_ORDER]
        if unknown:
            raise FormatError(f"Unknown factors in model: {unknown}.")
        stats = data["norm_stats"]
        window = data["window_length"]
        return EnnModel(
            w_in=_matrix(weights["w_in"], (s, r), "w_in"),
            w_hidden=[_matrix(w, (s, s), f"w_hidden[{i}]") for i, w in enumerate(w_hidden)],
            w_out=_matrix(weights["w_out"], (m, s), "w_out"),
            w_context=[_matrix(w, (s, s), f"w_context[{i}]") for i, w in enumerate(w_context)],
            context=[np.zeros(s) for _ in range(n)],
            norm_stats=NormalizationStats.from_dict(stats) if stats is not None else None,
            factor_order=factor_order,
            window_length=int(window) if window is not None else None,
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"Malformed model document: {type(exc).__name__}: {exc}")


def save_model(model: EnnModel, path: Union[str, Path]) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1), encoding="utf-8")


def load_model(path: Union[str, Path]) -> EnnModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return model_from_dict(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        slog.error("Model file is not readable JSON.", context={"path": path, "error": str(exc)})
        raise FormatError(f"Model file {path} is not valid UTF-8 JSON: {exc}")
    except FormatError as exc:
        slog.error("Model file rejected.", context={"path": path, "error": str(exc)})
        raise
