"""TeNet assembly, SGD training, gradient checking and model persistence."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from tenet.datasets import SampleSet
from tenet.layers import ConvPoolLayer, L1OutputLayer, SigmoidLayer, TemporalEmbeddingLayer
from tenet.metrics import EPS, mre, mse
from tenet.numerics import SeededRng, as_vec, derive_seed

log = logging.getLogger(__name__)

# Hyperparameter candidates searched by default.
DEFAULT_GRID = {
    "d_f": (3, 5, 7),
    "n_f": (20, 30, 40, 60),
    "learning_rate": (0.01, 0.02),
    "d_te": (1, 2),
    "n3": (12, 16),
    "lam": (0.1, 0.01, 0.001),
}

TE_MODES = ("trainable", "frozen_identity")
MODEL_MAGIC = "tenet-model v1"

# stream tags for derive_seed
_INIT, _SHUFFLE = 1, 2


class TrainingDivergence(FloatingPointError):
    """Training produced a non-finite cost."""


@dataclass(frozen=True)
class TeNetConfig:
    d_prime: int = 28
    d_te: int = 1
    n_f: int = 20
    d_f: int = 5
    n3: int = 12
    lam: float = 0.001
    learning_rate: float = 0.01
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    te_mode: str = "trainable"
    te_init: str = "ones"
    denoise: str = "off"
    clamp_eps: float = 0.0
    shift_window: int = 0
    target_scale_mode: str = "max_abs"

    def __post_init__(self):
        if self.te_mode not in TE_MODES:
            raise ValueError(f"te_mode must be one of {TE_MODES}, got {self.te_mode!r}")
        if self.te_init not in ("ones", "identity"):
            raise ValueError(f"te_init must be 'ones' or 'identity', got {self.te_init!r}")
        if self.target_scale_mode not in ("max_abs", "none"):
            raise ValueError(f"unknown target_scale_mode {self.target_scale_mode!r}")
        if self.d_f > self.d_prime or self.d_f < 1:
            raise ValueError(f"filter length {self.d_f} must be in 1..d_prime={self.d_prime}")
        if self.lam < 0 or self.learning_rate < 0:
            raise ValueError("lambda and learning rate must be non-negative")
        if min(self.d_te, self.n_f, self.n3, self.epochs, self.patience, self.shift_window) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def pooled_len(self) -> int:
        return (self.d_prime - self.d_f + 1) // 2

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: type(f.default) for f in fields(cls)}


def param_count(config: TeNetConfig) -> int:
    """Number of weights and biases, counting masked embedding slots."""
    d, c = config.d_prime, config
    te = (2 * c.d_te + 1) * d + d
    conv = c.n_f * c.d_f + c.n_f
    sig = c.n_f * c.pooled_len * c.n3 + c.n3
    out = c.n3 + 1
    return te + conv + sig + out


@dataclass
class TrainTrace:
    cost: list = field(default_factory=list)
    val_mre: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_cost", "val_mre", "best"])
            for e, (c, m) in enumerate(zip(self.cost, self.val_mre)):
                w.writerow([e, repr(c), repr(m), int(e == self.best_epoch)])


class TeNetModel:
    """Temporal embedding -> conv/max-pool/tanh -> sigmoid -> l1 linear output.

    Inputs are z-scored per dimension and targets divided by ``y_scale``
    (both fitted on the training fold); :meth:`forward` and :meth:`predict`
    take and return data units.
    """

    def __init__(self, config: TeNetConfig):
        self.config = c = config
        rng = SeededRng(derive_seed(c.seed, _INIT))
        frozen = c.te_mode == "frozen_identity"
        self.te = TemporalEmbeddingLayer(
            c.d_prime, c.d_te, init="identity" if frozen else c.te_init, trainable=not frozen
        )
        self.conv = ConvPoolLayer(c.d_prime, c.n_f, c.d_f, rng)
        self.sig = SigmoidLayer(self.conv.out_len, c.n3, rng)
        self.out = L1OutputLayer(c.n3, c.lam, rng)
        self.x_mean = np.zeros(c.d_prime)
        self.x_std = np.ones(c.d_prime)
        self.y_scale = 1.0
        self.scaled = False

    # ------------------------------------------------------------ parameters

    @property
    def layers(self):
        return {"te": self.te, "conv": self.conv, "sig": self.sig, "out": self.out}

    def parameters(self, trainable_only=False) -> dict:
        """Live parameter arrays keyed ``layer.name``."""
        out = {}
        for lname, layer in self.layers.items():
            if trainable_only and lname == "te" and not self.te.trainable:
                continue
            for pname, arr in layer.params.items():
                out[f"{lname}.{pname}"] = arr
        return out

    def get_state(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_state(self, state: dict):
        for k, v in self.parameters().items():
            v[...] = state[k]

    # --------------------------------------------------------------- scaling

    def fit_scaling(self, train: SampleSet):
        self.x_mean = train.x.mean(axis=0)
        std = train.x.std(axis=0)
        self.x_std = np.where(std > EPS, std, 1.0)
        if self.config.target_scale_mode == "max_abs":
            m = float(np.max(np.abs(train.y))) if len(train) else 0.0
            self.y_scale = m if m > EPS else 1.0
        else:
            self.y_scale = 1.0
        self.scaled = True

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    # --------------------------------------------------------------- forward

    def forward_std(self, xs) -> float:
        """Prediction in scaled target units for an already standardized input."""
        a2 = self.te.forward(xs)
        a3 = self.conv.forward(a2)
        a4 = self.sig.forward(a3)
        return self.out.forward(a4)

    def forward(self, x) -> float:
        if not self.scaled:
            raise RuntimeError("model scaling not set; call fit_scaling first")
        x = as_vec(x)
        if x.size != self.config.d_prime:
            raise ValueError(f"expected input length {self.config.d_prime}, got {x.size}")
        return self.forward_std(self.standardize(x)) * self.y_scale

    def forward_batch_std(self, XS) -> np.ndarray:
        a2 = self.te.forward_batch(XS)
        a3 = self.conv.forward_batch(a2)
        a4 = self.sig.forward_batch(a3)
        return self.out.forward_batch(a4)

    def predict(self, X) -> np.ndarray:
        """Vectorised :meth:`forward` over the rows of ``X``."""
        if not self.scaled:
            raise RuntimeError("model scaling not set; call fit_scaling first")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.config.d_prime:
            raise ValueError(f"expected input length {self.config.d_prime}, got {X.shape[1]}")
        return self.forward_batch_std(self.standardize(X)) * self.y_scale

    def batch_cost_std(self, XS, ys) -> float:
        """Mean per-sample cost J over standardized inputs and scaled targets."""
        err = self.forward_batch_std(XS) - ys
        return float(np.mean(0.5 * err**2) + self.out.lam * np.abs(self.out.params["W"]).sum())

    # -------------------------------------------------------------- backward

    def loss_and_grads(self, xs, ys: float) -> tuple[float, dict]:
        """Cost J and its gradient for one standardized sample (scaled target)."""
        a2 = self.te.forward(xs)
        a3 = self.conv.forward(a2)
        a4 = self.sig.forward(a3)
        y_hat = self.out.forward(a4)
        cost = self.out.cost(y_hat, ys)
        g_out, d4 = self.out.backward(a4, ys)
        g_sig, d3 = self.sig.backward(a3, d4)
        g_conv, d2 = self.conv.backward(a2, d3)
        grads = {f"out.{k}": v for k, v in g_out.items()}
        grads.update({f"sig.{k}": v for k, v in g_sig.items()})
        grads.update({f"conv.{k}": v for k, v in g_conv.items()})
        if self.te.trainable:
            g_te, _ = self.te.backward(xs, d2)
            grads.update({f"te.{k}": v for k, v in g_te.items()})
        return cost, grads

    def cost_std(self, xs, ys: float) -> float:
        return self.out.cost(self.forward_std(xs), ys)

    def sgd_step(self, xs, ys: float, lr: float) -> float:
        cost, grads = self.loss_and_grads(xs, ys)
        if not np.isfinite(cost):
            raise TrainingDivergence(f"non-finite training cost {cost}")
        for name, p in self.parameters(trainable_only=True).items():
            p -= lr * grads[name]
        return cost


# ------------------------------------------------------------------ training


def sgd_train(model: TeNetModel, train: SampleSet, val: SampleSet, progress=None) -> TrainTrace:
    """Per-sample SGD with shuffling, early stopping on validation MRE.

    The model ends up holding the parameters of its best validation epoch.
    """
    c = model.config
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.d != c.d_prime or (len(val) and val.d != c.d_prime):
        raise ValueError(f"samples have length {train.d}, model expects {c.d_prime}")
    model.fit_scaling(train)
    xs_train = model.standardize(train.x)
    ys_train = train.y / model.y_scale
    rng = SeededRng(derive_seed(c.seed, _SHUFFLE))
    trace = TrainTrace()
    best_score, best_state, stale = np.inf, model.get_state(), 0

    for epoch in range(c.epochs):
        for i in rng.permutation(len(train)):
            model.sgd_step(xs_train[i], ys_train[i], c.learning_rate)
        cost = model.batch_cost_std(xs_train, ys_train)
        if not np.isfinite(cost):
            raise TrainingDivergence(f"non-finite training cost at epoch {epoch}")
        score = _selection_score(model, val if len(val) else train)
        trace.cost.append(cost)
        trace.val_mre.append(score)
        if progress is not None:
            progress(epoch, cost, score)
        if score < best_score:
            best_score, best_state, stale = score, model.get_state(), 0
            trace.best_epoch = epoch
        else:
            stale += 1
            if stale >= c.patience:
                break
    model.set_state(best_state)
    return trace


def _selection_score(model: TeNetModel, samples: SampleSet) -> float:
    preds = model.predict(samples.x)
    if np.any(np.abs(samples.y) > EPS):
        return mre(preds, samples.y)
    return mse(preds, samples.y)


# ------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_err: dict
    tolerance: float
    seeds: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def relative_error(analytic, numeric, floor=1e-8) -> float:
    """Largest deviation scaled by the larger of the two gradients' magnitudes."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
    return float(np.max(np.abs(a - n), initial=0.0) / scale)


def numeric_grad(model: TeNetModel, xs, ys, name: str, eps=1e-5) -> np.ndarray:
    p = model.parameters()[name]
    g = np.zeros_like(p)
    flat, gflat = p.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        jp = model.cost_std(xs, ys)
        flat[i] = old - eps
        jm = model.cost_std(xs, ys)
        flat[i] = old
        gflat[i] = (jp - jm) / (2 * eps)
    return g


def random_instance(config: TeNetConfig, seed: int):
    """Model with perturbed embedding/biases plus a random input and target."""
    model = TeNetModel(replace(config, seed=seed))
    rng = SeededRng(derive_seed(seed, 99))
    te = model.te.params
    te["w"] += model.te.mask * rng.normal(te["w"].shape, 0.3)
    te["b"] += rng.normal(config.d_prime, 0.1)
    model.conv.params["b"] += rng.normal(config.n_f, 0.1)
    model.sig.params["b"] += rng.normal(config.n3, 0.1)
    model.out.params["b"] += rng.normal(1, 0.1)
    return model, rng.normal(config.d_prime), float(rng.normal())


def grad_check(
    config: TeNetConfig | None = None, tolerance: float = 1e-4, seeds=range(20), eps: float = 1e-5, grad_fn=None
) -> GradCheckReport:
    """Compare analytic and central-difference gradients over several seeds.

    ``grad_fn(model, xs, ys) -> (cost, grads)`` replaces the analytic path,
    which lets tests confirm that a broken backward pass is caught.
    """
    config = config or TeNetConfig(d_prime=8, d_te=1, n_f=2, d_f=3, n3=3, lam=0.0)
    grad_fn = grad_fn or (lambda m, x, y: m.loss_and_grads(x, y))
    worst: dict[str, float] = {}
    seeds = list(seeds)
    for seed in seeds:
        model, xs, ys = random_instance(config, seed)
        _, grads = grad_fn(model, xs, ys)
        for name in model.parameters(trainable_only=True):
            num = numeric_grad(model, xs, ys, name, eps)
            err = relative_error(grads[name], num)
            worst[name] = max(worst.get(name, 0.0), err)
    return GradCheckReport(worst, tolerance, len(seeds))


# ---------------------------------------------------------------- persistence


def save_model(model: TeNetModel, path):
    c = model.config
    lines = [MODEL_MAGIC, "config " + " ".join(f"{k}={v}" for k, v in c.as_dict().items())]
    groups = dict(model.parameters())
    groups["scale.x_mean"] = model.x_mean
    groups["scale.x_std"] = model.x_std
    groups["scale.y_scale"] = np.array([model.y_scale])
    for name, arr in groups.items():
        shape = "x".join(str(s) for s in np.shape(arr))
        vals = " ".join(repr(float(v)) for v in np.ravel(arr))
        lines.append(f"{name} {shape} {vals}".rstrip())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_config_items(items: dict) -> TeNetConfig:
    types = TeNetConfig.field_types()
    kwargs = {}
    for k, v in items.items():
        if k not in types:
            raise KeyError(f"unknown config key {k!r}")
        kwargs[k] = types[k](v)
    return TeNetConfig(**kwargs)


def load_model(path) -> TeNetModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC!r} file")
    if not lines[1].startswith("config"):
        raise ValueError(f"{path}: missing config line")
    items = dict(kv.split("=", 1) for kv in lines[1].split()[1:])
    model = TeNetModel(parse_config_items(items))
    params = model.parameters()
    for line in lines[2:]:
        name, shape, *vals = line.split(" ")
        dims = tuple(int(s) for s in shape.split("x") if s)
        arr = np.array([float(v) for v in vals]).reshape(dims)
        if name == "scale.x_mean":
            model.x_mean = arr
        elif name == "scale.x_std":
            model.x_std = arr
        elif name == "scale.y_scale":
            model.y_scale = float(arr[0])
        elif name in params:
            if params[name].shape != arr.shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {params[name].shape}")
            params[name][...] = arr
        else:
            raise ValueError(f"{path}: unknown parameter group {name!r}")
    model.scaled = True
    return model


def export_snippets(model: TeNetModel, path):
    """Convolution filters as CSV, one row per filter."""
    filters = model.conv.params["filters"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filter"] + [f"w{p}" for p in range(1, filters.shape[1] + 1)])
        for i, row in enumerate(filters):
            w.writerow([i] + [repr(float(v)) for v in row])


def clone(model: TeNetModel) -> TeNetModel:
    return copy.deepcopy(model)
