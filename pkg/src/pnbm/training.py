"""SGD training of similarity layers, baselines and model profiles."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, similarity
from .data import center
from .errors import ConfigError, DivergenceError
from .mlsd import INIT_SCALE, REG_FORMS, VARIANTS, SimilarityLayers
from .nbm import predict_many

logger = logging.getLogger(__name__)

DEFAULT_K = 200


@dataclass(frozen=True)
class TrainConfig:
    beta: float
    lambdas: tuple
    epochs: int = 200
    seed: int = 0
    variant: str = "linear"
    reg_form: str = "alg1"
    shuffle: bool = True
    neighbor_limit_train: int | None = None
    mu: float = 0.0
    eval_k: int | None = DEFAULT_K

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        if not self.beta >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.beta}")
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigError("regularizers must be nonnegative")
        if self.epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.reg_form not in REG_FORMS:
            raise ConfigError(f"unknown reg_form {self.reg_form!r}")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")


@dataclass
class EpochRecord:
    epoch: int
    train_objective: float
    validation_rmse: float
    test_rmse: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def best_epoch(self):
        """1-based epoch with the lowest validation RMSE (first on ties)."""
        if not self.records:
            return None
        vals = [r.validation_rmse for r in self.records]
        return self.records[int(np.argmin(vals))].epoch

    def column(self, name):
        return [getattr(r, name) for r in self.records]


@dataclass
class EpochStats:
    running_objective: float
    updates: int
    skipped: int


@dataclass(frozen=True)
class Profile:
    """A named model recipe: structure plus its training operating point."""

    name: str
    trainable: bool
    omegas: tuple = ()
    phi: tuple = ()
    beta: float = 0.0
    lambdas: tuple = ()
    variant: str = "linear"
    mu: float = 0.0
    static_kind: str | None = None
    # Pearson constraints carry negative entries, and lambda * Omega * Gamma
    # then grows Gamma instead of shrinking it; profiles use Omega^2 * Gamma.
    reg_form: str = "eq12"

    def train_config(self, **overrides):
        if not self.trainable:
            raise ConfigError(f"profile {self.name!r} is not trainable")
        cfg = dict(beta=self.beta, lambdas=self.lambdas, variant=self.variant, mu=self.mu,
                   reg_form=self.reg_form)
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig(**cfg)


PROFILES = {
    "regsim": Profile("regsim", True, ("ones",), (1.0,), 0.1, (0.01,)),
    "slim": Profile("slim", True, ("ones",), (1.0,), 0.4, (0.02,), mu=0.005),
    "pnbm": Profile("pnbm", True, ("ones",), (1.0,), 0.2, (0.05,)),
    "mpnbm": Profile("mpnbm", True, ("ones", "pearson", "jaccard"), (3.0, 1.0, 1.0),
                     0.2, (0.05, 0.05, 0.05)),
    "tanh-mpnbm": Profile("tanh-mpnbm", True, ("ones", "pearson", "jaccard"), (3.0, 1.0, 1.0),
                          0.4, (0.05, 0.05, 0.05), variant="tanh"),
    "pcc": Profile("pcc", False, static_kind="pearson"),
    "cos": Profile("cos", False, static_kind="cosine"),
}
KINDS = tuple(PROFILES)


def get_profile(name):
    if isinstance(name, Profile):
        return name
    key = name.replace("_", "-")
    if key not in PROFILES:
        raise ConfigError(f"unknown model kind {name!r}; expected one of {KINDS}")
    return PROFILES[key]


def make_baseline(kind, train, view=None, seed=0, init_scale=INIT_SCALE):
    """Model for ``kind``: a static similarity matrix or fresh trainable layers.

    ``kind`` is a profile name or a :class:`Profile`.
    """
    profile = get_profile(kind)
    if view is None:
        view = center(train)
    if not profile.trainable:
        return similarity.build(profile.static_kind, train, view)
    omegas = [similarity.build(k, train, view) for k in profile.omegas]
    return SimilarityLayers.initialize(omegas, profile.phi, profile.variant, seed=seed,
                                       init_scale=init_scale)


def _values(layers_variant, view):
    if layers_variant == "tanh":
        return view.map_to_unit(view.user_values)
    return view.user_values


def _samples(view, variant):
    """Training samples (user, item, target) in CSR order."""
    users = np.repeat(np.arange(view.num_users, dtype=np.int64), np.diff(view.user_indptr))
    return users, view.user_items, _values(variant, view)


def objective(layers, view, lambdas, full_output=False):
    """Half squared training error over all observed ratings plus the penalty.

    Penalty: sum_t lambda_t * 0.5 * ||Omega_t o Gamma_t||^2. Predictions use
    the full neighborhood; an empty one predicts 0.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    users, items, targets = _samples(view, layers.variant)
    values = targets
    sim = layers.effective_matrix()
    z = np.empty(len(users))
    den = np.empty(len(users))
    _kernels.predict_batch(sim, view.user_indptr, view.user_items, values, users, items,
                           -1, z, den)
    pred = np.tanh(z) if layers.variant == "tanh" else z
    data = 0.5 * float(np.sum((targets - pred) ** 2))
    reg = float(_kernels.reg_term(layers.gamma, layers.omega, lambdas))
    if full_output:
        return data + reg, data, reg
    return data + reg


def slim_variant_objective(S, view, lambda_s, mu):
    """Single-layer objective under a Gaussian-Laplace prior on similarities.

    0.5 * sum (r - S_i R_u / |S_i| I_u)^2 + lambda_s/2 * ||S||^2 - lambda_s * mu * ||S||_1
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    m = S.shape[0]
    layers = SimilarityLayers(S[:, :, None], np.ones((m, m, 1)), [1.0])
    _, data, _ = objective(layers, view, [lambda_s], full_output=True)
    sq = float(np.sum(S * S))
    l1 = float(np.sum(np.abs(S)))
    return data + 0.5 * lambda_s * sq - lambda_s * mu * l1


def epoch_order(n, seed, epoch, shuffle=True):
    if not shuffle:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng([seed, epoch]).permutation(n).astype(np.int64)


def sgd_epoch(layers, view, config, epoch_seed=0, samples=None):
    """Visit every training rating once and update the layers in place.

    ``epoch_seed`` picks the shuffle; ``samples`` may carry precomputed
    (users, items, targets) arrays.
    """
    if len(config.lambdas) != layers.num_layers:
        raise ConfigError(f"{len(config.lambdas)} regularizers for {layers.num_layers} layers")
    if samples is None:
        samples = _samples(view, layers.variant)
    users, items, targets = samples
    order = epoch_order(len(users), config.seed, epoch_seed, config.shuffle)
    limit = -1 if config.neighbor_limit_train is None else int(config.neighbor_limit_train)
    status, step, half_sq, n_upd, n_skip = _kernels.sgd_epoch(
        order, users, items, targets, view.user_indptr, view.user_items, targets,
        layers.gamma, layers.omega, layers.phi, np.asarray(config.lambdas),
        float(config.beta),
        _kernels.REG_ALG1 if config.reg_form == "alg1" else _kernels.REG_EQ12,
        float(config.mu),
        _kernels.TANH if layers.variant == "tanh" else _kernels.LINEAR,
        limit,
    )
    if status != _kernels.OK:
        p = order[step]
        raise DivergenceError(
            f"non-finite parameter at epoch {epoch_seed}, sample {step} "
            f"(user {users[p]}, item {items[p]})",
            epoch=epoch_seed, sample=(int(users[p]), int(items[p])))
    return EpochStats(half_sq, n_upd, n_skip)


def evaluate_rmse(sim, part, view, k, variant):
    if len(part) == 0:
        return float("nan")
    pred = predict_many(sim, view, part.users, part.items, k, variant)
    return float(np.sqrt(np.mean((pred.ratings - part.ratings) ** 2)))


def train(layers, datasets, config, view=None, on_epoch=None):
    """Run ``config.epochs`` epochs; keep the layers with the best validation RMSE.

    ``datasets`` is (train, valid, test) from one split. Returns
    (best layers, history). On divergence the raised error carries the
    history so far.
    """
    train_ds, valid_ds, test_ds = datasets
    if len(valid_ds) == 0:
        raise ConfigError("training needs a nonempty validation set")
    if layers.variant != config.variant:
        layers.variant = config.variant
    if view is None:
        view = center(train_ds)
    samples = _samples(view, layers.variant)
    history = TrainHistory()
    best = None
    best_rmse = np.inf
    sim = np.empty((layers.num_items, layers.num_items))
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        try:
            sgd_epoch(layers, view, config, epoch, samples)
            obj = objective(layers, view, config.lambdas)
            if not np.isfinite(obj):
                raise DivergenceError(f"objective is {obj} after epoch {epoch}", epoch=epoch)
        except DivergenceError as exc:
            exc.history = history
            exc.epoch = epoch
            raise
        layers.effective_matrix(out=sim)
        v = evaluate_rmse(sim, valid_ds, view, config.eval_k, layers.variant)
        t = evaluate_rmse(sim, test_ds, view, config.eval_k, layers.variant)
        history.records.append(EpochRecord(epoch, obj, v, t, time.perf_counter() - t0))
        logger.info("epoch %d objective=%.6f valid=%.6f test=%.6f", epoch, obj, v, t)
        if v < best_rmse:
            best_rmse = v
            best = layers.copy()
        if on_epoch is not None:
            on_epoch(history.records[-1])
    return best, history

