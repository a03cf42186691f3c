"""Metrics and experiment protocols: RMSE, stability, repeats, density sweeps."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SplitSpec, center, restrict_users, split
from .errors import DivergenceError, EmptyDatasetError, EmptyResultError
from .mlsd import INIT_SCALE, SimilarityLayers
from .nbm import predict_many
from .training import DEFAULT_K, get_profile, make_baseline, train

logger = logging.getLogger(__name__)

# Slack on top of the equality tolerance so that e.g. 0.9001 vs 0.9 counts
# as equal despite binary rounding of the difference.
_TOL_SLACK = 1e-12


def _similarity_of(model):
    if isinstance(model, SimilarityLayers):
        return model.effective_matrix(), model.variant
    return model.values, "linear"


def predict(model, part, view, k=DEFAULT_K, jobs=1):
    sim, variant = _similarity_of(model)
    return predict_many(sim, view, part.users, part.items, k, variant, jobs)


def rmse(model, test, view, k=DEFAULT_K, jobs=1):
    """Root mean squared error on the original rating scale."""
    if len(test) == 0:
        raise EmptyDatasetError("cannot compute RMSE on an empty partition")
    pred = predict(model, test, view, k, jobs)
    return float(np.sqrt(np.mean((pred.ratings - test.ratings) ** 2)))


def inc_percent(rmse_value, baseline_rmse):
    return 100.0 * (baseline_rmse - rmse_value) / baseline_rmse


@dataclass(frozen=True)
class Stability:
    """Convergence epoch, plateau length and the two table flags.

    ``censored``: the best plateau runs to the end of the budget, so the
    plateau length is a lower bound. ``converged`` is False when such an
    open-ended plateau is shorter than the persistence threshold.
    """

    epsilon: int
    zeta: int
    censored: bool
    converged: bool

    def __str__(self):
        if not self.converged:
            return "*"
        return f"eps={self.epsilon} zeta={'>=' if self.censored else ''}{self.zeta}"


def stability(history, tol=1e-4, budget=200, min_persist=10):
    """Stability of a per-epoch RMSE curve (epoch 1 first).

    Two RMSE values are equal when they differ by at most ``tol``. The best
    value is the curve minimum; epsilon is the first epoch equal to it and
    zeta the number of consecutive epochs from there that stay equal. A
    plateau reaching the end of the budget is censored and only counts as
    converged if it lasted ``min_persist`` epochs.
    """
    h = np.asarray(history, dtype=np.float64)[:budget]
    if h.size == 0:
        raise EmptyDatasetError("stability needs a nonempty history")
    best = h.min()
    equal = np.abs(h - best) <= tol + _TOL_SLACK
    start = int(np.argmax(equal))
    stop = start
    while stop < h.size and equal[stop]:
        stop += 1
    zeta = stop - start
    censored = stop == h.size
    converged = (not censored) or zeta >= min_persist
    return Stability(start + 1, zeta, censored, converged)


@dataclass
class RunResult:
    """One split -> train -> evaluate run."""

    rmse: float
    valid_rmse: float
    history: object = None
    best_epoch: int | None = None
    raw_min: float = float("nan")
    raw_max: float = float("nan")
    rating_min: float = float("nan")
    rating_max: float = float("nan")
    n_clamped: int = 0
    model: object = field(default=None, repr=False)


def run_once(profile_name, parts, seed=0, epochs=None, k=DEFAULT_K, view=None,
             keep_model=False, init_scale=INIT_SCALE, **overrides):
    """Build, (train) and evaluate one model on a ready split."""
    train_ds, valid_ds, test_ds = parts
    profile = get_profile(profile_name)
    if view is None:
        view = center(train_ds)
    model = make_baseline(profile, train_ds, view, seed=seed, init_scale=init_scale)
    history = None
    best_epoch = None
    if profile.trainable:
        cfg = profile.train_config(epochs=epochs, seed=seed, eval_k=k, **overrides)
        model, history = train(model, parts, cfg, view)
        best_epoch = history.best_epoch
    pred = predict(model, test_ds, view, k)
    valid = rmse(model, valid_ds, view, k) if len(valid_ds) else float("nan")
    return RunResult(
        rmse=float(np.sqrt(np.mean((pred.ratings - test_ds.ratings) ** 2))),
        valid_rmse=valid,
        history=history,
        best_epoch=best_epoch,
        raw_min=float(pred.raw.min()),
        raw_max=float(pred.raw.max()),
        rating_min=float(pred.ratings.min()),
        rating_max=float(pred.ratings.max()),
        n_clamped=pred.n_clamped,
        model=model if keep_model else None,
    )


@dataclass
class EvalReport:
    model_kind: str
    rmse: float
    repeats: int
    per_repeat_rmse: list
    inc_percent: float | None = None
    baseline: str | None = None
    epsilon: int | None = None
    zeta: int | None = None
    censored: bool | None = None
    converged: bool | None = None
    failed: int = 0
    n_clamped: int = 0
    mean_history: list | None = None

    def to_dict(self):
        return asdict(self)

    @property
    def zeta_label(self):
        if self.zeta is None:
            return "-"
        if self.converged is False:
            return "*"
        return (">=" if self.censored else "") + str(self.zeta)


def repeat_seeds(base_seed, n_repeats, mode="splits"):
    """(split seed, training seed) per repeat.

    ``splits``: a fresh split per repeat with a fixed training seed;
    ``seeds``: one split and a fresh training seed per repeat.
    """
    if mode == "splits":
        return [(base_seed + r, base_seed) for r in range(n_repeats)]
    if mode == "seeds":
        return [(base_seed, base_seed + r) for r in range(n_repeats)]
    raise ValueError(f"unknown repeat mode {mode!r}")


def repeat_protocol(profile_name, dataset, n_repeats=5, base_seed=0, fracs=(0.85, 0.05, 0.10),
                    epochs=None, k=DEFAULT_K, mode="splits", budget=200, **overrides):
    """Mean test RMSE over ``n_repeats`` independent runs.

    Stability is measured on the test-RMSE curve averaged over the
    successful repeats.
    """
    if n_repeats < 1:
        raise ValueError("need at least one repeat")
    scores, curves, failed, clamped = [], [], 0, 0
    for split_seed, train_seed in repeat_seeds(base_seed, n_repeats, mode):
        parts = split(dataset, SplitSpec(*fracs, seed=split_seed))
        try:
            res = run_once(profile_name, parts, seed=train_seed, epochs=epochs, k=k, **overrides)
        except DivergenceError as exc:
            logger.warning("repeat (split %d, seed %d) diverged: %s", split_seed, train_seed, exc)
            scores.append(float("nan"))
            failed += 1
            continue
        scores.append(res.rmse)
        clamped += res.n_clamped
        if res.history is not None:
            curves.append(res.history.column("test_rmse"))
    ok = [s for s in scores if np.isfinite(s)]
    if not ok:
        raise EmptyResultError(f"every repeat of {profile_name} failed")
    report = EvalReport(get_profile(profile_name).name, float(np.mean(ok)), n_repeats, scores,
                        failed=failed, n_clamped=clamped)
    if curves:
        mean_curve = np.mean(np.array(curves), axis=0)
        st = stability(mean_curve, budget=budget)
        report.epsilon, report.zeta = st.epsilon, st.zeta
        report.censored, report.converged = st.censored, st.converged
        report.mean_history = mean_curve.tolist()
    return report


def attach_baseline(reports, baseline):
    """Fill INC% of every report against the report named ``baseline``."""
    base = {r.model_kind: r for r in reports}.get(baseline)
    if base is None:
        return reports
    for r in reports:
        r.baseline = baseline
        r.inc_percent = inc_percent(r.rmse, base.rmse)
    return reports


@dataclass
class DensitySlice:
    index: int
    users: int
    items: int
    ratings: int
    density: float
    mean_ratings_per_user: float
    reports: dict = field(default_factory=dict)


def density_slices(dataset, n_slices=10):
    """Equal-population user buckets ordered by per-user rating count.

    Returns one re-indexed dataset per bucket, sparsest users first.
    """
    counts = np.bincount(dataset.users, minlength=dataset.num_users)
    rated = np.flatnonzero(counts > 0)
    order = rated[np.argsort(counts[rated], kind="stable")]
    return [restrict_users(dataset, group) for group in np.array_split(order, n_slices)]


def density_sweep(dataset, profiles, n_slices=10, n_repeats=1, base_seed=0, epochs=None,
                  k=DEFAULT_K, min_users=50, fracs=(0.85, 0.05, 0.10), **overrides):
    """Evaluate each profile on user slices of increasing density."""
    out = []
    for idx, sub in enumerate(density_slices(dataset, n_slices)):
        if sub is None or sub.num_users < min_users:
            logger.warning("slice %d has %d users (< %d); skipped", idx,
                           0 if sub is None else sub.num_users, min_users)
            continue
        sl = DensitySlice(idx, sub.num_users, sub.num_items, len(sub), sub.density,
                          len(sub) / sub.num_users)
        for prof in profiles:
            sl.reports[get_profile(prof).name] = repeat_protocol(
                prof, sub, n_repeats, base_seed, fracs, epochs, k, **overrides)
        out.append(sl)
    return out


def format_table(reports, baseline=None):
    """Aligned text table with RMSE, INC% and stability columns."""
    if baseline is not None:
        attach_baseline(reports, baseline)
    head = f"{'model':<12} {'RMSE':>8} {'INC%':>7} {'eps':>5} {'zeta':>6} {'repeats':>7}"
    lines = [head, "-" * len(head)]
    for r in reports:
        inc = "-" if r.inc_percent is None else f"{r.inc_percent:.2f}"
        eps = "-" if r.epsilon is None or r.converged is False else str(r.epsilon)
        lines.append(f"{r.model_kind:<12} {r.rmse:>8.4f} {inc:>7} {eps:>5} "
                     f"{r.zeta_label:>6} {r.repeats:>7}")
    return "\n".join(lines) + "\n"


def write_reports(reports, json_path, text_path, baseline=None):
    if baseline is not None:
        attach_baseline(reports, baseline)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, allow_nan=True)
        fh.write("\n")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_table(reports))
