"""System identification over run collections.

The trajectory loss divides the double sum of squared residuals by the run
count only (not the per-run point count); per-point RMSE is carried alongside
in reports for interpretability. Fitting is two-phase: a fixed number of
full-batch Adam steps, then limited-memory quasi-Newton with a strong-Wolfe
line search until the relative loss change is below tolerance.

Runs are augmented with time-shifted copies (same grid; samples shifted past
a record boundary hold the boundary value) and the 4-train/3-test
shuffle-split protocol repeats the fit over independent random partitions.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataio, nn, optim
from .dataio import ExperimentRun
from .gradients import LossSpec, loss_and_gradient, pack_params, sysid_loss_terms, unpack_params
from .model import LumpedModelParams

__all__ = [
    "AugmentationConfig",
    "QuasiNewtonConfig",
    "TrainConfig",
    "FitReportRow",
    "FitReport",
    "mse_loss",
    "per_point_rmse",
    "augment_time_shift",
    "shuffle_split",
    "fit",
    "evaluate",
    "run_protocol",
    "write_report_csv",
    "read_report_csv",
    "render_report_table",
    "write_history_csv",
]


@dataclass(frozen=True)
class QuasiNewtonConfig:
    memory: int = 10
    rel_loss_tol: float = 1e-8
    max_iters: int = 500


@dataclass(frozen=True)
class AugmentationConfig:
    copies_per_run: int = 3
    max_shift_s: float = 20.0


@dataclass(frozen=True)
class TrainConfig:
    adam_epochs: int = 200
    adam_lr: float = 0.001
    quasi_newton: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    dt_resample: float = 1.0
    substeps: int = 2
    init_capacitance: float = 8.0

    def __post_init__(self):
        if self.adam_epochs < 0 or self.adam_lr <= 0:
            raise ValueError("adam_epochs must be >= 0 and adam_lr > 0")
        if self.dt_resample <= 0 or self.substeps < 1 or self.init_capacitance <= 0:
            raise ValueError("dt_resample, substeps, init_capacitance must be positive")

    def loss_spec(self) -> LossSpec:
        return LossSpec(substeps=self.substeps)


@dataclass
class FitReportRow:
    trial: int
    train_loss: float
    test_loss: float
    capacitance: float
    train_rmse: float
    test_rmse: float


@dataclass
class FitReport:
    rows: list[FitReportRow]
    models: list[LumpedModelParams] = field(default_factory=list)
    histories: list[list] = field(default_factory=list)

    @property
    def capacitances(self) -> np.ndarray:
        return np.array([r.capacitance for r in self.rows])


def mse_loss(params: LumpedModelParams, runs, spec: LossSpec | None = None) -> float:
    """Sum of squared collocation residuals over all runs, divided by the
    number of runs. Predictions come from the fixed-step solve with each
    run's recorded power and T_init = the run's first temperature sample."""
    return sysid_loss_terms(params, runs, spec)[0]


def per_point_rmse(params: LumpedModelParams, runs, spec: LossSpec | None = None) -> float:
    _, total_sq, n_pts = sysid_loss_terms(params, runs, spec)
    return float(np.sqrt(total_sq / n_pts))


def augment_time_shift(run: ExperimentRun, shifts) -> list[ExperimentRun]:
    """The run plus one copy per shift, both traces translated together.

    Shifts are snapped to whole samples; sample j of a copy shifted by k
    samples reads original sample j-k, clipped to the record boundary.
    """
    out = [run]
    n = run.n_points
    for s_seconds in np.atleast_1d(shifts):
        k = int(round(float(s_seconds) / run.grid.dt))
        src = np.clip(np.arange(n) - k, 0, n - 1)
        out.append(ExperimentRun(
            id=f"{run.id}+shift{k:+d}",
            grid=run.grid,
            temperatures=run.temperatures[src],
            powers=run.powers[src],
        ))
    return out


def shuffle_split(runs, n_trials: int = 10, n_train: int = 4, seed: int = 0):
    """Random disjoint/exhaustive train-test partitions, deterministic per seed."""
    if not 0 < n_train < len(runs):
        raise ValueError("n_train must be strictly between 0 and the run count")
    rng = np.random.default_rng([seed, 911])
    splits = []
    for _ in range(n_trials):
        perm = rng.permutation(len(runs))
        train = [runs[i] for i in perm[:n_train]]
        test = [runs[i] for i in perm[n_train:]]
        splits.append((train, test))
    return splits


def _resample_if_needed(run: ExperimentRun, dt: float) -> ExperimentRun:
    if abs(run.grid.dt - dt) <= 1e-12 * dt:
        return run
    return dataio.resample(dataio.run_to_record(run), dt)


def fit(train_runs, config: TrainConfig,
        template: LumpedModelParams | None = None):
    """Two-phase fit; returns (best parameters, [(phase, iteration, loss), ...]).

    Raises DivergedFit if an accepted iterate has a non-finite loss.
    """
    if not train_runs:
        raise ValueError("need at least one training run")
    runs = [_resample_if_needed(r, config.dt_resample) for r in train_runs]

    aug = config.augmentation
    shift_rng = np.random.default_rng([config.seed, 101])
    data = []
    for run in runs:
        shifts = shift_rng.uniform(-aug.max_shift_s, aug.max_shift_s, size=aug.copies_per_run)
        data.extend(augment_time_shift(run, shifts))

    if template is None:
        net = nn.init_glorot((2, 10, 1), seed=config.seed, output_scale=4000.0)
        template = LumpedModelParams(heat_net=net, log_capacitance=0.0)
    template = replace(template, log_capacitance=float(np.log(config.init_capacitance)))

    spec = config.loss_spec()

    def objective(x):
        return loss_and_gradient(unpack_params(x, template), data, spec)

    def batch_objective(run):
        return lambda x: loss_and_gradient(unpack_params(x, template), [run], spec)

    # Adam epochs are run-level minibatch epochs (one update per augmented
    # run); full-batch Adam at this learning rate cannot move the output
    # layer far enough to matter within the epoch budget.
    history = []
    x0 = pack_params(template)
    adam_res = optim.adam_minibatch([batch_objective(r) for r in data], x0,
                                    n_epochs=config.adam_epochs, lr=config.adam_lr)
    history.extend(("adam", it, loss) for it, loss in adam_res.history)

    adam_loss, _ = objective(adam_res.x)
    qn = config.quasi_newton
    x, qn_loss, qn_history = _quasi_newton_phase(objective, adam_res.x, qn)
    history.extend(("lbfgs", it, loss) for it, loss in qn_history)

    best = x if qn_loss <= adam_loss else adam_res.x
    return unpack_params(best, template), history


def _quasi_newton_phase(objective, x0, qn: QuasiNewtonConfig):
    """Strong-Wolfe L-BFGS with diagonal rescaling, within qn.max_iters total.

    A short unscaled warmup moves off the Adam endpoint (where the
    curvature estimate is unreliable), then preconditioned segments run
    with the diagonal re-estimated at each restart until the budget is
    spent or a restart no longer improves the loss. Accepted losses are
    non-increasing across the whole phase.
    """
    warmup = min(100, qn.max_iters // 2)
    res = optim.lbfgs(objective, x0, memory=qn.memory,
                      rel_loss_tol=qn.rel_loss_tol, max_iters=warmup)
    history = list(res.history)
    used = max(res.n_iters, 1)
    x, loss = res.x, res.loss
    while used < qn.max_iters:
        res = optim.lbfgs_preconditioned(objective, x, memory=qn.memory,
                                         rel_loss_tol=qn.rel_loss_tol,
                                         max_iters=qn.max_iters - used)
        history.extend((used + it, seg_loss) for it, seg_loss in res.history[1:])
        used += max(res.n_iters, 1)
        improved = loss - res.loss > qn.rel_loss_tol * max(abs(loss), 1e-300)
        x, loss = res.x, res.loss
        if res.converged and not improved:
            break
    return x, loss, history


def evaluate(params: LumpedModelParams, test_runs, spec: LossSpec | None = None):
    """Held-out loss, per-point RMSE, and the fitted capacitance."""
    loss, total_sq, n_pts = sysid_loss_terms(params, test_runs, spec)
    return loss, float(np.sqrt(total_sq / n_pts)), params.capacitance


def _trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def _run_trial(args):
    trial, train, test, config = args
    trial_config = replace(config, seed=_trial_seed(config.seed, trial))
    params, history = fit(train, trial_config)
    spec = config.loss_spec()
    train_loss, train_sq, train_n = sysid_loss_terms(params, train, spec)
    test_loss, test_rmse, cap = evaluate(params, test, spec)
    row = FitReportRow(
        trial=trial,
        train_loss=train_loss,
        test_loss=test_loss,
        capacitance=cap,
        train_rmse=float(np.sqrt(train_sq / train_n)),
        test_rmse=test_rmse,
    )
    return row, params, history


def run_protocol(runs, config: TrainConfig, n_trials: int = 10, n_train: int = 4,
                 n_jobs: int = 1) -> FitReport:
    """Shuffle-split protocol: n_trials independent fits on random partitions.

    Results are independent of n_jobs; trials are seeded from
    (config.seed, trial index).
    """
    runs = [_resample_if_needed(r, config.dt_resample) for r in runs]
    splits = shuffle_split(runs, n_trials=n_trials, n_train=n_train, seed=config.seed)
    payloads = [(t + 1, train, test, config) for t, (train, test) in enumerate(splits)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_trial, payloads))
    else:
        results = [_run_trial(p) for p in payloads]
    report = FitReport(rows=[], models=[], histories=[])
    for row, params, history in results:
        report.rows.append(row)
        report.models.append(params)
        report.histories.append(history)
    return report


def write_report_csv(report: FitReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "train_loss", "test_loss", "capacitance"])
        for r in report.rows:
            writer.writerow([r.trial, repr(r.train_loss), repr(r.test_loss), repr(r.capacitance)])


def read_report_csv(path) -> FitReport:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(FitReportRow(
                trial=int(rec["trial"]),
                train_loss=float(rec["train_loss"]),
                test_loss=float(rec["test_loss"]),
                capacitance=float(rec["capacitance"]),
                train_rmse=float(rec.get("train_rmse") or "nan"),
                test_rmse=float(rec.get("test_rmse") or "nan"),
            ))
    return FitReport(rows=rows)


def render_report_table(report: FitReport) -> str:
    """Summary table: trials as columns, rows Trial No. / Train / Test / C,
    minimum train and test entries marked in bold."""
    rows = sorted(report.rows, key=lambda r: r.trial)
    best_train = min(r.train_loss for r in rows)
    best_test = min(r.test_loss for r in rows)

    def fmt(value, best):
        text = f"{value:.4g}"
        return f"**{text}**" if value == best else text

    cells = [
        ["Trial No."] + [str(r.trial) for r in rows],
        ["Train"] + [fmt(r.train_loss, best_train) for r in rows],
        ["Test"] + [fmt(r.test_loss, best_test) for r in rows],
        ["C"] + [f"{r.capacitance:.4g}" for r in rows],
    ]
    widths = [max(len(line[i]) for line in cells) for i in range(len(cells[0]))]
    lines = []
    for j, line in enumerate(cells):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "iteration", "loss"])
        for phase, it, loss in history:
            writer.writerow([phase, it, repr(float(loss))])
