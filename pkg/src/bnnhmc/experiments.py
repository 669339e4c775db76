"""Experiment pipelines behind the command line.

Each run owns one directory::

    <out>/config.json      resolved configuration (all defaults filled in)
    <out>/manifest.json    status, failing stage, seed, code version, wall clock
    <out>/stores/*.bnns    sample stores with JSON sidecars
    <out>/metrics.csv      one row per (method, dataset, seed)
    <out>/...              kind-specific CSV / JSON artifacts

Metric files contain no timestamps, so rerunning a config with the same
seed reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import logging
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _rng, approx, diagnostics, evaluate, hmc, subspace
from .config import SWEEP_KIND_AXIS, ExperimentConfig, config_from_dict, serialize_config
from .data import (
    DigitsConfig, SplitSpec, SyntheticRegressionConfig, corrupt_gaussian, gen_synthetic_regression,
    load_digits_split, load_uci, read_vectorized,
)
from .model import Dataset, ModelSpec, log_likelihood
from .posterior import Posterior
from .prior import make_prior
from .store import SampleStore

logger = logging.getLogger(__name__)

class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it for the manifest."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class Task:
    """Training and evaluation data plus what is needed to report in original units."""

    train: Dataset
    test: Dataset
    y_scale: float = 1.0
    truth: object = None
    grid_x: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.train.targets.dtype, np.integer)


def load_task(cfg: ExperimentConfig) -> Task:
    d = cfg.data
    if d.source == "synthetic":
        s = d.synthetic
        syn = SyntheticRegressionConfig(
            intervals=tuple(tuple(iv) for iv in s.intervals),
            points_per_interval=s.points_per_interval, teacher_widths=tuple(s.teacher_widths),
            teacher_std=s.teacher_std, noise_std=s.noise_std, activation=s.activation,
            seed=s.seed)
        train, truth = gen_synthetic_regression(syn)
        grid = np.linspace(s.grid_lo, s.grid_hi, s.grid_points)
        fmap = syn.feature_map()
        test = Dataset(fmap(grid), truth(grid), "synthetic_grid", {"x": grid})
        task = Task(train, test, truth=truth, grid_x=grid, info={"synthetic": syn.to_dict()})
    elif d.source == "uci":
        split = SplitSpec(d.train_fraction, d.split_seed, d.split_index)
        train, test = load_uci(d.path, split, d.delimiter)
        st = train.meta["standardizer"]
        task = Task(train, test, y_scale=st.y_std, info={"split": train.meta["split"],
                                                         "standardized": True})
    elif d.source == "vectorized":
        train, test = read_vectorized(d.path), read_vectorized(d.test_path)
        task = Task(train, test, info={"num_classes": train.meta["num_classes"]})
    else:
        train, test = load_digits_split(DigitsConfig(tuple(d.digits_classes), d.digits_n_train,
                                                     d.split_seed))
        task = Task(train, test, info={"num_classes": train.meta["num_classes"]})
    if d.noise_sigma > 0:
        task.test = corrupt_gaussian(task.test, d.noise_sigma, [cfg.seed, 7919])
        task.info["noise_sigma"] = d.noise_sigma
    return task


def build_model(cfg: ExperimentConfig, task: Task) -> ModelSpec:
    m = cfg.model
    num_classes = m.num_classes
    if m.head == "classification" and num_classes is None:
        num_classes = int(task.info.get("num_classes", int(task.train.targets.max()) + 1))
    return ModelSpec(task.train.inputs.shape[1], tuple(m.hidden_widths), m.activation, m.head,
                     num_classes or 2, m.noise_std)


def build_prior(cfg: ExperimentConfig):
    p = cfg.prior
    if p.family == "mog":
        return make_prior("mog", variances=tuple(p.variances), weights=tuple(p.weights))
    return make_prior(p.family, variance=p.variance)


def train_config(cfg: ExperimentConfig, seed: int) -> approx.TrainConfig:
    t = cfg.train
    return approx.TrainConfig(
        step_size=t.step_size, n_epochs=t.n_epochs, batch_size=t.batch_size, schedule=t.schedule,
        n_cycles=t.n_cycles, momentum=t.momentum, weight_decay=t.weight_decay, seed=seed,
        preconditioner=t.preconditioner, rms_decay=t.rms_decay, rms_eps=t.rms_eps,
        n_burnin_epochs=t.n_burnin_epochs, thin_epochs=t.thin_epochs, init_scale=t.init_scale,
        vi_init_variance=t.vi_init_variance)


def select_samples(store: SampleStore, keep_last: int | None = None,
                   accepted_only: bool = False) -> np.ndarray:
    """Samples used for prediction: optionally only accepted states, then the last ``keep_last``."""
    w = store.samples
    if accepted_only and store.accepted.size == len(store):
        w = w[store.accepted]
    if keep_last is not None:
        w = w[-keep_last:]
    return w


# --- metrics -----------------------------------------------------------------


def predictive_metrics(pred: evaluate.PredictiveDistribution, task: Task, n_bins: int) -> dict:
    y = task.test.targets
    if pred.is_classification:
        return evaluate.classification_metrics(pred, y, n_bins)
    out = evaluate.regression_metrics(pred, y, task.y_scale)
    if task.truth is not None:
        band = np.abs(pred.mean - y) <= 3.0 * pred.std
        out["truth_in_3sd"] = float(band.mean())
    return out


def _train_ll(model, samples, data) -> np.ndarray:
    return np.array([log_likelihood(model, w, data) for w in samples])


def _metric_row(method, task, seed, metrics: dict) -> dict:
    return {"method": method, "dataset": task.train.name, "seed": seed, **metrics}


def _write_metrics(run_dir: Path, rows: list[dict]) -> Path:
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    return evaluate.write_csv(run_dir / "metrics.csv", rows, keys)


def _write_predictions(run_dir: Path, name: str, pred, task: Task):
    if pred.is_classification:
        rows = [{"index": i, **{f"p{j}": float(p) for j, p in enumerate(row)}}
                for i, row in enumerate(pred.probs)]
    else:
        xs = task.grid_x if task.grid_x is not None else np.arange(pred.n)
        rows = [{"x": float(x), "mean": float(m), "std": float(s), "target": float(t)}
                for x, m, s, t in zip(xs, pred.mean, pred.std, task.test.targets)]
    evaluate.write_csv(run_dir / f"{name}.csv", rows)


# --- pipelines -------------------------------------------------------------------


class Run:
    """State shared by the stages of one run."""

    def __init__(self, cfg: ExperimentConfig, run_dir: Path, workers: int | None):
        self.cfg = cfg
        self.dir = run_dir
        self.workers = workers
        self.stage = "setup"
        self.summary: dict = {}

    def stores_dir(self) -> Path:
        d = self.dir / "stores"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def save_stores(self, stores, prefix: str):
        for i, s in enumerate(stores):
            s.save(self.stores_dir() / f"{prefix}_{i:03d}.bnns")


def _setup(run: Run):
    run.stage = "data"
    task = load_task(run.cfg)
    run.stage = "model"
    model = build_model(run.cfg, task)
    prior = build_prior(run.cfg)
    return task, model, prior


def _evaluate_samples(run: Run, method: str, samples_by_chain, model, task, extra=None):
    """Pooled BMA metrics plus per-chain rows; writes predictions of the pool."""
    run.stage = "evaluate"
    cfg = run.cfg
    pooled = np.concatenate(samples_by_chain)
    pred = evaluate.bma_predict(pooled, model, task.test.inputs)
    rows = [_metric_row(method, task, cfg.seed, {**predictive_metrics(pred, task, cfg.eval.n_bins),
                                                 "n_samples": int(pooled.shape[0]),
                                                 **(extra or {})})]
    chain_preds = []
    if len(samples_by_chain) > 1:
        for i, s in enumerate(samples_by_chain):
            p = evaluate.bma_predict(s, model, task.test.inputs)
            chain_preds.append(p)
            rows.append(_metric_row(f"{method}_chain{i}", task, cfg.seed,
                                    {**predictive_metrics(p, task, cfg.eval.n_bins),
                                     "n_samples": int(s.shape[0])}))
    if chain_preds and not pred.is_classification:
        gaps = [np.max(np.abs(a.mean - b.mean) / pred.std)
                for i, a in enumerate(chain_preds) for b in chain_preds[i + 1:]]
        rows[0]["max_chain_mean_gap_over_sd"] = float(max(gaps))
    if chain_preds and pred.is_classification:
        rows[0]["min_chain_agreement"] = float(min(
            evaluate.agreement(a, b) for i, a in enumerate(chain_preds) for b in chain_preds[i + 1:]))
    _write_metrics(run.dir, rows)
    _write_predictions(run.dir, "predictions", pred, task)
    for i, p in enumerate(chain_preds):
        _write_predictions(run.dir, f"predictions_chain{i}", p, task)
    if pred.is_classification:
        evaluate.write_json(run.dir / "calibration.json",
                            evaluate.calibration_curve(pred, task.test.targets,
                                                       cfg.eval.n_bins).to_dict())
        evaluate.write_json(run.dir / "entropy.json", evaluate.predictive_entropy(pred).to_dict())
    return rows


def run_hmc(run: Run):
    cfg = run.cfg
    task, model, prior = _setup(run)
    post = Posterior(model, prior, task.train, cfg.hmc.temperature)
    h = cfg.hmc
    tau = h.trajectory_length or hmc.suggest_trajectory_length(prior.std)
    hc = hmc.HmcConfig(tau, h.step_size, h.n_burnin, h.n_samples, h.n_chains, cfg.seed)
    init = None
    if h.init == "normal":
        init = lambda i: h.init_scale * _rng.stream(cfg.seed, 1000 + i).standard_normal(post.dim)
    run.stage = "sample"
    stores = hmc.run_chains(hc, post, init=init, workers=run.workers)
    run.save_stores(stores, "chain")
    chosen = [select_samples(s, h.keep_last, h.accepted_only) for s in stores]
    if any(c.shape[0] == 0 for c in chosen):
        raise ValueError("a chain has no samples left after selection")
    lls = np.concatenate([_train_ll(model, c, task.train) for c in chosen])
    extra = {
        "accept_rate": float(np.mean([s.accept_rate for s in stores])),
        "n_leapfrog": hc.n_leapfrog,
        "train_ll_mean": float(lls.mean()),
        "train_ll_std": float(lls.std()),
    }
    run.summary["accept_rates"] = [s.accept_rate for s in stores]
    return _evaluate_samples(run, "hmc", chosen, model, task, extra)


def run_sgmcmc(run: Run):
    cfg = run.cfg
    task, model, prior = _setup(run)
    post = Posterior(model, prior, task.train, cfg.hmc.temperature)
    tc = train_config(cfg, cfg.seed)
    run.stage = "sample"
    if cfg.kind == "sgld":
        one = lambda i: approx.sgld_run(tc, post, chain_index=i)
    else:
        one = lambda i: approx.sghmc_run(tc, post, chain_index=i)
    n = cfg.train.n_chains
    if n == 1 or run.workers == 1:
        stores = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=run.workers or n) as pool:
            stores = list(pool.map(one, range(n)))
    run.save_stores(stores, "chain")
    return _evaluate_samples(run, cfg.kind, [s.samples for s in stores], model, task)


def run_sgd(run: Run):
    cfg = run.cfg
    task, model, prior = _setup(run)
    post = Posterior(model, prior, task.train)
    tc = train_config(cfg, cfg.seed)
    run.stage = "train"
    n = cfg.train.n_models if cfg.kind == "ensemble" else 1
    members = approx.deep_ensemble(n, tc, post, workers=run.workers)
    store = SampleStore(np.array(members), config={cfg.kind: tc.to_dict(), "model": model.to_dict()},
                        seed=cfg.seed, method=cfg.kind)
    run.save_stores([store], cfg.kind)
    rows = _evaluate_samples(run, cfg.kind, [store.samples], model, task)
    if n > 1:
        members_nll = [predictive_metrics(evaluate.bma_predict(w, model, task.test.inputs), task,
                                          cfg.eval.n_bins) for w in members]
        key = "nll" if task.is_classification else "test_ll"
        run.summary[f"member_{key}"] = [m[key] for m in members_nll]
    return rows


def run_mfvi(run: Run):
    cfg = run.cfg
    task, model, prior = _setup(run)
    post = Posterior(model, prior, task.train)
    s = cfg.train.sgd_init
    run.stage = "sgd_init"
    sgd_cfg = approx.TrainConfig(step_size=s.step_size, n_epochs=s.n_epochs, batch_size=s.batch_size,
                                 schedule=s.schedule, momentum=s.momentum,
                                 weight_decay=s.weight_decay, seed=cfg.seed)
    mean0 = approx.train_sgd(sgd_cfg, post)
    run.stage = "fit"
    tc = train_config(cfg, cfg.seed)
    vp = approx.mfvi_fit(tc, post, mean0)
    samples = approx.mfvi_sample(vp, cfg.train.n_vi_samples, [cfg.seed, 31])
    store = SampleStore(samples, config={"mfvi": tc.to_dict(), "model": model.to_dict()},
                        seed=cfg.seed, method="mfvi")
    run.save_stores([store], "mfvi")
    evaluate.write_csv(run.dir / "elbo.csv",
                       [{"step": i, "elbo": float(e)} for i, e in enumerate(vp.elbo_history)])
    return _evaluate_samples(run, "mfvi", [samples], model, task)


def parse_store_ref(ref: str):
    """``path`` or ``path:index`` (a single row of the store)."""
    path, _, idx = ref.rpartition(":")
    if path and idx.isdigit():
        return SampleStore.load(path), int(idx)
    return SampleStore.load(ref), None


def _model_from_stores(stores, cfg: ExperimentConfig, task: Task | None) -> ModelSpec:
    for s in stores:
        m = s.config.get("model")
        if m:
            return ModelSpec.from_dict(m)
    if task is None:
        raise ValueError("stores carry no model description and no data was given")
    return build_model(cfg, task)


def _load_stores(refs):
    if not refs:
        raise ValueError("eval.stores lists no stores")
    return [SampleStore.load(r) for r in refs]


def run_rhat(run: Run):
    cfg = run.cfg
    run.stage = "load"
    stores = _load_stores(cfg.eval.stores)
    run.stage = "rhat"
    rep = diagnostics.rhat_weights(stores)
    rep.to_csv(run.dir / "rhat_weights.csv")
    rep.to_json(run.dir / "rhat_weights.json")
    run.summary["weights"] = rep.summary()
    rows = [{"space": "weights", "count": rep.values.size, "fraction_below_1.1": rep.fraction_below,
             "undefined": rep.n_undefined}]
    run.stage = "data"
    task = load_task(cfg)
    model = _model_from_stores(stores, cfg, task)
    run.stage = "rhat_functions"
    frep = diagnostics.rhat_functions(stores, model, task.test.inputs)
    frep.to_csv(run.dir / "rhat_functions.csv")
    frep.to_json(run.dir / "rhat_functions.json")
    rows.append({"space": "functions", "count": frep.values.size,
                 "fraction_below_1.1": frep.fraction_below, "undefined": frep.n_undefined})
    evaluate.write_csv(run.dir / "metrics.csv", rows)
    return rows


def run_burnin(run: Run):
    cfg = run.cfg
    run.stage = "load"
    stores = _load_stores(cfg.eval.stores)
    task = load_task(cfg)
    model = _model_from_stores(stores, cfg, task)
    run.stage = "trace"
    rows = diagnostics.burnin_trace(stores[0], cfg.eval.burnin_metric, task.test,
                                    cfg.eval.burnin_grid, model, cfg.eval.burnin_window)
    evaluate.write_csv(run.dir / "burnin.csv", rows)
    return rows


def run_bma_eval(run: Run):
    cfg = run.cfg
    run.stage = "load"
    stores = _load_stores(cfg.eval.stores)
    task = load_task(cfg)
    model = _model_from_stores(stores, cfg, task)
    return _evaluate_samples(run, "bma", [s.samples for s in stores], model, task)


def run_compare(run: Run):
    cfg = run.cfg
    run.stage = "load"
    ref = _load_stores(cfg.eval.reference_stores)
    other = _load_stores(cfg.eval.stores)
    task = load_task(cfg)
    model = _model_from_stores(ref, cfg, task)
    run.stage = "compare"
    p_ref = evaluate.bma_predict(ref, model, task.test.inputs)
    p = evaluate.bma_predict(other, model, task.test.inputs)
    row = {"reference": "+".join(Path(r).name for r in cfg.eval.reference_stores),
           "method": "+".join(Path(r).name for r in cfg.eval.stores),
           "dataset": task.test.name, "seed": cfg.seed, **evaluate.comparison_metrics(p_ref, p)}
    evaluate.write_csv(run.dir / "compare.csv", [row])
    return [row]


def run_subspace(run: Run):
    cfg = run.cfg
    run.stage = "load"
    if len(cfg.subspace.anchors) != 3:
        raise ValueError("subspace.anchors must name exactly three samples (path[:index])")
    anchors = []
    stores = []
    for ref in cfg.subspace.anchors:
        store, idx = parse_store_ref(ref)
        stores.append(store)
        anchors.append(store.samples[-1 if idx is None else idx])
    task = load_task(cfg)
    model = _model_from_stores(stores, cfg, task)
    post = Posterior(model, build_prior(cfg), task.train, cfg.hmc.temperature)
    run.stage = "scan"
    basis = subspace.build_subspace(*anchors)
    ranges = None
    if cfg.subspace.a_range and cfg.subspace.b_range:
        ranges = (tuple(cfg.subspace.a_range), tuple(cfg.subspace.b_range))
    grid = subspace.scan_grid(basis, post, cfg.subspace.resolution, ranges, workers=run.workers)
    grid.save(run.dir / "subspace")
    row = {"resolution": grid.resolution, "temperature": grid.temperature,
           "failed_points": grid.n_failed,
           "max_log_posterior": float(np.nanmax(grid.log_posterior))}
    evaluate.write_csv(run.dir / "metrics.csv", [row])
    return [row]


def run_synth_gen(run: Run):
    run.stage = "generate"
    task = load_task(run.cfg)
    x = task.train.meta["x"]
    evaluate.write_csv(run.dir / "train.csv", [{"x": float(a), "y": float(b)}
                                               for a, b in zip(x, task.train.targets)])
    evaluate.write_csv(run.dir / "truth.csv", [{"x": float(a), "f": float(b)}
                                               for a, b in zip(task.grid_x, task.test.targets)])
    evaluate.write_json(run.dir / "synthetic.json", task.info)
    return [{"n_train": task.train.n, "n_grid": task.test.n}]


PIPELINES = {
    "hmc": run_hmc, "sgld": run_sgmcmc, "sghmc": run_sgmcmc, "sgd": run_sgd,
    "ensemble": run_sgd, "mfvi": run_mfvi, "rhat": run_rhat, "burnin": run_burnin,
    "bma_eval": run_bma_eval, "compare": run_compare, "subspace_scan": run_subspace,
    "synth_gen": run_synth_gen,
}


def _manifest(cfg, status, stage, started, error=None, extra=None) -> dict:
    return {
        "status": status,
        "stage": stage,
        "error": error,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "code_version": __version__,
        "config": cfg.model_dump(mode="json"),
        "started_unix": started,
        "wall_clock_seconds": time.time() - started,
        **(extra or {}),
    }


def _resolve_dir(cfg: ExperimentConfig, out) -> Path:
    d = out or cfg.out
    if not d:
        raise ValueError("no output directory: set 'out' in the config or pass --out")
    return Path(d)


def run_experiment(cfg: ExperimentConfig, out=None, workers: int | None = None) -> Path:
    """Execute one config; returns the run directory.

    On failure the manifest is still written with ``status: "failed"`` and
    the stage that raised, and a :class:`StageError` is raised.
    """
    if cfg.is_sweep:
        return sweep(cfg, out, workers)
    run_dir = _resolve_dir(cfg, out)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = cfg.model_copy(update={"out": str(run_dir)})
    (run_dir / "config.json").write_text(serialize_config(cfg))
    run = Run(cfg, run_dir, workers or cfg.workers)
    started = time.time()
    try:
        PIPELINES[cfg.kind](run)
    except Exception as err:
        logger.error("run failed in stage %s: %s", run.stage, err)
        evaluate.write_json(run_dir / "manifest.json", _manifest(
            cfg, "failed", run.stage, started, f"{type(err).__name__}: {err}",
            {"traceback": traceback.format_exc()}))
        raise StageError(run.stage, err) from err
    evaluate.write_json(run_dir / "summary.json", run.summary)
    evaluate.write_json(run_dir / "manifest.json", _manifest(
        cfg, "ok", "done", started, extra={"artifacts": sorted(
            str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file())}))
    return run_dir


# --- sweeps ----------------------------------------------------------------------


def _child_config(cfg: ExperimentConfig, axis: str, value: float, seed: int) -> ExperimentConfig:
    raw = cfg.model_dump(mode="json")
    raw["kind"] = cfg.sweep.base_kind
    raw["seed"] = seed
    raw["sweep"] = {"axis": None, "values": [], "seeds": [seed], "base_kind": cfg.sweep.base_kind}
    if axis == "trajectory_length":
        raw["hmc"]["trajectory_length"] = value
    elif axis == "n_chains":
        raw["hmc"]["n_chains"] = int(value)
        raw["train"]["n_chains"] = int(value)
    elif axis == "temperature":
        raw["hmc"]["temperature"] = value
    elif axis == "prior_variance":
        raw["prior"]["variance"] = value
    elif axis == "noise_sigma":
        raw["data"]["noise_sigma"] = value
    return config_from_dict(raw)


def _numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def aggregate_rows(axis: str, results) -> list[dict]:
    """Tidy rows ``(axis, value, method, metric, mean, std, n)`` over seeds.

    ``results`` is a list of ``(value, seed, metric_rows)``; ``std`` uses
    ``ddof=1`` and is 0 for a single seed.
    """
    table: dict = {}
    for value, _seed, rows in results:
        for row in rows:
            method = row.get("method", "")
            for k, v in row.items():
                if k in ("method", "dataset", "seed") or not _numeric(v):
                    continue
                table.setdefault((value, method, k), []).append(float(v))
    out = []
    for (value, method, metric), vals in table.items():
        arr = np.array(vals)
        out.append({"axis": axis, "value": value, "method": method, "metric": metric,
                    "mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                    "n": int(arr.size)})
    return out


def _read_metrics(path: Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for r in csv.DictReader(fh):
            parsed = {}
            for k, v in r.items():
                try:
                    parsed[k] = float(v) if k not in ("method", "dataset") else v
                except (TypeError, ValueError):
                    parsed[k] = v
            rows.append(parsed)
    return rows


def sweep(cfg: ExperimentConfig, out=None, workers: int | None = None) -> Path:
    """One child run per (axis value, seed), aggregated into ``sweep.csv``."""
    axis = cfg.sweep.axis or SWEEP_KIND_AXIS.get(cfg.kind)
    if axis is None:
        raise ValueError("config has no sweep axis")
    if not cfg.sweep.values:
        raise ValueError("sweep.values is empty")
    run_dir = _resolve_dir(cfg, out)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = cfg.model_copy(update={"out": str(run_dir)})
    (run_dir / "config.json").write_text(serialize_config(cfg))
    started = time.time()
    jobs = [(v, s) for v in cfg.sweep.values for s in cfg.sweep.seeds]

    def child(job):
        v, s = job
        ccfg = _child_config(cfg, axis, v, s)
        cdir = run_dir / "runs" / f"{axis}={v!r}" / f"seed={s}"
        run_experiment(ccfg, cdir, workers=1)
        return v, s, _read_metrics(cdir / "metrics.csv"), cdir

    cap = workers or cfg.workers or 1
    try:
        if cap == 1:
            results = [child(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=cap) as pool:
                results = list(pool.map(child, jobs))
    except Exception as err:
        stage = err.stage if isinstance(err, StageError) else "sweep"
        evaluate.write_json(run_dir / "manifest.json", _manifest(
            cfg, "failed", f"child:{stage}", started, f"{type(err).__name__}: {err}"))
        raise
    rows = aggregate_rows(axis, [(v, s, r) for v, s, r, _ in results])
    evaluate.write_csv(run_dir / "sweep.csv", rows,
                       ["axis", "value", "method", "metric", "mean", "std", "n"])
    evaluate.write_json(run_dir / "manifest.json", _manifest(
        cfg, "ok", "done", started, extra={
            "children": [str(c.relative_to(run_dir)) for *_, c in results]}))
    return run_dir
