"""Experiment driver: multi-seed runs, region tracking during training, CSV output.

Every run is keyed by (config hash, variant, seed).  Finished runs are
appended to ``records.jsonl`` in the output directory and skipped on the next
invocation unless ``force`` is set.  CSV files are regenerated from the
records in a fixed order, so identical configurations give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ExperimentConfig, derive_seed
from .curves import Circle, RegressionTask, Tractrix, embedded_circle
from .geometry import monotonicity_violations, supremum_sweep, sweep_csv
from .network import dumps, init_random
from .regions import count_regions, distance_statistics
from .synth import compare_density, make_curve_pair, make_decoder, normalization, sample_inputs
from .train import OptimizerConfig, train_classifier_random_labels, train_regression

RECORDS = "records.jsonl"


@dataclass(frozen=True)
class Job:
    variant: str
    manifold: str
    arch: tuple[int, ...]
    seed: int
    dim: int | None = None


def build_curve(manifold: str, run_seed: int, dim: int | None = None):
    if manifold == "circle":
        return Circle()
    if manifold == "tractrix":
        return Tractrix()
    if manifold == "embedded_circle":
        # the 2-D case is the plain unit circle so the sweep reproduces the toy task
        return Circle() if dim == 2 else embedded_circle(dim, derive_seed(run_seed, f"curve:{dim}"))
    raise ValueError(f"unknown manifold {manifold!r}")


def build_task(cfg: ExperimentConfig, manifold: str, curve) -> RegressionTask:
    freq = cfg.task.frequency
    if freq is None:
        freq = math.pi if manifold == "tractrix" else 3.0
    return RegressionTask(curve, cfg.task.amplitude, freq, cfg.task.noise_sigma)


def run_seed_of(cfg: ExperimentConfig, seed: int) -> int:
    return derive_seed(cfg.master_seed, f"run:{seed}")


# ---------------------------------------------------------------------------
# workers (top level so they pickle into a process pool)


def regression_job(cfg: ExperimentConfig, job: Job) -> dict:
    start = time.perf_counter()
    rs = run_seed_of(cfg, job.seed)
    curve = build_curve(job.manifold, rs, job.dim)
    task = build_task(cfg, job.manifold, curve)
    net = init_random(job.arch, derive_seed(rs, "init"), cfg.weight_scheme, cfg.bias_scheme)
    c = cfg.counting
    grid_n = max(2, int(math.ceil(c.grid_per_unit * curve.length)))
    checkpoints = {}

    def measure(epoch, current):
        rep = count_regions(current, curve, grid_n, c.refine_tol, c.merge_tol)
        ds = distance_statistics(current, curve, rep, c.distance_samples, derive_seed(rs, f"distance:{epoch}"))
        if cfg.checkpoints:
            checkpoints[epoch] = dumps(current)
        return {"region_count": rep.region_count, "crossings": rep.crossings_total,
                "mean_distance": ds.mean, "normalized_distance": ds.normalized_mean}

    opt = replace(cfg.optimizer, seed=derive_seed(rs, "opt"))
    final, log = train_regression(net, task, cfg.task.n_points, opt, derive_seed(rs, "data"),
                                  derive_seed(rs, "test"), measure, c.log_every)
    epochs = sorted(log.hooks)
    pos = {e: i for i, e in enumerate(log.epochs)}
    record = {
        "variant": job.variant,
        "seed": job.seed,
        "manifold": job.manifold,
        "arch": list(job.arch),
        "neurons": sum(job.arch[1:-1]),
        "epochs": epochs,
        "region_count": [log.hooks[e]["region_count"] for e in epochs],
        "crossings": [log.hooks[e]["crossings"] for e in epochs],
        "mean_distance": [log.hooks[e]["mean_distance"] for e in epochs],
        "normalized_distance": [log.hooks[e]["normalized_distance"] for e in epochs],
        "train_loss": [log.train_loss[pos[e]] for e in epochs],
        "test_loss": [log.test_loss[pos[e]] for e in epochs],
        "final_train_loss": log.train_loss[-1],
        "final_test_loss": log.test_loss[-1],
    }
    if job.dim is not None:
        record["dim"] = job.dim
    artifacts = {"model": dumps(final), "log": log.to_csv(), "checkpoints": checkpoints}
    record["wall_time"] = time.perf_counter() - start
    return {"record": record, "artifacts": artifacts}


def compare_job(cfg: ExperimentConfig, job: Job) -> dict:
    start = time.perf_counter()
    k = cfg.compare
    rs = run_seed_of(cfg, job.seed)
    dec = make_decoder(k.latent_dim, k.ambient_dim, k.decoder_hidden, derive_seed(rs, "decoder"))
    X = sample_inputs(dec, k.n_train, derive_seed(rs, "decoder-data"))
    mu, sd = normalization(X)
    Xn = (X - mu) / sd
    net = init_random([k.ambient_dim, *k.classifier_hidden, 1], derive_seed(rs, "classifier"),
                      cfg.weight_scheme, cfg.bias_scheme)
    opt = OptimizerConfig(kind="sgd_momentum", learning_rate=k.learning_rate, momentum=k.momentum,
                          batch_size=k.batch_size, epochs=k.epochs, seed=derive_seed(rs, "classifier-opt"))
    trained, log = train_classifier_random_labels(net, Xn, derive_seed(rs, "labels"), opt)
    pairs = [make_curve_pair(dec, derive_seed(rs, f"pair:{i}"), k.segments).transformed(mu, sd)
             for i in range(k.pairs)]
    grid_n = max(2, cfg.counting.grid_per_unit)  # parameter interval [0, 1]
    conditions = {}
    for name, model in (("untrained", net), ("trained", trained)):
        rows = []
        for i, pair in enumerate(pairs):
            d = compare_density(model, pair, grid_n, cfg.counting.refine_tol, cfg.counting.merge_tol)
            rows.append({
                "pair": i, "pair_seed": pair.seed,
                "log_density_on": d.log_density_on, "log_density_off": d.log_density_off,
                "cuts_on": d.report_on.region_count - 1, "cuts_off": d.report_off.region_count - 1,
                "arclength_on": d.report_on.curve_arclength, "arclength_off": d.report_off.curve_arclength,
                "flagged": d.flagged,
            })
        conditions[name] = rows
    record = {
        "variant": job.variant, "seed": job.seed,
        "final_train_acc": log.train_acc[-1], "final_train_loss": log.train_loss[-1],
        "conditions": conditions,
        "wall_time": time.perf_counter() - start,
    }
    return {"record": record, "artifacts": {"model": dumps(trained), "log": log.to_csv(), "checkpoints": {}}}


def _safe(worker, cfg, job) -> dict:
    try:
        return worker(cfg, job)
    except Exception as exc:  # per-seed failures are recorded and the run continues
        return {"record": {"variant": job.variant, "seed": job.seed, "status": "error",
                           "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()},
                "artifacts": None}


# ---------------------------------------------------------------------------
# record store


class RecordStore:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / RECORDS

    def load(self) -> dict[tuple, dict]:
        out = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    r = json.loads(line)
                    out[(r["config_hash"], r["variant"], r["seed"])] = r
        return out

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def execute(cfg: ExperimentConfig, jobs: list[Job], worker, force: bool = False, n_jobs: int = 1,
            out_dir=None) -> list[dict]:
    """Run the pending jobs and return the records of all jobs, in job order."""
    out = Path(out_dir or cfg.output_dir)
    store = RecordStore(out)
    h = cfg.config_hash()
    done = store.load()
    (out / f"config_{h}.ini").write_text(_config_text(cfg), encoding="utf-8")
    pending = [j for j in jobs if force or done.get((h, j.variant, j.seed), {}).get("status") != "ok"]
    if n_jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = pool.map(_safe, [worker] * len(pending), [cfg] * len(pending), pending)
            _collect(results, pending, store, h, out, done)
    else:
        _collect((_safe(worker, cfg, j) for j in pending), pending, store, h, out, done)
    return [done[(h, j.variant, j.seed)] for j in jobs if (h, j.variant, j.seed) in done]


def _config_text(cfg: ExperimentConfig) -> str:
    from .config import to_ini
    return to_ini(cfg)


def _collect(results, pending, store, h, out, done):
    for job, res in zip(pending, results):
        rec = res["record"]
        rec.setdefault("status", "ok")
        rec["config_hash"] = h
        store.append(rec)
        done[(h, job.variant, job.seed)] = rec
        art = res["artifacts"]
        if art:
            tag = job.variant.replace("/", "_")
            _write_text(out / "models" / f"{tag}_seed{job.seed}.json", art["model"])
            _write_text(out / "logs" / f"{tag}_seed{job.seed}.csv", art["log"])
            for epoch, text in sorted(art["checkpoints"].items()):
                _write_text(out / "checkpoints" / tag / f"seed{job.seed}" / f"epoch{epoch:05d}.json", text)


# ---------------------------------------------------------------------------
# CSV emission

RUN_COLUMNS = ["variant", "seed", "neurons", "epoch", "region_count", "crossings", "mean_distance",
               "normalized_distance", "train_loss", "test_loss"]
SUMMARY_COLUMNS = ["variant", "neurons", "epoch", "n_runs", "region_count_mean", "region_count_std",
                   "ratio_mean", "ratio_std", "mean_distance_mean", "mean_distance_std",
                   "normalized_distance_mean", "normalized_distance_std"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def run_rows(records: list[dict]) -> list[dict]:
    rows = []
    for r in records:
        if r.get("status") != "ok":
            continue
        for i, e in enumerate(r["epochs"]):
            rows.append({"variant": r["variant"], "seed": r["seed"], "neurons": r["neurons"], "epoch": e,
                         **{k: r[k][i] for k in ("region_count", "crossings", "mean_distance",
                                                 "normalized_distance", "train_loss", "test_loss")}})
    return rows


def summarize(records: list[dict]) -> list[dict]:
    """Mean and std across seeds per (variant, epoch), in first-seen variant order."""
    groups: dict[tuple, list[dict]] = {}
    for row in run_rows(records):
        groups.setdefault((row["variant"], row["epoch"]), []).append(row)
    out = []
    for (variant, epoch), rows in groups.items():
        counts = np.array([r["region_count"] for r in rows], dtype=float)
        neurons = rows[0]["neurons"]
        dist = np.array([r["mean_distance"] for r in rows])
        nd = np.array([r["normalized_distance"] for r in rows])
        out.append({
            "variant": variant, "neurons": neurons, "epoch": epoch, "n_runs": len(rows),
            "region_count_mean": float(counts.mean()), "region_count_std": float(counts.std()),
            "ratio_mean": float((counts / neurons).mean()), "ratio_std": float((counts / neurons).std()),
            "mean_distance_mean": float(dist.mean()), "mean_distance_std": float(dist.std()),
            "normalized_distance_mean": float(nd.mean()), "normalized_distance_std": float(nd.std()),
        })
    return out


@dataclass
class RunResult:
    records: list[dict]
    summary: list[dict]
    out_dir: Path

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.records if r.get("status") != "ok"]


def _finish_regression(cfg, records, out) -> RunResult:
    out = Path(out)
    _write_text(out / "runs.csv", _csv(RUN_COLUMNS, run_rows(records)))
    summary = summarize(records)
    _write_text(out / "summary.csv", _csv(SUMMARY_COLUMNS, summary))
    return RunResult(records, summary, out)


# ---------------------------------------------------------------------------
# experiments


def run_toy_regression(cfg: ExperimentConfig, force=False, n_jobs=1, out_dir=None) -> RunResult:
    jobs = [Job(m, m, tuple(cfg.arch), s) for m in cfg.manifolds for s in cfg.seeds]
    out = out_dir or cfg.output_dir
    return _finish_regression(cfg, execute(cfg, jobs, regression_job, force, n_jobs, out), out)


def run_dim_sweep(cfg: ExperimentConfig, force=False, n_jobs=1, out_dir=None) -> RunResult:
    hidden = tuple(cfg.arch[1:])
    jobs = [Job(f"dim={d}", "embedded_circle", (d, *hidden), s, d) for d in cfg.sweep.dims for s in cfg.seeds]
    out = out_dir or cfg.output_dir
    return _finish_regression(cfg, execute(cfg, jobs, regression_job, force, n_jobs, out), out)


def run_arch_sweep(cfg: ExperimentConfig, force=False, n_jobs=1, out_dir=None) -> RunResult:
    jobs = [Job(f"{m}/{'-'.join(map(str, a))}", m, (2, *a, 1), s)
            for m in cfg.manifolds for a in cfg.sweep.archs for s in cfg.seeds]
    out = out_dir or cfg.output_dir
    return _finish_regression(cfg, execute(cfg, jobs, regression_job, force, n_jobs, out), out)


@dataclass
class TheoryResult:
    rows: list[tuple]
    violations: list[str]
    path: Path


def run_theory_sweep(cfg: ExperimentConfig, out_dir=None) -> TheoryResult:
    rows = supremum_sweep(range(cfg.theory.n_min, cfg.theory.n_max + 1))
    path = Path(out_dir or cfg.output_dir) / "theory_sweep.csv"
    _write_text(path, sweep_csv(rows))
    return TheoryResult(rows, monotonicity_violations(rows), path)


PAIR_COLUMNS = ["condition", "seed", "pair", "pair_seed", "log_density_on", "log_density_off", "cuts_on",
                "cuts_off", "arclength_on", "arclength_off", "flagged"]
COMPARE_SUMMARY_COLUMNS = ["condition", "n_pairs", "n_flagged", "mean_log_density_on", "mean_log_density_off",
                           "on_below_off", "sign_test_p"]


def compare_summary(records: list[dict]) -> tuple[list[dict], list[dict]]:
    pair_rows = []
    for r in records:
        if r.get("status") != "ok":
            continue
        for cond, rows in r["conditions"].items():
            for row in rows:
                pair_rows.append({"condition": cond, "seed": r["seed"], **row})
    summary = []
    for cond in ("untrained", "trained"):
        rows = [p for p in pair_rows if p["condition"] == cond]
        ok = [p for p in rows if not p["flagged"]]
        below = sum(p["log_density_on"] < p["log_density_off"] for p in ok)
        p_value = float(stats.binomtest(below, len(ok), 0.5, alternative="greater").pvalue) if ok else 1.0
        summary.append({
            "condition": cond, "n_pairs": len(rows), "n_flagged": len(rows) - len(ok),
            "mean_log_density_on": float(np.mean([p["log_density_on"] for p in ok])) if ok else float("nan"),
            "mean_log_density_off": float(np.mean([p["log_density_off"] for p in ok])) if ok else float("nan"),
            "on_below_off": below, "sign_test_p": p_value,
        })
    return pair_rows, summary


def run_manifold_compare(cfg: ExperimentConfig, force=False, n_jobs=1, out_dir=None) -> RunResult:
    out = Path(out_dir or cfg.output_dir)
    jobs = [Job("compare", "decoder", (), s) for s in cfg.seeds]
    records = execute(cfg, jobs, compare_job, force, n_jobs, out)
    pair_rows, summary = compare_summary(records)
    _write_text(out / "pairs.csv", _csv(PAIR_COLUMNS, pair_rows))
    _write_text(out / "summary.csv", _csv(COMPARE_SUMMARY_COLUMNS, summary))
    return RunResult(records, summary, out)


def run_experiment(cfg: ExperimentConfig, force=False, n_jobs=1, out_dir=None):
    runners = {"toy_regression": run_toy_regression, "dim_sweep": run_dim_sweep, "arch_sweep": run_arch_sweep,
               "manifold_compare": run_manifold_compare}
    if cfg.experiment == "theory_sweep":
        return run_theory_sweep(cfg, out_dir)
    return runners[cfg.experiment](cfg, force, n_jobs, out_dir)


__all__ = ["Job", "RunResult", "TheoryResult", "run_toy_regression", "run_dim_sweep", "run_arch_sweep",
           "run_theory_sweep", "run_manifold_compare", "run_experiment"]
