"""End-to-end pipeline with content-addressed stage caching.

Every stage writes into ``<out>/cache/<stage>-<key>/`` where ``key`` hashes the
stage's inputs (upstream artifact digests plus the relevant config subset).
Outputs are built in a temporary sibling directory, marked complete, and
renamed into place, so an interrupted stage never looks finished.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import shutil
import time
from pathlib import Path

import numpy as np

from .. import nn
from ..avgnoise import (AdaptiveVarianceRegressor, compute_pseudo_labels, load_pseudo_labels,
                        save_pseudo_labels, train_avg)
from ..lifter import LifterRegressor, train_lifter, write_training_log
from ..metrics import nested_scores
from ..sampler import (Layer, NoiseKind, NoiseStrategy, export_hypotheses,
                       generate_hypotheses_batch)
from ..synthgen import Dataset, load_dataset, make_dataset, write_dataset
from .config import ExperimentConfig, config_hash
from .reports import ResultRow, ablation_table, write_results

log = logging.getLogger("prpose.pipeline")
DONE = "COMPLETE"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _mean(values) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    return math.fsum(v.tolist()) / len(v)


class Pipeline:
    """Runs (or reuses) each stage of one experiment config."""

    def __init__(self, cfg: ExperimentConfig, out=None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.out)
        self.cache = self.out / "cache"
        self.timings: list[tuple[str, str, float, str]] = []
        self._memo: dict = {}

    # -- stage plumbing ------------------------------------------------------------------

    def _stage(self, name: str, key: str, build) -> Path:
        final = self.cache / f"{name}-{key}"
        if (final / DONE).is_file():
            log.info("%s %s: cached", name, key)
            return final
        self.cache.mkdir(parents=True, exist_ok=True)
        tmp = self.cache / f".{name}-{key}.partial"
        for d in (tmp, final):
            if d.exists():
                shutil.rmtree(d)
        tmp.mkdir()
        t0 = time.perf_counter()
        try:
            extra = build(tmp)
        except StageError:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        except Exception as e:
            shutil.rmtree(tmp, ignore_errors=True)
            raise StageError(name, e) from e
        dt = time.perf_counter() - t0
        (tmp / DONE).write_text(key + "\n")
        os.replace(tmp, final)
        self.timings.append((name, key, dt, extra or ""))
        log.info("%s %s: built in %.1fs", name, key, dt)
        return final

    def _memoized(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    # -- stages --------------------------------------------------------------------------

    def datasets(self) -> tuple[Dataset, Dataset]:
        def load():
            cfg = self.cfg
            if cfg.dataset_path:
                d = Path(cfg.dataset_path)
            else:
                def build(tmp: Path):
                    train, test = make_dataset(cfg.dataset)
                    write_dataset(train, tmp / "train.jsonl")
                    write_dataset(test, tmp / "test.jsonl")
                d = self._stage("dataset", config_hash(cfg.dataset.to_dict()), build)
            try:
                return load_dataset(d / "train.jsonl"), load_dataset(d / "test.jsonl")
            except Exception as e:
                raise StageError("dataset", e) from e
        return self._memoized("datasets", load)

    def lifter(self, seed: int) -> LifterRegressor:
        def load():
            train, _ = self.datasets()
            key = config_hash({"data": train.digest, "net": self.cfg.lifter.kwargs(), "seed": seed})

            def build(tmp: Path):
                model = train_lifter(train, seed=seed, **self.cfg.lifter.kwargs())
                nn.save_checkpoint(model.network_, tmp / "lifter.ckpt")
                write_training_log(model.loss_curve_, tmp / "train_log.csv")
            d = self._stage("lifter", key, build)
            return LifterRegressor.from_network(nn.load_checkpoint(d / "lifter.ckpt")), d
        return self._memoized(("lifter", seed), load)[0]

    def pseudo_labels(self, seed: int):
        def load():
            train, _ = self.datasets()
            lifter = self.lifter(seed)
            key = config_hash({"data": train.digest, "lifter": lifter.digest()})

            def build(tmp: Path):
                save_pseudo_labels(compute_pseudo_labels(lifter, train), tmp / "pseudo_labels.csv")
            d = self._stage("pseudo", key, build)
            path = d / "pseudo_labels.csv"
            return load_pseudo_labels(path), _sha(path.read_bytes())
        return self._memoized(("pseudo", seed), load)

    def avg(self, seed: int, paradigm: str) -> AdaptiveVarianceRegressor:
        def load():
            train, _ = self.datasets()
            lifter = self.lifter(seed)
            pseudo, pseudo_hash = self.pseudo_labels(seed)
            key = config_hash({"pseudo": pseudo_hash, "lifter": lifter.digest(), "seed": seed,
                               "net": self.cfg.avg.kwargs(), "paradigm": paradigm})

            def build(tmp: Path):
                model = train_avg(train, pseudo, paradigm=paradigm, lifter=lifter, seed=seed,
                                  **self.cfg.avg.kwargs())
                nn.save_checkpoint(model.network_, tmp / "avg.ckpt")
                write_training_log(model.loss_curve_, tmp / "train_log.csv")
            d = self._stage("avg", key, build)
            return AdaptiveVarianceRegressor.from_network(nn.load_checkpoint(d / "avg.ckpt"),
                                                          lifter=lifter), d
        return self._memoized(("avg", seed, paradigm), load)[0]

    def _eval_set(self) -> Dataset:
        _, test = self.datasets()
        n = self.cfg.eval_count
        return test if n == 0 or n >= len(test) else test.subset(np.arange(n))

    def evaluate(self, seed: int, paradigm: str, strategy: NoiseStrategy) -> dict:
        """Test-set means for one (seed, paradigm, strategy): ``{"n", "rows", "lifter_hash", "avg_hash"}``."""
        cfg = self.cfg
        test = self._eval_set()
        lifter = self.lifter(seed)
        pseudo, pseudo_hash = self.pseudo_labels(seed)
        avg = self.avg(seed, paradigm) if strategy.kind.uses_avg else None
        key_src = {"test": test.digest, "lifter": lifter.digest(), "seed": seed,
                   "strategy": [strategy.kind.value, strategy.layer.value, repr(strategy.alpha)],
                   "samples": list(cfg.samples),
                   "protocols": [[p.kind.value, p.selection.value] for p in cfg.protocols],
                   "pck": repr(cfg.pck_threshold_mm), "mm_per_unit": repr(test.mm_per_unit)}
        if avg is not None:
            key_src["avg"] = avg.digest()
        if strategy.kind is NoiseKind.JOINTS_ADAPTED:
            key_src["prior"] = pseudo_hash

        def build(tmp: Path):
            t0 = time.perf_counter()
            per = {}
            chunk = 100
            for s in range(0, len(test), chunk):
                idx = slice(s, s + chunk)
                batch = generate_hypotheses_batch(
                    lifter, avg, pseudo.joint_prior(), test.det2d[idx], test.sample_ids[idx],
                    strategy, cfg.s_max, seed=seed, mm_per_unit=test.mm_per_unit)
                scores = nested_scores(batch.hypotheses, test.gt3d[idx], cfg.samples,
                                       cfg.protocols, cfg.pck_threshold_mm)
                for k, v in scores.items():
                    per.setdefault(k, []).append(v)
            rows = []
            for (a, b), parts in per.items():
                value = _mean(np.concatenate(parts))
                if a == "pck":
                    rows.append({"metric": "pck", "protocol": "p1", "selection": "pbest",
                                 "S": b, "value": value})
                else:
                    rows.append({"metric": "mpjpe", "protocol": a.kind.value,
                                 "selection": a.selection.value, "S": b, "value": value})
            rows.sort(key=lambda r: (r["metric"], r["protocol"], r["selection"], r["S"]))
            (tmp / "scores.json").write_text(json.dumps({"n": len(test), "rows": rows},
                                                        sort_keys=True, indent=1))
            dt = time.perf_counter() - t0
            return f"hyps_per_sec={len(test) * cfg.s_max / dt:.1f}"
        d = self._stage("eval", config_hash(key_src), build)
        out = json.loads((d / "scores.json").read_text())
        out["lifter_hash"] = lifter.digest()
        out["avg_hash"] = avg.digest() if avg is not None else ""
        return out

    def export(self, seed: int, paradigm: str) -> Path:
        cfg = self.cfg
        _, test = self.datasets()
        n = min(cfg.export_count, len(test))
        kind = (NoiseKind.SAMPLE_JOINTS_ADAPTED if NoiseKind.SAMPLE_JOINTS_ADAPTED in cfg.kinds
                else cfg.kinds[-1])
        strategy = NoiseStrategy(kind, cfg.alphas[0], Layer.PRE)
        lifter = self.lifter(seed)
        pseudo, _ = self.pseudo_labels(seed)
        avg = self.avg(seed, paradigm) if kind.uses_avg else None
        batch = generate_hypotheses_batch(lifter, avg, pseudo.joint_prior(), test.det2d[:n],
                                          test.sample_ids[:n], strategy, cfg.export_samples,
                                          seed=seed, mm_per_unit=test.mm_per_unit,
                                          keep_samples=True)
        path = self.out / "exports" / f"hypotheses_seed{seed}_{paradigm}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        return export_hypotheses(path, test.sample_ids[:n], test.det2d[:n], batch, strategy, seed)

    # -- full run ------------------------------------------------------------------------

    def run(self) -> Path:
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        train, test = self.datasets()
        rows: list[ResultRow] = []
        for seed in cfg.seeds:
            self.lifter(seed)
            self._publish(self._memo[("lifter", seed)][1], "lifter.ckpt", f"lifter_seed{seed}")
            self.pseudo_labels(seed)
            for paradigm in cfg.paradigms:
                if any(k.uses_avg for k in cfg.kinds):
                    self.avg(seed, paradigm)
                    self._publish(self._memo[("avg", seed, paradigm)][1], "avg.ckpt",
                                  f"avg_seed{seed}_{paradigm}")
                for strategy in cfg.strategies():
                    res = self.evaluate(seed, paradigm, strategy)
                    for r in res["rows"]:
                        rows.append(ResultRow(
                            seed=seed, paradigm=paradigm, strategy=strategy.kind.value,
                            layer=strategy.layer.value, alpha=strategy.alpha, S=int(r["S"]),
                            protocol=r["protocol"], selection=r["selection"], metric=r["metric"],
                            value=r["value"], n_eval=int(res["n"]), dataset_hash=test.digest,
                            lifter_hash=res["lifter_hash"], avg_hash=res["avg_hash"]))
                if cfg.export_count:
                    self.export(seed, paradigm)
        results = write_results(rows, self.out / "results.csv")
        self._write_ablation(rows)
        self._write_timings()
        return results

    def _publish(self, stage_dir: Path, ckpt: str, stem: str):
        (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.out / "logs").mkdir(parents=True, exist_ok=True)
        shutil.copyfile(stage_dir / ckpt, self.out / "checkpoints" / f"{stem}.ckpt")
        shutil.copyfile(stage_dir / "train_log.csv", self.out / "logs" / f"{stem}_train.csv")

    def _write_ablation(self, rows):
        texts, lines = [], []
        for paradigm in self.cfg.paradigms:
            for alpha in self.cfg.alphas:
                sub = [r for r in rows if r.paradigm == paradigm and r.alpha == alpha]
                try:
                    tab = ablation_table(sub)
                except ValueError as e:
                    log.warning("ablation table skipped (%s, alpha=%r): %s", paradigm, alpha, e)
                    continue
                texts.append(f"paradigm={paradigm} alpha={alpha!r}\n{tab.text}")
                lines += [f"{paradigm},{alpha!r},{line}" for line in tab.csv_lines()]
        (self.out / "ablation.txt").write_text("\n".join(texts))
        header = "paradigm,alpha," + "table,row,S,mean,per_seed"
        (self.out / "ablation.csv").write_text("\n".join([header] + lines) + "\n")

    def _write_timings(self):
        with (self.out / "timings.csv").open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["stage", "key", "seconds", "detail"])
            for stage, key, dt, extra in self.timings:
                w.writerow([stage, key, f"{dt:.3f}", extra])


def run_pipeline(cfg: ExperimentConfig, out=None) -> Path:
    """Run every stage (reusing cached ones) and return the results-table path."""
    return Pipeline(cfg, out).run()
