"""Results table, ablation matrices and throughput measurement."""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from ..sampler import NoiseKind, NoiseStrategy, generate_hypotheses_batch


@dataclass(frozen=True)
class ResultRow:
    """One results-table cell. ``value`` is mm for ``metric="mpjpe"``, a fraction for ``"pck"``."""

    seed: int
    paradigm: str
    strategy: str
    layer: str
    alpha: float
    S: int
    protocol: str
    selection: str
    metric: str
    value: float
    n_eval: int
    dataset_hash: str
    lifter_hash: str
    avg_hash: str

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("metric value must be non-negative")


FIELDS = [f.name for f in fields(ResultRow)]


def write_results(rows, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(FIELDS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])
    tmp.replace(path)
    return path


def read_results(path) -> list[ResultRow]:
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != FIELDS:
            raise ValueError(f"results header {reader.fieldnames} does not match {FIELDS}")
        out = []
        for d in reader:
            out.append(ResultRow(int(d["seed"]), d["paradigm"], d["strategy"], d["layer"],
                                 float(d["alpha"]), int(d["S"]), d["protocol"], d["selection"],
                                 d["metric"], float(d["value"]), int(d["n_eval"]),
                                 d["dataset_hash"], d["lifter_hash"], d["avg_hash"]))
        return out


class AblationGapError(ValueError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join(f"({a}, S={b}, seed={c})" for a, b, c in self.missing)
        super().__init__(f"ablation matrix has {len(self.missing)} missing cells: {shown}")


@dataclass
class AblationTable:
    """``cells[(row, S)] = (mean, {seed: value})`` for each matrix."""

    strategy: dict
    layer: dict
    S_list: list[int]
    seeds: list[int]

    def _fmt(self, title: str, cells: dict, rows) -> list[str]:
        lines = [f"{title:<22}" + "".join(f"{'S=' + str(s):>10}" for s in self.S_list)]
        for r in rows:
            lines.append(f"{r:<22}" + "".join(f"{cells[(r, s)][0]:>10.2f}" for s in self.S_list))
        return lines

    @property
    def text(self) -> str:
        srows = list(dict.fromkeys(k[0] for k in self.strategy))
        lrows = list(dict.fromkeys(k[0] for k in self.layer))
        out = self._fmt("strategy (pre)", self.strategy, srows)
        if lrows:
            out += [""] + self._fmt("layer (SJA)", self.layer, lrows)
        return "\n".join(out) + "\n"

    def csv_lines(self) -> list[str]:
        out = []
        for name, cells in (("strategy", self.strategy), ("layer", self.layer)):
            for (row, S), (mean, per) in cells.items():
                ps = ";".join(f"{k}:{v!r}" for k, v in sorted(per.items()))
                out.append(f"{name},{row},{S},{mean!r},{ps}")
        return out


def _cells(rows, key_fn, wanted_rows, S_list, seeds) -> dict:
    got = {}
    for r in rows:
        got[(key_fn(r), r.S, r.seed)] = r.value
    missing = [(a, s, sd) for a in wanted_rows for s in S_list for sd in seeds if (a, s, sd) not in got]
    if missing:
        raise AblationGapError(missing)
    return {(a, s): (math.fsum(got[(a, s, sd)] for sd in seeds) / len(seeds),
                     {sd: got[(a, s, sd)] for sd in seeds})
            for a in wanted_rows for s in S_list}


def ablation_table(rows, protocol: str = "p1", selection: str = "pbest", kinds=None,
                   S_list=None, seeds=None) -> AblationTable:
    """Seed-averaged strategy x S (pre-sample) and pre/post x S (SampleJointsAdapted) matrices.

    ``rows`` should share one paradigm and alpha. Unspecified axes default to
    whatever appears in ``rows``; any absent (row, S, seed) cell raises
    :class:`AblationGapError`.
    """
    rows = [r for r in rows if r.metric == "mpjpe" and r.protocol == protocol
            and r.selection == selection]
    if not rows:
        raise ValueError(f"no {protocol}/{selection} minMPJPE rows")
    if len({(r.paradigm, r.alpha) for r in rows}) > 1:
        raise ValueError("ablation rows mix paradigms or alphas; filter first")
    order = [k.value for k in NoiseKind]
    kinds = kinds or sorted({r.strategy for r in rows}, key=order.index)
    S_list = S_list or sorted({r.S for r in rows})
    seeds = seeds or sorted({r.seed for r in rows})
    strategy = _cells([r for r in rows if r.layer == "pre"], lambda r: r.strategy, kinds, S_list, seeds)
    sja = NoiseKind.SAMPLE_JOINTS_ADAPTED.value
    layers = sorted({r.layer for r in rows if r.strategy == sja}, key=["pre", "post"].index)
    layer = _cells([r for r in rows if r.strategy == sja], lambda r: r.layer, layers, S_list, seeds)
    return AblationTable(strategy, layer, list(S_list), list(seeds))


def throughput_report(lifter, avg, prior, poses2d, S_list, strategy: NoiseStrategy | None = None,
                      n_samples: int = 1000, trials: int = 5, mm_per_unit: float = 1.0,
                      timer=time.perf_counter) -> list[dict]:
    """Median-of-``trials`` wall-clock rate of full hypothesis generation per S.

    ``poses2d`` is cycled to reach ``n_samples`` inputs. Runs single-threaded in
    the caller's process.
    """
    strategy = strategy or NoiseStrategy()
    X = np.asarray(poses2d, dtype=np.float64)
    X = X[np.arange(n_samples) % len(X)]
    ids = np.arange(n_samples)
    report = []
    for S in S_list:
        rates = []
        for _ in range(trials):
            t0 = timer()
            generate_hypotheses_batch(lifter, avg, prior, X, ids, strategy, int(S),
                                      mm_per_unit=mm_per_unit)
            rates.append(n_samples / max(timer() - t0, 1e-12))
        med = statistics.median(rates)
        report.append({"S": int(S), "samples_per_sec": med, "hypotheses_per_sec": med * S,
                       "n_samples": n_samples, "trials": trials})
    return report


def write_throughput(report, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["S", "samples_per_sec", "hypotheses_per_sec", "n_samples", "trials"])
        for r in report:
            w.writerow([r["S"], f"{r['samples_per_sec']:.2f}", f"{r['hypotheses_per_sec']:.2f}",
                        r["n_samples"], r["trials"]])
    return path
