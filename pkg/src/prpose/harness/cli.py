"""Command-line entry point: ``prpose <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import nn
from ..avgnoise import (AdaptiveVarianceRegressor, compute_pseudo_labels, load_pseudo_labels,
                        save_pseudo_labels, train_avg)
from ..lifter import LifterRegressor, train_lifter, write_training_log
from ..metrics import EvalProtocol, nested_scores
from ..sampler import NoiseStrategy, export_hypotheses, generate_hypotheses_batch
from ..synthgen import generate_dataset, load_dataset
from .config import ConfigError, parse_config, to_ini
from .pipeline import StageError, run_pipeline
from .reports import ablation_table, read_results, throughput_report, write_throughput


def _csv_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="INI config overlaid on the defaults")
    p.add_argument("--seed", type=int, help="run seed (lifter/AVG init, sampling noise)")
    p.add_argument("--out", metavar="DIR", help="output directory or file")
    p.add_argument("--strategy", choices=["NoAdapted", "JointsAdapted", "SampleAdapted",
                                          "SampleJointsAdapted"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--samples", type=_csv_ints, metavar="S[,S...]")
    p.add_argument("--layer", choices=["pre", "post"])
    p.add_argument("--paradigm", choices=["independent", "shared"])
    p.add_argument("--protocol", choices=["p1", "p2"])
    p.add_argument("--selection", choices=["pbest", "jbest"])
    p.add_argument("--data", metavar="DIR", help="dataset directory (train.jsonl, test.jsonl)")
    p.add_argument("--lifter", metavar="CKPT")
    p.add_argument("--avg", metavar="CKPT")
    p.add_argument("--pseudo", metavar="FILE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="prpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("show-config", "print the effective configuration"),
        ("gen-data", "generate the synthetic dataset into --out"),
        ("train-lifter", "train a lifter on --data, write checkpoint + log into --out"),
        ("pseudo-labels", "compute pseudo-labels from --lifter on --data"),
        ("train-avg", "train an AVG on --pseudo labels"),
        ("eval", "evaluate one strategy on the test split"),
        ("ablate", "print strategy/layer ablation tables from a results file"),
        ("throughput", "measure hypotheses per second"),
        ("export-hypotheses", "write plot-ready hypotheses for test samples"),
        ("run", "run the full cached pipeline"),
    ]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "ablate":
            sp.add_argument("--results", metavar="CSV", required=True)
        if name == "export-hypotheses":
            sp.add_argument("--count", type=int, default=16)
        if name == "throughput":
            sp.add_argument("--n-samples", type=int, default=1000)
            sp.add_argument("--trials", type=int, default=5)
    return parser


def _config(args):
    cfg = parse_config(path=args.config) if args.config else parse_config()
    protos = cfg.protocols
    if args.protocol:
        protos = tuple(p for p in protos if p.kind.value == args.protocol) or \
            (EvalProtocol(args.protocol, args.selection or "pbest", cfg.pck_threshold_mm),)
    if args.selection:
        protos = tuple(p for p in protos if p.selection.value == args.selection) or \
            (EvalProtocol(args.protocol or "p1", args.selection, cfg.pck_threshold_mm),)
    return cfg.with_overrides(
        seeds=(args.seed,) if args.seed is not None else None,
        out=args.out,
        kinds=(args.strategy,) if args.strategy else None,
        alphas=(args.alpha,) if args.alpha is not None else None,
        samples=tuple(sorted(set(args.samples))) if args.samples else None,
        layers=(args.layer,) if args.layer else None,
        paradigms=(args.paradigm,) if args.paradigm else None,
        protocols=protos if protos != cfg.protocols else None,
    )


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m for m in missing))


def _load_models(args):
    lifter = LifterRegressor.from_network(nn.load_checkpoint(args.lifter))
    avg = None
    if args.avg:
        avg = AdaptiveVarianceRegressor.from_network(nn.load_checkpoint(args.avg), lifter=lifter)
    prior = load_pseudo_labels(args.pseudo).joint_prior() if args.pseudo else None
    return lifter, avg, prior


def _strategy(cfg) -> NoiseStrategy:
    return NoiseStrategy(cfg.kinds[-1], cfg.alphas[0], cfg.layers[0])


def _run(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    cmd = args.command
    if cmd == "show-config":
        print(to_ini(cfg), end="")
    elif cmd == "gen-data":
        out = Path(args.out or "data")
        out.mkdir(parents=True, exist_ok=True)
        for p in generate_dataset(cfg.dataset, out):
            print(p)
    elif cmd == "train-lifter":
        _need(args, "data")
        out = Path(args.out or "lifter")
        out.mkdir(parents=True, exist_ok=True)
        model = train_lifter(load_dataset(Path(args.data) / "train.jsonl"), seed=seed,
                             **cfg.lifter.kwargs())
        nn.save_checkpoint(model.network_, out / "lifter.ckpt")
        write_training_log(model.loss_curve_, out / "train_log.csv")
        print(out / "lifter.ckpt")
    elif cmd == "pseudo-labels":
        _need(args, "data", "lifter")
        lifter = LifterRegressor.from_network(nn.load_checkpoint(args.lifter))
        pseudo = compute_pseudo_labels(lifter, load_dataset(Path(args.data) / "train.jsonl"))
        print(save_pseudo_labels(pseudo, args.out or "pseudo_labels.csv"), f"C={pseudo.C:.4f}mm")
    elif cmd == "train-avg":
        _need(args, "data", "lifter", "pseudo")
        lifter = LifterRegressor.from_network(nn.load_checkpoint(args.lifter))
        out = Path(args.out or "avg")
        out.mkdir(parents=True, exist_ok=True)
        model = train_avg(load_dataset(Path(args.data) / "train.jsonl"), load_pseudo_labels(args.pseudo),
                          paradigm=cfg.paradigms[0], lifter=lifter, seed=seed, **cfg.avg.kwargs())
        nn.save_checkpoint(model.network_, out / "avg.ckpt")
        write_training_log(model.loss_curve_, out / "train_log.csv")
        print(out / "avg.ckpt", f"new_params={model.n_new_params_}")
    elif cmd == "eval":
        _need(args, "data", "lifter", "pseudo")
        lifter, avg, prior = _load_models(args)
        test = load_dataset(Path(args.data) / "test.jsonl")
        if cfg.eval_count:
            test = test.subset(np.arange(min(cfg.eval_count, len(test))))
        st = _strategy(cfg)
        batch = generate_hypotheses_batch(lifter, avg, prior, test.det2d, test.sample_ids, st,
                                          cfg.s_max, seed=seed, mm_per_unit=test.mm_per_unit)
        scores = nested_scores(batch.hypotheses, test.gt3d, cfg.samples, cfg.protocols,
                               cfg.pck_threshold_mm)
        print(f"strategy={st.label} seed={seed} n={len(test)}")
        for S in cfg.samples:
            parts = [f"{p.kind.value}/{p.selection.value}={scores[(p, S)].mean():.3f}mm"
                     for p in cfg.protocols]
            print(f"S={S:<4d} " + " ".join(parts) + f" pck={scores[('pck', S)].mean():.4f}")
    elif cmd == "ablate":
        rows = read_results(args.results)
        if args.paradigm:
            rows = [r for r in rows if r.paradigm == args.paradigm]
        if args.alpha is not None:
            rows = [r for r in rows if r.alpha == args.alpha]
        combos = sorted({(r.paradigm, r.alpha) for r in rows})
        for paradigm, alpha in combos:
            tab = ablation_table([r for r in rows if (r.paradigm, r.alpha) == (paradigm, alpha)],
                                 args.protocol or "p1", args.selection or "pbest")
            print(f"paradigm={paradigm} alpha={alpha!r}\n{tab.text}")
    elif cmd == "throughput":
        _need(args, "data", "lifter", "pseudo")
        lifter, avg, prior = _load_models(args)
        test = load_dataset(Path(args.data) / "test.jsonl")
        report = throughput_report(lifter, avg, prior, test.det2d, cfg.samples, _strategy(cfg),
                                   n_samples=args.n_samples, trials=args.trials,
                                   mm_per_unit=test.mm_per_unit)
        for r in report:
            print(f"S={r['S']:<4d} samples/s={r['samples_per_sec']:.1f} "
                  f"hypotheses/s={r['hypotheses_per_sec']:.1f}")
        if args.out:
            write_throughput(report, args.out)
    elif cmd == "export-hypotheses":
        _need(args, "data", "lifter", "pseudo")
        lifter, avg, prior = _load_models(args)
        test = load_dataset(Path(args.data) / "test.jsonl")
        n = min(args.count, len(test))
        st = _strategy(cfg)
        S = args.samples[0] if args.samples else cfg.export_samples
        batch = generate_hypotheses_batch(lifter, avg, prior, test.det2d[:n], test.sample_ids[:n],
                                          st, S, seed=seed, mm_per_unit=test.mm_per_unit,
                                          keep_samples=True)
        print(export_hypotheses(args.out or "hypotheses.jsonl", test.sample_ids[:n],
                                test.det2d[:n], batch, st, seed))
    elif cmd == "run":
        print(run_pipeline(cfg))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error [{e.stage}]: {e.cause}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - report and exit nonzero
        print(f"error [{args.command}]: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
