"""``memjscc`` command-line entry point.

Exit codes: 0 success, 2 usage/configuration error or missing input,
3 delay outside the surrogate's validity range, 4 domain or training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config_file, resolve
from .errors import DomainError, TrainingError, ValidityError

log = logging.getLogger("memjscc")

EXIT_USAGE, EXIT_VALIDITY, EXIT_ERROR = 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, "
                                         f"got {text!r}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="JSON run config")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--profile", choices=["paper", "desk"],
                   help="preset scale (paper or desk)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _images_args(p):
    p.add_argument("--data-dir", metavar="DIR",
                   help="CIFAR-10 root (falls back to $MEMJSCC_DATA_DIR)")
    p.add_argument("--image-source", choices=["auto", "cifar", "synthetic"])
    p.add_argument("--train-count", type=int)
    p.add_argument("--test-count", type=int)


def _model_args(p):
    p.add_argument("--surrogate", metavar="PATH",
                   help="fitted surrogate checkpoint")
    p.add_argument("--conditioning",
                   choices=["none", "encoder", "decoder", "both"])
    p.add_argument("--budget", type=float, metavar="J",
                   help="energy budget e_b in joules")
    p.add_argument("--energy-penalty", choices=["default", "literal"])
    p.add_argument("--loss", choices=["mse", "frobenius"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="memjscc",
        description="Image storage on drifting memristors with learned "
                    "joint source-channel coding.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a drift dataset")
    _common(p)
    p.add_argument("--count", type=int, help="number of series")
    p.add_argument("--duration", type=float, help="series length (s)")
    p.add_argument("--sample-rate", type=float, help="samples per second")
    p.add_argument("--spacing", choices=["linear", "log"],
                   help="spacing of initial resistances")
    p.add_argument("--format", choices=["bin", "csv"], default="bin")

    p = sub.add_parser("energy", help="tabulate programming energy")
    _common(p)
    p.add_argument("--r-min", type=float, default=100.0)
    p.add_argument("--r-max", type=float, default=5e5)
    p.add_argument("--points", type=int, default=9)

    p = sub.add_parser("fit-surrogate", help="fit the surrogate channel")
    _common(p)
    p.add_argument("--dataset", metavar="DIR", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("validate-surrogate",
                       help="compare surrogate and simulator moments")
    _common(p)
    p.add_argument("--surrogate", metavar="PATH", required=True)
    p.add_argument("--r0", type=_floats, default=[1e3, 1e4, 1e5, 5e5],
                   help="initial resistances (ohm), comma-separated")
    p.add_argument("--delays", type=_floats, default=[1, 10, 100, 500])
    p.add_argument("--samples", type=int, default=10000)

    p = sub.add_parser("train", help="train a JSCC model")
    _common(p)
    _images_args(p)
    _model_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--d-min", type=int)
    p.add_argument("--d-max", type=int)
    p.add_argument("--per-sample-delay", action="store_true", default=None)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", metavar="PATH", help="checkpoint to resume")

    p = sub.add_parser("eval", help="PSNR vs delay for trained models")
    _common(p)
    _images_args(p)
    p.add_argument("--model", metavar="PATH", action="append", required=True,
                   help="model checkpoint (repeatable)")
    p.add_argument("--surrogate", metavar="PATH")
    p.add_argument("--channel",
                   choices=["surrogate", "ground-truth", "noiseless"])
    p.add_argument("--delays", type=_floats)
    p.add_argument("--draws", type=int)

    p = sub.add_parser("ablate", help="single-delay and noiseless ablations")
    _common(p)
    _images_args(p)
    _model_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--model", metavar="PATH", action="append", default=[],
                   help="extra trained model to compare (repeatable)")
    p.add_argument("--delays", type=_floats, help="evaluation delays")

    p = sub.add_parser("report", help="tables and plots for trained models")
    _common(p)
    _images_args(p)
    p.add_argument("--model", metavar="PATH", action="append", required=True)
    p.add_argument("--surrogate", metavar="PATH", required=True)
    p.add_argument("--channel",
                   choices=["surrogate", "ground-truth"], default=None,
                   help="restrict to one channel (default: both)")
    p.add_argument("--delays", type=_floats)
    p.add_argument("--draws", type=int)
    return ap


def _set(d: dict, section: str, key: str, value):
    if value is not None:
        d.setdefault(section, {})[key] = value


def overrides_from_args(args) -> dict:
    o: dict = {}
    g = vars(args)
    if g.get("seed") is not None:
        o["seed"] = g["seed"]
    _set(o, "data", "data_dir", g.get("data_dir"))
    _set(o, "data", "source", g.get("image_source"))
    _set(o, "data", "train_count", g.get("train_count"))
    _set(o, "data", "test_count", g.get("test_count"))
    _set(o, "architecture", "conditioning", g.get("conditioning"))
    _set(o, "regularization", "e_b", g.get("budget"))
    _set(o, "regularization", "energy_penalty", g.get("energy_penalty"))
    _set(o, "regularization", "reconstruction", g.get("loss"))
    _set(o, "evaluation", "channel", g.get("channel"))
    _set(o, "evaluation", "draws", g.get("draws"))
    if g.get("delays") is not None and args.command != "validate-surrogate":
        _set(o, "evaluation", "delays", g["delays"])
    if args.command == "train" or args.command == "ablate":
        _set(o, "training", "epochs", g.get("epochs"))
        _set(o, "training", "lr", g.get("lr"))
        _set(o, "training", "batch_size", g.get("batch_size"))
        _set(o, "training", "d_min", g.get("d_min"))
        _set(o, "training", "d_max", g.get("d_max"))
        _set(o, "training", "per_sample_delay", g.get("per_sample_delay"))
        _set(o, "training", "checkpoint_every", g.get("checkpoint_every"))
    if args.command == "fit-surrogate":
        _set(o, "surrogate", "epochs", g.get("epochs"))
    if args.command == "gen-data":
        _set(o, "dataset", "count", g.get("count"))
        _set(o, "dataset", "duration_s", g.get("duration"))
        _set(o, "dataset", "sample_rate_hz", g.get("sample_rate"))
        _set(o, "dataset", "r0_spacing", g.get("spacing"))
        if g.get("seed") is not None:
            _set(o, "dataset", "master_seed", g["seed"])
    if g.get("budget") is not None:
        o["budgets"] = [g["budget"]]
    return o


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_json(out: Path, args, cfg: RunConfig, extra: dict | None = None):
    info = {"command": args.command, "argv": sys.argv[1:],
            "version": __version__, "config": cfg.to_dict()}
    info.update(extra or {})
    (out / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True,
                                             default=str) + "\n")


def _need_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_images(cfg: RunConfig, split: str):
    from .images import load_images
    count = cfg.data.train_count if split == "train" else cfg.data.test_count
    images, source = load_images(split, count, cfg.data.image_seed,
                                 cfg.data.data_dir, cfg.data.source)
    log.info("%s images: %d from %s", split, len(images), source)
    return images, source


def cmd_gen_data(args, cfg: RunConfig) -> int:
    from .drift import generate_dataset, save_dataset
    out = _out_dir(args, "drift_data")
    t0 = time.time()
    ds = generate_dataset(cfg.dataset)
    save_dataset(ds, out, fmt=args.format)
    write_run_json(out, args, cfg)
    m = cfg.dataset.to_manifest()
    print(f"wrote {m['count']} series x {cfg.dataset.points} points "
          f"({m['r0_spacing']} r0 in [{m['r0_min_ohm']:g}, "
          f"{m['r0_max_ohm']:g}] ohm, seed {m['master_seed']}) to {out} "
          f"in {time.time() - t0:.1f}s")
    return 0


def cmd_energy(args, cfg: RunConfig) -> int:
    from .energy import energy_table
    r, e = energy_table(cfg.energy, args.r_min, args.r_max, args.points)
    lines = ["r_ohm,energy_j"] + [f"{float(a)!r},{float(b)!r}"
                                  for a, b in zip(r, e)]
    if args.out:
        out = _out_dir(args, ".")
        (out / "energy_table.csv").write_text("\n".join(lines) + "\n")
        write_run_json(out, args, cfg)
    print("\n".join(lines))
    return 0


def cmd_fit_surrogate(args, cfg: RunConfig) -> int:
    from .drift import load_dataset
    from .normalization import fit_resistance_normalizer
    from .surrogate import fit_surrogate, save_surrogate
    ds = load_dataset(_need_file(args.dataset, "dataset"))
    out = _out_dir(args, "surrogate")
    t0 = time.time()
    res_nrm = fit_resistance_normalizer(ds)
    model = fit_surrogate(ds, res_nrm, cfg.surrogate)
    save_surrogate(model, out / "surrogate.pt",
                   extra={"dataset": str(args.dataset),
                          "fit": cfg.surrogate.to_dict()})
    write_run_json(out, args, cfg, {"dataset": str(args.dataset)})
    print(f"surrogate fitted in {time.time() - t0:.1f}s -> "
          f"{out / 'surrogate.pt'} (valid up to {model.max_delay:g}s)")
    return 0


def cmd_validate_surrogate(args, cfg: RunConfig) -> int:
    from .surrogate import (load_surrogate, validate_surrogate,
                            write_validation_csv)
    model = load_surrogate(_need_file(args.surrogate, "surrogate"))
    cells = validate_surrogate(model, cfg.dataset.device, args.r0,
                               args.delays, n=args.samples, seed=cfg.seed)
    out = _out_dir(args, "validation")
    write_validation_csv(cells, out / "validation.csv")
    write_run_json(out, args, cfg)
    for c in cells:
        print(f"r0={c.r0_ohm:>10g} d={c.delay_s:>6g} "
              f"mean {c.sur_mean:+.4f}/{c.sim_mean:+.4f} "
              f"std {c.sur_std:.4f}/{c.sim_std:.4f} "
              f"{'ok' if c.passed else 'FAIL'}")
    passed = sum(c.passed for c in cells)
    print(f"{passed}/{len(cells)} cells within tolerance")
    return 0 if passed == len(cells) else 1


def _train_one(cfg: RunConfig, surrogate, images, out: Path, resume=None):
    from .model import save_model
    from .training import Trainer, build_model, write_log
    t0 = time.time()
    if resume:
        trainer = Trainer.resume(resume, surrogate, cfg.training.epochs)
    else:
        model = build_model(cfg.architecture, surrogate, cfg.training,
                            cfg.energy)
        trainer = Trainer(model, surrogate, cfg.training, cfg.regularization,
                          cfg.energy)
    from .images import to_nchw
    trainer.fit(to_nchw(images), out)
    save_model(trainer.model, out / "model.pt", seed=cfg.training.seed,
               extra={"training": cfg.training.to_dict(),
                      "regularization": cfg.regularization.to_dict(),
                      "energy": cfg.energy.to_dict()})
    write_log(trainer.log, out / "train_log.csv")
    return trainer, time.time() - t0


def cmd_train(args, cfg: RunConfig) -> int:
    from dataclasses import replace
    from .surrogate import load_surrogate
    from .training import epoch_means
    surrogate = load_surrogate(_need_file(args.surrogate, "surrogate"))
    images, source = _load_images(cfg, "train")
    out = _out_dir(args, "run")
    budgets = ([cfg.regularization.e_b] if len(cfg.budgets) <= 1
               else cfg.budgets)
    for e_b in budgets:
        sub = out if len(budgets) == 1 else out / f"eb_{e_b:g}"
        run = replace(cfg, regularization=replace(cfg.regularization,
                                                  e_b=e_b))
        sub.mkdir(parents=True, exist_ok=True)
        write_run_json(sub, args, run, {"image_source": source})
        trainer, dt = _train_one(run, surrogate, images, sub, args.resume)
        losses = epoch_means(trainer.log)
        print(f"e_b={e_b:g} J: epoch losses "
              f"{', '.join(f'{v:.5f}' for v in losses)} ({dt:.0f}s) -> "
              f"{sub / 'model.pt'}")
    return 0


def _load_models(paths) -> dict:
    from .model import load_model
    models = {}
    for p in paths:
        p = _need_file(p, "model checkpoint")
        name = p.parent.name if p.name == "model.pt" else p.stem
        while name in models:
            name += "_"
        models[name] = load_model(p).model
    return models


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluation import emit_report, eval_psnr_vs_delay
    from .surrogate import load_surrogate
    models = _load_models(args.model)
    ev = cfg.evaluation
    surrogate = None
    if ev.channel == "surrogate":
        surrogate = load_surrogate(_need_file(args.surrogate, "surrogate"))
    images, source = _load_images(cfg, "test")
    report = eval_psnr_vs_delay(models, ev.delays, images, ev.channel,
                                surrogate=surrogate,
                                device=cfg.dataset.device,
                                energy=cfg.energy, draws=ev.draws,
                                seed=ev.seed)
    report.meta["image_source"] = source
    out = _out_dir(args, "eval")
    emit_report(report, out, name="eval")
    write_run_json(out, args, cfg)
    for r in report.records:
        print(f"{r.model_id:>16} {r.channel:>12} d={r.delay:>6g} "
              f"{r.mean_psnr:7.2f} dB  {r.mean_energy:.4f} J")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .evaluation import emit_report, run_ablations
    from .surrogate import load_surrogate
    surrogate = load_surrogate(_need_file(args.surrogate, "surrogate"))
    extra = _load_models(args.model)
    train_images, _ = _load_images(cfg, "train")
    test_images, source = _load_images(cfg, "test")
    out = _out_dir(args, "ablation")
    write_run_json(out, args, cfg)
    report, _ = run_ablations(surrogate, train_images, test_images,
                              cfg.architecture, cfg.regularization,
                              cfg.training, cfg.evaluation.ablation_delays,
                              cfg.evaluation.delays, extra_models=extra,
                              seed=cfg.evaluation.seed, out_dir=out)
    report.meta["image_source"] = source
    emit_report(report, out, name="ablation")
    for r in report.records:
        print(f"{r.model_id:>16} d={r.delay:>6g} {r.mean_psnr:7.2f} dB  "
              f"{r.mean_energy:.4f} J")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    from .evaluation import (EvalReport, emit_report, eval_energy_histograms,
                             eval_psnr_vs_delay)
    from .surrogate import load_surrogate
    models = _load_models(args.model)
    surrogate = load_surrogate(_need_file(args.surrogate, "surrogate"))
    images, source = _load_images(cfg, "test")
    ev = cfg.evaluation
    out = _out_dir(args, "report")
    channels = [args.channel] if args.channel else ["surrogate",
                                                    "ground-truth"]
    names = {"surrogate": "psnr_vs_delay", "ground-truth": "ground_truth"}
    for ch in channels:
        rep = eval_psnr_vs_delay(models, ev.delays, images, ch,
                                 surrogate=surrogate,
                                 device=cfg.dataset.device,
                                 energy=cfg.energy, draws=ev.draws,
                                 seed=ev.seed)
        rep.meta["image_source"] = source
        emit_report(rep, out, name=names[ch])
    hist = EvalReport(meta={"image_source": source})
    for name, model in models.items():
        hist.extend(eval_energy_histograms(model, ev.delays, images, name,
                                           cfg.energy))
    emit_report(hist, out, name="histograms")
    write_run_json(out, args, cfg)
    print(f"report written to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "energy": cmd_energy,
    "fit-surrogate": cmd_fit_surrogate,
    "validate-surrogate": cmd_validate_surrogate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
        cfg = resolve(file_cfg, overrides_from_args(args), args.profile)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"memjscc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidityError as exc:
        print(f"memjscc {args.command}: validity error: {exc}",
              file=sys.stderr)
        return EXIT_VALIDITY
    except (DomainError, TrainingError) as exc:
        print(f"memjscc {args.command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
