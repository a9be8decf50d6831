"""Command-line entry points.

Subcommands: ``train`` (plain / aux / adversarial), ``attack`` (generate and
dump adversarial batches), ``eval`` (static, adaptive, sweep, ratio,
position-study), and ``report`` (merge and re-emit report files). Every
subcommand accepts ``--config FILE`` (a flat JSON object of option names)
with command-line flags taking precedence, and ``--seed``. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import attacks, ensemble, evaluation, models
from .adv_training import ATConfig, adv_train_epoch
from .attacks import AttackConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_cifar10_batches, load_mnist, synthetic_dataset
from .evaluation import EvalReport, EvalRow, ThreatModel, config_hash, emit_report
from .imaging import dump_adv_batch
from .optim import SGD


def _parse_int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip() != ""]


def _parse_float_list(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip() != ""]


def _parse_schedule(text: str):
    pairs = []
    for part in text.split(","):
        if not part.strip():
            continue
        epoch, factor = part.split(":")
        pairs.append((int(epoch), float(factor)))
    return pairs


def _parse_vgg_config(text: str):
    return [t if t == "M" else int(t) for t in (s.strip() for s in text.split(",")) if t]


def _load_dataset(args, split: str) -> Dataset:
    if args.dataset == "mnist":
        return load_mnist(split, data_dir=args.data_dir)
    if args.dataset == "cifar10":
        if not args.data_dir:
            raise ValueError("--data-dir is required for cifar10")
        return load_cifar10_batches(args.data_dir, split)
    if args.dataset == "synthetic":
        seed = args.seed if split == "train" else args.seed + 1
        return synthetic_dataset(num_classes=args.synthetic_classes,
                                 per_class=args.synthetic_per_class,
                                 image_size=args.synthetic_size,
                                 channels=args.synthetic_channels, seed=seed)
    raise ValueError(f"unknown dataset {args.dataset!r}")


def _add_dataset_args(p: argparse.ArgumentParser):
    p.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10", "synthetic"])
    p.add_argument("--data-dir", default=None, help="directory holding dataset files")
    p.add_argument("--synthetic-classes", type=int, default=10)
    p.add_argument("--synthetic-per-class", type=int, default=100)
    p.add_argument("--synthetic-size", type=int, default=16)
    p.add_argument("--synthetic-channels", type=int, default=1)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    p.add_argument("--seed", type=int, default=0)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    train = _load_dataset(args, "train")
    if args.limit and args.limit < len(train):
        rng = np.random.default_rng(args.seed)
        train = train.sample(args.limit, rng)

    if args.pretrained:
        model = load_checkpoint(args.pretrained)
    else:
        if args.model == "lenet5":
            spec = models.build_lenet5(train.num_classes)
            spec = models.ModelSpec(train.images.shape[1:], spec.backbone, (),
                                    train.num_classes)
        elif args.model == "vgg":
            if not args.vgg_config:
                raise ValueError("--model vgg requires --vgg-config")
            spec = models.build_vgg_config(_parse_vgg_config(args.vgg_config),
                                           train.num_classes, train.images.shape[1:])
        else:
            raise ValueError(f"unknown model {args.model!r}")
        if args.aux and args.aux != "none":
            head = models.build_aux_spec(args.aux, train.num_classes)
            taps = _parse_int_list(args.taps) if args.taps else [1, 3]
            for pos in taps:
                spec = models.attach_aux(spec, pos, head)
        model = models.build_model(spec, seed=args.seed)

    optimizer = SGD(model.parameters(), lr=args.lr, momentum=args.momentum,
                    weight_decay=args.weight_decay,
                    schedule=_parse_schedule(args.schedule) if args.schedule else ())
    alphas = _parse_float_list(args.alphas) if args.alphas else None
    rng = np.random.default_rng(args.seed)

    if args.defense == "adv-train":
        at = ATConfig(epsilon=args.at_eps, step_size=args.at_alpha,
                      iterations=args.at_iters, mix_ratio=args.at_mix, epochs=args.epochs)
        for epoch in range(args.epochs):
            stats = adv_train_epoch(model, train.images, train.labels, optimizer, at,
                                    rng=rng, batch_size=args.batch_size, epoch=epoch)
            print(f"epoch {epoch + 1}/{args.epochs} loss={stats['mean_loss']:.4f} "
                  f"acc={stats['accuracy']:.4f}")
    else:
        for epoch in range(args.epochs):
            stats = ensemble.train_epoch(model, train.images, train.labels, optimizer,
                                         alphas=alphas, rng=rng,
                                         batch_size=args.batch_size, epoch=epoch)
            accs = " ".join(f"{a:.4f}" for a in stats["per_head_accuracy"])
            print(f"epoch {epoch + 1}/{args.epochs} loss={stats['mean_loss']:.4f} acc=[{accs}]")

    model.meta.update({"seed": args.seed, "dataset": args.dataset,
                       "defense": "adv_training" if args.defense == "adv-train" else
                       ("aux_block" if model.num_aux else "none")})
    save_checkpoint(model, args.out)
    print(f"checkpoint written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


def _attack_config(args) -> AttackConfig:
    return AttackConfig(
        family=args.family.replace("-", "_").replace("cw", "cw_l2") if args.family == "cw"
        else args.family.replace("-", "_"),
        epsilon=args.eps, step_size=args.alpha, iterations=args.iters,
        random_start=args.random_start, targeted=args.target is not None,
        target_class=args.target, cw_kappa=args.kappa, cw_search_steps=args.cw_steps,
        cw_iterations=args.cw_iters, cw_lr=args.cw_lr, cw_initial_c=args.cw_c,
        max_queries=args.queries, source_step=args.source_step, orth_step=args.orth_step,
        seed=args.seed)


def _cmd_attack(args) -> int:
    model = load_checkpoint(args.checkpoint)
    test = _load_dataset(args, args.split)
    rng = np.random.default_rng(args.seed)
    subset = test.sample(args.n, rng)
    cfg = _attack_config(args)
    batch = attacks.run_attack(model, subset.images, subset.labels, cfg,
                               rng=np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "advbatch.npz", originals=batch.originals,
             adversarials=batch.adversarials, success=batch.success,
             linf=batch.linf, l2=batch.l2, queries=batch.queries,
             labels=subset.labels)
    paths = dump_adv_batch(batch, out, gain=args.gain)
    summary = {
        "family": cfg.family, "n": len(subset), "success_rate": float(batch.success.mean()),
        "mean_linf": float(batch.linf.mean()), "mean_l2": float(batch.l2.mean()),
        "config_hash": config_hash(asdict(cfg), len(subset), args.seed),
    }
    print(json.dumps(summary, sort_keys=True))
    print(f"wrote {out / 'advbatch.npz'} and {len(paths)} image grids")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_defenses(args):
    defended = {}
    undefended = None
    if args.undefended:
        undefended = load_checkpoint(args.undefended)
        defended["NA"] = undefended
    if args.adv_trained:
        defended["AdversarialTraining"] = load_checkpoint(args.adv_trained)
    if args.aux_checkpoint:
        defended["AuxBlock"] = load_checkpoint(args.aux_checkpoint)
    if not defended:
        raise ValueError("no checkpoints given")
    return defended, undefended


def _cmd_eval(args) -> int:
    test = _load_dataset(args, "test")
    out = Path(args.out)

    if args.mode == "static":
        defended, undefended = _load_defenses(args)
        if undefended is None:
            raise ValueError("static eval requires --undefended (attack source)")
        pgd_cfg = AttackConfig(family="pgd", epsilon=args.eps, step_size=args.alpha,
                               iterations=args.iters, seed=args.seed)
        report = evaluation.static_eval(
            defended, undefended, test, attack_names=args.attacks.split(","),
            n=args.n, cw_n=args.cw_n, boundary_n=args.boundary_n, seed=args.seed,
            pgd_config=pgd_cfg)
    elif args.mode == "adaptive":
        defended, _ = _load_defenses(args)
        cfg = AttackConfig(family="adp_pgd", epsilon=args.eps, step_size=args.alpha,
                           iterations=args.iters, random_start=True, seed=args.seed)
        report = evaluation.adaptive_eval(defended, test, n=args.n, seed=args.seed,
                                          adp_config=cfg,
                                          at_inner=ATConfig(epsilon=args.at_eps,
                                                            step_size=args.at_alpha,
                                                            iterations=args.at_iters))
    elif args.mode == "sweep":
        model = load_checkpoint(args.checkpoint)
        grid = _parse_float_list(args.eps_grid)
        curve = evaluation.epsilon_sweep(model, args.family, grid, test, n=args.n,
                                         mode=args.predict_mode, iterations=args.iters,
                                         seed=args.seed)
        report = EvalReport(sweeps={f"{args.family}:{args.predict_mode}": curve},
                            metadata={"protocol": "sweep", "seed": args.seed})
    elif args.mode == "ratio":
        model = load_checkpoint(args.checkpoint)
        grid = _parse_float_list(args.eps_grid)
        series = evaluation.loss_ratio_experiment(model, test, grid, seed=args.seed,
                                                  n=args.n,
                                                  rand_init_scale=args.rand_init_scale)
        report = EvalReport(ratios=series, metadata={"protocol": "ratio", "seed": args.seed})
    elif args.mode == "position-study":
        model = load_checkpoint(args.checkpoint)
        accs = evaluation.block_position_study(model, test, n=args.n, seed=args.seed,
                                               epsilon=args.eps, step_size=args.alpha,
                                               iterations=args.iters)
        threat = ThreatModel.static()
        chash = config_hash("position", args.eps, args.alpha, args.iters, args.n, args.seed)
        rows = [EvalRow(test.split or "test", "AuxBlock", "pgd", threat.kind, name,
                        acc, args.n, args.seed, chash) for name, acc in accs.items()]
        report = EvalReport(rows=rows, metadata={"protocol": "position-study"})
    else:
        raise ValueError(f"unknown eval mode {args.mode!r}")

    paths = emit_report(report, out, formats=args.formats.split(","))
    for row in report.rows:
        print(f"{row.defense:>20s} {row.attack:>9s} {row.mode:>14s} acc={row.accuracy:.4f}")
    for name, curve in {**report.sweeps, **report.ratios}.items():
        pts = " ".join(f"({e:.3g},{a:.3f})" for e, a in curve)
        print(f"{name}: {pts}")
    print(f"report written to {', '.join(str(p) for p in paths)}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _cmd_report(args) -> int:
    merged = EvalReport()
    for path in args.inputs:
        with open(path) as f:
            merged = merged.merge(EvalReport.from_dict(json.load(f)))
    paths = emit_report(merged, args.out, formats=args.formats.split(","),
                        basename=args.basename)
    print(f"merged {len(args.inputs)} reports into {', '.join(str(p) for p in paths)}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="auxblocks",
                                     description="self-ensemble adversarial defense toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("train", help="train a model (plain, aux, or adversarial)")
    _add_common(p)
    _add_dataset_args(p)
    p.add_argument("--model", default="lenet5", choices=["lenet5", "vgg"])
    p.add_argument("--vgg-config", default=None, help="e.g. '64,64,M,128,128,M'")
    p.add_argument("--aux", default="none",
                   help="aux head kind (mnist, cifar10, mini_imagenet, vgg_block1..3) or none")
    p.add_argument("--taps", default=None, help="comma-separated backbone tap positions")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--schedule", default=None, help="epoch:factor pairs, e.g. '50:0.1'")
    p.add_argument("--alphas", default=None, help="per-head loss weights, backbone last")
    p.add_argument("--defense", default="none", choices=["none", "adv-train"])
    p.add_argument("--at-eps", type=float, default=0.2)
    p.add_argument("--at-alpha", type=float, default=0.02)
    p.add_argument("--at-iters", type=int, default=5)
    p.add_argument("--at-mix", type=float, default=1.0)
    p.add_argument("--pretrained", default=None, help="checkpoint to fine-tune")
    p.add_argument("--limit", type=int, default=0, help="cap the training set size")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("attack", help="generate adversarial examples from a checkpoint")
    _add_common(p)
    _add_dataset_args(p)
    p.add_argument("family", choices=["fgsm", "pgd", "cw", "boundary", "adp-fgsm", "adp-pgd"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--cw-steps", type=int, default=6)
    p.add_argument("--cw-iters", type=int, default=200)
    p.add_argument("--cw-lr", type=float, default=1e-2)
    p.add_argument("--cw-c", type=float, default=1e-2)
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--source-step", type=float, default=1e-2)
    p.add_argument("--orth-step", type=float, default=1e-2)
    p.add_argument("--gain", type=float, default=5.0, help="difference amplification")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_attack)
    subparsers["attack"] = p

    p = sub.add_parser("eval", help="run an evaluation protocol")
    _add_common(p)
    _add_dataset_args(p)
    p.add_argument("mode", choices=["static", "adaptive", "sweep", "ratio", "position-study"])
    p.add_argument("--undefended", default=None, help="plain backbone checkpoint")
    p.add_argument("--adv-trained", default=None, help="adversarially trained checkpoint")
    p.add_argument("--aux-checkpoint", default=None, help="aux-block checkpoint")
    p.add_argument("--checkpoint", default=None, help="single checkpoint (sweep/ratio/position)")
    p.add_argument("--attacks", default="clean,pgd,cw,boundary")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--cw-n", type=int, default=200)
    p.add_argument("--boundary-n", type=int, default=1000)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--at-eps", type=float, default=0.2)
    p.add_argument("--at-alpha", type=float, default=0.02)
    p.add_argument("--at-iters", type=int, default=5)
    p.add_argument("--family", default="adp_pgd", choices=["adp_pgd", "adp_fgsm"])
    p.add_argument("--eps-grid", default="0,0.05,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--predict-mode", default="vote")
    p.add_argument("--rand-init-scale", type=float, default=1.0)
    p.add_argument("--formats", default="csv,json")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=_cmd_eval)
    subparsers["eval"] = p

    p = sub.add_parser("report", help="merge report JSON files and re-emit")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--formats", default="csv,json,svg")
    p.add_argument("--basename", default="merged")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    subparsers["report"] = p

    return parser, subparsers


def _apply_config_file(argv, parser, subparsers):
    """Validate and install --config values as defaults before parsing."""
    if "--config" not in argv:
        return
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in subparsers:
        return
    path = argv[argv.index("--config") + 1]
    with open(path) as f:
        config = json.load(f)
    if not isinstance(config, dict):
        parser.error(f"config file {path} must hold a JSON object")
    sp = subparsers[command]
    valid = {a.dest for a in sp._actions}
    unknown = sorted(k for k in config if k.replace("-", "_") not in valid)
    if unknown:
        parser.error(f"unknown config keys for '{command}': {', '.join(unknown)}")
    sp.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        _apply_config_file(argv, parser, subparsers)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
