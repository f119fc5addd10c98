"""Command line entry points.

Subcommands: gen-data, pretrain-gen, pretrain-disc, adversarial,
train-all, evaluate, ablate, generate. A single JSON config file feeds
every training command; individual flags override it.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, ContractError, DataError, HiercapError, NumericError
from .toyscene import SceneConfig, generate_dataset
from .train import TrainConfig, Trainer, ablate, load_bundle


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", choices=("hierarchical", "global", "local"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", dest="lr_mle", type=float)
    p.add_argument("--lr-adv", dest="lr_adv", type=float)
    p.add_argument("--mle-epochs", dest="mle_epochs", type=int)
    p.add_argument("--d-pretrain-steps", dest="d_pretrain_steps", type=int)
    p.add_argument("--adv-steps", dest="adv_steps", type=int)
    p.add_argument("--adv-budget", dest="adv_budget", choices=("steps", "epochs", "auto"))
    p.add_argument("--rollout-n", dest="rollout_n", type=int)
    p.add_argument("--d-steps-per-g", dest="d_steps_per_g", type=int, choices=(1, 5))
    p.add_argument("--disc-variant", dest="disc_variant", choices=("sentence", "coherence"))
    p.add_argument("--k-objects", dest="k_objects", type=int)
    p.add_argument("--max-train-len", dest="max_train_len", type=int)
    p.add_argument("--max-gen-len", dest="max_gen_len", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)


_NON_CONFIG_ARGS = frozenset((
    "command", "func", "config", "checkpoint", "split", "trace",
    "seeds", "report", "candidates", "references", "count",
))


def _train_config(args) -> TrainConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_ARGS}
    return TrainConfig.from_file(args.config, overrides)


def _trainer(cfg: TrainConfig, with_val: bool = False):
    train = load_bundle(cfg, "train")
    val = load_bundle(cfg, "val", vocab=train.vocab) if with_val else None
    return Trainer(cfg, train, val)


def cmd_gen_data(args) -> int:
    cfg = SceneConfig(
        seed=args.seed if args.seed is not None else 0,
        n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        caption_style=args.caption_style,
    )
    generate_dataset(cfg, args.out_dir or "data")
    print(f"wrote dataset to {args.out_dir or 'data'}")
    return 0


def cmd_pretrain_gen(args) -> int:
    cfg = _train_config(args)
    trainer = _trainer(cfg)
    trainer.pretrain_generator()
    path = trainer.save_checkpoint(trainer._ckpt_path("mle"))
    trainer.write_ledger()
    print(f"saved {path}")
    return 0


def cmd_pretrain_disc(args) -> int:
    cfg = _train_config(args)
    trainer = _trainer(cfg)
    if args.checkpoint:
        trainer.load_checkpoint(args.checkpoint)
    trainer.pretrain_discriminator()
    path = trainer.save_checkpoint(trainer._ckpt_path("disc"))
    trainer.write_ledger()
    print(f"saved {path}")
    return 0


def cmd_adversarial(args) -> int:
    cfg = _train_config(args)
    trainer = _trainer(cfg)
    if args.checkpoint:
        trainer.load_checkpoint(args.checkpoint)
    trainer.adversarial_phase()
    path = trainer.save_checkpoint(trainer._ckpt_path("final"))
    trainer.write_ledger()
    print(f"saved {path}")
    return 0


def cmd_train_all(args) -> int:
    cfg = _train_config(args)
    trainer = _trainer(cfg)
    trainer.run_all(resume_from=args.checkpoint)
    print(f"ledger at {trainer.write_ledger()}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _train_config(args)
    train = load_bundle(cfg, "train")
    data = load_bundle(cfg, args.split, vocab=train.vocab)
    trainer = Trainer(cfg, train)
    if args.checkpoint:
        trainer.load_checkpoint(args.checkpoint)
    report = trainer.evaluate(data, name=f"report.{args.split}", trace_path=args.trace)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = ablate(cfg, seeds, out_path=args.report)
    print(json.dumps(results, sort_keys=True, indent=2))
    return 0


def cmd_generate(args) -> int:
    cfg = _train_config(args)
    train = load_bundle(cfg, "train")
    data = load_bundle(cfg, args.split, vocab=train.vocab)
    trainer = Trainer(cfg, train)
    if args.checkpoint:
        trainer.load_checkpoint(args.checkpoint)
    captions = trainer.greedy_captions(data, trace_path=args.trace)
    count = args.count or len(captions)
    for scene_id, caption in list(zip(data.scene_ids, captions))[:count]:
        print(json.dumps({"id": scene_id, "caption": caption}))
    return 0


def cmd_score(args) -> int:
    from .metrics import score_captions
    with open(args.candidates, encoding="utf-8") as fh:
        cands = [json.loads(line) for line in fh if line.strip()]
    with open(args.references, encoding="utf-8") as fh:
        refs = [json.loads(line) for line in fh if line.strip()]
    if len(cands) != len(refs):
        raise DataError("candidate and reference files differ in length")
    report = score_captions([c["caption"] for c in cands],
                            [r["refs"] for r in refs])
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiercap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the procedural dataset")
    p.add_argument("--out-dir", default="data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--caption-style", choices=("long", "short"), default="long")
    p.set_defaults(func=cmd_gen_data)

    for name, func, extra in (
            ("pretrain-gen", cmd_pretrain_gen, ()),
            ("pretrain-disc", cmd_pretrain_disc, ("checkpoint",)),
            ("adversarial", cmd_adversarial, ("checkpoint",)),
            ("train-all", cmd_train_all, ("checkpoint",))):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", default=None)
        else:
            p.set_defaults(checkpoint=None)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate")
    _add_config_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--trace", default=None, help="attention trace JSONL path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate")
    _add_config_flags(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("generate")
    _add_config_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--trace", default=None)
    p.add_argument("--count", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="score caption files against references")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, ContractError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except HiercapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
