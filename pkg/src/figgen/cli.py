"""Command-line entry point wiring all stages into reproducible runs.

Subcommands: synthesize-corpus, prepare-data, train-autoencoder,
train-diffusion, sample, evaluate. Exit codes: 0 success, 2 config error,
3 runtime abort. FIGGEN_DETERMINISTIC=1 forces single-threaded reductions.
"""

import argparse
import json
import sys
from pathlib import Path

import figgen
from figgen import checkpoints, imageio, metrics
from figgen.config import ConfigError, RunConfig, load_layered
from figgen.corpus.manifest import ManifestError, load_manifest, write_corpus
from figgen.corpus.prepare import PreparedDataset, prepare_dataset
from figgen.corpus.synthetic import synthesize_corpus
from figgen.autoencoder.features import default_ocr_style
from figgen.diffusion.sampler import SamplerConfig
from figgen.seeding import configure_determinism
from figgen.trainer import TrainingAborted, train_autoencoder, train_diffusion

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _add_config_flags(parser):
    parser.add_argument("--config", default=None, help="TOML-like config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )


def cmd_synthesize_corpus(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    records = synthesize_corpus(args.n, args.seed)
    out = Path(args.out)
    manifest = write_corpus(records, out)
    cfg.write_echo(out)
    print(f"wrote {len(records)} synthetic records to {manifest}")
    return EXIT_OK


def cmd_prepare_data(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    records = load_manifest(args.manifest)
    stats = prepare_dataset(
        records,
        args.out,
        resolution=cfg.get("corpus", "resolution"),
        vocab_size=cfg.get("corpus", "vocab_size"),
        l_max=cfg.get("corpus", "l_max"),
        ratio_lo=cfg.get("corpus", "ratio_lo"),
        ratio_hi=cfg.get("corpus", "ratio_hi"),
        val_fraction=cfg.get("corpus", "val_fraction"),
        seed=cfg.get("corpus", "seed"),
    )
    cfg.write_echo(args.out)
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_train_autoencoder(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    if args.max_steps is not None:
        cfg.apply_overrides([f"trainer.max_steps={args.max_steps}"])
    if args.seed is not None:
        cfg.apply_overrides([f"trainer.seed={args.seed}"])
    train_cfg = cfg.train_config("autoencoder")
    ae_cfg = cfg.autoencoder_config()
    train_cfg.validate()
    ae_cfg.validate()
    dataset = PreparedDataset(args.data, split="train")
    cfg.write_echo(args.out, stage="autoencoder")
    final = train_autoencoder(train_cfg, ae_cfg, dataset, args.out, resume_from=args.resume)
    print(f"autoencoder checkpoint: {final}")
    return EXIT_OK


def cmd_train_diffusion(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    if args.max_steps is not None:
        cfg.apply_overrides([f"trainer.max_steps={args.max_steps}"])
    if args.seed is not None:
        cfg.apply_overrides([f"trainer.seed={args.seed}"])
    if not Path(args.ae_checkpoint).is_file():
        raise ConfigError(f"autoencoder checkpoint not found: {args.ae_checkpoint}")
    train_cfg = cfg.train_config("diffusion")
    unet_cfg = cfg.unet_config()
    text_cfg = cfg.text_config()
    train_cfg.validate()
    unet_cfg.validate()
    text_cfg.validate()
    dataset = PreparedDataset(args.data, split="train")
    cfg.write_echo(args.out, stage="diffusion")
    final = train_diffusion(
        train_cfg,
        dataset,
        args.ae_checkpoint,
        unet_cfg,
        text_cfg,
        args.out,
        schedule_num_steps=cfg.get("schedule", "num_steps"),
        beta_start=cfg.get("schedule", "beta_start"),
        beta_end=cfg.get("schedule", "beta_end"),
        resume_from=args.resume,
    )
    print(f"diffusion checkpoint: {final}")
    return EXIT_OK


def _parse_grid(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _read_captions(args):
    """(id, caption) pairs from a plain-text file or a reference manifest."""
    if args.manifest:
        records = load_manifest(args.manifest)
        return [(r.id, r.caption) for r in records]
    lines = [l.strip() for l in Path(args.captions).read_text(encoding="utf-8").splitlines()]
    pairs = [(f"{i:05d}", line) for i, line in enumerate(lines) if line]
    return pairs


def cmd_sample(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    for flag, key in (("steps", "num_steps"), ("cfg_scale", "cfg_scale"),
                      ("seed", "seed"), ("eta", "eta")):
        value = getattr(args, flag)
        if value is not None:
            cfg.apply_overrides([f"sampler.{key}={value}"])
    if args.cfg_grid and args.seed_grid:
        raise ConfigError("--cfg-grid and --seed-grid are mutually exclusive")
    if not args.captions and not args.manifest:
        raise ConfigError("need --captions or --manifest")

    pairs = _read_captions(args)
    if not pairs:
        raise ConfigError("captions file is empty")
    base = cfg.sampler_config()
    base.validate()

    # Grid columns: CFG scales or seeds; default is a single column.
    if args.cfg_grid:
        columns = [(f"cfg{s:g}", SamplerConfig(base.num_steps, base.eta, s, base.seed))
                   for s in _parse_grid(args.cfg_grid)]
    elif args.seed_grid:
        columns = [(f"seed{int(s)}", SamplerConfig(base.num_steps, base.eta, base.cfg_scale, int(s)))
                   for s in _parse_grid(args.seed_grid)]
    else:
        columns = [("", base)]

    pipeline = checkpoints.load_pipeline(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_echo(out)

    captions = [c for _, c in pairs]
    grid_rows = [[] for _ in pairs]
    sidecar = []
    for label, col_cfg in columns:
        images = pipeline.sample_images(captions, col_cfg)
        for row, ((sample_id, caption), image) in enumerate(zip(pairs, images)):
            name = f"{sample_id}_{label}.png" if label else f"{sample_id}.png"
            imageio.save_png(out / name, image)
            grid_rows[row].append(image)
            sidecar.append(
                {
                    "file": name,
                    "caption": caption,
                    "seed": col_cfg.seed,
                    "cfg_scale": col_cfg.cfg_scale,
                    "steps": col_cfg.num_steps,
                    "eta": col_cfg.eta,
                }
            )

    imageio.save_png(out / "grid.png", imageio.make_grid(grid_rows))
    (out / "samples.json").write_text(
        json.dumps({"version": figgen.__version__, "samples": sidecar}, indent=2),
        encoding="utf-8",
    )
    print(f"wrote {len(sidecar)} samples and grid.png to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_layered(args.config, args.overrides)
    if args.n is not None:
        cfg.apply_overrides([f"metrics.n={args.n}"])
    scoring = metrics.ScoringFeatureExtractor(
        seed=cfg.get("metrics", "extractor_seed"),
        num_classes=cfg.get("metrics", "num_classes"),
    )
    report = metrics.evaluate(
        args.generated,
        args.reference,
        scoring,
        default_ocr_style(),
        n=cfg.get("metrics", "n"),
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(out_path)
    print(report.table_row())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figgen", description=__doc__)
    parser.add_argument("--version", action="version", version=f"figgen {figgen.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize-corpus", help="generate a synthetic figure corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synthesize_corpus)

    p = sub.add_parser("prepare-data", help="filter, pad, tokenize, split a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-autoencoder", help="stage 1: train the KL autoencoder")
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_autoencoder)

    p = sub.add_parser("train-diffusion", help="stage 2: train U-Net + text encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--ae-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("sample", help="generate figures from captions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--captions", default=None, help="plain text, one caption per line")
    p.add_argument("--manifest", default=None, help="take captions and ids from a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="DDIM steps (default 200)")
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    p.add_argument("--cfg-grid", default=None, help="comma list of scales, e.g. 1.0,5.0,10.0")
    p.add_argument("--seed-grid", default=None, help="comma list of seeds")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="FID/IS/KID/OCR-SIM over generated vs reference")
    p.add_argument("--generated", required=True, help="directory of generated PNGs")
    p.add_argument("--reference", required=True, help="reference manifest")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", required=True, help="report JSON path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    configure_determinism()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, metrics.MetricsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, checkpoints.CheckpointError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
