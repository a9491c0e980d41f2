"""Command-line driver: dataset construction, training, denoising,
degradation, evaluation, the residual/batch-norm ablation, and model
inspection behind one executable.

Run configuration is a flat key=value text file ("#" starts a comment).
Every key has a default except `sources` and the per-subcommand output
paths; unknown keys are rejected with the offending line number, and a
duplicated key keeps its last value with a warning. `--config` accepts a
file path or the name of a shipped preset (dncnn-s-15, dncnn-s-25,
dncnn-s-50, dncnn-b, dncnn-3).

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 training diverged. Heavy numeric imports happen after
thread setup so `--threads` (or the DNCNN_THREADS environment variable)
can pin the BLAS pool.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

from .errors import (
    ConfigError,
    DegenerateBatchError,
    FormatError,
    ShapeError,
    SizeError,
    TrainingDivergedError,
    UsageError,
)

PRESETS = ("dncnn-s-15", "dncnn-s-25", "dncnn-s-50", "dncnn-b", "dncnn-3")

VARIANT_GRID = (
    ("rl+bn", True, True),
    ("rl", True, False),
    ("bn", False, True),
    ("plain", False, False),
)


@dataclass
class RunConfig:
    depth: int = 17
    hidden: int = 64
    channels: int = 1
    residual: bool = True
    bn: bool = True
    epochs: int = 50
    batch: int = 128
    lr_start: float = 0.1
    lr_end: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1
    augment: bool = True
    fixed_noise: bool = False
    mode: str = "S"
    sources: str | None = None
    patch: int = 40
    count: int = 204800
    scale: str = "paper"
    desk_factor: int = 100
    degrade: str = "awgn:25.0"
    seed: int = 0
    deterministic: bool = True
    model_out: str | None = None
    history_out: str | None = None
    report_out: str | None = None
    curves_out: str | None = None
    manifest_out: str | None = None


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(key: str, value: str, kind, lineno: int):
    if kind is bool:
        if value.lower() in _BOOL_WORDS:
            return _BOOL_WORDS[value.lower()]
        raise ConfigError(f"bad boolean for {key!r}: {value!r}", line=lineno)
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(
            f"bad {kind.__name__} for {key!r}: {value!r}", line=lineno
        ) from None


def _key_types():
    types = {}
    for f in fields(RunConfig):
        if f.type in ("int", int):
            types[f.name] = int
        elif f.type in ("float", float):
            types[f.name] = float
        elif f.type in ("bool", bool):
            types[f.name] = bool
        else:
            types[f.name] = str
    return types


_KEY_TYPES = _key_types()


def _validate(cfg: RunConfig, lines: dict):
    """Cross-field invariant checks; error messages cite the config line
    that set the offending key when there is one."""

    def line_of(key):
        return lines.get(key)

    def bad(key, message):
        raise ConfigError(message, line=line_of(key))

    if cfg.depth < 2:
        bad("depth", f"depth must be >= 2, got {cfg.depth}")
    if cfg.hidden < 1:
        bad("hidden", f"hidden must be >= 1, got {cfg.hidden}")
    if cfg.channels not in (1, 3):
        bad("channels", f"channels must be 1 or 3, got {cfg.channels}")
    if cfg.epochs < 1:
        bad("epochs", f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch < 1:
        bad("batch", f"batch must be >= 1, got {cfg.batch}")
    if cfg.bn and cfg.batch < 2:
        bad("batch", "batch must be >= 2 when bn=true")
    if cfg.lr_start <= 0 or cfg.lr_end <= 0:
        bad("lr_start", "learning rates must be positive")
    if not 0 <= cfg.momentum < 1:
        bad("momentum", f"momentum must be in [0, 1), got {cfg.momentum}")
    if cfg.weight_decay < 0:
        bad("weight_decay", f"weight_decay must be >= 0, got {cfg.weight_decay}")
    if cfg.optimizer not in ("sgd", "adam"):
        bad("optimizer", f"optimizer must be 'sgd' or 'adam', got {cfg.optimizer!r}")
    if cfg.eval_every < 1:
        bad("eval_every", f"eval_every must be >= 1, got {cfg.eval_every}")
    if cfg.mode not in ("S", "B", "3", "Three"):
        bad("mode", f"mode must be 'S', 'B', or '3', got {cfg.mode!r}")
    if cfg.patch < 1:
        bad("patch", f"patch must be >= 1, got {cfg.patch}")
    if cfg.count < 1:
        bad("count", f"count must be >= 1, got {cfg.count}")
    if cfg.scale not in ("paper", "desk"):
        bad("scale", f"scale must be 'paper' or 'desk', got {cfg.scale!r}")
    if cfg.desk_factor < 1:
        bad("desk_factor", f"desk_factor must be >= 1, got {cfg.desk_factor}")
    from .degrade import parse_token

    try:
        parse_token(cfg.degrade)
    except ConfigError as exc:
        bad("degrade", str(exc))


def _preset_path(name: str) -> str | None:
    stem = name[: -len(".cfg")] if name.endswith(".cfg") else name
    if stem not in PRESETS:
        return None
    return os.path.join(os.path.dirname(__file__), "presets", stem + ".cfg")


def parse_config(path: str | None) -> RunConfig:
    """Load a key=value config file (or preset name) over the defaults."""
    cfg = RunConfig()
    if path is None:
        _validate(cfg, {})
        return cfg
    real = path
    if not os.path.isfile(real):
        preset = _preset_path(path)
        if preset is None:
            raise ConfigError(f"config file not found: {path}")
        real = preset
    lines = {}
    try:
        with open(real, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {real}: {exc}") from None
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        if key not in _KEY_TYPES:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in lines:
            print(
                f"warning: {real}:{lineno}: duplicate key {key!r} overrides line {lines[key]}",
                file=sys.stderr,
            )
        lines[key] = lineno
        setattr(cfg, key, _coerce(key, value, _KEY_TYPES[key], lineno))
    _validate(cfg, lines)
    return cfg


def effective_config(cfg: RunConfig) -> str:
    """Canonical echo of a config; feeding it back reproduces the run."""
    out = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{f.name}={value}")
    return "\n".join(out) + "\n"


def _write_echo(cfg: RunConfig, out_path: str):
    with open(out_path + ".effective.cfg", "w", encoding="utf-8") as fh:
        fh.write(effective_config(cfg))


def _resolve_sources(spec_text: str):
    """Expand a comma-separated list of files and/or directories."""
    paths = []
    for part in spec_text.split(","):
        part = part.strip()
        if not part:
            continue
        if os.path.isdir(part):
            names = sorted(
                n for n in os.listdir(part) if n.endswith((".pgm", ".ppm"))
            )
            if not names:
                raise FormatError(f"no .pgm/.ppm files in directory {part}")
            paths.extend(os.path.join(part, n) for n in names)
        else:
            paths.append(part)
    if not paths:
        raise ConfigError("sources resolved to an empty list")
    return paths


def _load_named_gray(paths):
    from .data import load_image, to_gray

    return [(os.path.basename(p), to_gray(load_image(p))) for p in paths]


def _dataset_from_config(cfg: RunConfig):
    from .data import Manifest, PatchDataset, extract_patches, load_image, to_gray
    from .degrade import parse_token
    from .rng import SeededRng

    if cfg.sources is None:
        raise ConfigError("missing required key: sources")
    paths = _resolve_sources(cfg.sources)
    images = [to_gray(load_image(p)) for p in paths]
    count = cfg.count
    scale_tag = "paper"
    if cfg.scale == "desk":
        count = max(1, count // cfg.desk_factor)
        scale_tag = f"desk:{cfg.desk_factor}"
    rng = SeededRng(cfg.seed).stream("patches")
    patches, entries = extract_patches(images, cfg.patch, count, rng)
    manifest = Manifest(
        sources=paths,
        patch=cfg.patch,
        count=count,
        seed=cfg.seed,
        mode="3" if cfg.mode == "Three" else cfg.mode,
        degrade_token=cfg.degrade,
        scale=scale_tag,
        entries=entries,
    )
    return PatchDataset(patches, parse_token(cfg.degrade), manifest)


def _train_config(cfg: RunConfig):
    from .train import TrainConfig

    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch,
        lr_start=cfg.lr_start,
        lr_end=cfg.lr_end,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        optimizer=cfg.optimizer,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps,
        seed=cfg.seed,
        deterministic=cfg.deterministic,
        eval_every=cfg.eval_every,
        augment=cfg.augment,
        fixed_noise=cfg.fixed_noise,
    )


def _network_spec(cfg: RunConfig, residual=None, bn=None):
    from .model import NetworkSpec

    return NetworkSpec(
        depth=cfg.depth,
        hidden_channels=cfg.hidden,
        image_channels=cfg.channels,
        use_bn=cfg.bn if bn is None else bn,
        use_residual=cfg.residual if residual is None else residual,
    )


def _cmd_build_data(cfg: RunConfig, args) -> int:
    from .data import write_manifest

    out = args.out or cfg.manifest_out
    if out is None:
        raise UsageError("build-data needs --out (or manifest_out in the config)")
    dataset = _dataset_from_config(cfg)
    write_manifest(out, dataset.manifest)
    _write_echo(cfg, out)
    print(f"wrote manifest with {dataset.manifest.count} patches to {out}")
    return 0


def _cmd_train(cfg: RunConfig, args) -> int:
    from .data import dataset_from_manifest, read_manifest
    from .model import build_network, save_model
    from .rng import SeededRng
    from .train import train

    out = args.out or cfg.model_out
    if out is None:
        raise UsageError("train needs --out (or model_out in the config)")
    if args.data:
        manifest = read_manifest(args.data)
        dataset = dataset_from_manifest(manifest, os.path.dirname(args.data) or None)
    else:
        dataset = _dataset_from_config(cfg)
    val = _load_named_gray(_resolve_sources(args.val)) if args.val else []
    model = build_network(_network_spec(cfg), SeededRng(cfg.seed))
    model, history = train(model, dataset, val, _train_config(cfg))
    save_model(model, out)
    _write_echo(cfg, out)
    history_out = args.history or cfg.history_out
    if history_out:
        with open(history_out, "w", encoding="ascii") as fh:
            fh.write(history.to_csv())
    last = history.rows[-1]
    print(f"trained {cfg.epochs} epochs, final loss {last.train_loss:.6g}, saved {out}")
    return 0


def _cmd_denoise(cfg: RunConfig, args) -> int:
    import numpy as np

    from .data import load_image, save_image, to_gray
    from .model import denoise, load_model

    model = load_model(args.model)
    img = load_image(args.infile)
    if model.spec.image_channels == 1 and img.shape[0] == 3:
        img = to_gray(img)
    if img.shape[0] != model.spec.image_channels:
        raise FormatError(
            f"{args.infile}: model expects {model.spec.image_channels} channel(s), "
            f"image has {img.shape[0]}"
        )
    restored = denoise(model, img[None].astype(np.float32))[0]
    save_image(np.clip(restored, 0.0, 1.0), args.out)
    _write_echo(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_degrade(cfg: RunConfig, args) -> int:
    import numpy as np

    from .data import load_image, save_image
    from .degrade import gaussian_noise, jpeg_degrade, sisr_degrade
    from .rng import SeededRng

    chosen = [v is not None for v in (args.sigma, args.factor, args.quality)]
    if sum(chosen) != 1:
        raise UsageError("degrade needs exactly one of --sigma, --factor, --quality")
    img = load_image(args.infile)
    if args.sigma is not None:
        rng = SeededRng(cfg.seed).stream("degrade")
        out = gaussian_noise(img, args.sigma, rng)
    elif args.factor is not None:
        out = sisr_degrade(img, args.factor)
    else:
        out = jpeg_degrade(img, args.quality)
    save_image(np.clip(out, 0.0, 1.0), args.out)
    _write_echo(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(cfg: RunConfig, args) -> int:
    from .degrade import parse_token
    from .metrics import evaluate
    from .model import load_model

    out = args.out or cfg.report_out
    if out is None:
        raise UsageError("eval needs --out (or report_out in the config)")
    model = load_model(args.model)
    named = _load_named_gray(_resolve_sources(args.images))
    spec = parse_token(args.degrade or cfg.degrade)
    report = evaluate(model, named, spec, seed=cfg.seed)
    with open(out, "w", encoding="ascii") as fh:
        fh.write(report.to_csv())
    _write_echo(cfg, out)
    print(f"mean psnr {report.mean_psnr:.4f} dB, mean ssim {report.mean_ssim:.6f}, wrote {out}")
    return 0


def _cmd_ablate(cfg: RunConfig, args) -> int:
    from .metrics import emit_curves
    from .model import build_network, save_model
    from .rng import SeededRng
    from .train import make_variant, train

    out = args.out or cfg.curves_out
    if out is None:
        raise UsageError("ablate needs --out (or curves_out in the config)")
    dataset = _dataset_from_config(cfg)
    if not args.val:
        raise UsageError("ablate needs --val images for the comparison curves")
    val = _load_named_gray(_resolve_sources(args.val))
    tcfg = _train_config(cfg)
    base = _network_spec(cfg)
    stem = out[: -len(".csv")] if out.endswith(".csv") else out
    histories = []
    for label, use_rl, use_bn in VARIANT_GRID:
        spec, _ = make_variant(base, use_rl, use_bn)
        model = build_network(spec, SeededRng(cfg.seed))
        model, history = train(model, dataset, val, tcfg)
        save_model(model, f"{stem}-{label}.dncnn")
        histories.append((label, history))
        print(f"variant {label}: final val psnr {history.rows[-1].val_psnr:.4f} dB")
    with open(out, "w", encoding="ascii") as fh:
        fh.write(emit_curves(histories))
    _write_echo(cfg, out)
    print(f"wrote {out}")
    return 0


def _cmd_inspect_model(cfg: RunConfig, args) -> int:
    from .model import load_model, parameter_count, receptive_field

    model = load_model(args.model)
    s = model.spec
    print(f"depth={s.depth}")
    print(f"hidden={s.hidden_channels}")
    print(f"channels={s.image_channels}")
    print(f"residual={'true' if s.use_residual else 'false'}")
    print(f"bn={'true' if s.use_bn else 'false'}")
    print(f"parameters={parameter_count(model)}")
    print(f"receptive_field={receptive_field(s.depth)}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file path or preset name")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="BLAS thread cap (env DNCNN_THREADS)")
    common.add_argument(
        "--deterministic", action="store_true",
        help="force single-threaded, bit-reproducible execution",
    )
    parser = _Parser(prog="dncnn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("build-data", parents=[common], help="sample patches, write a manifest")
    p.add_argument("--images", help="override config sources")
    p.add_argument("--out", help="manifest output path")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--images", help="override config sources")
    p.add_argument("--data", help="train from an existing manifest")
    p.add_argument("--val", help="validation images (dir or comma list)")
    p.add_argument("--out", help="model output path")
    p.add_argument("--history", help="history CSV output path")
    p.add_argument("--optimizer", choices=("sgd", "adam"), help="override config optimizer")

    p = sub.add_parser("denoise", parents=[common], help="restore one image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("degrade", parents=[common], help="corrupt one image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, help="Gaussian noise level on the 0..255 scale")
    p.add_argument("--factor", type=int, help="bicubic shrink/enlarge factor (2, 3, or 4)")
    p.add_argument("--quality", type=int, help="compression quality in [1, 100]")

    p = sub.add_parser("eval", parents=[common], help="score a model over images")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--degrade", help="degradation descriptor (default from config)")
    p.add_argument("--out", help="report CSV output path")

    p = sub.add_parser("ablate", parents=[common],
                       help="train the four residual x batch-norm variants")
    p.add_argument("--images", help="override config sources")
    p.add_argument("--val", help="validation images (dir or comma list)")
    p.add_argument("--out", help="curve CSV output path")
    p.add_argument("--optimizer", choices=("sgd", "adam"), help="override config optimizer")

    p = sub.add_parser("inspect-model", parents=[common], help="print model facts")
    p.add_argument("--model", required=True)
    return parser


_COMMANDS = {
    "build-data": _cmd_build_data,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "degrade": _cmd_degrade,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "inspect-model": _cmd_inspect_model,
}


def _apply_threads(args):
    n = args.threads
    if n is None:
        env = os.environ.get("DNCNN_THREADS")
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise UsageError(f"DNCNN_THREADS must be an integer, got {env!r}") from None
    if getattr(args, "deterministic", False):
        n = 1
    if n is None:
        return
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n)


def dispatch(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand (try --help)")
    _apply_threads(args)
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "deterministic", False):
        cfg.deterministic = True
    if getattr(args, "optimizer", None):
        cfg.optimizer = args.optimizer
    if getattr(args, "images", None):
        cfg.sources = args.images
    return _COMMANDS[args.command](cfg, args)


def main(argv=None) -> int:
    try:
        return dispatch(sys.argv[1:] if argv is None else argv)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, SizeError, ShapeError, DegenerateBatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
