"""Command-line interface: train, fuse, enhance, eval.

Exit codes: 0 success, 1 usage error, 2 IO error, 3 numerical
divergence. DACE_THREADS caps the worker count of the embarrassingly
parallel commands (enhance, eval).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import evaluate_pair, write_report
from .network import count_params, forward_fused, fuse_bundle
from .pipeline import (
    ConfigError,
    DivergenceError,
    IMAGE_EXTENSIONS,
    load_config,
    load_dataset,
    load_image,
    save_image,
    train_dn,
    train_ia,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _worker_count(n_items: int) -> int:
    cap = os.environ.get("DACE_THREADS")
    workers = os.cpu_count() or 1
    if cap:
        try:
            workers = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"DACE_THREADS must be an integer, got {cap!r}")
    return max(1, min(workers, n_items))


def _cmd_train(args) -> int:
    config = load_config(args.config)
    print(f"training {config.variant} variant on {config.dataset_dir} "
          f"(seed {config.seed})")
    dataset = load_dataset(config.dataset_dir)
    bundle = train_ia(config, dataset,
                      callback=_progress("ia", config.epochs_ia * len(dataset)))
    if bundle.dn is not None and config.train_denoiser:
        train_dn(config, dataset, bundle,
                 callback=_progress("dn", config.epochs_dn * len(dataset)))
    save_checkpoint(bundle, config.output)
    print(f"saved unfused checkpoint to {config.output} "
          f"({count_params(bundle)} parameters)")
    return EXIT_OK


def _progress(phase: str, total_steps: int):
    stride = max(1, total_steps // 10)

    def cb(step, report):
        if step % stride == 0 or step == total_steps - 1:
            print(f"[{phase}] step {step + 1}/{total_steps} "
                  f"total={report.total:.5f}")

    return cb


def _cmd_fuse(args) -> int:
    bundle = load_checkpoint(args.input)
    fused = fuse_bundle(bundle)
    save_checkpoint(fused, args.output)
    print(f"fused {bundle.variant} bundle -> {args.output} "
          f"({count_params(fused)} parameters)")
    return EXIT_OK


def _collect_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise IOError(f"no images found in {path}")
        return files
    if path.is_file():
        return [path]
    raise IOError(f"input not found: {path}")


def _cmd_enhance(args) -> int:
    bundle = load_checkpoint(args.model)
    if not bundle.fused:
        print("warning: model is unfused; fusing in memory", file=sys.stderr)
        bundle = fuse_bundle(bundle)
    inputs = _collect_inputs(Path(args.input))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    use_dn = not args.no_denoise

    def run(path: Path) -> str:
        img = load_image(path)
        out = forward_fused(img, bundle, use_denoiser=use_dn)
        target = out_dir / (path.stem + ".png")
        save_image(out, target)
        return str(target)

    with ThreadPoolExecutor(max_workers=_worker_count(len(inputs))) as pool:
        for target in pool.map(run, inputs):
            print(f"wrote {target}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = {p.name: p for p in _collect_inputs(pred_dir)}
    gts = {p.name: p for p in _collect_inputs(gt_dir)}
    matched = sorted(set(preds) & set(gts))
    missing = sorted(set(preds) ^ set(gts))
    for name in missing:
        side = "ground truth" if name in preds else "prediction"
        print(f"skipping {name}: no matching {side}", file=sys.stderr)
    if not matched:
        raise IOError("no matching prediction/ground-truth filenames")

    def run(name: str):
        pred = load_image(preds[name])
        gt = load_image(gts[name])
        return name, evaluate_pair(pred, gt)

    with ThreadPoolExecutor(max_workers=_worker_count(len(matched))) as pool:
        rows = list(pool.map(run, matched))
    write_report(rows, args.report)
    for name, rep in rows:
        print(f"{name}: psnr={rep.psnr:.4f} ssim={rep.ssim:.4f} "
              f"de2000={rep.ciede2000:.4f}")
    print(f"report written to {args.report}")
    return EXIT_OK if not missing else EXIT_IO


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dacelight",
                     description="Low-light image enhancement with adaptive "
                                 "adjustment curves")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)

    p_fuse = sub.add_parser("fuse", help="average trained modules for inference")
    p_fuse.add_argument("--in", dest="input", required=True)
    p_fuse.add_argument("--out", dest="output", required=True)

    p_enh = sub.add_parser("enhance", help="enhance an image or directory")
    p_enh.add_argument("--model", required=True)
    p_enh.add_argument("--in", dest="input", required=True)
    p_enh.add_argument("--out", dest="output", required=True)
    p_enh.add_argument("--no-denoise", action="store_true")

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--report", required=True)
    return parser


_COMMANDS = {"train": _cmd_train, "fuse": _cmd_fuse, "enhance": _cmd_enhance,
             "eval": _cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IOError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
