"""Command-line interface.

Subcommands: ``make-phantom``, ``inspect``, ``pathoseg``, ``train``,
``predict``, ``evaluate``. Exit codes: 0 success, 2 usage error
(argparse), 3 data error, 4 non-finite training loss.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import PRESETS, build_run_config
from .dataset import list_case_dirs, load_case, load_dataset
from .errors import DataError, F3NetError, NonFiniteLossError, ShapeError
from .inference import evaluate_dataset, predict_case, score_predictions
from .metrics import render_markdown_table, write_report_csv
from .network import F3NetModel, load_checkpoint
from .nifti import read_volume, write_volume
from .pathoseg import SegMask, binarize, merge_distinct_masks, merge_whole, resample_mask
from .phantom import PhantomSpec, make_phantom_family
from .training import train
from .volumes import MODALITY_SUFFIX, Modality, SUFFIX_MODALITY

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="force deterministic kernels and seeding")
    parser.add_argument("--preset", choices=PRESETS, default="paper",
                        help="configuration preset (default: paper)")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override any config field, e.g. --set train.initial_lr=0.02")


def _collect_overrides(args) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    for item in args.sets:
        try:
            dotted, value = item.split("=", 1)
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ShapeError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        sections.setdefault(section.strip(), {})[key.strip()] = value
    if args.seed is not None:
        sections.setdefault("train", {})["seed"] = str(args.seed)
    if args.deterministic:
        sections.setdefault("train", {})["deterministic"] = "true"
    return sections


def _run_config(args):
    return build_run_config(args.preset, args.config, _collect_overrides(args))


def _seed_everything(seed: int, deterministic: bool) -> None:
    np.random.seed(seed & 0xFFFFFFFF)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def cmd_make_phantom(args) -> int:
    modalities = tuple(Modality)
    if args.modalities:
        names = [s.strip().lower() for s in args.modalities.split(",") if s.strip()]
        unknown = [n for n in names if n not in SUFFIX_MODALITY]
        if unknown:
            raise ShapeError(f"unknown modalities {unknown}; choose from {sorted(SUFFIX_MODALITY)}")
        modalities = tuple(SUFFIX_MODALITY[n] for n in names)
    shape = tuple(int(s) for s in args.shape.replace(",", " ").split())
    if len(shape) == 1:
        shape = shape * 3
    spec = PhantomSpec(
        shape=shape,
        num_lesions=args.lesions,
        radius_range=(args.radius_min, args.radius_max),
        modalities=modalities,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    paths = make_phantom_family(spec, args.out, count=args.count)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    case = load_case(args.case_dir, normalize=False)
    print(f"case_id:  {case.case_id}")
    print(f"shape:    {case.shape}")
    print(f"spacing:  {tuple(round(s, 6) for s in case.spacing)}")
    flags = ", ".join(f"{m.name.lower()}={int(case.presence[m])}" for m in Modality)
    print(f"presence: {flags}")
    print(f"label:    {'yes' if case.label is not None else 'no'}")
    if case.label is not None:
        labels = sorted(int(v) for v in np.unique(case.label.data))
        print(f"labels:   {labels}")
    return EXIT_OK


def cmd_pathoseg(args) -> int:
    ref_data, ref_spacing = read_volume(args.reference)
    target_shape, target_spacing = ref_data.shape, ref_spacing
    mains = []
    for path in args.main:
        data, spacing = read_volume(path)
        mains.append(resample_mask(SegMask(data, spacing), target_shape, target_spacing))
    main = merge_distinct_masks(mains)
    if args.wmh is not None:
        data, spacing = read_volume(args.wmh)
        wmh = resample_mask(SegMask(data, spacing), target_shape, target_spacing)
        whole = merge_whole(main, wmh)
    else:
        whole = main
    pathoseg = binarize(whole)
    out_dir = Path(args.out_dir)
    write_volume(out_dir / "whole_pathology.nii.gz", whole.data, whole.spacing)
    write_volume(out_dir / "pathoseg.nii.gz", pathoseg.data, pathoseg.spacing)
    print(f"wrote {out_dir / 'whole_pathology.nii.gz'}")
    print(f"wrote {out_dir / 'pathoseg.nii.gz'}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _run_config(args)
    cfg = run.train
    _seed_everything(cfg.seed, cfg.deterministic)
    dataset = load_dataset(args.data)
    model = F3NetModel(run.network)
    train(model, dataset, cfg, out_dir=args.out, run_id=args.run_id,
          resume_from=args.resume)
    print(f"training complete; checkpoints in {Path(args.out) / args.run_id}")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = _run_config(args)
    model, _, _ = load_checkpoint(args.model)
    if run.train.deterministic:
        torch.use_deterministic_algorithms(True)
    case = load_case(args.case_dir)
    prob, mask = predict_case(model, case, run.predict)
    out_dir = Path(args.out)
    write_volume(out_dir / f"{case.case_id}_prob.nii.gz", prob.data, prob.spacing)
    write_volume(out_dir / f"{case.case_id}_pathoseg.nii.gz", mask.data, mask.spacing)
    print(f"wrote {out_dir / f'{case.case_id}_prob.nii.gz'}")
    print(f"wrote {out_dir / f'{case.case_id}_pathoseg.nii.gz'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = _run_config(args)
    dataset_name = args.dataset_name
    if args.pred_dir is not None:
        labels = {}
        for case_dir in list_case_dirs(args.data):
            case = load_case(case_dir, normalize=False)
            if case.label is not None:
                labels[case.case_id] = binarize(case.label).data
        preds = []
        for case_id in sorted(labels):
            pred_path = Path(args.pred_dir) / f"{case_id}_pathoseg.nii.gz"
            data, _ = read_volume(pred_path)
            preds.append((case_id, (data > 0).astype(np.uint8)))
        rows, summary = score_predictions(preds, labels)
    else:
        if args.model is None:
            raise ShapeError("evaluate needs --model or --pred-dir")
        model, _, _ = load_checkpoint(args.model)
        if run.train.deterministic:
            torch.use_deterministic_algorithms(True)
        cases = load_dataset(args.data)
        rows, summary = evaluate_dataset(model, cases, run.predict)
    write_report_csv(args.out, dataset_name, rows, summary)
    print(f"wrote {args.out}")
    table = render_markdown_table([(dataset_name, summary)])
    if args.markdown is not None:
        Path(args.markdown).parent.mkdir(parents=True, exist_ok=True)
        Path(args.markdown).write_text(table, encoding="utf-8")
        print(f"wrote {args.markdown}")
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="f3net",
        description="Six-modality brain MRI pathology segmentation with "
                    "missing-modality robustness",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantom", help="generate synthetic test cases")
    p.add_argument("--out", required=True, type=Path, help="output dataset directory")
    p.add_argument("--count", type=int, default=1, help="number of cases")
    p.add_argument("--shape", default="32", help="grid shape, e.g. 32 or 32,32,32")
    p.add_argument("--lesions", type=int, default=1, help="lesions per case")
    p.add_argument("--radius-min", type=float, default=4.0)
    p.add_argument("--radius-max", type=float, default=7.0)
    p.add_argument("--modalities", default="", help="comma list, e.g. t1,flair (default: all six)")
    p.add_argument("--noise", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(func=cmd_make_phantom)

    p = sub.add_parser("inspect", help="print case geometry and modality presence")
    p.add_argument("case_dir", type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("pathoseg", help="build whole-pathology and Pathoseg masks")
    p.add_argument("--main", required=True, nargs="+", type=Path,
                   help="main pathology mask file(s), merged in order")
    p.add_argument("--wmh", type=Path, default=None, help="binary WMH mask")
    p.add_argument("--reference", required=True, type=Path,
                   help="volume defining the output geometry")
    p.add_argument("--out-dir", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_pathoseg)

    p = sub.add_parser("train", help="train a model on a case directory tree")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("checkpoints"))
    p.add_argument("--run-id", default="run")
    p.add_argument("--epochs", type=int, default=None, help="override max_epochs")
    p.add_argument("--steps", type=int, default=None, help="override steps_per_epoch")
    p.add_argument("--resume", type=Path, default=None, help="resume from latest.ckpt")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict one case directory")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--case", dest="case_dir", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a dataset and write the metrics report")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--pred-dir", type=Path, default=None,
                   help="score precomputed {case_id}_pathoseg.nii.gz masks instead of a model")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="CSV report path")
    p.add_argument("--markdown", type=Path, default=None, help="also write a markdown table")
    p.add_argument("--dataset-name", default="phantom")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "epochs", None) is not None:
        args.sets.append(f"train.max_epochs={args.epochs}")
    if getattr(args, "steps", None) is not None:
        args.sets.append(f"train.steps_per_epoch={args.steps}")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except F3NetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
