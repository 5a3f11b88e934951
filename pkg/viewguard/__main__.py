from argparse import ArgumentParser
import csv
from dataclasses import asdict, replace
import json
import logging
from pathlib import Path
import sys
from typing import Any, Sequence

import numpy as np
from tqdm import tqdm

from . import __version__
from .config import ExperimentConfig
from .core.attacks import (
    AttackSpec,
    fit_whitebox_reference,
    load_whitebox_reference,
    parse_attack_tag,
    run_attack,
    save_whitebox_reference,
    success_rate,
)
from .core.classifier import forward, predict_arrays, save_classifier, train_classifier
from .core.data import FlatImage, read_image, write_split_manifest
from .core.detector import load_detector, save_detector
from .core.feature_store import (
    ARCHIVE_IMAGES,
    ARCHIVE_MANIFEST,
    BENIGN_TAG,
    FeatureRecord,
    read_adversarial_archive,
    read_feature_store,
    read_feature_stores,
    write_adversarial_archive,
    write_feature_store,
)
from .core.generator import generate_rows, save_generator, train_generator
from .core.predictors import (
    PREDICTOR_NAMES,
    extract_features,
    fit_gmm,
    group_by_class,
    load_gmm,
    save_gmm,
)
from .core.views import generate_views
from .evaluation import (
    SINGLE_METRIC_BASELINES,
    ablation_run,
    build_report,
    mask_key,
    report_from_dict,
    train_detector_from_features,
    validate_report,
)
from .explanations import MISCLASSIFIED_ROW, format_ablation, format_report
from .plots import save_image, save_roc_curves, save_view_gallery
from .results import (
    RunArtifacts,
    build_run_artifacts,
    build_run_manifest,
    compute_sha256,
    input_entry,
    read_run_manifest,
    write_json_artifact,
    write_run_manifest,
)
from .runtime import configure_logging, load_data, load_experiment, load_models, progress_enabled, seed_everything


logger = logging.getLogger("viewguard")

SPLIT_CHOICES = ("train", "val", "test")
FAMILY_CHOICES = ("fgsm", "pgd", "mim", "deepfool", "cw", "whitebox")


def _add_common_arguments(parser: ArgumentParser) -> None:
    parser.add_argument("--config", help="Experiment config JSON (defaults to $VIEWGUARD_CONFIG or configs/cifar10_desk.json)")
    parser.add_argument("--seed", type=int, help="Override the master seed")
    parser.add_argument("--log-level", help="Logging level (defaults to $VIEWGUARD_LOG_LEVEL or INFO)")
    parser.add_argument("--no-progress", action="store_true", help="Disable tqdm progress bars")
    parser.add_argument("--json", dest="json_output", action="store_true")
    parser.add_argument("--out-dir", help="Run directory; defaults to results/<command>-<timestamp>/")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description="Multi-view adversarial image detection")
    parser.add_argument("--version", action="version", version=f"viewguard {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    classifier_parser = subparsers.add_parser("train-classifier", help="Train the residual image classifier")
    _add_common_arguments(classifier_parser)
    classifier_parser.add_argument("--output", default="classifier.pt")

    generator_parser = subparsers.add_parser("train-generator", help="Train the class-conditional pixel model")
    _add_common_arguments(generator_parser)
    generator_parser.add_argument("--output", default="generator.pt")

    sample_parser = subparsers.add_parser("sample", help="Draw class-conditional samples from the pixel model")
    _add_common_arguments(sample_parser)
    sample_parser.add_argument("--generator", required=True)
    sample_parser.add_argument("--label", required=True, help="Class index or class name")
    sample_parser.add_argument("--seed-rows", type=int, default=0, help="Rows copied from --image before sampling")
    sample_parser.add_argument("--image", help="Image whose top rows seed the samples")
    sample_parser.add_argument("--count", type=int, default=4)

    attack_parser = subparsers.add_parser("attack", help="Craft adversarial examples for one data split")
    _add_common_arguments(attack_parser)
    attack_parser.add_argument("--classifier", required=True)
    attack_group = attack_parser.add_mutually_exclusive_group(required=True)
    attack_group.add_argument("--tag", help="Attack tag such as pgd-8, deepfool, cw or whitebox")
    attack_group.add_argument("--family", choices=FAMILY_CHOICES)
    attack_parser.add_argument("--eps", type=float, help="L-infinity budget in pixel units")
    attack_parser.add_argument("--iters", type=int, help="Iterations for pgd, mim and whitebox")
    attack_parser.add_argument("--in", dest="split", choices=SPLIT_CHOICES, default="test")
    attack_parser.add_argument("--max-images", type=int)
    attack_parser.add_argument("--generator", help="Pixel model, required for whitebox")
    attack_parser.add_argument("--gmm", help="Representation mixtures, required for whitebox")
    attack_parser.add_argument("--reference", help="Saved white-box reject thresholds")

    views_parser = subparsers.add_parser("gen-views", help="Generate G1, G2, G3 and G* for one image")
    _add_common_arguments(views_parser)
    views_parser.add_argument("--generator", required=True)
    views_parser.add_argument("--image", required=True)
    views_parser.add_argument("--label", help="Class index or name; defaults to the classifier prediction")
    views_parser.add_argument("--classifier")

    features_parser = subparsers.add_parser("extract-features", help="Compute D1..D4 for benign and attacked images")
    _add_common_arguments(features_parser)
    features_parser.add_argument("--classifier", required=True)
    features_parser.add_argument("--generator", required=True)
    features_parser.add_argument("--gmm", help="Saved mixtures; fitted on train representations when omitted")
    features_parser.add_argument("--splits", nargs="*", choices=SPLIT_CHOICES, default=list(SPLIT_CHOICES))
    features_parser.add_argument("--archive", nargs="*", default=[], help="Adversarial archive directories")
    features_parser.add_argument("--archive-split", choices=SPLIT_CHOICES, help="Split for archives without a run manifest")
    features_parser.add_argument("--max-images", type=int)
    features_parser.add_argument("--output", default="features.csv")

    detector_parser = subparsers.add_parser("train-detector", help="Fit the RF + IF detector and calibrate tau")
    _add_common_arguments(detector_parser)
    detector_parser.add_argument("--features", nargs="*", default=[], help="Stores mixing benign and attacked rows")
    detector_parser.add_argument("--benign", nargs="*", default=[], help="Stores holding benign rows only")
    detector_parser.add_argument("--adv", nargs="*", default=[], help="Stores holding attacked rows only")
    detector_parser.add_argument("--tnr", type=float, help="Target true-negative rate for tau")
    detector_parser.add_argument("--mask", nargs="*", choices=PREDICTOR_NAMES, default=list(PREDICTOR_NAMES))
    detector_parser.add_argument("--train-attacks", nargs="*", help="Attack tags used as adversarial training rows")
    detector_parser.add_argument("--output", default="detector.joblib")

    evaluate_parser = subparsers.add_parser("evaluate", help="Per-attack SR, ADR, BDR, AUROC and ROC curves")
    _add_common_arguments(evaluate_parser)
    evaluate_parser.add_argument("--features", nargs="+", required=True)
    evaluate_parser.add_argument("--detector", required=True)
    evaluate_parser.add_argument("--attacks", nargs="*")
    evaluate_parser.add_argument("--baselines", action="store_true", help="Also score single-predictor baselines")

    ablate_parser = subparsers.add_parser("ablate", help="Retrain the detector on predictor subsets")
    _add_common_arguments(ablate_parser)
    ablate_parser.add_argument("--features", nargs="+", required=True)
    ablate_parser.add_argument("--masks", nargs="*", help="Subsets such as d1+d2 or d3; defaults to singletons and leave-one-out")
    ablate_parser.add_argument("--attacks", nargs="*")

    report_parser = subparsers.add_parser("report", help="Render a saved evaluation report")
    _add_common_arguments(report_parser)
    report_parser.add_argument("--from-json", required=True, help="report.json or the evaluate run directory")
    report_parser.add_argument("--plot", action="store_true", help="Redraw the ROC figure into the run directory")
    return parser


def _artifact_stream(json_output: bool):
    return sys.stderr if json_output else sys.stdout


def _emit_artifact_notice(message: str, *, json_output: bool) -> None:
    print(message, file=_artifact_stream(json_output))


def _resolve_label(raw: str, class_names: Sequence[str], class_count: int) -> int:
    if raw in class_names:
        return list(class_names).index(raw)
    try:
        label = int(raw)
    except ValueError as exc:
        raise ValueError(f"Unknown class '{raw}'; expected an index or one of {list(class_names)}") from exc
    if not 0 <= label < class_count:
        raise ValueError(f"Label {label} is outside [0, {class_count})")
    return label


def _finish_run(
    args,
    run: RunArtifacts,
    config: ExperimentConfig,
    *,
    inputs: dict[str, Any],
    outputs: dict[str, Any],
    summary: dict[str, Any],
    text: str,
) -> None:
    manifest_path = write_run_manifest(
        build_run_manifest(
            run, seed=config.seed, config=config.to_dict(), inputs=inputs, outputs=outputs, summary=summary
        ),
        run.run_dir,
    )
    if args.json_output:
        print(json.dumps(summary, indent=2, ensure_ascii=False, default=str))
    else:
        print(text)
    for name, path in outputs.items():
        _emit_artifact_notice(f"{name} written to {path}", json_output=args.json_output)
    _emit_artifact_notice(f"Run manifest written to {manifest_path}", json_output=args.json_output)


def _limit(items: list, limit: int | None) -> list:
    return items if limit is None else items[:limit]


def _run_train_classifier(args, config, run, progress):
    data = load_data(config)
    model = train_classifier(data, config.classifier, seed=config.seed, device=config.device, progress=progress)
    checkpoint = save_classifier(model, run.output_path(args.output, "classifier.pt"))
    split_manifest = write_split_manifest(data, run.run_dir / "split_manifest.csv")
    summary = {"checkpoint": str(checkpoint), "sha256": compute_sha256(checkpoint), **model.metadata}
    text = (
        f"Classifier accuracy: train {model.metadata['train_accuracy']:.3f}, "
        f"val {model.metadata['val_accuracy']:.3f}, test {model.metadata['test_accuracy']:.3f}"
    )
    return {"data": {"name": data.name, **data.counts()}}, {"checkpoint": checkpoint, "split_manifest": split_manifest}, summary, text


def _run_train_generator(args, config, run, progress):
    data = load_data(config)
    model = train_generator(data, config.generator, seed=config.seed, device=config.device, progress=progress)
    checkpoint = save_generator(model, run.output_path(args.output, "generator.pt"))
    summary = {"checkpoint": str(checkpoint), "sha256": compute_sha256(checkpoint), **model.metadata}
    bits = model.metadata.get("test_bits_per_dim")
    text = f"Generator test bits/dim: {bits:.3f}" if bits is not None else "Generator trained (no test split)"
    return {"data": {"name": data.name, **data.counts()}}, {"checkpoint": checkpoint}, summary, text


def _run_sample(args, config, run, progress):
    _classifier, generator = load_models(config, generator_path=args.generator)
    rows, cols, channels = generator.input_shape
    if not 0 <= args.seed_rows < rows:
        raise ValueError(f"--seed-rows must lie in [0, {rows - 1}], got {args.seed_rows}")
    if args.seed_rows and not args.image:
        raise ValueError("--seed-rows > 0 needs --image to copy rows from")
    base = read_image(args.image) if args.image else FlatImage(np.zeros(rows * cols * channels, dtype=np.uint8), rows, cols, channels)
    label = _resolve_label(args.label, config.data.class_names or [], generator.class_count)
    rng = seed_everything(config.seed)
    outputs = {}
    for index in tqdm(range(args.count), desc="samples", disable=not progress):
        sample = generate_rows(generator, base, label, args.seed_rows + 1, rows, rng)
        outputs[f"sample_{index:03d}"] = save_image(sample, run.run_dir / f"sample_{index:03d}.png")
    summary = {"label": label, "seed_rows": args.seed_rows, "count": args.count, "temperature": generator.temperature}
    inputs = {"generator": input_entry(args.generator), **({"image": input_entry(args.image)} if args.image else {})}
    return inputs, outputs, summary, f"Drew {args.count} samples for label {label}"


def _attack_spec(args, config: ExperimentConfig) -> AttackSpec:
    if args.tag:
        spec = parse_attack_tag(args.tag, config.attacks, seed=config.seed)
    else:
        tag = args.family
        if args.family in ("fgsm", "pgd", "mim"):
            if args.eps is None:
                raise ValueError(f"--family {args.family} requires --eps")
            tag = f"{args.family}-{args.eps:g}"
        elif args.family == "whitebox" and args.eps is not None:
            tag = f"whitebox-{args.eps:g}"
        spec = parse_attack_tag(tag, config.attacks, seed=config.seed)
    if args.iters is not None and spec.family in ("pgd", "mim", "whitebox"):
        spec = replace(spec, iterations=args.iters)
    return spec


def _run_attack(args, config, run, progress):
    spec = _attack_spec(args, config)
    data = load_data(config)
    classifier, generator = load_models(config, args.classifier, args.generator)
    samples = _limit(data.split(args.split), args.max_images if args.max_images is not None else config.evaluation.max_images)
    inputs: dict[str, Any] = {"classifier": input_entry(args.classifier), "split": args.split}
    outputs: dict[str, Path] = {}
    gmm = reference = None
    if spec.family == "whitebox":
        if generator is None or not args.gmm:
            raise ValueError("whitebox attacks need --generator and --gmm")
        gmm = load_gmm(args.gmm)
        inputs.update(generator=input_entry(args.generator), gmm=input_entry(args.gmm))
        if args.reference:
            reference = load_whitebox_reference(args.reference)
            inputs["reference"] = input_entry(args.reference)
        else:
            reference = fit_whitebox_reference(
                classifier,
                generator,
                gmm,
                _limit(data.val, config.evaluation.max_images),
                percentile=config.attacks.whitebox_reject_percentile,
            )
            outputs["reference"] = save_whitebox_reference(reference, run.run_dir / "whitebox_reference.joblib")
    seed_everything(config.seed)
    records = run_attack(
        spec,
        classifier,
        samples,
        generator=generator,
        gmm=gmm,
        reference=reference,
        batch_size=config.attacks.batch_size,
        progress=progress,
    )
    archive = write_adversarial_archive(records, run.run_dir)
    outputs["images"] = archive / ARCHIVE_IMAGES
    outputs["manifest"] = archive / ARCHIVE_MANIFEST
    attacked = [record for record in records if record.original_label == record.true_label]
    summary = {
        "attack_tag": spec.tag,
        "split": args.split,
        "spec": asdict(spec),
        "images": len(records),
        "originally_correct": len(attacked),
        "success_rate": success_rate(attacked) if attacked else float("nan"),
    }
    text = f"Attack {spec.tag} on {args.split}: success rate {summary['success_rate']:.3f} over {len(attacked)} correctly classified images"
    return inputs, outputs, summary, text


def _run_gen_views(args, config, run, progress):
    classifier, generator = load_models(config, args.classifier, args.generator)
    image = read_image(args.image)
    generator.check(image, 0)
    if args.label is not None:
        label = _resolve_label(args.label, config.data.class_names or [], generator.class_count)
    elif classifier is not None:
        label = forward(classifier, image).label
    else:
        raise ValueError("gen-views needs --label or --classifier")
    rng = seed_everything(config.seed)
    views = generate_views(generator, image, label, rng, parallel=config.views.parallel)
    outputs = {
        name: save_image(view, run.run_dir / f"{name}.png")
        for name, view in (("g1", views.g1), ("g2", views.g2), ("g3", views.g3), ("gstar", views.gstar))
    }
    outputs["gallery"] = save_view_gallery(views, run.run_dir / "views.png")
    summary = {"label_used": label, "view_seeds": list(views.rng_seeds)}
    inputs = {"image": input_entry(args.image), "generator": input_entry(args.generator)}
    if args.classifier:
        inputs["classifier"] = input_entry(args.classifier)
    return inputs, outputs, summary, f"Generated views for label {label} with seeds {list(views.rng_seeds)}"


def _archive_split(directory: str, fallback: str | None) -> str:
    try:
        split = read_run_manifest(directory).get("inputs", {}).get("split")
    except FileNotFoundError:
        split = None
    split = split or fallback
    if split is None:
        raise ValueError(f"Archive {directory} has no run manifest; pass --archive-split")
    return split


def _run_extract_features(args, config, run, progress):
    data = load_data(config)
    classifier, generator = load_models(config, args.classifier, args.generator)
    limit = args.max_images if args.max_images is not None else config.evaluation.max_images
    inputs: dict[str, Any] = {"classifier": input_entry(args.classifier), "generator": input_entry(args.generator)}
    outputs: dict[str, Path] = {}
    if args.gmm:
        gmm = load_gmm(args.gmm)
        inputs["gmm"] = input_entry(args.gmm)
    else:
        _probs, hidden, _labels = predict_arrays(classifier, [sample.image for sample in data.train])
        grouped = group_by_class(hidden, np.array([sample.label for sample in data.train]), data.class_count)
        gmm = fit_gmm(
            grouped,
            components=config.predictors.gmm_components,
            tol=config.predictors.gmm_tol,
            max_iter=config.predictors.gmm_max_iter,
            seed=config.seed,
        )
        outputs["gmm"] = save_gmm(gmm, run.run_dir / "gmm.joblib")

    # (image, image_id, split, attack_tag, true_label)
    items: list[tuple[FlatImage, str, str, str, int]] = []
    for split in args.splits:
        for sample in _limit(data.split(split), limit):
            items.append((sample.image, sample.sample_id, split, BENIGN_TAG, sample.label))
    for directory in args.archive:
        split = _archive_split(directory, args.archive_split)
        records = [record for record in read_adversarial_archive(directory) if record.original_label == record.true_label]
        for record in records:
            items.append((record.perturbed, f"{record.sample_id}:{record.attack_tag}", split, record.attack_tag, record.true_label))
        inputs.setdefault("archives", []).append({"path": directory, "split": split, "rows": len(records)})

    rng = seed_everything(config.seed)
    feature_rows = []
    for image, image_id, split, tag, true_label in tqdm(items, desc="features", disable=not progress):
        features = extract_features(
            classifier,
            generator,
            gmm,
            image,
            rng,
            image_id=image_id,
            kl_floor=config.predictors.kl_floor,
            d3_mode=config.predictors.d3_mode,
            parallel=config.views.parallel,
        )
        feature_rows.append(FeatureRecord(features, split, tag, true_label))
    outputs["features"] = write_feature_store(feature_rows, run.output_path(args.output, "features.csv"))
    counts: dict[str, int] = {}
    for record in feature_rows:
        key = f"{record.split}/{record.attack_tag}"
        counts[key] = counts.get(key, 0) + 1
    summary = {"rows": len(feature_rows), "counts": counts, "d3_mode": config.predictors.d3_mode}
    return inputs, outputs, summary, f"Extracted {len(feature_rows)} feature rows: {counts}"


def _read_routed_stores(mixed, benign, adversarial) -> list[FeatureRecord]:
    """Mixed stores are routed by attack tag; ``--benign`` and ``--adv`` stores must hold one side only."""
    records = read_feature_stores(mixed)
    for paths, attacked, flag in ((benign, False, "--benign"), (adversarial, True, "--adv")):
        for path in paths:
            rows = read_feature_store(path)
            stray = sum(1 for record in rows if record.is_adversarial != attacked)
            if stray:
                side = "benign" if attacked else "attacked"
                raise ValueError(f"{path} was passed as {flag} but holds {stray} {side} rows")
            records.extend(rows)
    return records


def _run_train_detector(args, config, run, progress):
    stores = [*args.features, *args.benign, *args.adv]
    if not stores:
        raise ValueError("train-detector needs at least one feature store")
    if args.tnr is not None:
        config.detector.tnr_target = args.tnr
    if args.train_attacks:
        config.detector.train_attacks = list(args.train_attacks)
    records = _read_routed_stores(args.features, args.benign, args.adv)
    detector = train_detector_from_features(records, config.detector, feature_mask=args.mask, seed=config.seed)
    output = save_detector(detector, run.output_path(args.output, "detector.joblib"))
    summary = {"tau": detector.tau, "tnr_target": config.detector.tnr_target, **detector.manifest}
    text = f"Detector trained on {mask_key(args.mask)}: tau={detector.tau:.6f} at TNR {config.detector.tnr_target:.2f}"
    return {"features": [input_entry(path) for path in stores]}, {"detector": output}, summary, text


def _write_attack_table(report, path: Path) -> Path:
    fieldnames = ["attack_tag", "success_rate", "adr", "bdr", "auroc", "auroc_ci_low", "auroc_ci_high", "severe_failure"]
    with path.open("w", newline="", encoding="utf-8") as file_obj:
        writer = csv.DictWriter(file_obj, fieldnames=fieldnames)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(
                {
                    "attack_tag": row.attack_tag,
                    "success_rate": row.success_rate,
                    "adr": row.adr,
                    "bdr": row.bdr,
                    "auroc": row.auroc,
                    "auroc_ci_low": row.auroc_ci[0],
                    "auroc_ci_high": row.auroc_ci[1],
                    "severe_failure": int(row.severe_failure),
                }
            )
        if report.misclassified is not None:
            writer.writerow(
                {
                    "attack_tag": MISCLASSIFIED_ROW,
                    "auroc": report.misclassified.auc,
                    "auroc_ci_low": report.misclassified.ci[0],
                    "auroc_ci_high": report.misclassified.ci[1],
                }
            )
    return path


def _write_roc_points(report, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as file_obj:
        writer = csv.DictWriter(file_obj, fieldnames=["attack_tag", "fpr", "tpr"])
        writer.writeheader()
        for tag, points in report.roc.items():
            for fpr, tpr in points:
                writer.writerow({"attack_tag": tag, "fpr": fpr, "tpr": tpr})
    return path


def _roc_figure(report, path: Path) -> Path:
    aucs = {row.attack_tag: row.auroc for row in report.rows}
    return save_roc_curves(report.roc, path, aucs=aucs)


def _run_evaluate(args, config, run, progress):
    records = read_feature_stores(args.features)
    detector = load_detector(args.detector)
    attacks = args.attacks or None
    ablation = None
    if args.baselines:
        masks = [tuple(PREDICTOR_NAMES), *SINGLE_METRIC_BASELINES.values()]
        tags = attacks or sorted({record.attack_tag for record in records if record.is_adversarial and record.split == "test"})
        ablation = ablation_run(records, masks, tags, config.detector, seed=config.seed)
    report = build_report(
        records,
        detector,
        config.evaluation,
        tnr=detector.manifest.get("tnr_target", config.detector.tnr_target),
        seed=config.seed,
        attacks=attacks,
        ablation=ablation,
    )
    validate_report(report)
    outputs = {
        "report": write_json_artifact(report.to_dict(), run.run_dir / "report.json"),
        "attack_table": _write_attack_table(report, run.run_dir / "attack_table.csv"),
        "roc_points": _write_roc_points(report, run.run_dir / "roc.csv"),
    }
    if report.roc:
        outputs["roc_figure"] = _roc_figure(report, run.run_dir / "roc.png")
    inputs = {"features": [input_entry(path) for path in args.features], "detector": input_entry(args.detector)}
    return inputs, outputs, report.to_dict(), format_report(report)


def _parse_mask(raw: str) -> tuple[str, ...]:
    names = tuple(name.strip() for name in raw.split("+") if name.strip())
    unknown = [name for name in names if name not in PREDICTOR_NAMES]
    if unknown or not names:
        raise ValueError(f"Invalid predictor mask '{raw}'; use names from {PREDICTOR_NAMES} joined by '+'")
    return names


def default_ablation_masks() -> list[tuple[str, ...]]:
    singles = [(name,) for name in PREDICTOR_NAMES]
    leave_one_out = [tuple(other for other in PREDICTOR_NAMES if other != name) for name in PREDICTOR_NAMES]
    return [tuple(PREDICTOR_NAMES), *singles, *leave_one_out]


def _run_ablate(args, config, run, progress):
    records = read_feature_stores(args.features)
    masks = [_parse_mask(raw) for raw in args.masks] if args.masks else default_ablation_masks()
    tags = args.attacks or sorted({record.attack_tag for record in records if record.is_adversarial and record.split == "test"})
    table = ablation_run(records, masks, tags, config.detector, seed=config.seed)
    output = run.run_dir / "ablation.csv"
    with output.open("w", newline="", encoding="utf-8") as file_obj:
        writer = csv.DictWriter(file_obj, fieldnames=["mask", *tags])
        writer.writeheader()
        for mask, row in table.items():
            writer.writerow({"mask": mask, **row})
    outputs = {"ablation": output, "ablation_json": write_json_artifact(table, run.run_dir / "ablation.json")}
    return {"features": [input_entry(path) for path in args.features]}, outputs, table, "\n".join(format_ablation(table))


def _run_report(args, config, run, progress):
    source = Path(args.from_json)
    if source.is_dir():
        source = source / "report.json"
    if not source.exists():
        raise FileNotFoundError(f"Report JSON does not exist: {source}")
    report = report_from_dict(json.loads(source.read_text(encoding="utf-8")))
    validate_report(report)
    outputs = {}
    if args.plot and report.roc:
        outputs["roc_figure"] = _roc_figure(report, run.run_dir / "roc.png")
    text = format_report(report)
    outputs["report_text"] = run.run_dir / "report.txt"
    outputs["report_text"].write_text(text + "\n", encoding="utf-8")
    return {"report": input_entry(source)}, outputs, report.to_dict(), text


COMMANDS = {
    "train-classifier": _run_train_classifier,
    "train-generator": _run_train_generator,
    "sample": _run_sample,
    "attack": _run_attack,
    "gen-views": _run_gen_views,
    "extract-features": _run_extract_features,
    "train-detector": _run_train_detector,
    "evaluate": _run_evaluate,
    "ablate": _run_ablate,
    "report": _run_report,
}


def main(argv: Sequence[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    progress = progress_enabled(args.no_progress)
    try:
        config = load_experiment(args.config, seed=args.seed)
        run = build_run_artifacts(args.command, args.out_dir)
        logger.info("%s: run directory %s", args.command, run.run_dir)
        inputs, outputs, summary, text = COMMANDS[args.command](args, config, run, progress)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        print(f"{args.command} failed: {exc}")
        raise SystemExit(2) from exc
    _finish_run(args, run, config, inputs=inputs, outputs=outputs, summary=summary, text=text)


if __name__ == "__main__":
    main()
