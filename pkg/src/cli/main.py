"""
Blueprint: Main CLI Interface

This module is the entry point of the occrec command-line tool. Every
subcommand reads and writes the documented file formats and records a
manifest.json next to its outputs.

Commands:
1. gen / masks: synthetic benchmark and mask fixtures
2. encode / train-encoder: part encoder
3. occlusion: visibility from body masks
4. index / neighbors: gallery index and neighborhoods
5. train-gnn / reconstruct: graph network training and reconstruction
6. eval / ablate: single-variant report and the full ablation matrix
7. gradcheck: finite-difference gradient oracles

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import typer
from pydantic import ValidationError
from rich import box
from rich.console import Console
from rich.table import Table

from ..config_manager.config_handler import ConfigHandler, PipelineConfig
from ..core.exceptions import ConfigError, GradientCheckError, OccRecError, TrainingDivergedError
from ..core.features import normalize_dataset
from ..core.types import Dataset
from ..data_handlers.checkpoint_io import load_encoder, load_orgnn, save_encoder, save_orgnn
from ..data_handlers.feature_io import atomic_write_bytes, read_feature_file, write_feature_file
from ..data_handlers.mask_io import read_mask
from ..encoder.trainer import encode_dataset, train_encoder
from ..evaluation.report import write_reports
from ..evaluation.variants import ABLATION_ORDER, EvalReport, Variant, reconstruct_dataset, run_ablation, \
    run_variant
from ..neighborhood.index import batch_neighborhoods, build_index
from ..occlusion.visibility import estimate_visibility
from ..orgnn.gradcheck import CHECK_NAMES, run_gradchecks
from ..orgnn.graph import AggregationMode
from ..orgnn.model import ORGNNParams
from ..orgnn.trainer import train_orgnn
from ..project_manager.run_manifest import MANIFEST_NAME, RunRecorder
from ..synth.generator import MaskSpec, SynthSpec, generate, generate_masks, write_mask_fixtures, write_synth
from ..utils.banner import create_banner
from ..utils.logger import set_global_level, setup_logger

logger = setup_logger(__name__)
console = Console()
err_console = Console(stderr=True)

app = typer.Typer(
    help="[bold green]occrec:[/bold green] occluded-instance retrieval by neighborhood feature reconstruction",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

MASK_SUFFIXES = (".pgm", ".json")
NON_MASK_FILES = ("masks_truth.json", MANIFEST_NAME)

# typer may ship its own copy of click; usage errors are caught by the base class it raises
UsageFailure = next(cls for cls in typer.BadParameter.__mro__ if cls.__name__ == "ClickException")


@dataclass
class CliState:
    config: PipelineConfig
    quiet: bool = False


def _state(ctx: typer.Context) -> CliState:
    return ctx.obj


@app.callback()
def configure(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="Flat key=value config file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only, no banner"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed (falls back to OCCREC_SEED)"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker cap; 1 is bit-deterministic"),
    num_parts: Optional[int] = typer.Option(None, "--M", "--m", help="Parts per image"),
    dim: Optional[int] = typer.Option(None, "--D", "--d", help="Part feature dimension"),
    k_train: Optional[int] = typer.Option(None, "--K-train", "--k-train", help="Neighbors per part in training"),
    k_infer: Optional[int] = typer.Option(None, "--K-infer", "--k-infer", help="Neighbors per part at inference"),
    theta_train: Optional[float] = typer.Option(None, "--theta-train", help="Similarity threshold in training"),
    theta_infer: Optional[float] = typer.Option(None, "--theta-infer", help="Similarity threshold at inference"),
    layers: Optional[int] = typer.Option(None, "--T", "--t", help="Graph network layers"),
    eta: Optional[float] = typer.Option(None, "--eta", help="Triplet margin"),
    learning_rate: Optional[float] = typer.Option(None, "--learning-rate", help="Initial learning rate"),
    lr_decay_epochs: Optional[str] = typer.Option(None, "--lr-decay-epochs", help="Comma-separated decay epochs"),
    lr_decay_factor: Optional[float] = typer.Option(None, "--lr-decay-factor", help="Decay multiplier"),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Training epochs"),
    batch_persons: Optional[int] = typer.Option(None, "--batch-persons", help="Persons per graph batch"),
    sets_per_person: Optional[int] = typer.Option(None, "--sets-per-person", help="Neighbor sets per person"),
    weight_decay: Optional[float] = typer.Option(None, "--weight-decay", help="L2 pull of W toward the identity"),
    validation_fraction: Optional[float] = typer.Option(
        None, "--validation-fraction", help="Training identities held out for epoch selection"),
    encoder_batch_persons: Optional[int] = typer.Option(None, "--encoder-batch-persons"),
    encoder_images_per_person: Optional[int] = typer.Option(None, "--encoder-images-per-person"),
    adam_beta1: Optional[float] = typer.Option(None, "--adam-beta1"),
    adam_beta2: Optional[float] = typer.Option(None, "--adam-beta2"),
    adam_eps: Optional[float] = typer.Option(None, "--adam-eps"),
    reconstruct_gallery: Optional[bool] = typer.Option(
        None, "--reconstruct-gallery/--no-reconstruct-gallery", help="Reconstruct gallery entries too"),
    skip_occluded_neighbor_parts: Optional[bool] = typer.Option(
        None, "--skip-occluded-neighbor-parts/--no-skip-occluded-neighbor-parts",
        help="Only neighbors with a part visible join that part's graph"),
    filter_same_camera: Optional[bool] = typer.Option(
        None, "--filter-same-camera/--no-filter-same-camera", help="Drop same-id same-camera gallery entries"),
    holistic_query_parts: Optional[str] = typer.Option(
        None, "--holistic-query-parts", help="Comma-separated parts a fully visible image searches with"),
):
    """Global options; every config key has a --kebab-case flag that overrides the file"""
    set_global_level(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)
    overrides = {
        "seed": seed, "threads": threads, "M": num_parts, "D": dim, "K_train": k_train, "K_infer": k_infer,
        "theta_train": theta_train, "theta_infer": theta_infer, "T": layers, "eta": eta,
        "learning_rate": learning_rate, "lr_decay_epochs": lr_decay_epochs, "lr_decay_factor": lr_decay_factor,
        "epochs": epochs, "batch_persons": batch_persons, "sets_per_person": sets_per_person,
        "encoder_batch_persons": encoder_batch_persons, "encoder_images_per_person": encoder_images_per_person,
        "adam_beta1": adam_beta1, "adam_beta2": adam_beta2, "adam_eps": adam_eps,
        "reconstruct_gallery": reconstruct_gallery, "skip_occluded_neighbor_parts": skip_occluded_neighbor_parts,
        "filter_same_camera": filter_same_camera, "holistic_query_parts": holistic_query_parts,
        "weight_decay": weight_decay, "validation_fraction": validation_fraction,
    }
    ctx.obj = CliState(config=ConfigHandler(config).get_config(overrides), quiet=quiet)
    if not quiet and ctx.invoked_subcommand is not None:
        err_console.print(create_banner())


def _split_path(data: Optional[Path], explicit: Optional[Path], split: str) -> Path:
    if explicit is not None:
        return explicit
    if data is None:
        raise typer.BadParameter(f"pass --{split} or --data DIR holding {split}.bin", param_hint=f"--{split}")
    return data / f"{split}.bin"


def _load(path: Path, split: str, recorder: RunRecorder) -> Dataset:
    recorder.add_input(path)
    return read_feature_file(path, split=split)


def _summary_table(title: str, rows: Sequence[Sequence[str]], columns: Sequence[str]) -> Table:
    table = Table(title=title, box=box.ROUNDED, header_style="bold magenta")
    for column in columns:
        table.add_column(column, style="bold blue" if column == columns[0] else "green")
    for row in rows:
        table.add_row(*[str(v) for v in row])
    return table


def _reports_table(reports: Sequence[EvalReport]) -> Table:
    rows = [(r.variant, f"{r.mAP:.4f}", f"{r.rank(1):.4f}", f"{r.rank(5):.4f}", f"{r.rank(10):.4f}",
             f"{r.mINP:.4f}", r.fallback_count) for r in reports]
    return _summary_table("Retrieval", rows, ["variant", "mAP", "rank1", "rank5", "rank10", "mINP", "fallbacks"])


def _write_json(doc, path: Path) -> Path:
    atomic_write_bytes(path, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))
    return path


def _train_gnn(train: Dataset, cfg: PipelineConfig, mode: AggregationMode, out: Path) -> ORGNNParams:
    try:
        return train_orgnn(train, cfg, mode)
    except TrainingDivergedError as e:
        if e.last_good is not None:
            saved = save_orgnn(e.last_good, out / f"{mode.value}.last_good.ckpt")
            err_console.print(f"[yellow]Last good parameters (epoch {e.epoch}) saved to {saved}[/yellow]")
        raise


@app.command()
def gen(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Output directory"),
    identities: int = typer.Option(200, "--identities", help="Number of identities"),
    images_per_identity: int = typer.Option(20, "--images-per-identity"),
    dim: int = typer.Option(32, "--dim", help="Part feature dimension of the generated data"),
    raw_dim: int = typer.Option(64, "--raw-dim", help="Raw vector dimension"),
    occlusion_rate: float = typer.Option(0.5, "--occlusion-rate"),
    obstacle_clusters: int = typer.Option(5, "--obstacle-clusters"),
    cameras: int = typer.Option(4, "--cameras"),
    identity_noise: float = typer.Option(0.08, "--identity-noise"),
    visibility_flip_rate: float = typer.Option(0.0, "--visibility-flip-rate"),
    lookalike_parts: int = typer.Option(3, "--lookalike-parts", help="Parts a look-alike group shares (0: all)"),
):
    """Generate a synthetic occluded-retrieval benchmark"""
    cfg = _state(ctx).config
    recorder = RunRecorder("gen", cfg, {"out": out, "identities": identities})
    spec = SynthSpec(num_identities=identities, images_per_identity=images_per_identity, D=dim, D_raw=raw_dim,
                     M=cfg.M, occlusion_rate=occlusion_rate, num_obstacle_clusters=obstacle_clusters,
                     camera_count=cameras, intra_identity_noise=identity_noise,
                     visibility_flip_rate=visibility_flip_rate, lookalike_parts=lookalike_parts or None,
                     seed=cfg.seed)
    with recorder.stage("generate"):
        data = generate(spec)
    recorder.add_outputs(write_synth(data, out))
    recorder.write(out)
    rows = [(split, len(ds), ds.num_identities) for split, ds in data.splits.items()]
    console.print(_summary_table("Synthetic benchmark", rows, ["split", "images", "identities"]))
    stats = data.stats
    console.print(f"visible-part cosine: intra {stats.intra_identity:.4f}  inter {stats.inter_identity:.4f}  "
                  f"margin {stats.margin:.4f}")


@app.command()
def masks(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Output directory"),
    count: int = typer.Option(500, "--count"),
    height: int = typer.Option(128, "--height"),
    width: int = typer.Option(64, "--width"),
    noise: float = typer.Option(0.01, "--noise", help="Pixel flip rate"),
):
    """Generate body-mask fixtures and report estimator agreement with ground truth"""
    cfg = _state(ctx).config
    recorder = RunRecorder("masks", cfg, {"out": out, "count": count})
    fixtures = generate_masks(MaskSpec(count=count, height=height, width=width, noise=noise, seed=cfg.seed))
    recorder.add_outputs(write_mask_fixtures(fixtures, out))
    agreement = np.mean([np.mean(estimate_visibility(f.mask).mask == f.truth) for f in fixtures])
    recorder.write(out)
    console.print(f"{len(fixtures)} fixtures written; per-part agreement of the estimator: {agreement:.4f}")


@app.command()
def occlusion(
    ctx: typer.Context,
    masks_dir: Path = typer.Option(..., "--masks", help="Directory of .pgm / RLE .json masks"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    features: Optional[Path] = typer.Option(None, "--features", help="Feature file whose visibility to update"),
):
    """Estimate per-part visibility from body masks (file stem = image_id)"""
    cfg = _state(ctx).config
    if not masks_dir.is_dir():
        raise FileNotFoundError(f"Mask directory not found: {masks_dir}")
    recorder = RunRecorder("occlusion", cfg, {"masks": masks_dir, "features": features})
    scores: Dict[str, List[float]] = {}
    for path in sorted(masks_dir.iterdir()):
        if path.suffix.lower() not in MASK_SUFFIXES or path.name in NON_MASK_FILES:
            continue
        recorder.add_input(path)
        scores[path.stem] = [float(s) for s in estimate_visibility(read_mask(path)).scores]
    outputs = [_write_json(scores, out / "visibility.json")]
    if features is not None:
        dataset = _load(features, None, recorder)
        updated = dataset.map_items(
            lambda item: item.with_features(item.features, scores[item.image_id]) if item.image_id in scores else item)
        missing = sum(1 for item in dataset if item.image_id not in scores)
        if missing:
            logger.warning(f"{missing} image(s) have no mask; their visibility is unchanged")
        outputs.append(write_feature_file(updated, out / features.name))
    recorder.add_outputs(outputs)
    recorder.write(out)
    console.print(f"Visibility estimated for {len(scores)} masks")


@app.command()
def encode(
    ctx: typer.Context,
    encoder: Path = typer.Option(..., "--encoder", help="OCCENC1 checkpoint"),
    input_path: Path = typer.Option(..., "--input", help="Raw-vector feature file"),
    output: Path = typer.Option(..., "--output", help="Encoded feature file"),
):
    """Project raw part vectors to normalized part features"""
    cfg = _state(ctx).config
    recorder = RunRecorder("encode", cfg, {"encoder": encoder, "input": input_path, "output": output})
    recorder.add_input(encoder)
    params = load_encoder(encoder)
    dataset = _load(input_path, None, recorder)
    with recorder.stage("encode"):
        encoded = encode_dataset(dataset, params)
    recorder.add_outputs([write_feature_file(encoded, output)])
    recorder.write(output.parent)
    console.print(f"Encoded {len(encoded)} images to D={encoded.feature_dim}")


@app.command("train-encoder")
def train_encoder_cmd(
    ctx: typer.Context,
    train: Path = typer.Option(..., "--train", help="Raw-vector training file"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
):
    """Train the per-part encoder with identification + batch-hard triplet loss"""
    cfg = _state(ctx).config
    recorder = RunRecorder("train-encoder", cfg, {"train": train, "out": out})
    dataset = _load(train, "train", recorder)
    with recorder.stage("train"):
        try:
            params = train_encoder(dataset, cfg)
        except TrainingDivergedError as e:
            if e.last_good is not None:
                save_encoder(e.last_good, out / "encoder.last_good.ckpt")
            raise
    outputs = [save_encoder(params, out / "encoder.ckpt"),
               _write_json({"loss_history": params.loss_history}, out / "encoder_loss.json")]
    recorder.add_outputs(outputs)
    recorder.write(out)
    final = f"{params.loss_history[-1]:.4f}" if params.loss_history else "n/a"
    console.print(f"Encoder trained for {len(params.loss_history)} epochs, final loss {final}")


@app.command()
def index(
    ctx: typer.Context,
    gallery: Path = typer.Option(..., "--gallery", help="Gallery feature file"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
):
    """Build the per-part gallery index and write its summary"""
    cfg = _state(ctx).config
    recorder = RunRecorder("index", cfg, {"gallery": gallery})
    built = build_index(normalize_dataset(_load(gallery, "gallery", recorder)))
    summary = {"images": len(built.items),
               "parts": [{"part": p, "rows": len(part), "image_ids": list(part.image_ids)}
                         for p, part in enumerate(built.parts)]}
    recorder.add_outputs([_write_json(summary, out / "index.json")])
    recorder.write(out)
    console.print(_summary_table("Gallery index", [(p["part"], p["rows"]) for p in summary["parts"]],
                                 ["part", "visible rows"]))


@app.command()
def neighbors(
    ctx: typer.Context,
    gallery: Path = typer.Option(..., "--gallery", help="Gallery feature file"),
    query: Path = typer.Option(..., "--query", help="Targets whose neighborhoods to compute"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    training: bool = typer.Option(False, "--training", help="Use K_train / theta_train instead of the inference values"),
):
    """Compute neighborhoods (intersection of per-part k-NN over visible parts)"""
    cfg = _state(ctx).config
    recorder = RunRecorder("neighbors", cfg, {"gallery": gallery, "query": query, "training": training})
    built = build_index(normalize_dataset(_load(gallery, "gallery", recorder)))
    targets = normalize_dataset(_load(query, "query", recorder))
    k, theta = (cfg.K_train, cfg.theta_train) if training else (cfg.K_infer, cfg.theta_infer)
    found = batch_neighborhoods(built, list(targets), k, theta, exclude_self=True, threads=cfg.threads,
                                holistic_parts=cfg.holistic_query_parts)
    lines = [json.dumps({"query": ns.target_id, "members": list(ns.members), "fallback": ns.fallback,
                         "scores": [float(s) for s in ns.member_scores]}) for ns in found]
    target = out / "neighbors.jsonl"
    atomic_write_bytes(target, "".join(line + "\n" for line in lines).encode("utf-8"))
    recorder.add_outputs([target])
    recorder.write(out)
    fallbacks = sum(ns.fallback for ns in found)
    mean_size = np.mean([len(ns) for ns in found]) if found else 0.0
    console.print(f"{len(found)} neighborhoods, mean size {mean_size:.2f}, {fallbacks} empty")


@app.command("train-gnn")
def train_gnn_cmd(
    ctx: typer.Context,
    train: Path = typer.Option(..., "--train", help="Labeled training feature file"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    mode: AggregationMode = typer.Option(AggregationMode.ORGNN, "--mode", help="orgnn or gnn"),
):
    """Train the per-part graph networks"""
    cfg = _state(ctx).config
    if mode is AggregationMode.AVERAGE:
        raise typer.BadParameter("the average aggregator has no parameters", param_hint="--mode")
    recorder = RunRecorder("train-gnn", cfg, {"train": train, "out": out, "mode": mode.value})
    dataset = _load(train, "train", recorder)
    with recorder.stage("train"):
        params = _train_gnn(dataset, cfg, mode, out)
    outputs = [save_orgnn(params, out / f"{mode.value}.ckpt"),
               _write_json({"loss_history": params.loss_history, "validation_history": params.validation_history,
                            "selected_epoch": params.selected_epoch}, out / f"{mode.value}_loss.json")]
    recorder.add_outputs(outputs)
    recorder.write(out)
    final = f"{params.loss_history[-1]:.4f}" if params.loss_history else "n/a"
    console.print(f"{mode.value} trained for {len(params.loss_history)} epochs, final loss {final}")


def _params_for(variant: Variant, params_path: Optional[Path], recorder: RunRecorder) -> Optional[ORGNNParams]:
    if variant.mode is None or variant.mode is AggregationMode.AVERAGE:
        return None
    if params_path is None:
        raise typer.BadParameter(f"variant '{variant.value}' needs a {variant.mode.value} checkpoint", param_hint="--params")
    recorder.add_input(params_path)
    return load_orgnn(params_path)


@app.command()
def reconstruct(
    ctx: typer.Context,
    gallery: Path = typer.Option(..., "--gallery", help="Gallery feature file (neighborhood source)"),
    query: Path = typer.Option(..., "--query", help="Images to reconstruct"),
    output: Path = typer.Option(..., "--output", help="Reconstructed feature file"),
    params_path: Optional[Path] = typer.Option(None, "--params", help="OCCGNN1 checkpoint"),
    variant: Variant = typer.Option(Variant.OAN_ORGNN, "--variant", help="Reconstructing variant"),
):
    """Reconstruct part features from neighborhoods"""
    cfg = _state(ctx).config
    if not variant.reconstructs:
        raise typer.BadParameter(f"'{variant.value}' does not reconstruct", param_hint="--variant")
    recorder = RunRecorder("reconstruct", cfg, {"gallery": gallery, "query": query, "variant": variant.value})
    params = _params_for(variant, params_path, recorder)
    gallery_ds = _load(gallery, "gallery", recorder)
    targets = _load(query, None, recorder)
    with recorder.stage("reconstruct"):
        rebuilt, rep = reconstruct_dataset(variant, targets, gallery_ds, cfg, params)
    recorder.add_outputs([write_feature_file(rebuilt, output)])
    recorder.write(output.parent)
    console.print(f"Reconstructed {len(rebuilt) - rep.fallbacks} images, {rep.fallbacks} fallbacks")


@app.command("eval")
def eval_cmd(
    ctx: typer.Context,
    out: Path = typer.Option(..., "--out", help="Output directory"),
    data: Optional[Path] = typer.Option(None, "--data", help="Directory with query.bin and gallery.bin"),
    query: Optional[Path] = typer.Option(None, "--query"),
    gallery: Optional[Path] = typer.Option(None, "--gallery"),
    params_path: Optional[Path] = typer.Option(None, "--params", help="OCCGNN1 checkpoint"),
    variant: Variant = typer.Option(Variant.OAN_ORGNN, "--variant"),
):
    """Evaluate one variant and write report JSON, CSV and schema"""
    cfg = _state(ctx).config
    recorder = RunRecorder("eval", cfg, {"variant": variant.value, "data": data})
    params = _params_for(variant, params_path, recorder)
    query_ds = _load(_split_path(data, query, "query"), "query", recorder)
    gallery_ds = _load(_split_path(data, gallery, "gallery"), "gallery", recorder)
    with recorder.stage("evaluate"):
        report = run_variant(variant, query_ds, gallery_ds, cfg, params)
    recorder.add_outputs(write_reports([report], out))
    recorder.write(out)
    console.print(_reports_table([report]))


@app.command()
def ablate(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="Directory with train.bin, query.bin, gallery.bin"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    orgnn_params: Optional[Path] = typer.Option(None, "--orgnn", help="Trained orgnn checkpoint (trained if absent)"),
    gnn_params: Optional[Path] = typer.Option(None, "--gnn", help="Trained gnn checkpoint (trained if absent)"),
):
    """Run every variant and write one combined CSV"""
    cfg = _state(ctx).config
    recorder = RunRecorder("ablate", cfg, {"data": data, "out": out})
    query_ds = _load(data / "query.bin", "query", recorder)
    gallery_ds = _load(data / "gallery.bin", "gallery", recorder)
    params_by_mode: Dict[AggregationMode, ORGNNParams] = {}
    outputs: List[Path] = []
    train_ds = None
    for mode, path in ((AggregationMode.ORGNN, orgnn_params), (AggregationMode.GNN, gnn_params)):
        if path is not None:
            recorder.add_input(path)
            params_by_mode[mode] = load_orgnn(path)
            continue
        if train_ds is None:
            train_ds = _load(data / "train.bin", "train", recorder)
        with recorder.stage(f"train_{mode.value}"):
            params_by_mode[mode] = _train_gnn(train_ds, cfg, mode, out)
        outputs.append(save_orgnn(params_by_mode[mode], out / f"{mode.value}.ckpt"))
    with recorder.stage("evaluate"):
        reports = run_ablation(query_ds, gallery_ds, cfg, params_by_mode, ABLATION_ORDER)
    outputs.extend(write_reports(reports, out))
    recorder.add_outputs(outputs)
    recorder.write(out)
    console.print(_reports_table(reports))


@app.command()
def gradcheck(
    ctx: typer.Context,
    instances: int = typer.Option(20, "--instances", help="Random instances per check"),
    tolerance: float = typer.Option(1e-4, "--tolerance", help="Maximum relative error"),
    check: Optional[List[str]] = typer.Option(None, "--check", help="Run only these checks"),
):
    """Compare every analytic gradient with central finite differences"""
    cfg = _state(ctx).config
    unknown = sorted(set(check or ()) - set(CHECK_NAMES))
    if unknown:
        raise typer.BadParameter(f"unknown check(s) {', '.join(unknown)}; choose from {', '.join(CHECK_NAMES)}",
                                 param_hint="--check")
    results = run_gradchecks(instances, cfg.seed, tolerance, check or None)
    rows = [(r.name, r.checked, r.skipped, f"{r.max_rel_error:.2e}", "pass" if r.passed else "FAIL")
            for r in results]
    console.print(_summary_table("Gradient checks", rows, ["check", "checked", "skipped", "max rel. error", "result"]))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise GradientCheckError(f"gradient check failed for {', '.join(failed)} (tolerance {tolerance:g})")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point for the CLI application

    Returns:
        int: 0 success, 1 usage error, 2 data error
    """
    try:
        result = app(args=list(argv) if argv is not None else None, prog_name="occrec", standalone_mode=False)
        return result if isinstance(result, int) else 0
    except typer.Abort:
        err_console.print("[red]Aborted[/red]")
        return 1
    except UsageFailure as e:
        err_console.print(f"[red]Usage error:[/red] {e.format_message()}")
        return 1
    except ConfigError as e:
        err_console.print(f"[red]Usage error:[/red] {e}")
        return 1
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        err_console.print(f"[red]Usage error:[/red] invalid value for '{field}': {first['msg']}")
        return 1
    except (OccRecError, ValueError, FileNotFoundError, IsADirectoryError) as e:
        err_console.print(f"[red]Error:[/red] {e}")
        return 2
