"""Operator surface: stage-by-stage subcommands plus a one-shot pipeline.

Every stage reads and writes the on-disk artifact formats, so runs are
resumable and byte-identical given identical inputs and seeds. Exit codes:
0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import csv
import os
import sys

import click
import numpy as np

from . import correspondence, evaluate, io_formats, projection, render, synth, tmp
from .afi import AfiConfig, afi as run_afi
from .classdict import ClassDictionary
from .projection import UNLABELED


def _check_gamma(ctx, param, value):
    if value is not None and not 0 < value < 1:
        raise click.BadParameter("gamma must be in (0,1)")
    return value


def _check_unit(name):
    def cb(ctx, param, value):
        if value is not None and not 0 <= value <= 1:
            raise click.BadParameter(f"{name} must be in [0,1]")
        return value
    return cb


def _parse_rates(ctx, param, value):
    if value is None:
        return None
    try:
        parts = []
        for v in value.split(","):
            if "/" in v:
                num, den = v.split("/")
                parts.append(float(num) / float(den))
            else:
                parts.append(float(v))
        rates = tuple(parts)
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter("rates must be comma-separated numbers")
    if any(not 0 < r <= 1 for r in rates):
        raise click.BadParameter("rates must lie in (0,1]")
    return rates


@click.group()
def cli():
    """Annotation-free 3D segmentation pipeline."""


@cli.command("synth")
@click.option("--seed", default=0, type=int)
@click.option("--n-points", default=5000, type=int)
@click.option("--classes", default=",".join(synth.CANONICAL_CLASSES))
@click.option("--noise-rate", default=0.0, type=float, callback=_check_unit("noise-rate"))
@click.option("--noise-classes", default=None)
@click.option("--cameras", default=4, type=int)
@click.option("--extent", default=40.0, type=float)
@click.option("--feature-dim", default=6, type=int)
@click.option("--embed-dim", default=8, type=int)
@click.option("--mask-tile", default=64, type=int)
@click.option("--out", required=True, type=click.Path())
def synth_cmd(seed, n_points, classes, noise_rate, noise_classes, cameras, extent,
              feature_dim, embed_dim, mask_tile, out):
    """Generate a synthetic scene, teacher outputs, and the class dictionary."""
    spec = synth.SynthSpec(
        seed=seed,
        n_points=n_points,
        classes=tuple(classes.split(",")),
        noise_rate=noise_rate,
        noise_classes=tuple(noise_classes.split(",")) if noise_classes else None,
        n_cameras=cameras,
        extent=extent,
        feature_dim=feature_dim,
        embed_dim=embed_dim,
        mask_tile=mask_tile or None,
    )
    _run_synth(spec, out)
    click.echo(f"wrote scene, teacher, and dictionary under {out}")


def _run_synth(spec, out):
    os.makedirs(out, exist_ok=True)
    classdict = synth.default_dictionary(spec.classes)
    bundle = synth.generate_scene(spec)
    teacher = synth.generate_teacher(bundle, classdict, spec)
    io_formats.write_bundle(bundle, os.path.join(out, "scene"))
    teacher.write(os.path.join(out, "teacher"))
    classdict.save(os.path.join(out, "classdict.json"))
    spec.save(os.path.join(out, "synthspec.json"))
    return bundle, teacher, classdict


@cli.command("project")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def project_cmd(scene, out):
    """Project all points into all cameras; write hits.csv."""
    bundle = io_formats.read_bundle(scene)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "hits.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_index", "camera_index", "u", "v", "depth"])
        for ci, cam in enumerate(bundle.cameras):
            hits = projection.project(bundle.points, cam, camera_index=ci)
            for i in range(len(hits)):
                writer.writerow([hits.point_index[i], ci, hits.u[i], hits.v[i],
                                 repr(float(hits.depth[i]))])
    click.echo(f"wrote {path}")


@cli.command("pseudo")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--teacher", required=True, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def pseudo_cmd(scene, teacher, dict_path, out):
    """Generate pseudo-labels from teacher masks; write pseudo.u16."""
    bundle = io_formats.read_bundle(scene)
    mask_sets = io_formats.read_teacher(teacher)
    classdict = ClassDictionary.load(dict_path)
    labels = projection.pseudo_labels(bundle, mask_sets, classdict)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "pseudo.u16")
    io_formats.write_labels(labels, path)
    click.echo(f"wrote {path} ({int((labels != UNLABELED).sum())}/{len(labels)} covered)")


@cli.command("corr")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--teacher", required=True, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--no-superpoints", is_flag=True, help="ablation: greedy k-NN groups instead of masks")
@click.option("--out", required=True, type=click.Path())
def corr_cmd(scene, teacher, dict_path, no_superpoints, out):
    """Build the superpixel-superpoint correspondence; write correspondence.json."""
    import json

    bundle = io_formats.read_bundle(scene)
    mask_sets = io_formats.read_teacher(teacher)
    classdict = ClassDictionary.load(dict_path)
    if no_superpoints:
        corr = correspondence.build_knn_groups(bundle, mask_sets, classdict)
    else:
        corr = correspondence.build(bundle, mask_sets, classdict)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "correspondence.json")
    with open(path, "w") as fh:
        json.dump(
            {
                "count": corr.count,
                "pairs": [
                    {
                        "camera_index": p.camera_index,
                        "mask_index": p.mask_index,
                        "prompt": p.prompt,
                        "class_id": p.class_id,
                        "n_points": int(len(p.point_indices)),
                    }
                    for p in corr.pairs
                ],
            },
            fh,
            indent=2,
        )
    click.echo(f"wrote {path} ({corr.count} pairs)")


@cli.command("tmp")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--teacher", required=True, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--steps", default=500, type=int)
@click.option("--lr", default=0.5, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--tau", default=0.07, type=float)
@click.option("--alpha-image", default=0.5, type=float, callback=_check_unit("alpha-image"))
@click.option("--alpha-text", default=0.5, type=float, callback=_check_unit("alpha-text"))
@click.option("--no-text-loss", is_flag=True, help="ablation: drop the text-superpoint loss")
@click.option("--no-superpoints", is_flag=True)
@click.option("--out", required=True, type=click.Path())
def tmp_cmd(scene, teacher, dict_path, steps, lr, seed, tau, alpha_image, alpha_text,
            no_text_loss, no_superpoints, out):
    """Train the toy projection head; write head.json, trace.csv, trace.svg."""
    if tau <= 0:
        raise click.BadParameter("tau must be positive")
    bundle = io_formats.read_bundle(scene)
    mask_sets = io_formats.read_teacher(teacher)
    classdict = ClassDictionary.load(dict_path)
    if no_text_loss:
        alpha_text = 0.0
    result = tmp.train_toy_head(
        bundle, mask_sets, classdict, steps=steps, lr=lr, seed=seed, tau=tau,
        alpha_image=alpha_image, alpha_text=alpha_text,
        use_superpoints=not no_superpoints,
    )
    os.makedirs(out, exist_ok=True)
    result.head.save(os.path.join(out, "head.json"))
    result.write_trace(os.path.join(out, "trace.csv"))
    render.render_trace(result.trace, os.path.join(out, "trace.svg"))
    if result.final is not None:
        click.echo(f"final combined loss {result.final.l_tmp:.6f} after {steps} steps")
    else:
        click.echo("no training steps requested; head left at initialization")


@cli.command("afi")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--pred", required=True, type=click.Path(exists=True),
              help="predicted label field (.u16)")
@click.option("--pseudo", "pseudo_path", default=None, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--gamma", default=0.995, type=float, callback=_check_gamma)
@click.option("--beta", default=4.0, type=float)
@click.option("--s-dist", default=15.0, type=float)
@click.option("--lattice-m", default=60, type=int)
@click.option("--knn", default=16, type=int)
@click.option("--knn-decode", default=3, type=int)
@click.option("--rates", default=None, callback=_parse_rates)
@click.option("--no-coverage", is_flag=True)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
def afi_cmd(scene, pred, pseudo_path, dict_path, gamma, beta, s_dist, lattice_m,
            knn, knn_decode, rates, no_coverage, seed, out):
    """Refine a predicted label field; write afi_labels.u16."""
    bundle = io_formats.read_bundle(scene)
    classdict = ClassDictionary.load(dict_path)
    predict = io_formats.read_labels(pred, expected_n=bundle.n_points)
    pseudo = None
    if pseudo_path:
        pseudo = io_formats.read_labels(pseudo_path, expected_n=bundle.n_points)
    cfg = AfiConfig(
        gamma=gamma, beta=beta, s_dist=s_dist, lattice_m=lattice_m,
        k_encoder=knn, k_decoder=knn_decode,
        rates=rates if rates is not None else (1 / 3,) * 4,
        layers=len(rates) if rates is not None else 4,
        coverage_enabled=not no_coverage, seed=seed,
    )
    fov = projection.fov_mask(bundle) if bundle.cameras else None
    labels = run_afi(predict, bundle.points, cfg, classdict.n_classes,
                         pseudo=pseudo, fov=fov)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "afi_labels.u16")
    io_formats.write_labels(labels, path)
    click.echo(f"wrote {path}")


@cli.command("eval")
@click.option("--scene", required=True, type=click.Path(exists=True),
              help="scene directory providing ground truth")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def eval_cmd(scene, pred, dict_path, out):
    """Evaluate a label field against ground truth; write metrics.json."""
    bundle = io_formats.read_bundle(scene)
    if bundle.gt_labels is None:
        raise io_formats.FormatError("scene has no ground-truth labels")
    classdict = ClassDictionary.load(dict_path)
    labels = io_formats.read_labels(pred, expected_n=bundle.n_points)
    cm = evaluate.confusion(bundle.gt_labels, labels, classdict.n_classes)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "metrics.json")
    evaluate.write_metrics(path, cm, classdict.class_names())
    _, mean = evaluate.miou(cm)
    click.echo(f"wrote {path} (mIoU {100.0 * mean:.2f}%)")


@cli.command("render")
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--dict", "dict_path", required=True, type=click.Path(exists=True))
@click.option("--name", default="labels", help="output file stem")
@click.option("--out", required=True, type=click.Path())
def render_cmd(scene, labels_path, dict_path, name, out):
    """Render a top-down SVG of points colored by label."""
    bundle = io_formats.read_bundle(scene)
    classdict = ClassDictionary.load(dict_path)
    labels = io_formats.read_labels(labels_path, expected_n=bundle.n_points)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{name}.svg")
    render.render_labels(bundle.points, labels, path, classdict.class_names(), title=name)
    click.echo(f"wrote {path}")


@cli.command("pipeline")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--steps", default=500, type=int)
@click.option("--lr", default=0.5, type=float)
@click.option("--seed", default=None, type=int, help="override the spec seed")
@click.option("--tau", default=0.07, type=float)
@click.option("--gamma", default=0.995, type=float, callback=_check_gamma)
@click.option("--alpha-image", default=0.5, type=float, callback=_check_unit("alpha-image"))
@click.option("--alpha-text", default=0.5, type=float, callback=_check_unit("alpha-text"))
@click.option("--beta", default=4.0, type=float)
@click.option("--s-dist", default=15.0, type=float)
@click.option("--lattice-m", default=60, type=int)
@click.option("--knn", default=16, type=int)
@click.option("--rates", default=None, callback=_parse_rates)
@click.option("--no-tmp", is_flag=True)
@click.option("--no-afi", is_flag=True)
@click.option("--no-coverage", is_flag=True)
@click.option("--no-superpoints", is_flag=True)
@click.option("--no-text-loss", is_flag=True)
@click.option("--out", required=True, type=click.Path())
def pipeline_cmd(spec_path, steps, lr, seed, tau, gamma, alpha_image, alpha_text,
                 beta, s_dist, lattice_m, knn, rates, no_tmp, no_afi, no_coverage,
                 no_superpoints, no_text_loss, out):
    """Run every stage end-to-end from a synthetic spec; write all artifacts."""
    spec = synth.SynthSpec.load(spec_path)
    if seed is not None:
        spec.seed = seed
    bundle, teacher, classdict = _run_synth(spec, out)
    mask_sets = teacher.mask_sets

    pseudo = projection.pseudo_labels(bundle, mask_sets, classdict)
    io_formats.write_labels(pseudo, os.path.join(out, "pseudo.u16"))

    if not no_tmp:
        result = tmp.train_toy_head(
            bundle, mask_sets, classdict, steps=steps, lr=lr, seed=spec.seed,
            tau=tau, alpha_image=alpha_image,
            alpha_text=0.0 if no_text_loss else alpha_text,
            use_superpoints=not no_superpoints,
        )
        result.head.save(os.path.join(out, "head.json"))
        result.write_trace(os.path.join(out, "trace.csv"))
        render.render_trace(result.trace, os.path.join(out, "trace.svg"))

    final = pseudo
    if not no_afi:
        cfg = AfiConfig(
            gamma=gamma, beta=beta, s_dist=s_dist, lattice_m=lattice_m,
            k_encoder=knn,
            rates=rates if rates is not None else (1 / 3,) * 4,
            layers=len(rates) if rates is not None else 4,
            coverage_enabled=not no_coverage, seed=spec.seed,
        )
        fov = projection.fov_mask(bundle)
        final = run_afi(pseudo, bundle.points, cfg, classdict.n_classes,
                            pseudo=pseudo, fov=fov)
        io_formats.write_labels(final, os.path.join(out, "afi_labels.u16"))

    names = classdict.class_names()
    cm = evaluate.confusion(bundle.gt_labels, final, classdict.n_classes)
    evaluate.write_metrics(os.path.join(out, "metrics.json"), cm, names)
    cm_pseudo = evaluate.confusion(bundle.gt_labels, pseudo, classdict.n_classes)
    evaluate.write_metrics(os.path.join(out, "metrics_pseudo.json"), cm_pseudo, names)

    render.render_labels(bundle.points, bundle.gt_labels,
                         os.path.join(out, "ground_truth.svg"), names, "ground truth")
    render.render_labels(bundle.points, pseudo,
                         os.path.join(out, "pseudo.svg"), names, "pseudo-labels")
    if not no_afi:
        render.render_labels(bundle.points, final,
                             os.path.join(out, "refined.svg"), names, "refined labels")
    _, mean = evaluate.miou(cm)
    click.echo(f"pipeline complete; final mIoU {100.0 * mean:.2f}% -> {out}/metrics.json")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        print(f"error: {exc.format_message()}", file=sys.stderr)
        return 1
    except (io_formats.FormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
