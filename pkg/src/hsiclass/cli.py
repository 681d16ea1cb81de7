"""Command line pipeline: synth, train, classify, sweep, evaluate.

Every subcommand writes fixed filenames under --out (default: current
directory), so the five stages chain into one scripted run. All outputs
are deterministic for a fixed config, seed, and thread count; CSV floats
use repr() so reruns are byte-identical.

Exit codes: 0 success, 2 bad config/options, 3 I/O or format trouble,
4 infeasible split. Solver non-convergence is a warning plus a
converged=false line in classify_meta.txt, never a failing exit.

Label/overlay PNGs are palette images: index = class label, with the
fixed palette below; index 255 marks rejected pixels in the overlay.
The rejection-field PGM maps confidence min..max linearly onto 0..255
(an all-constant field maps to 0).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import io as hio
from . import metrics, mlr, rejection, solver, synth
from .config import ConfigError, parse_band_list, parse_grid, resolve
from .fields import HyperCube, rejection_field
from .io import FormatError, SplitError

# Class palette: index 0 is background, classes 1..20 cycle; 255 = rejected.
_CLASS_COLORS = [
    (0, 0, 0), (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (174, 199, 232), (255, 187, 120),
    (152, 223, 138), (255, 152, 150), (197, 176, 213), (196, 156, 148),
    (247, 182, 210), (199, 199, 199), (219, 219, 141), (158, 218, 229),
]
REJECT_INDEX = 255
_REJECT_COLOR = (255, 0, 0)


def _palette() -> list[int]:
    table = [(0, 0, 0)] * 256
    for i in range(256):
        if i == REJECT_INDEX:
            table[i] = _REJECT_COLOR
        elif i > 0:
            table[i] = _CLASS_COLORS[1 + (i - 1) % (len(_CLASS_COLORS) - 1)]
    return [channel for color in table for channel in color]


def save_indexed_png(indices: np.ndarray, path) -> None:
    img = Image.fromarray(indices.astype(np.uint8), mode="P")
    img.putpalette(_palette())
    img.save(path)


def _load_cube(cfg, path) -> HyperCube:
    cube = hio.load_cube(path, cfg["cube_format"])
    exclude = parse_band_list(cfg["exclude_bands"])
    if exclude:
        cube = cube.drop_bands(exclude)
    return cube


def cmd_synth(args) -> int:
    cfg = resolve(args.config, {
        "seed": args.seed, "cube_format": args.format,
        "noise_sigma": args.noise_sigma, "region_kind": args.region_kind,
        "synth_height": args.height, "synth_width": args.width,
        "synth_k": args.classes, "synth_bands": args.bands,
    })
    spec = synth.SynthSpec(height=cfg["synth_height"], width=cfg["synth_width"],
                           k=cfg["synth_k"], bands=cfg["synth_bands"],
                           noise_sigma=cfg["noise_sigma"],
                           region_kind=cfg["region_kind"], seed=cfg["seed"])
    cube, truth = synth.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hio.save_cube(cube, out / "cube.f32", cfg["cube_format"])
    hio.save_labels(truth, out / "truth.pgm", cfg["label_format"])
    print(f"wrote {out / 'cube.f32'} ({cube.bands}x{cube.height}x{cube.width}) "
          f"and {out / 'truth.pgm'} (K={truth.k})")
    return 0


def cmd_train(args) -> int:
    cfg = resolve(args.config, {
        "seed": args.seed, "cube_format": args.format,
        "samples_per_class": args.samples_per_class,
        "validation_samples": args.validation_samples,
        "lambda_w": args.lambda_w,
    })
    cube = _load_cube(cfg, args.cube)
    truth = hio.load_labels(args.truth, cfg["label_format"])
    split_spec = hio.SplitSpec(samples_per_class=cfg["samples_per_class"],
                               validation_samples=cfg["validation_samples"],
                               seed=cfg["seed"],
                               per_class_validation=cfg["per_class_validation"])
    splits = hio.make_splits(truth, split_spec)

    x = cube.as_feature_matrix().T[splits.train]
    y = truth.flat()[splits.train]
    gamma = cfg["rbf_gamma"] if cfg["rbf_gamma"] > 0 else None
    model = mlr.train_mlr(x, y, truth.k, lambda_w=cfg["lambda_w"],
                          max_iter=cfg["mlr_max_iter"], tol=cfg["mlr_tol"],
                          feature_kind=cfg["feature_kind"], rbf_gamma=gamma)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mlr.save_model(model, out / "model.mlr")
    hio.save_manifest(splits, out / "splits.csv")
    print(f"trained K={model.k} model on {len(y)} pixels "
          f"({'converged' if model.converged else 'max_iter reached'}); "
          f"wrote {out / 'model.mlr'} and {out / 'splits.csv'}")
    return 0


def cmd_classify(args) -> int:
    cfg = resolve(args.config, {
        "cube_format": args.format, "lambda_tv": args.lambda_tv,
        "mu": args.mu, "solver_max_iter": args.max_iter,
    })
    cube = _load_cube(cfg, args.cube)
    model = mlr.load_model(args.model)
    probs = mlr.predict_probs(model, cube)
    params = solver.VtvParams(lambda_tv=cfg["lambda_tv"], mu=cfg["mu"],
                              max_iter=cfg["solver_max_iter"],
                              tol_primal=cfg["tol_primal"])
    field, diag = solver.solve_hidden_field(probs, cube.height, cube.width, params)
    labeling = rejection_field(field).labeling

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hio.save_field(field, out / "field.f32")
    hio.save_labels(labeling, out / "labeling.pgm", "pgm")
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        fh.write("iteration,objective,residual\n")
        for i, (obj, res) in enumerate(zip(diag.objective_history,
                                           diag.primal_residual_history), start=1):
            fh.write(f"{i},{hio.fmt_float(obj)},{hio.fmt_float(res)}\n")
    (out / "classify_meta.txt").write_text(
        f"converged = {str(diag.converged).lower()}\n"
        f"iterations = {diag.iterations}\n"
        f"lambda_tv = {hio.fmt_float(cfg['lambda_tv'])}\n"
        f"mu = {hio.fmt_float(cfg['mu'])}\n"
    )
    if not diag.converged:
        print(f"warning: solver stopped at max_iter={params.max_iter} with "
              f"residual {diag.primal_residual_history[-1]:.3g} > "
              f"{params.tol_primal:g}; best iterate written", file=sys.stderr)
    print(f"wrote {out / 'field.f32'}, {out / 'labeling.pgm'}, "
          f"{out / 'diagnostics.csv'} ({diag.iterations} iterations)")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve(args.config, {"grid": args.grid, "rstar_from": args.rstar_from})
    field = hio.load_field(args.field)
    labeling = hio.load_labeling(args.labeling)
    truth = hio.load_labels(args.truth, cfg["label_format"])
    splits = hio.load_manifest(args.manifest)
    grid = parse_grid(cfg["grid"])
    rfield = rejection_field(field)

    points = rejection.sweep_fractions(rfield, labeling, truth, splits.test, grid)
    source = cfg["rstar_from"]
    if source not in ("validation", "test"):
        raise ConfigError("rstar_from must be validation or test")
    est_indices = splits.validation if source == "validation" else splits.test
    r_star, q_star = rejection.estimate_optimal_fraction(
        rfield, labeling, truth, est_indices, grid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rejection.write_sweep_csv(points, out / "sweep.csv", r_star, source)
    print(f"wrote {out / 'sweep.csv'} ({len(points)} grid points); "
          f"r* from {source} = {r_star} (Q there {q_star:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve(args.config, {"fraction": args.fraction})
    field = hio.load_field(args.field)
    labeling = hio.load_labeling(args.labeling)
    truth = hio.load_labels(args.truth, cfg["label_format"])
    splits = hio.load_manifest(args.manifest)
    rfield = rejection_field(field)

    mask = rejection.reject_at_fraction(rfield, splits.test, cfg["fraction"])
    report = metrics.full_report(labeling, truth, mask, splits.test)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report_csv(report, out / "report.csv")

    save_indexed_png(labeling.labels, out / "label_map.png")
    overlay = labeling.flat().copy()
    overlay[mask.rejected] = REJECT_INDEX
    save_indexed_png(overlay.reshape(labeling.height, labeling.width),
                     out / "overlay.png")

    conf = rfield.confidence
    span = conf.max() - conf.min()
    if span > 0:
        gray = np.round(255.0 * (conf - conf.min()) / span).astype(np.int64)
    else:
        gray = np.zeros_like(conf, dtype=np.int64)
    hio.write_pgm(out / "rejection_field.pgm",
                  gray.reshape(labeling.height, labeling.width))

    print(f"wrote {out / 'report.csv'} (A={report.a:.4f} Q={report.q:.4f} "
          f"r={report.r_achieved:.4f}), label_map.png, overlay.png, "
          f"rejection_field.pgm")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsiclass",
        description="Hyperspectral classification with context and rejection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (pipeline is single-threaded today)")

    p = sub.add_parser("synth", help="generate a synthetic scene")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=hio.CUBE_FORMATS, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--bands", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--region-kind", choices=("blocks", "voronoi"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="split pixels and fit the classifier")
    common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=hio.CUBE_FORMATS, default=None)
    p.add_argument("--samples-per-class", type=int, default=None)
    p.add_argument("--validation-samples", type=int, default=None)
    p.add_argument("--lambda-w", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="probability field + context solve")
    common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--format", choices=hio.CUBE_FORMATS, default=None)
    p.add_argument("--lambda-tv", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="accuracy/quality curves over fractions")
    common(p)
    p.add_argument("--field", required=True)
    p.add_argument("--labeling", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", default=None, help="start:stop:step or comma list")
    p.add_argument("--rstar-from", choices=("validation", "test"), default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="report and maps at one fraction")
    common(p)
    p.add_argument("--field", required=True)
    p.add_argument("--labeling", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--grid", default=None)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
