"""``qsm`` command line: reproducible pipelines over the toolkit modules.

Every subcommand writes a run manifest (resolved configuration, input
hashes, outputs, wall time) so any produced volume can be traced back to
its exact invocation.  Exit codes: 2 config/spec errors, 3 missing files,
4 data/validation errors, 5 solver divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dipole import (
    dipole_kernel,
    field_from_phase,
    forward_field,
    kernel_to_volume,
    phase_from_field,
    rotated_kernel,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    EmptyMaskError,
    InvalidRotationError,
    MaskTooSmallError,
    PhantomSpecError,
    QsmError,
    VolumeFormatError,
)
from .io import load_mask, load_volume, save_mask, save_volume
from .metrics import compute_metrics, roi_stats
from .phantom import ROI_NAMES, PhantomSpec, brain_like_spec, render_phantom
from .phase import VSharpConfig, laplacian_unwrap, vsharp, wrap_phase
from .recon import MediConfig, OrientationScan, TkdConfig, cosmos, medi_like, tkd
from .traindata import (
    LossWeights,
    augment,
    extract_patches,
    loss_gradient,
    loss_l1,
    loss_model,
    total_loss,
    write_qpatch,
)
from .volume import MaskVolume, RotationMatrix

_EXIT_CONFIG = 2
_EXIT_MISSING = 3
_EXIT_DATA = 4
_EXIT_DIVERGED = 5


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command: str, config: dict, inputs, outputs, t0: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "wall_time_s": max(time.perf_counter() - t0, 0.0),
    }
    if extra:
        manifest.update(extra)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1) + "\n")
    os.replace(tmp, path)


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix == ".json":
        return json.loads(p.read_text())
    if p.suffix == ".toml":
        try:
            import tomllib as toml
        except ImportError:
            import tomli as toml
        return toml.loads(p.read_text())
    raise ConfigError(f"config must be .json or .toml, got {p.name}")


def _parse_triple(text: str, cast=float) -> tuple:
    parts = [cast(t) for t in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _parse_orientations(text: str) -> list[tuple[str, float]]:
    out = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        axis, _, ang = token.partition(":")
        if axis not in ("x", "y", "z") or not ang:
            raise ConfigError(f"orientation token {token!r} is not axis:angle")
        out.append((axis, float(ang)))
    if not out:
        raise ConfigError("no orientations given")
    return out


def _vsharp_config(cfg: dict) -> VSharpConfig:
    section = cfg.get("vsharp", {})
    kwargs = {}
    if "radii_mm" in section:
        kwargs["radii_mm"] = tuple(float(r) for r in section["radii_mm"])
    if "tsvd_threshold" in section:
        kwargs["tsvd_threshold"] = float(section["tsvd_threshold"])
    return VSharpConfig(**kwargs)


# ----------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    t0 = time.perf_counter()
    dims = _parse_triple(args.dims, int)
    vox = _parse_triple(args.voxel)
    if args.spec == "builtin:brain":
        spec = brain_like_spec(dims, vox)
        spec_inputs = []
    else:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise FileNotFoundError(f"phantom spec not found: {spec_path}")
        spec = PhantomSpec.from_json(spec_path)
        spec_inputs = [spec_path]
    chi, mask, labels = render_phantom(spec, dims, vox)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    outs = [
        save_volume(f"{prefix}_chi.qvol", chi),
        save_mask(f"{prefix}_mask.qvol", mask, vox),
        save_volume(f"{prefix}_labels.qvol", labels),
    ]
    _write_manifest(args.manifest or f"{prefix}_manifest.json", "phantom",
                    {"spec": args.spec, "dims": dims, "voxel": vox},
                    spec_inputs, outs, t0)
    return 0


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    chi = load_volume(args.chi, "ppm")
    mask = load_mask(args.mask)
    cfg = _load_config_file(args.config) if args.config else {}
    if args.orientations:
        orientations = _parse_orientations(args.orientations)
    elif "orientations" in cfg:
        orientations = [(o["axis"], float(o["angle_deg"])) for o in cfg["orientations"]]
    else:
        orientations = [("x", 0.0)]
    rng = np.random.default_rng(args.seed)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    mask_path = save_mask(f"{prefix}_mask.qvol", mask, chi.voxel_size_mm)
    outs = [mask_path]
    scans = []
    for i, (axis, ang) in enumerate(orientations):
        R = RotationMatrix.about_axis(axis, ang)
        kern = rotated_kernel(chi.dims, chi.voxel_size_mm, R)
        f = forward_field(chi, kern)
        if args.noise_std_ppm > 0:
            f = f.with_data(f.data + rng.normal(0.0, args.noise_std_ppm, f.dims))
        fpath = save_volume(f"{prefix}_field_{i:02d}.qvol", f)
        outs.append(fpath)
        entry = {"field": str(fpath), "rotation": R.mat.tolist(),
                 "axis": axis, "angle_deg": ang}
        if args.emit_phase:
            ph = phase_from_field(f, args.te_s, args.b0_t)
            ph = ph.with_data(wrap_phase(ph.data), "radians")
            ppath = save_volume(f"{prefix}_phase_{i:02d}.qvol", ph)
            outs.append(ppath)
            entry["phase"] = str(ppath)
        scans.append(entry)
    index = {"mask": str(mask_path), "scans": scans,
             "noise_std_ppm": args.noise_std_ppm, "seed": args.seed}
    index_path = Path(f"{prefix}_scans.json")
    index_path.write_text(json.dumps(index, indent=1) + "\n")
    outs.append(index_path)
    _write_manifest(args.manifest or f"{prefix}_manifest.json", "simulate",
                    {"orientations": orientations, "noise_std_ppm": args.noise_std_ppm,
                     "seed": args.seed, "emit_phase": args.emit_phase},
                    [args.chi, args.mask], outs, t0)
    return 0


def cmd_prep(args) -> int:
    t0 = time.perf_counter()
    phase = load_volume(args.phase, "radians")
    mask = load_mask(args.mask)
    cfg = _load_config_file(args.config) if args.config else {}
    vcfg = _vsharp_config(cfg)
    unwrapped = laplacian_unwrap(phase, mask)
    field = field_from_phase(unwrapped, args.te_s, args.b0_t)
    local, eroded = vsharp(field, mask, vcfg)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    outs = [
        save_volume(f"{prefix}_localfield.qvol", local),
        save_mask(f"{prefix}_mask.qvol", eroded, phase.voxel_size_mm),
    ]
    _write_manifest(args.manifest or f"{prefix}_manifest.json", "prep",
                    {"te_s": args.te_s, "b0_t": args.b0_t,
                     "vsharp": {"radii_mm": list(vcfg.radii_mm),
                                "tsvd_threshold": vcfg.tsvd_threshold}},
                    [args.phase, args.mask], outs, t0)
    return 0


def _load_scans(index_path) -> tuple[list[OrientationScan], MaskVolume]:
    index_path = Path(index_path)
    if not index_path.exists():
        raise FileNotFoundError(f"scan index not found: {index_path}")
    index = json.loads(index_path.read_text())
    mask = load_mask(index["mask"])
    scans = []
    for entry in index["scans"]:
        scans.append(OrientationScan(
            field=load_volume(entry["field"], "ppm"),
            rotation=RotationMatrix(np.asarray(entry["rotation"])),
            mask=mask,
        ))
    return scans, mask


def cmd_recon(args) -> int:
    t0 = time.perf_counter()
    extra = {}
    inputs = []
    # flags override the config file, which overrides the built-in defaults
    cfg = _load_config_file(args.config) if args.config else {}

    def resolved(section: str, key: str, flag_value, cast=float):
        if flag_value is not None:
            return flag_value
        if key in cfg.get(section, {}):
            return cast(cfg[section][key])
        return None

    if args.method == "cosmos":
        scans, _mask = _load_scans(args.scans)
        inputs.append(args.scans)
        eps = resolved("cosmos", "eps", args.eps) or 1e-6
        chi = cosmos(scans, eps=eps)
    else:
        field = load_volume(args.field, "ppm")
        mask = load_mask(args.mask)
        inputs += [args.field, args.mask]
        kern = dipole_kernel(field.dims, field.voxel_size_mm, _parse_triple(args.b0_dir))
        if args.export_kernel:
            save_volume(args.export_kernel, kernel_to_volume(kern))
        if args.method == "tkd":
            cap = resolved("tkd", "inverse_cap", args.inverse_cap) or 5.0
            chi = tkd(field, kern, TkdConfig(inverse_cap=cap), mask)
        else:
            magnitude = load_volume(args.magnitude)
            inputs.append(args.magnitude)
            mcfg = MediConfig(
                lam=resolved("medi", "lam", args.lam) or 5e-4,
                max_iters=int(resolved("medi", "max_iters", args.max_iters, int) or 10),
                cg_iters=int(resolved("medi", "cg_iters", args.cg_iters, int) or 50),
                smooth_eps=float(cfg.get("medi", {}).get("smooth_eps", 1e-6)),
                edge_fraction=float(cfg.get("medi", {}).get("edge_fraction", 0.3)),
            )
            chi, trace = medi_like(field, kern, magnitude, mcfg, mask)
            extra["objective_trace"] = trace
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outs = [save_volume(out, chi)]
    if args.export_kernel:
        outs.append(Path(args.export_kernel))
    _write_manifest(args.manifest or f"{out}.manifest.json", f"recon:{args.method}",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    inputs, outs, t0, extra=extra)
    return 0


def cmd_cosmos(args) -> int:
    args.method = "cosmos"
    return cmd_recon(args)


def cmd_metrics(args) -> int:
    t0 = time.perf_counter()
    ref = load_volume(args.ref, "ppm")
    test = load_volume(args.test, "ppm")
    mask = load_mask(args.mask)
    report = compute_metrics(test, ref, mask)
    text = json.dumps(report.as_dict(), indent=1)
    print(text)
    outs = []
    if args.out:
        Path(args.out).write_text(text + "\n")
        outs.append(args.out)
    _write_manifest(args.manifest or "qsm_metrics_manifest.json", "metrics",
                    {"ref": args.ref, "test": args.test},
                    [args.ref, args.test, args.mask], outs, t0,
                    extra={"report": report.as_dict()})
    return 0


def cmd_roi_stats(args) -> int:
    t0 = time.perf_counter()
    labels = load_volume(args.labels)
    mask = load_mask(args.mask)
    maps = [load_volume(p, "ppm") for p in args.maps]
    stats = roi_stats(maps, labels, mask)
    payload = stats.as_dict()
    if args.names:
        payload = {ROI_NAMES.get(int(k), k): v for k, v in payload.items()}
    text = json.dumps(payload, indent=1)
    print(text)
    outs = []
    if args.out:
        Path(args.out).write_text(text + "\n")
        outs.append(args.out)
    _write_manifest(args.manifest or "qsm_roi_stats_manifest.json", "roi-stats",
                    {"labels": args.labels}, [args.labels, args.mask, *args.maps],
                    outs, t0, extra={"stats": payload})
    return 0


def cmd_patches(args) -> int:
    t0 = time.perf_counter()
    field = load_volume(args.input, "ppm")
    label = load_volume(args.label, "ppm")
    mask = load_mask(args.mask)
    ds = extract_patches(field, label, mask, patch_size=args.patch_size,
                         overlap=args.overlap, source=str(args.input))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    outs = [write_qpatch(out, ds)]
    if args.export_kernel:
        kern = dipole_kernel((args.patch_size,) * 3, field.voxel_size_mm,
                             _parse_triple(args.b0_dir))
        outs.append(save_volume(args.export_kernel, kernel_to_volume(kern)))
    _write_manifest(args.manifest or f"{out}.manifest.json", "patches",
                    {"patch_size": args.patch_size, "overlap": args.overlap},
                    [args.input, args.label, args.mask], outs, t0,
                    extra={"patch_count": ds.count})
    return 0


def cmd_loss(args) -> int:
    t0 = time.perf_counter()
    chi = load_volume(args.chi, "ppm")
    label = load_volume(args.label, "ppm")
    w = LossWeights(*_parse_triple(args.weights))
    kern = dipole_kernel(chi.dims, chi.voxel_size_mm, _parse_triple(args.b0_dir))
    values = {
        "model": loss_model(chi, label, kern, args.edge_discard),
        "l1": loss_l1(chi, label),
        "gradient": loss_gradient(chi, label, kern, args.edge_discard),
    }
    values["total"] = total_loss(chi, label, kern, w, args.edge_discard)
    text = json.dumps(values, indent=1)
    print(text)
    outs = []
    if args.export_kernel:
        outs.append(save_volume(args.export_kernel, kernel_to_volume(kern)))
    _write_manifest(args.manifest or "qsm_loss_manifest.json", "loss",
                    {"weights": [w.w1, w.w2, w.w3], "edge_discard": args.edge_discard},
                    [args.chi, args.label], outs, t0, extra={"losses": values})
    return 0


def cmd_augment(args) -> int:
    t0 = time.perf_counter()
    label = load_volume(args.label, "ppm")
    mask = load_mask(args.mask)
    new_input, new_label, new_mask = augment(label, mask, args.angle, args.axis)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    outs = [
        save_volume(f"{prefix}_input.qvol", new_input),
        save_volume(f"{prefix}_label.qvol", new_label),
        save_mask(f"{prefix}_mask.qvol", new_mask, label.voxel_size_mm),
    ]
    _write_manifest(args.manifest or f"{prefix}_manifest.json", "augment",
                    {"angle": args.angle, "axis": args.axis},
                    [args.label, args.mask], outs, t0)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsm",
        description="Synthetic-phantom QSM toolkit: forward simulation, "
                    "phase preprocessing, dipole inversions, metrics, and "
                    "training-data export.",
    )
    parser.add_argument("--version", action="version", version=f"qsmkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("phantom", help="render a phantom spec to volumes")
    p.add_argument("--spec", required=True,
                   help="path to a phantom JSON spec, or builtin:brain")
    p.add_argument("--dims", default="64,64,64")
    p.add_argument("--voxel", default="1,1,1")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="forward-simulate orientation scans")
    p.add_argument("--chi", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--orientations", help='e.g. "x:20,x:-20,y:20"')
    p.add_argument("--config", help="JSON/TOML file with an orientations list")
    p.add_argument("--noise-std-ppm", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-phase", action="store_true",
                   help="also write wrapped phase volumes")
    p.add_argument("--te-s", type=float, default=0.025)
    p.add_argument("--b0-t", type=float, default=3.0)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prep", help="unwrap phase and remove background field")
    p.add_argument("--phase", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--te-s", type=float, required=True)
    p.add_argument("--b0-t", type=float, required=True)
    p.add_argument("--config", help="JSON/TOML with vsharp.radii_mm / vsharp.tsvd_threshold")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_prep)

    for name in ("recon", "cosmos"):
        p = sub.add_parser(name, help="reconstruct susceptibility"
                           + (" (multi-orientation)" if name == "cosmos" else ""))
        if name == "recon":
            p.add_argument("--method", choices=("tkd", "medi", "cosmos"), required=True)
        p.add_argument("--field")
        p.add_argument("--mask")
        p.add_argument("--magnitude")
        p.add_argument("--scans", help="scan index JSON from `qsm simulate`")
        p.add_argument("--b0-dir", default="0,0,1")
        p.add_argument("--config", help="JSON/TOML file with tkd/medi/cosmos sections")
        # None means: take the config-file value, else the built-in default
        p.add_argument("--inverse-cap", type=float)
        p.add_argument("--lam", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--cg-iters", type=int)
        p.add_argument("--eps", type=float)
        p.add_argument("--export-kernel")
        p.add_argument("--out", required=True)
        p.add_argument("--manifest")
        p.set_defaults(func=cmd_recon if name == "recon" else cmd_cosmos)

    p = sub.add_parser("metrics", help="score a map against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("roi-stats", help="per-ROI consistency across maps")
    p.add_argument("--labels", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--names", action="store_true", help="use builtin ROI names")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("maps", nargs="+")
    p.set_defaults(func=cmd_roi_stats)

    p = sub.add_parser("patches", help="extract overlapping training patches")
    p.add_argument("--input", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--overlap", type=float, default=2.0 / 3.0)
    p.add_argument("--b0-dir", default="0,0,1")
    p.add_argument("--export-kernel", help="write the patch-sized dipole kernel as .qvol")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("loss", help="evaluate the training losses on two maps")
    p.add_argument("--chi", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--b0-dir", default="0,0,1")
    p.add_argument("--weights", default="1,1,0.1")
    p.add_argument("--edge-discard", type=int, default=5)
    p.add_argument("--export-kernel")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("augment", help="tilt a label map and regenerate its field")
    p.add_argument("--label", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--angle", type=float, required=True)
    p.add_argument("--axis", choices=("x", "y"), required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_augment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_MISSING
    except (ConfigError, PhantomSpecError, InvalidRotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DIVERGED
    except (DimensionMismatchError, EmptyMaskError, MaskTooSmallError,
            VolumeFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except QsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
