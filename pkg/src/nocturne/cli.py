"""Command-line entry point: ``nocturne <subcommand> ...``.

Subcommands: render, train, eval, decompose, synth, gradcheck. Operation errors
exit with status 1 and a one-line message on stderr; bad flags exit with status
2 and usage text (argparse's convention).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NocturneError
from .imageio import PSNR_INF, psnr, ssim, write_pfm, write_png
from .shading import ShadingConfig, tone_map

PROG = "nocturne"


def _add_shading_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("shading ablations")
    g.add_argument("--no-specular", action="store_true", help="drop the specular term")
    g.add_argument("--no-diffuse", action="store_true", help="drop the diffuse term")
    g.add_argument("--sh-specular", action="store_true", help="per-splat SH specular instead of ASG lobes")
    g.add_argument("--no-brdf", action="store_true", help="raw ASG lobes without the BRDF factors")


def _shading(args) -> ShadingConfig:
    return ShadingConfig(
        diffuse=not args.no_diffuse,
        specular=not args.no_specular,
        specular_model="sh" if args.sh_specular else "asg",
        brdf=not args.no_brdf,
    )


def _camera(scene, index: int):
    from .errors import UnknownCameraError

    if not 0 <= index < len(scene.cameras):
        raise UnknownCameraError(f"camera {index} out of range (scene has {len(scene.cameras)})")
    return scene.cameras[index]


def _fmt_db(v: float) -> str:
    return "inf" if v == PSNR_INF else f"{v:.3f}"


# ----------------------------------------------------------------- commands


def cmd_render(args) -> int:
    from .render import RenderSettings, render
    from .sceneio import load_scene

    scene = load_scene(args.scene)
    out = render(scene, _camera(scene, args.camera), RenderSettings(shading=_shading(args)))
    write_png(args.out, out.rgb)
    if args.depth:
        write_pfm(args.depth, out.depth_map)
    if args.normal:
        write_pfm(args.normal, out.normal_map)
    return 0


def cmd_train(args) -> int:
    from .optim import TrainConfig, split_frames, evaluate, train
    from .render import RenderSettings
    from .sceneio import load_frames, load_scene, save_scene

    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("no_specular", "no_diffuse", "sh_specular", "no_brdf") if getattr(args, k)}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    scene = load_scene(args.scene)
    frames = load_frames(args.frames, scene)
    if args.log:
        Path(args.log).write_text("", encoding="utf-8")
    scene, records = train(scene, frames, config, log_path=args.log)
    save_scene(scene, args.out)
    tr, he = split_frames(len(frames), config.holdout_every)
    settings = RenderSettings(shading=config.shading)
    for name, idx in (("train", tr), ("held-out", he)):
        m = evaluate(scene, frames, idx, settings)
        print(f"{name:9s} psnr {_fmt_db(m['psnr'])} ssim {m['ssim']:.4f} frames {m['count']}")
    return 0


def _image_pairs(pred_path: Path, gt_path: Path):
    from .sceneio import load_frames, _read_image

    if pred_path.is_dir() != gt_path.is_dir():
        raise NocturneError("--pred and --gt must both be files or both be frame directories")
    if not pred_path.is_dir():
        return [(_read_image(pred_path), _read_image(gt_path))]
    pred, gt = load_frames(pred_path), load_frames(gt_path)
    if len(pred) != len(gt):
        raise NocturneError(f"frame count mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    return [(p.image, g.image) for p, g in zip(pred, gt)]


def cmd_eval(args) -> int:
    from .optim import split_frames
    from .render import RenderSettings, render
    from .sceneio import load_frames, load_scene

    if args.scene:
        if not args.frames or args.pred or args.gt:
            raise NocturneError("eval takes either --scene with --frames, or --pred with --gt")
        scene = load_scene(args.scene)
        frames = load_frames(args.frames, scene)
        settings = RenderSettings(shading=_shading(args))
        pairs = [(render(scene, f.camera, settings).rgb, f.image) for f in frames]
    else:
        if not (args.pred and args.gt) or args.frames:
            raise NocturneError("eval takes either --scene with --frames, or --pred with --gt")
        pairs = _image_pairs(Path(args.pred), Path(args.gt))
    scores = [(psnr(p, g), ssim(p, g)) for p, g in pairs]
    tr, he = split_frames(len(pairs), args.holdout_every)
    if not tr:
        tr = list(range(len(pairs)))
    print(f"{'split':10s} {'frames':>6s} {'psnr':>9s} {'ssim':>7s}")
    for name, idx in (("train", tr), ("held-out", he)):
        if not idx:
            continue
        p = float(np.mean([scores[i][0] for i in idx]))
        s = float(np.mean([scores[i][1] for i in idx]))
        print(f"{name:10s} {len(idx):6d} {_fmt_db(p):>9s} {s:7.4f}")
    return 0


def cmd_decompose(args) -> int:
    from .render import RenderSettings, decompose
    from .sceneio import load_scene

    scene = load_scene(args.scene)
    d = decompose(scene, _camera(scene, args.camera), RenderSettings(shading=_shading(args)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "albedo.pfm", d.albedo)
    write_pfm(out / "diffuse.pfm", d.diffuse)
    write_pfm(out / "specular.pfm", d.specular)
    write_pfm(out / "normal.pfm", d.normal)
    write_pfm(out / "alpha.pfm", d.alpha)
    write_png(out / "rgb.png", d.rgb)
    write_png(out / "albedo.png", d.albedo)
    write_png(out / "diffuse.png", tone_map(d.diffuse))
    write_png(out / "specular.png", tone_map(d.specular))
    write_png(out / "normal.png", np.where(d.alpha[..., None] > 0, 0.5 * (d.normal + 1.0), 0.0))
    return 0


def cmd_synth(args) -> int:
    from .sceneio import save_frames, save_scene
    from .synth import SynthConfig, perturbed_init, render_targets, synth_scene

    cfg = SynthConfig(
        n_gaussians=args.gaussians, n_actors=args.actors, n_cameras=args.cameras, n_timesteps=args.timesteps,
        width=args.width, height=args.height, light=args.light,
    )
    gt = synth_scene(cfg, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(gt, out / "gt.json")
    save_scene(perturbed_init(gt, args.seed), out / "init.json")
    save_frames(render_targets(gt), out / "frames", args.image_format)
    print(f"wrote {out / 'gt.json'}, {out / 'init.json'} and {len(gt.cameras)} frames in {out / 'frames'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(args.seed, _shading(args), per_param=args.samples)
    width = max(len(k) for k in report.errors)
    for name, err in report.errors.items():
        print(f"{name:{width}s} {err:.3e}  ({report.probed[name]} probed, {report.skipped[name]} skipped)")
    ok = report.max_error <= args.tol
    print(f"max relative error {report.max_error:.3e} ({'ok' if ok else 'FAIL'}, tolerance {args.tol:g})")
    return 0 if ok else 1


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("render", help="render one camera of a scene to PNG")
    p.add_argument("--scene", required=True, help="scene manifest (.json)")
    p.add_argument("--camera", type=int, default=0, help="camera index (default 0)")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--depth", help="also write the depth map to this PFM")
    p.add_argument("--normal", help="also write the camera-frame normal map to this PFM")
    _add_shading_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="optimise a scene against a frame directory")
    p.add_argument("--scene", required=True, help="initial scene manifest")
    p.add_argument("--frames", required=True, help="frame directory (with frames.json)")
    p.add_argument("--out", required=True, help="optimised scene manifest to write")
    p.add_argument("--config", help="training config JSON (keys of TrainConfig)")
    p.add_argument("--log", help="JSONL training log to write")
    p.add_argument("--iterations", type=int, help="override the iteration count")
    p.add_argument("--seed", type=int, help="override the frame-order seed")
    _add_shading_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM on training and held-out frames")
    p.add_argument("--scene", help="scene to render (with --frames)")
    p.add_argument("--frames", help="ground-truth frame directory (with --scene)")
    p.add_argument("--pred", help="predicted image or frame directory (with --gt)")
    p.add_argument("--gt", help="ground-truth image or frame directory (with --pred)")
    p.add_argument("--holdout-every", type=int, default=8, help="hold out frames with index %% N == 0")
    _add_shading_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="albedo / diffuse / specular / normal maps of one camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_shading_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="generate a synthetic scene, its training start point and frames")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--light", choices=("ambient", "headlight"), default="ambient")
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--actors", type=int, default=1)
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--timesteps", type=int, default=12)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--image-format", choices=("png", "pfm"), default="png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=6, help="coordinates probed per parameter array")
    p.add_argument("--tol", type=float, default=1e-3, help="maximum allowed relative error")
    _add_shading_flags(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (NocturneError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"{PROG} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
