"""Command-line entry point.

Subcommands::

    ambiver synth OUT      generate a synthetic benchmark directory
    ambiver run DATA       run the pipeline over a benchmark directory
    ambiver eval RESULTS DATA
                           score stored records against a benchmark
    ambiver fuse DETECTIONS SCENE
                           fuse a detections file of one scene
    ambiver bev SCENE OUT  render the BEV of one scene
    ambiver report REPORT  print a stored ``report.json`` as a table

Every :class:`ambiver.config.PipelineConfig` field can be given in a YAML file
(``--config``) and overridden by the flags of ``run``, ``fuse`` and ``bev``.
The exit status is 0 on success, 1 on a package error and 2 on bad usage.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from . import __version__
from .bev import aggregate_point_cloud, render_bev, save_bev
from .config import BACKENDS, PipelineConfig
from .evaluation import (
    compute_metrics,
    emit_report,
    format_table,
    load_benchmark,
    report_from_dict,
    save_benchmark,
)
from .exceptions import AmbiVerError, MissingFileError
from .fusion import fuse, fuse_without_grouping, load_detections
from .geometry import back_project
from .keyframes import select_keyframes, uniform_keyframes
from .pipeline import run_pipeline
from .scenes import (
    DirectoryScene,
    SyntheticDetector,
    build_synthetic_benchmark,
    load_scenes,
)
from .store import ResultStore
from .synthetic import DetectionNoise

logger = logging.getLogger(__name__)

# flag dest -> dotted PipelineConfig field
_OVERRIDES = {
    "n_target": "keyframes.n_target",
    "kf_tolerance": "keyframes.tolerance",
    "eps_d": "fusion.eps_d",
    "theta_min": "fusion.theta_min",
    "theta_max": "fusion.theta_max",
    "sigma_s": "fusion.sigma_s",
    "top_k": "fusion.top_k",
    "gamma": "fusion.gamma",
    "delta": "fusion.delta",
    "bev_stride": "bev.stride",
    "lexicon_dir": "lexicon_dir",
    "prompt_template": "prompt_template",
    "backend": "backend",
    "replay_path": "replay_path",
    "endpoint": "remote.endpoint",
    "model": "remote.model",
    "max_retries": "remote.max_retries",
    "temperature": "temperature",
    "inflight_limit": "inflight_limit",
    "workers": "workers",
    "output_dir": "output_dir",
}

# switches that can only turn an ablation on
_ABLATIONS = (
    "no_parse",
    "no_fusion",
    "confidence_only_rep",
    "no_bev",
    "no_local",
    "no_visual",
)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", type=Path, help="YAML pipeline config file")
    group.add_argument("--n-target", type=int, help="keyframe target count")
    group.add_argument("--kf-tolerance", type=int, help="keyframe count tolerance")
    group.add_argument(
        "--kf-uniform",
        action="store_true",
        help="sample keyframes uniformly instead of by pose deviation",
    )
    group.add_argument("--eps-d", type=float, help="ray distance threshold in meters")
    group.add_argument("--theta-min", type=float, help="minimum ray angle in degrees")
    group.add_argument("--theta-max", type=float, help="maximum ray angle in degrees")
    group.add_argument("--sigma-s", type=float, help="bbox area-ratio bound")
    group.add_argument("--top-k", type=int, help="candidates kept after fusion")
    group.add_argument("--gamma", type=float, help="boundary penalty weight")
    group.add_argument("--delta", type=float, help="boundary margin in pixels")
    group.add_argument(
        "--bev-size", type=int, nargs=2, metavar=("W", "H"), help="BEV raster size"
    )
    group.add_argument("--bev-stride", type=int, help="pixel stride for the BEV cloud")
    group.add_argument("--lexicon-dir", help="directory of parser lexicon files")
    group.add_argument("--prompt-template", help="prompt template file")
    group.add_argument("--backend", choices=BACKENDS, help="reasoning backend")
    group.add_argument("--replay-path", help="responses file or directory to replay")
    group.add_argument("--endpoint", help="remote backend URL")
    group.add_argument("--model", help="remote model name")
    group.add_argument("--max-retries", type=int, help="retries per backend call")
    group.add_argument("--temperature", type=float, help="sampling temperature")
    group.add_argument("--inflight-limit", type=int, help="concurrent backend calls")
    group.add_argument("--workers", type=int, help="scenes processed in parallel")
    group.add_argument("--output-dir", help="directory for all run artifacts")

    ablations = parser.add_argument_group("ablations")
    for name in _ABLATIONS:
        ablations.add_argument(f"--{name.replace('_', '-')}", action="store_true")


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    """Load ``--config`` (or the defaults) and apply the flags that were given."""

    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()

    overrides: Dict[str, Any] = {
        dotted: getattr(args, dest, None) for dest, dotted in _OVERRIDES.items()
    }
    if args.bev_size:
        overrides["bev.width"], overrides["bev.height"] = args.bev_size
    if args.kf_uniform:
        overrides["ablations.uniform_keyframes"] = True
    for name in _ABLATIONS:
        if getattr(args, name, False):
            overrides[f"ablations.{name}"] = True
    return config.with_overrides(overrides)


def _detector_from_args(args: argparse.Namespace) -> SyntheticDetector:
    noise = DetectionNoise(bbox_sigma_px=args.bbox_sigma, dropout_prob=args.dropout)
    return SyntheticDetector(noise, seed=args.detector_seed)


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    sources, items = build_synthetic_benchmark(
        args.scenes,
        seed=args.seed,
        instructions_per_scene=args.per_scene,
        trajectory=args.trajectory,
    )
    for source in sources:
        source.write(out / "scenes" / source.scene_id)
    path = save_benchmark(items, out)
    print(f"wrote {len(sources)} scenes and {len(items)} instructions to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scenes = load_scenes(args.data)
    items = load_benchmark(args.data, split=args.split)
    result = run_pipeline(
        config,
        scenes,
        items,
        detector=_detector_from_args(args),
        force=args.force,
    )
    print(format_table(result.report), end="")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    items = load_benchmark(args.data, split=args.split)
    wanted = {item.key for item in items}
    records = [r for r in ResultStore(args.results).records() if r.key in wanted]
    if args.exclude_degraded:
        kept = [r for r in records if not r.degraded]
        logger.info("excluding %d degraded records", len(records) - len(kept))
        records = kept
    report = compute_metrics([(r.key, r.verdict) for r in records], items)
    if args.out:
        emit_report(report, args.format, args.out)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(format_table(report), end="")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scene = DirectoryScene(args.scene)
    detections = load_detections(args.detections)
    if config.ablations.no_fusion:
        candidates = fuse_without_grouping(detections, config.fusion)
    else:
        rays = [
            back_project(d, scene.pose(d.view_index), scene.intrinsics)
            for d in detections
        ]
        candidates = fuse(
            detections,
            rays,
            config.fusion,
            confidence_only=config.ablations.confidence_only_rep,
        )
    payload = json.dumps([c.to_dict() for c in candidates], indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        print(payload, end="")
    return 0


def cmd_bev(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scene = DirectoryScene(args.scene)
    poses = scene.poses()
    if config.ablations.uniform_keyframes:
        keyframes = uniform_keyframes(len(poses), config.keyframes.n_target)
    else:
        keyframes = select_keyframes(poses, config.keyframes)
    frames = scene.frames(keyframes.indices)
    cloud = aggregate_point_cloud(frames, scene.intrinsics, config.bev.stride)
    path = save_bev(render_bev(cloud, config.bev), args.out)
    print(f"wrote {path} from {len(keyframes)} keyframes")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise MissingFileError(f"Report not found: {path}")
    report = report_from_dict(json.loads(path.read_text(encoding="utf-8")))
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(format_table(report, args.model), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambiver", description="Detect ambiguous instructions in 3D scenes"
    )
    version = f"%(prog)s {__version__}"
    parser.add_argument("--version", action="version", version=version)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic benchmark")
    synth.add_argument("out", help="benchmark directory to create")
    synth.add_argument("--scenes", type=int, default=10)
    synth.add_argument("--per-scene", type=int, default=6)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument(
        "--trajectory", choices=["panorama", "orbit"], default="panorama"
    )
    synth.set_defaults(func=cmd_synth)

    run = sub.add_parser("run", help="Run the pipeline over a benchmark")
    run.add_argument("data", help="benchmark directory")
    run.add_argument("--split", choices=["train", "test"])
    run.add_argument("--force", action="store_true", help="redo completed records")
    run.add_argument("--bbox-sigma", type=float, default=0.0)
    run.add_argument("--dropout", type=float, default=0.0)
    run.add_argument("--detector-seed", type=int, default=0)
    _add_config_arguments(run)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="Score stored records against a benchmark")
    ev.add_argument("results", help="output directory of a previous run")
    ev.add_argument("data", help="benchmark directory")
    ev.add_argument("--split", choices=["train", "test"])
    ev.add_argument("--format", choices=["table", "json"], default="table")
    ev.add_argument("--out", help="also write the report to this file")
    ev.add_argument("--exclude-degraded", action="store_true")
    ev.set_defaults(func=cmd_eval)

    fu = sub.add_parser("fuse", help="Fuse the detections of one scene")
    fu.add_argument("detections", help="detections JSON file")
    fu.add_argument("scene", help="scene directory with poses and intrinsics")
    fu.add_argument("--out", help="candidates JSON file (stdout when omitted)")
    _add_config_arguments(fu)
    fu.set_defaults(func=cmd_fuse)

    bev = sub.add_parser("bev", help="Render the BEV of one scene")
    bev.add_argument("scene", help="scene directory")
    bev.add_argument("out", help="PNG file to write")
    _add_config_arguments(bev)
    bev.set_defaults(func=cmd_bev)

    rep = sub.add_parser("report", help="Print a stored report")
    rep.add_argument("report", help="report.json or a run directory")
    rep.add_argument("--format", choices=["table", "json"], default="table")
    rep.add_argument("--model", default="AmbiVer", help="row label")
    rep.set_defaults(func=cmd_report)

    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        return args.func(args)
    except (AmbiVerError, ValueError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
