"""Command-line entry point (``splitloc``).

Exit codes: 0 success, 1 runtime failure or incomplete run, 2 usage or
configuration error, 3 not enough measurements to calibrate.
"""

import argparse
import asyncio
import csv
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

from src.core.config import Settings, get_settings
from src.core.errors import (
    DataValidationError,
    DegenerateFitError,
    InsufficientDataError,
    InvalidArgumentError,
    ParseError,
    SplitLocError,
)
from src.core.log import setup_logging
from src.schemas.fusion import FusionStudyConfig
from src.schemas.planner import CostProfile
from src.schemas.runtime import ClientConfig, DropPolicy, ServerConfig
from src.schemas.sim import SimulationConfig
from src.services.dnn_graph import CUT_NAMES, build_backbone, describe_rows
from src.services.executor import ModelBundle, activation_checksums, crc32_hex, seeded_input
from src.services.fusion_eval import run_fusion_study, write_fusion_report
from src.services.offload_runtime import bench_local, run_capture_loop, write_timings_csv
from src.services.pipeline_sim import (
    run_replay_study,
    simulate_realtime,
    write_coverage_csv,
    write_sim_report,
)
from src.services.split_planner import (
    calibrate,
    load_measurements_csv,
    plan,
    write_measurements_csv,
    write_plan_csv,
)

logger = logging.getLogger("splitloc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INSUFFICIENT = 3

M = TypeVar("M", bound=BaseModel)


def host_port(value: str) -> tuple[str, int]:
    """Parse ``HOST:PORT``."""
    host, sep, port = value.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


def load_config(path: Path, model: type[M]) -> M:
    """Parse a JSON config file into ``model``; errors surface as exit code 2."""
    config = model.model_validate_json(path.read_text())
    if not config.model_fields_set:
        raise DataValidationError(f"{path}: config sets no fields")
    return config


def _write_rows(path: Path, rows: list[dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _build_model(settings: Settings) -> ModelBundle:
    return ModelBundle.build(settings.resolution, settings.feature_dim, settings.weight_seed)


# Commands --------------------------------------------------------------------


def cmd_describe_model(args: argparse.Namespace, settings: Settings) -> int:
    graph = build_backbone(settings.resolution, settings.feature_dim)
    out = args.out or settings.output_dir / "model.csv"
    _write_rows(out, describe_rows(graph))
    print(out)
    return EXIT_OK


def _fit(args: argparse.Namespace, settings: Settings) -> tuple[CostProfile, str]:
    graph = build_backbone(settings.resolution, settings.feature_dim)
    measurements = load_measurements_csv(args.measurements)
    result = calibrate(
        graph,
        measurements,
        overhead_s=args.overhead,
        include_single_frame=args.single_frame,
    )
    out = settings.output_dir / "profile.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.model_dump_json(indent=2) + "\n")
    logger.info("spearman rho %.3f, residual norm %.4f", result.spearman_rho, result.residual_norm)
    return result.profile, str(out)


def cmd_plan(args: argparse.Namespace, settings: Settings) -> int:
    graph = build_backbone(settings.resolution, settings.feature_dim)
    if args.profile is not None:
        profile = load_config(args.profile, CostProfile)
    else:
        profile, _ = _fit(args, settings)
    split_plan = plan(graph, profile)
    write_plan_csv(split_plan, settings.output_dir / "plan.csv")
    print(split_plan.best_cut)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace, settings: Settings) -> int:
    profile, out = _fit(args, settings)
    graph = build_backbone(settings.resolution, settings.feature_dim)
    split_plan = plan(graph, profile)
    write_plan_csv(split_plan, settings.output_dir / "plan.csv")
    print(out)
    print(split_plan.best_cut)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, settings: Settings) -> int:
    from src.main import serve

    host, port = args.listen or (settings.listen_host, settings.listen_port)
    config = ServerConfig(
        host=host,
        port=port,
        resolution=settings.resolution,
        feature_dim=settings.feature_dim,
        seed=settings.weight_seed,
        max_sessions=args.max_sessions or settings.max_sessions,
        throttle_s_per_gflop=args.throttle_gflops,
        log_level=settings.log_level,
    )
    serve(config)
    return EXIT_OK


def cmd_client(args: argparse.Namespace, settings: Settings) -> int:
    host, port = args.server or (settings.listen_host, settings.listen_port)
    config = ClientConfig(
        server_url=f"http://{host}:{port}",
        cut=args.cut,
        source=args.source,
        source_seed=args.source_seed,
        fps=args.fps,
        duration_s=args.duration,
        policy=args.policy,
        throttle_s_per_gflop=args.throttle_gflops,
        min_inference_s=args.min_inference,
        frame_limit=args.frames,
        timeout_s=settings.request_timeout_s,
        retry_budget=settings.retry_budget,
        retry_backoff_s=settings.retry_backoff_s,
    )
    report = asyncio.run(run_capture_loop(config, _build_model(settings)))
    out = args.out or settings.output_dir / "client_timings.csv"
    write_timings_csv(report, out)
    print(report.model_dump_json(indent=2))
    return EXIT_OK if report.complete else EXIT_FAILURE


def cmd_bench_local(args: argparse.Namespace, settings: Settings) -> int:
    cuts = args.cut or list(CUT_NAMES)
    unknown = [c for c in cuts if c not in CUT_NAMES]
    if unknown:
        raise InvalidArgumentError(f"unknown cut(s): {', '.join(unknown)}")
    measurements = bench_local(
        _build_model(settings),
        cuts,
        frames=args.frames,
        client_s_per_gflop=args.client_gflops_s,
        server_s_per_gflop=args.server_gflops_s,
        bandwidth=args.bandwidth,
    )
    out = args.out or settings.output_dir / "bench_local.csv"
    write_measurements_csv(measurements, out)
    print(out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, SimulationConfig)
    out_dir = settings.output_dir
    for scenario in config.realtime:
        report = simulate_realtime(scenario)
        write_sim_report(report, out_dir)
        print(f"{report.label}: {report.poses_produced} poses, {report.frames_dropped} dropped")
    if config.replay is not None:
        reports = run_replay_study(config.replay)
        write_coverage_csv(reports, out_dir / "coverage.csv")
        for r in reports:
            print(f"{r.label} @ {r.wall_time_s:g}s: {r.processed} frames, "
                  f"{r.covered_distance_m:.1f} m")
    return EXIT_OK


def cmd_fuse(args: argparse.Namespace, settings: Settings) -> int:
    config = load_config(args.config, FusionStudyConfig)
    report = run_fusion_study(config)
    write_fusion_report(report, settings.output_dir)
    for s in report.summaries:
        print(f"{s.stream}: mean={s.mean:.3f} median={s.median:.3f} variance={s.variance:.3f}")
    return EXIT_OK


def cmd_golden(args: argparse.Namespace, settings: Settings) -> int:
    bundle = _build_model(settings)
    sums = activation_checksums(bundle, seeded_input(bundle.graph, args.input_seed))
    rows = [{"cut": cut, "crc32_hex": value} for cut, value in sums.items()]
    conv1 = bundle.weights.tensor_bytes(0, "weight")
    rows.append({"cut": "conv1.weight", "crc32_hex": crc32_hex(conv1)})
    out = args.out or settings.output_dir / "golden.csv"
    _write_rows(out, rows)
    print(out)
    return EXIT_OK


# Parser ----------------------------------------------------------------------


def _model_flags(parser: argparse.ArgumentParser, default: Any) -> None:
    parser.add_argument("--res", type=int, default=default,
                        help="input resolution (56, 112 or 224)")
    parser.add_argument("--feat", type=int, default=default, help="feature layer width")
    parser.add_argument("--seed", type=int, default=default, help="weight seed")
    parser.add_argument("--output-dir", type=Path, default=default,
                        help="output directory (env SPLITLOC_OUTPUT_DIR)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        default=default)


def _fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--overhead", type=float, default=0.0,
                        help="known fixed per-frame overhead in seconds (default 0)")
    parser.add_argument("--single-frame", action="store_true",
                        help="also fit the single-frame column at reduced weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitloc", description=__doc__.splitlines()[0])
    _model_flags(parser, None)
    # the same flags are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _model_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str,
                handler: Callable[[argparse.Namespace, Settings], int]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(handler=handler)
        return p

    p = command("describe-model", "layer/cut table with payloads and FLOPs", cmd_describe_model)
    p.add_argument("--out", type=Path, help="output CSV (default OUTPUT_DIR/model.csv)")

    p = command("plan", "rank cuts under a cost profile; prints the best cut", cmd_plan)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--profile", type=Path, help="cost profile JSON")
    group.add_argument("--measurements", type=Path, help="calibrate from this CSV first")
    _fit_flags(p)

    p = command("calibrate", "fit a cost profile to per-cut measurements", cmd_calibrate)
    p.add_argument("--measurements", type=Path, required=True,
                   help="CSV with cut,mean_latency_s[,single_frame_s]")
    _fit_flags(p)

    p = command("serve", "run the offload server", cmd_serve)
    p.add_argument("--listen", type=host_port, help="HOST:PORT (default from settings)")
    p.add_argument("--max-sessions", type=int)
    p.add_argument("--throttle-gflops", type=float, default=0.0,
                   help="server seconds-per-GFLOP floor")

    p = command("client", "run the capture loop against a server", cmd_client)
    p.add_argument("--server", type=host_port, help="HOST:PORT (default from settings)")
    p.add_argument("--cut", default="null", help="cut name, or 'local' for on-device only")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--policy", choices=[policy.value for policy in DropPolicy], default="drop")
    p.add_argument("--source", default="seeded", help="seeded | dir:PATH | traj:PATH")
    p.add_argument("--source-seed", type=int, default=0)
    p.add_argument("--frames", type=int, help="stop after this many frames")
    p.add_argument("--throttle-gflops", type=float, default=0.0,
                   help="client seconds-per-GFLOP floor")
    p.add_argument("--min-inference", type=float, default=0.0,
                   help="pad each inference to at least this many seconds")
    p.add_argument("--out", type=Path, help="per-frame timing CSV")

    p = command("bench-local", "per-cut local latency (mean and first frame)", cmd_bench_local)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--cut", action="append", help="repeatable; default all cuts")
    p.add_argument("--client-gflops-s", type=float, default=0.0,
                   help="emulated device seconds per GFLOP")
    p.add_argument("--server-gflops-s", type=float, default=0.0,
                   help="emulated server seconds per GFLOP")
    p.add_argument("--bandwidth", type=float, default=float("inf"),
                   help="emulated link bytes per second")
    p.add_argument("--out", type=Path, help="measurements CSV")

    p = command("simulate", "pipeline simulation from a JSON config", cmd_simulate)
    p.add_argument("config", type=Path)

    p = command("fuse", "GPS/DNN averaging study from a JSON config", cmd_fuse)
    p.add_argument("config", type=Path)

    p = command("golden", "per-cut activation checksums", cmd_golden)
    p.add_argument("--input-seed", type=int, default=7)
    p.add_argument("--out", type=Path, help="checksum CSV")
    return parser


def _settings(args: argparse.Namespace) -> Settings:
    overrides = {
        "resolution": args.res,
        "feature_dim": args.feat,
        "weight_seed": args.seed,
        "output_dir": args.output_dir,
        "log_level": args.log_level,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return Settings(**overrides) if overrides else get_settings()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _settings(args)
    except ValidationError as e:
        print(f"splitloc: invalid settings:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(settings.log_level)
    handler: Callable[[argparse.Namespace, Settings], int] = args.handler
    try:
        return handler(args, settings)
    except (InsufficientDataError, DegenerateFitError) as e:
        logger.error("%s", e)
        return EXIT_INSUFFICIENT
    except ValidationError as e:
        logger.error("invalid configuration:\n%s", e)
        return EXIT_CONFIG
    except (InvalidArgumentError, ParseError, DataValidationError, OSError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except SplitLocError as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
