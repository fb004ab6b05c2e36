"""Command line front end: dataset dump, the three training stages,
evaluation, throughput benchmarking, and the streaming server.

Run settings come from a flat ``key = value`` config file with dotted
sections (``model.*``, ``world.*``, ``train.*`` plus per-stage
``teacher.*``/``stage1.*``/``stage2.*`` refinements, ``eval.*``, ``bench.*``,
``serve.*``, ``data.*``); flags carry only paths and the seed. Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, override_dataclass, split_sections
from .distill import CFG_SCALE
from .engine import bench_stream, offline_generate
from .metrics import psnr, summarize_chunk_times, video_ssim
from .model import DenoiserConfig, init_params, load_params, save_params
from .server import StreamServer, schedule_for
from .toyworld import N_EFFECTS, WorldConfig, dump_dataset
from .train import TrainConfig, train_stage, write_loss_csv

__all__ = ["main"]


class UsageError(Exception):
    """Missing or contradictory flags: exit 1, like any usage problem."""

# §-ratio stage defaults; a config file overrides any of them
_STAGE_DEFAULTS = {
    "teacher": dict(steps=2000, lr=1e-3, batch_size=8),
    "stage1": dict(steps=1000, lr=5e-4, batch_size=8),
    "stage2": dict(steps=1000, lr=1e-5, batch_size=8),
}


def _sections(args) -> dict[str, dict[str, str]]:
    if args.config is None:
        return {}
    return split_sections(load_config(args.config))


def _model_cfg(sections) -> DenoiserConfig:
    return override_dataclass(DenoiserConfig(), sections.get("model", {}))


def _world_cfg(sections, cfg: DenoiserConfig) -> WorldConfig:
    world = WorldConfig(height=cfg.height, width=cfg.width,
                        channels=cfg.channels)
    return override_dataclass(world, sections.get("world", {}))


def _train_cfg(sections, stage: str, seed: int | None) -> TrainConfig:
    tcfg = TrainConfig(**_STAGE_DEFAULTS[stage])
    # train.* applies to every stage; teacher./stage1./stage2. refine it
    tcfg = override_dataclass(tcfg, sections.get("train", {}))
    tcfg = override_dataclass(tcfg, sections.get(stage, {}))
    if seed is not None:
        tcfg = override_dataclass(tcfg, {"seed": str(seed)})
    return tcfg


def _load_checkpoint(path):
    if path is None:
        raise UsageError("--checkpoint is required for this command")
    try:
        return load_params(path)
    except Exception as e:
        raise ConfigError(f"cannot load checkpoint {path}: {e}")


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required for this command")
    return Path(args.out)


# ---- subcommands ---------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    sections = _sections(args)
    cfg = _model_cfg(sections)
    world = _world_cfg(sections, cfg)
    data = sections.get("data", {})
    n_samples = int(data.get("n_samples", "64"))
    index = dump_dataset(world, _require_out(args), n_samples, args.seed or 0)
    print(f"wrote {n_samples} samples, index at {index}")
    return 0


def _run_training(args, stage: str) -> int:
    sections = _sections(args)
    out = _require_out(args)
    if args.checkpoint is not None:
        _, cfg, params = _load_checkpoint(args.checkpoint)
        # one config file drives the whole pipeline, so model.* keys may
        # repeat here; they just must not contradict the checkpoint
        if sections.get("model") and _model_cfg(sections) != cfg:
            raise ConfigError("model.* overrides conflict with --checkpoint; "
                              "the architecture comes from the checkpoint")
    else:
        if stage != "teacher":
            raise UsageError(f"{stage} starts from a --checkpoint")
        cfg = _model_cfg(sections)
        params = init_params(cfg, seed=args.seed or 0)
    world = _world_cfg(sections, cfg)
    tcfg = _train_cfg(sections, stage, args.seed)
    result = train_stage(stage, params, cfg, world, tcfg, log=print)
    write_loss_csv(str(out) + ".loss.csv", result.history)
    if result.aborted:
        print(f"error: {result.abort_reason}", file=sys.stderr)
        return 2
    save_params(out, cfg, params,
                extra={"stage": stage, "steps": result.steps_done,
                       "seed": tcfg.seed})
    tail = [loss for _, _, loss in result.history[-20:]]
    print(f"{stage}: {result.steps_done} steps, final loss "
          f"{float(np.mean(tail)):.5f} (last-20 mean), saved {out}")
    return 0


def _cmd_eval(args) -> int:
    sections = _sections(args)
    _, cfg, params = _load_checkpoint(args.checkpoint)
    world = _world_cfg(sections, cfg)
    ev = sections.get("eval", {})
    n_clips = int(ev.get("clips", "4"))
    steps = int(ev.get("steps", "4"))
    guidance = float(ev.get("guidance", str(CFG_SCALE)))
    base_seed = int(ev.get("base_seed", "900000")) + (args.seed or 0)
    rows = []
    for effect in range(min(N_EFFECTS, cfg.n_effects)):
        for j in range(n_clips):
            clip = offline_generate(params, cfg, world, base_seed + j, effect,
                                    schedule=schedule_for(steps),
                                    guidance=guidance)
            rows.append({
                "effect": effect, "clip_seed": base_seed + j,
                "psnr": psnr(clip["y_hat"], clip["y_true"]),
                "ssim": video_ssim(clip["y_hat"], clip["y_true"]),
                "psnr_copy": psnr(clip["x"], clip["y_true"]),
            })
    out = _require_out(args)
    with open(out, "w") as f:
        f.write("effect,clip_seed,psnr,ssim,psnr_copy\n")
        for r in rows:
            f.write(f"{r['effect']},{r['clip_seed']},{r['psnr']:.4f},"
                    f"{r['ssim']:.4f},{r['psnr_copy']:.4f}\n")
    for effect in sorted({r["effect"] for r in rows}):
        sub = [r for r in rows if r["effect"] == effect]
        print(f"effect {effect}: psnr {np.mean([r['psnr'] for r in sub]):.2f} "
              f"(copy baseline {np.mean([r['psnr_copy'] for r in sub]):.2f}), "
              f"ssim {np.mean([r['ssim'] for r in sub]):.3f}")
    print(f"wrote {out}")
    return 0


def _cmd_bench(args) -> int:
    sections = _sections(args)
    if args.checkpoint is not None:
        _, cfg, params = _load_checkpoint(args.checkpoint)
    else:  # speed does not depend on the weights' values
        cfg = _model_cfg(sections)
        params = init_params(cfg, seed=args.seed or 0)
    bench = sections.get("bench", {})
    warmup = int(bench.get("warmup", "3"))
    plan = [(4, int(bench.get("chunks", "40"))),
            (50, int(bench.get("chunks_slow", "8")))]
    label = f"h{cfg.height}w{cfg.width}d{cfg.dim}L{cfg.n_layers}"
    lines = ["config,steps,window,chunk_ms_mean,chunk_ms_p95,fps"]
    for steps, n_chunks in plan:
        times = bench_stream(params, cfg, n_chunks,
                             schedule=schedule_for(steps))
        s = summarize_chunk_times(times, cfg.chunk_frames,
                                  warmup=min(warmup, n_chunks - 1))
        lines.append(f"{label},{steps},{cfg.window},{s['chunk_ms_mean']:.3f},"
                     f"{s['chunk_ms_p95']:.3f},{s['fps']:.3f}")
        print(lines[-1])
    if args.out is not None:
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_serve(args) -> int:
    sections = _sections(args)
    _, cfg, params = _load_checkpoint(args.checkpoint)
    serve = sections.get("serve", {})
    host = serve.get("host", "127.0.0.1")
    port = int(serve.get("port", "8787"))
    server = StreamServer(params, cfg, host=host, port=port)
    print(f"serving on {server.address[0]}:{server.address[1]} "
          f"(binary framing; websocket at /stream)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


# ---- argument plumbing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamfx",
        description="streaming video effect transfer: train, distill, serve")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": (_cmd_gen_data, "dump a paired toy dataset"),
        "train-teacher": (lambda a: _run_training(a, "teacher"),
                          "train the bidirectional flow teacher"),
        "distill-stage1": (lambda a: _run_training(a, "stage1"),
                           "chunkwise-causal distillation from a teacher"),
        "distill-stage2": (lambda a: _run_training(a, "stage2"),
                           "on-policy few-step distillation"),
        "eval": (_cmd_eval, "metrics over held-out clips, CSV out"),
        "bench": (_cmd_bench, "throughput and latency report"),
        "serve": (_cmd_serve, "run the streaming server"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, metavar="PATH")
        p.add_argument("--checkpoint", default=None, metavar="PATH")
        p.add_argument("--seed", type=int, default=None, metavar="N")
        p.add_argument("--out", default=None, metavar="PATH")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage problems and 0 on --help
        return 0 if e.code == 0 else 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
