#!/usr/bin/env python3
"""Record a live server transcript for the browser console's replay tests.

Drives a real StreamServer over the binary socket transport and logs every
message in both directions as JSONL: {"dir": "send"|"recv", "msg": {...}}.
The console replays the "recv" side and must reproduce frames and latency
chart values exactly from it.
"""

import argparse
import json
import socket
from pathlib import Path

from streamfx.engine import world_for
from streamfx.model import DenoiserConfig, init_params, load_params
from streamfx.server import (StreamServer, dumps_message, encode_frames,
                             read_frame, write_frame)
from streamfx.toyworld import apply_effect, make_frames


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                         / "frontend" / "fixtures"
                                         / "transcript.jsonl"))
    ap.add_argument("--checkpoint", default=None,
                    help="weights to serve (random init when omitted)")
    ap.add_argument("--chunks", type=int, default=12)
    ap.add_argument("--seed", type=int, default=2026)
    args = ap.parse_args()

    if args.checkpoint:
        _, cfg, params = load_params(args.checkpoint)
    else:
        cfg = DenoiserConfig()
        params = init_params(cfg, seed=7)
    server = StreamServer(params, cfg, port=0).start()
    world = world_for(cfg, cfg.chunk_frames)
    ref = apply_effect(make_frames(world, args.seed, 0, 1), 1)[0]

    lines = []
    sock = socket.create_connection(server.address, timeout=60)

    def send(msg):
        lines.append({"dir": "send", "msg": msg})
        write_frame(sock, dumps_message(msg))

    def recv():
        msg = json.loads(read_frame(sock))
        lines.append({"dir": "recv", "msg": msg})
        return msg

    send({"type": "init", "window": cfg.window, "steps": 4, "cfg_scale": 5.0,
          "effect_label": 1, "reference_b64": encode_frames(ref)})
    recv()
    # the console merges operator actions into one condition per boundary
    # (last writer wins), so that is what the transcript carries: a plain
    # effect switch, then a combined effect + reference swap
    ref2 = apply_effect(make_frames(world, args.seed + 1, 0, 1), 3)[0]
    switch_at = {args.chunks // 3: {"type": "condition", "effect_label": 2},
                 2 * args.chunks // 3: {"type": "condition", "effect_label": 3,
                                        "reference_b64": encode_frames(ref2)}}
    for i in range(args.chunks):
        if i in switch_at:
            send(switch_at[i])
        frames = make_frames(world, args.seed, i * cfg.chunk_frames,
                             (i + 1) * cfg.chunk_frames)
        send({"type": "chunk", "index": i, "frames_b64": encode_frames(frames),
              "shape": list(frames.shape)})
        recv()
    send({"type": "stats"})
    recv()
    sock.close()
    server.close()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for line in lines:
            f.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"wrote {len(lines)} transcript lines to {out}")


if __name__ == "__main__":
    main()
