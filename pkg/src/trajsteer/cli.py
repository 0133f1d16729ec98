"""Command-line entry point.

Subcommands: generate | evaluate | trajectories | visualize-attention.
Exit codes: 0 success, 1 validation error, 2 runtime failure. All artifact
writes are temp-then-rename, so a failing command leaves no partial file at
a final path. ``TRAJSTEER_OUTPUT_ROOT`` sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources

from . import io as tio
from .boxes import complex_trajectories, load_trajectory, save_trajectory, simple_trajectories
from .boxes import SIMPLE_TRAJECTORY_NAMES
from .metrics import control_metrics, detect_from_attention, load_external_detections
from .pipeline import RunConfig, generate
from .viz import attention_grid_image

__all__ = ["main", "CommandOutcome"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

OUTPUT_ROOT_ENV = "TRAJSTEER_OUTPUT_ROOT"


@dataclass
class CommandOutcome:
    exit_code: int
    artifacts: list[str]
    summary: dict

    def emit(self) -> None:
        print(tio.canonical_json({"artifacts": self.artifacts, **self.summary}), end="")


def _default_output(subdir: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "trajsteer-out")
    return os.path.join(root, subdir)


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ValueError(f"override {text!r} must look like dotted.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = _parse_override(text)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"override path {text!r} crosses a non-object value")
        node[path[-1]] = value
    return doc


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> CommandOutcome:
    with open(args.config) as fh:
        doc = json.load(fh)
    doc = _apply_overrides(doc, args.set or [])
    out_dir = args.output_dir or doc.get("output_dir") or _default_output("run")
    cfg = RunConfig.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(args.config)))

    result = generate(cfg)
    os.makedirs(out_dir, exist_ok=True)

    latent_path = os.path.join(out_dir, "latent.bin")
    tio.save_latent(latent_path, result.latent)
    tio.write_json_atomic(
        os.path.join(out_dir, "latent.json"),
        {
            "shape": list(result.latent.shape),
            "seed": cfg.seed,
            "schedule": {
                "kind": "linear_alpha_bar",
                "total_steps": cfg.guidance.total_steps,
            },
            "dtype": "float32",
        },
    )
    from .testbed import toy_decode

    frames = tio.save_frames_png(os.path.join(out_dir, "frames"), toy_decode(result.latent))
    loss_log_path = os.path.join(out_dir, "loss_log.jsonl")
    lines = "".join(json.dumps(e, sort_keys=True) + "\n" for e in result.loss_log)
    tio._write_atomic(loss_log_path, lines.encode())
    report_path = os.path.join(out_dir, "report.json")
    tio.write_json_atomic(report_path, result.report)
    artifacts = [latent_path, loss_log_path, report_path] + frames
    if result.attention:
        npy, meta = tio.save_attention(os.path.join(out_dir, "attention"), result.attention)
        artifacts += [npy, meta]
    summary = {
        "output_dir": out_dir,
        "steps": cfg.guidance.total_steps,
        "guided": result.report["counts"]["guided"],
        "final_loss": result.loss_log[-1]["total"] if result.loss_log else None,
    }
    return CommandOutcome(EXIT_OK, artifacts, summary)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> CommandOutcome:
    traj = load_trajectory(args.trajectory)
    source = "external"
    if args.detections:
        dets = load_external_detections(args.detections)
    else:
        if not args.run_dir:
            raise ValueError("evaluate needs --run-dir or --detections")
        prefix = os.path.join(args.run_dir, "attention")
        if not os.path.exists(prefix + ".npy"):
            raise ValueError(f"no captured attention at {prefix}.npy; pass --detections")
        maps, meta = tio.load_attention(prefix)
        token = args.token
        if token is None:
            with open(os.path.join(args.run_dir, "report.json")) as fh:
                report = json.load(fh)
            token = report["config"]["prompt"]["target_indices"][0]
        if args.step is None:
            dets = detect_from_attention(maps.mean(axis=0), token)
            source = f"attention(mean over {maps.shape[0]} captured steps, token={token})"
        else:
            dets = detect_from_attention(maps[args.step], token)
            source = f"attention(step_index={meta['step_indices'][args.step]}, token={token})"
    if len(dets) != traj.n_frames:
        raise ValueError(
            f"{len(dets)} detections vs {traj.n_frames} trajectory frames"
        )
    report = control_metrics(dets, traj)
    out_path = args.output or _default_output("control_report.json")
    doc = report.to_dict()
    doc["detections_source"] = source
    tio.write_json_atomic(out_path, doc)
    summary = {
        "miou": report.miou,
        "ap50": report.ap50,
        "coverage": report.coverage,
        "center_distance": report.center_distance,
    }
    return CommandOutcome(EXIT_OK, [out_path], summary)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def cmd_trajectories(args) -> CommandOutcome:
    out_dir = args.output_dir or _default_output("trajectories")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    entries = []
    for name, traj in zip(SIMPLE_TRAJECTORY_NAMES, simple_trajectories(args.n_frames)):
        path = os.path.join(out_dir, f"simple_{name}.json")
        save_trajectory(path, traj)
        written.append(path)
        entries.append({"kind": "simple", "name": name, "file": os.path.basename(path)})
    for i, traj in enumerate(complex_trajectories(args.n_frames, args.seed)):
        path = os.path.join(out_dir, f"complex_{i:02d}.json")
        save_trajectory(path, traj)
        written.append(path)
        entries.append({"kind": "complex", "name": f"complex_{i:02d}", "file": os.path.basename(path)})

    prompts = json.loads(
        resources.files("trajsteer.data").joinpath("eval_prompts.json").read_text()
    )["prompts"]
    manifest = {
        "n_frames": args.n_frames,
        "seed": args.seed,
        "trajectories": entries,
        "prompts": prompts,
        "pairs": [
            {"prompt_index": pi, "trajectory_file": e["file"]}
            for pi in range(len(prompts))
            for e in entries
        ],
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    tio.write_json_atomic(manifest_path, manifest)
    written.append(manifest_path)
    return CommandOutcome(
        EXIT_OK,
        written,
        {"n_trajectories": len(entries), "n_prompts": len(prompts), "output_dir": out_dir},
    )


# ---------------------------------------------------------------------------
# visualize-attention
# ---------------------------------------------------------------------------


def cmd_visualize_attention(args) -> CommandOutcome:
    prefix = os.path.join(args.run_dir, "attention")
    if not os.path.exists(prefix + ".npy"):
        raise ValueError(f"run at {args.run_dir} captured no attention maps")
    maps, meta = tio.load_attention(prefix)
    with open(os.path.join(args.run_dir, "report.json")) as fh:
        report = json.load(fh)
    n_tokens = maps.shape[2]
    if not 0 <= args.token < n_tokens:
        raise ValueError(f"token index {args.token} outside 0..{n_tokens - 1}")
    traj_doc = report["config"]["trajectory"]
    from .pipeline import _resolve_trajectory

    traj = _resolve_trajectory(traj_doc, traj_doc["n_frames"], None)
    if args.frames:
        frames = [int(v) for v in args.frames.split(",")]
    else:
        frames = list(range(maps.shape[1]))
    img = attention_grid_image(maps[:, :, args.token], traj, frames, scale=args.scale)
    out_path = args.output or _default_output("attention_grid.png")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    tmp = out_path + ".tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, out_path)
    return CommandOutcome(
        EXIT_OK,
        [out_path],
        {"tiles": len(frames) * maps.shape[0], "frames": frames, "steps": maps.shape[0]},
    )


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajsteer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run the guided sampler from a config file")
    g.add_argument("--config", required=True)
    g.add_argument("--set", action="append", metavar="DOTTED.PATH=VALUE")
    g.add_argument("--output-dir")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score a run (or external detections) against a trajectory")
    e.add_argument("--run-dir", help="run directory with captured attention")
    e.add_argument("--trajectory", required=True)
    e.add_argument("--detections", help="external detections JSON overriding the toy detector")
    e.add_argument("--token", type=int)
    e.add_argument("--step", type=int,
                   help="captured step index to detect on (default: mean over captured steps)")
    e.add_argument("--output")
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("trajectories", help="emit the 8 simple + 17 complex trajectory files")
    t.add_argument("--output-dir")
    t.add_argument("--n-frames", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_trajectories)

    v = sub.add_parser("visualize-attention", help="render a frames-by-steps attention grid")
    v.add_argument("--run-dir", required=True)
    v.add_argument("--token", type=int, required=True)
    v.add_argument("--frames", help="comma-separated frame indices (default: all)")
    v.add_argument("--scale", type=int, default=6)
    v.add_argument("--output")
    v.set_defaults(func=cmd_visualize_attention)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        outcome = args.func(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    outcome.emit()
    return outcome.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
