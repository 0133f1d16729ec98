"""Full pipeline on the toy backend: prior, guided window, plain window.

Runs the default-weight configuration on one simple trajectory, prints the
loss trend over the guided steps, scores the run with the attention-blob
detector, and compares against the run with everything disabled.
"""

import os

from trajsteer import (
    GuidanceConfig,
    PromptSpec,
    RunConfig,
    TestbedConfig,
    ToyBackend,
    control_metrics,
    detect_from_attention,
    generate,
    simple_trajectories,
)
from trajsteer.pipeline import mean_attention

backend_cfg = TestbedConfig(n_frames=8, height=24, width=24, weight_seed=1)
backend = ToyBackend(backend_cfg)
prompt = PromptSpec(token_ids=(7, 23, 5), target_indices=(1,))
traj = simple_trajectories(8)[0]  # left to right

cfg = RunConfig(
    prompt=prompt,
    trajectory=traj,
    backend=backend_cfg,
    guidance=GuidanceConfig(),
    seed=0,
    capture="all",
)

result = generate(cfg, backend=backend)
print("guided-step loss trend:")
for entry in result.loss_log:
    print(
        f"  t={entry['t']:2d} beta={entry['beta']:7.3f} "
        f"grad_norm={entry['grad_norm']:8.4f} L_sp={entry['total']:.4f}"
    )

dets = detect_from_attention(
    mean_attention(result.attention).numpy(), prompt.target_indices[0]
)
report = control_metrics(dets, traj)
print(f"\nfull pipeline: mIoU={report.miou:.3f} coverage={report.coverage:.2f}")

baseline = generate(cfg.with_disable({"inpm", "sc", "stam"}), backend=backend)
dets0 = detect_from_attention(
    mean_attention(baseline.attention).numpy(), prompt.target_indices[0]
)
report0 = control_metrics(dets0, traj)
miou0 = report0.miou if report0.miou is not None else 0.0
print(f"all mechanisms off: mIoU={miou0:.3f} coverage={report0.coverage:.2f}")
print(f"\nweights untouched: "
      f"{result.report['weights_checksum_before'] == result.report['weights_checksum_after']}")
