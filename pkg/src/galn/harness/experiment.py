"""The source-only / adapt / pseudo-label comparison on a synthetic domain pair."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .evaluate import evaluate
from .synth import synth_domain_pair
from .train import train

# Small enough for a laptop CPU: 512-point blocks, one pair per step, and the
# alignment losses switched on only after the segmentation head has settled.
DESK = dict(points_per_block=512, k_levels=(1, 4, 8, 8), batch_size=1, lr0=0.02,
            epochs=16, lr_step=12, align_warmup=8)


def desk_config(seed: int = 0, **changes) -> RunConfig:
    return RunConfig(seed=seed, **{**DESK, **changes})


@dataclass
class StageScores:
    target_miou: float
    source_miou: float
    seconds: float


@dataclass
class ProtocolResult:
    scores: dict[str, list[StageScores]] = field(default_factory=dict)

    def mean(self, stage: str, which: str = "target_miou") -> float:
        return float(np.mean([getattr(s, which) for s in self.scores[stage]]))


def run_protocol(seeds, base: RunConfig | None = None, shift: str = "density_drop",
                 n_scenes: int = 8, n_points: int = 4000, log=None) -> ProtocolResult:
    """Train all three stages per seed and score each on the labeled source and target clouds.

    The pseudo-label stage starts from a copy of that seed's adapt parameters.
    """
    out = ProtocolResult()
    for seed in seeds:
        source, target = synth_domain_pair(n_scenes, shift, seed=seed, n_points=n_points)
        cfg = (base or desk_config()).replace(seed=seed)
        adapted = None
        for stage in ("source_only", "adapt", "pseudo_label"):
            t0 = time.perf_counter()
            init = adapted.copy() if stage == "pseudo_label" else None
            params = train(cfg.replace(stage=stage), source, target, init=init).params
            if stage == "adapt":
                adapted = params
            s = StageScores(evaluate(params, target, cfg).miou, evaluate(params, source, cfg).miou,
                            time.perf_counter() - t0)
            out.scores.setdefault(stage, []).append(s)
            if log is not None:
                log(f"seed {seed} {stage}: target {s.target_miou:.4f} source {s.source_miou:.4f} "
                    f"({s.seconds:.1f}s)")
    return out
