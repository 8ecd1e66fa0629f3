"""Two-stage training: graph-based adaptation, then pseudo-label self-training."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..bank import GraphBank
from ..geom import Block, LabeledCloud, sample_blocks
from ..graphs import build_graphs
from ..losses import (LossReport, PseudoLabels, contrastive_loss, generate_pseudo_labels,
                      local_feature_loss, seg_loss, total_loss)
from ..numcore import OptimState, Tape, Tensor, add, scale, sgd_step, step_lr
from ..otmatch import match_graphs
from ..segnet import ModelParams, NetConfig, classify, extract_features, init_params
from .config import ConfigError, RunConfig
from .evaluate import EvalReport, evaluate, prepare

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[LossReport] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    pseudo_labels: list[PseudoLabels] | None = None


def net_config(config: RunConfig) -> NetConfig:
    return NetConfig(widths=config.widths, num_classes=config.num_classes, coord_scale=config.coord_scale)


def blocks_for(clouds: Sequence[LabeledCloud], config: RunConfig, salt: int) -> list[Block]:
    out = []
    for i, cloud in enumerate(clouds):
        out.extend(sample_blocks(cloud, config.block_xy, config.points_per_block,
                                 rng_seed=(config.seed * 1_000_003 + salt * 10_007 + i)))
    return out


def _pair_loss(params, config, bank, src: Block, tgt: Block | None, pl: PseudoLabels | None,
               align: bool):
    feats = extract_features(params, src)
    seg = seg_loss(classify(params, feats, src), src.labels)
    loc = con = Tensor(0.0)
    matched = skipped = 0
    tgt_feats = None
    if align:
        for g in build_graphs(feats, src, config.k_levels):
            bank.insert(g)
        tgt_feats = extract_features(params, tgt)
        tgt_graphs = build_graphs(tgt_feats, tgt, config.k_levels)
        matches = match_graphs(tgt_graphs, bank, None, config.sinkhorn_iters, config.eps_scale)
        loc, matched, skipped = local_feature_loss(tgt_graphs, bank, matches=matches)
        con = contrastive_loss(tgt_graphs, matches, bank, config.alpha)
    if pl is not None and pl.mask.any():
        if tgt_feats is None:
            tgt_feats = extract_features(params, tgt)
        seg = add(seg, seg_loss(classify(params, tgt_feats, tgt), pl.labels, pl.mask))
    return seg, loc, con, matched, skipped


def train(config: RunConfig, source: Sequence[LabeledCloud], target: Sequence[LabeledCloud],
          init: ModelParams | None = None, eval_sets: dict[str, Sequence[LabeledCloud]] | None = None,
          on_step: Callable[[int, LossReport], None] | None = None) -> TrainResult:
    """Train per ``config.stage``; target labels are stripped before use.

    ``eval_sets`` (name -> labeled clouds) are scored after every epoch for the
    log only; they never feed a loss.
    """
    config.validate()
    if not source or any(c.labels is None for c in source):
        raise ConfigError("source clouds must all carry labels")
    if config.stage != "source_only" and not target:
        raise ConfigError(f"stage {config.stage} needs target clouds")
    if config.stage == "pseudo_label" and init is None:
        raise ConfigError("pseudo_label stage needs parameters from a prior adapt run")
    target = [c.unlabeled() for c in target]
    prepared = {name: prepare(clouds, config) for name, clouds in (eval_sets or {}).items()}

    params = init if init is not None else init_params(net_config(config), config.seed)
    rng = np.random.default_rng(config.seed)
    src_blocks = blocks_for(source, config, salt=1)
    tgt_blocks = blocks_for(target, config, salt=2) if target else []

    pseudo = None
    if config.stage == "pseudo_label":
        pseudo = generate_pseudo_labels(params, tgt_blocks, config.keep_fraction)

    bank = GraphBank(config.num_classes, config.bank_capacity)
    opt = OptimState(config.lr0, config.momentum, config.weight_decay, config.lr_step, config.lr_drop)
    result = TrainResult(params, pseudo_labels=pseudo)
    step = 0
    tgt_order = rng.permutation(len(tgt_blocks)) if tgt_blocks else np.array([], dtype=int)
    tgt_ptr = 0

    for epoch in range(config.epochs):
        opt.lr = step_lr(config.lr0, epoch, config.lr_step, config.lr_drop)
        align = config.aligns and epoch >= config.align_warmup
        order = rng.permutation(len(src_blocks))
        epoch_reports = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            params.zero_grad()
            parts = []
            with Tape() as tape:
                for si in batch:
                    tb = pl = None
                    if config.stage != "source_only":
                        if tgt_ptr == len(tgt_order):
                            tgt_order, tgt_ptr = rng.permutation(len(tgt_blocks)), 0
                        ti = int(tgt_order[tgt_ptr])
                        tgt_ptr += 1
                        tb = tgt_blocks[ti]
                        pl = pseudo[ti] if pseudo is not None else None
                    parts.append(_pair_loss(params, config, bank, src_blocks[si], tb, pl, align))
                inv = 1.0 / len(parts)
                seg = scale(_sum([p[0] for p in parts]), inv)
                loc = scale(_sum([p[1] for p in parts]), inv)
                con = scale(_sum([p[2] for p in parts]), inv)
                loss = total_loss(seg, loc, con, config.lambda1, config.lambda2)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            tape.backward(loss)
            sgd_step(params.tensors, opt)
            report = LossReport(seg.item(), loc.item(), con.item(), value,
                                sum(p[3] for p in parts), sum(p[4] for p in parts))
            result.losses.append(report)
            epoch_reports.append(report)
            if on_step is not None:
                on_step(step, report)
            step += 1

        entry = {"epoch": epoch + 1, "lr": opt.lr}
        for name in ("seg", "loc", "con", "total"):
            entry[name] = float(np.mean([getattr(r, name) for r in epoch_reports]))
        for name, clouds in prepared.items():
            rep: EvalReport = evaluate(params, clouds, config)
            entry[f"{name}_miou"] = rep.miou
        result.epochs.append(entry)
        log.info("epoch %d: %s", epoch + 1, entry)
    return result


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out
