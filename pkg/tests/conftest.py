"""Shared fixtures for the acceptance suite.

The sort-task study (five paired seeds, two arms, 2000 denoiser steps
each) is the expensive piece; it trains once per session and several
criteria read from it.
"""

import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skipdiff.data import generate_synthetic, synthetic_vocab
from skipdiff.exploiter import ExploiterConfig
from skipdiff.metrics import corpus_bleu, self_bleu
from skipdiff.rng import RngStream
from skipdiff.schedule import build_sqrt_schedule, fixed_schedule
from skipdiff.scheduler import SchedulerConfig
from skipdiff.training import (TrainConfig, _sentence_schedules,
                               generate_with_mbr, meta_train)

SORT_SEEDS = (11, 12, 13, 14, 15)
SORT_E_CFG = ExploiterConfig(layers=2, heads=4, model_dim=32, steps=64,
                             max_len=20, ffn_mult=2)
SORT_S_CFG = SchedulerConfig(embed_dim=32, hidden_dim=16, decoder_len=64,
                             head_bias_init=3.0)
GEN_STEPS = 16
EVAL_MBR = 5
EVAL_REPLICAS = 3


@dataclass
class ArmResult:
    seed: int
    fixed_sqrt: bool
    run_dir: str
    exploiter: dict
    scheduler: dict
    schedules: object           # greedy (or fixed) schedules for the held-out set
    bleu: float                 # replica-averaged corpus BLEU, MBR |S|=5
    self_bleu: float
    exploiter_ckpt: str
    scheduler_ckpt: str


@dataclass
class SortStudy:
    vocab: object
    heldout: list
    srcs: list
    refs: list
    base: object
    baseline: dict              # seed -> ArmResult
    meta: dict                  # seed -> ArmResult


def _train_arm(seed: int, fixed: bool, run_dir: str, train, heldout, vocab,
               srcs, refs, base) -> ArmResult:
    t_cfg = TrainConfig(max_epochs=10_000, max_steps=2000, total_batch=32,
                        fixed_sqrt=fixed, eval_every=0, seed=seed,
                        lr_exploiter=2e-3, scheduler_update_period=10,
                        exploration_epochs=4, gen_steps=GEN_STEPS)
    result = meta_train(train, heldout, vocab, run_dir, SORT_E_CFG,
                        SORT_S_CFG, t_cfg, dataset_tag="synthetic-sort")
    if fixed:
        schedules = fixed_schedule(base)
    else:
        _, schedules = _sentence_schedules(result.scheduler, srcs, vocab,
                                           SORT_S_CFG, base, None, mode="greedy")
    bleus, sbleus = [], []
    for rep in range(EVAL_REPLICAS):
        picks, _ = generate_with_mbr(result.exploiter, vocab, SORT_E_CFG, srcs,
                                     schedules, RngStream(1000 + rep),
                                     EVAL_MBR, GEN_STEPS)
        bleus.append(corpus_bleu(picks, refs))
        sbleus.append(self_bleu(picks))
    return ArmResult(seed=seed, fixed_sqrt=fixed, run_dir=run_dir,
                     exploiter=result.exploiter, scheduler=result.scheduler,
                     schedules=schedules, bleu=float(np.mean(bleus)),
                     self_bleu=float(np.mean(sbleus)),
                     exploiter_ckpt=result.exploiter_ckpt,
                     scheduler_ckpt=result.scheduler_ckpt)


@pytest.fixture(scope="session")
def sort_study(tmp_path_factory) -> SortStudy:
    warnings.filterwarnings("ignore")
    vocab = synthetic_vocab(16)
    pairs = generate_synthetic("sort", 384, 16, (8, 8), RngStream(99).fork("data"))
    train, heldout = pairs[:256], pairs[256:]
    base = build_sqrt_schedule(SORT_E_CFG.steps)
    srcs = [list(p.src) for p in heldout]
    refs = [[list(p.tgt)] for p in heldout]
    root = tmp_path_factory.mktemp("sort-study")
    baseline, meta = {}, {}
    for seed in SORT_SEEDS:
        baseline[seed] = _train_arm(seed, True, str(root / f"base-{seed}"),
                                    train, heldout, vocab, srcs, refs, base)
        meta[seed] = _train_arm(seed, False, str(root / f"meta-{seed}"),
                                train, heldout, vocab, srcs, refs, base)
    return SortStudy(vocab=vocab, heldout=heldout, srcs=srcs, refs=refs,
                     base=base, baseline=baseline, meta=meta)
