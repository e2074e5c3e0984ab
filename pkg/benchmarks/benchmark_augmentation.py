#!/usr/bin/env python3
"""
Overfitting-vs-augmentation benchmark and augmentation throughput.

Part 1 trains on only 20 phantom training patients (10 per class) with
k=0 and with k=30 augmented copies per slice, over four seeds, and
compares the train-test accuracy gap. Without augmentation the network
memorizes the pool; augmentation should at least halve the gap.

Part 2 sweeps k over 0, 10, 20 and 30 on seed 0 with 20% of the pool held
out for validation, reporting validation and test accuracy per fold.

Part 3 times build_epoch_training_set for a 252-slice epoch at k=30
(7560 samples) with 1, 2, 4 and 8 worker threads.
"""

import time
from typing import List

import numpy as np

from benchmark_phantom_learning import ExperimentResult, print_results, run_experiment
from codelnet.augment import build_epoch_training_set
from codelnet.preprocess import SliceSample

SEEDS = (0, 1, 2, 3)
TRAIN_PATIENTS_PER_CLASS = 10
TEST_PATIENTS_PER_CLASS = 10
SLICES = 3
EPOCHS = 30
SWEEP_FOLDS = (0, 10, 20, 30)


def mean_gap(results: List[ExperimentResult]) -> float:
    return float(np.mean([r.gap for r in results]))


def benchmark_throughput(workers: int, slices: int = 252, fold: int = 30) -> float:
    """Time one epoch's augmentation; returns samples per second."""
    rng = np.random.default_rng(0)
    samples = [
        SliceSample(rng.standard_normal((2, 64, 64)).astype(np.float32), i % 2, f"B{i:04d}", 0)
        for i in range(slices)
    ]
    start_time = time.time()
    out = build_epoch_training_set(samples, fold, epoch=0, master_seed=0, workers=workers)
    elapsed = time.time() - start_time
    print(f"  workers={workers}: {len(out)} samples in {elapsed:.2f}s")
    return len(out) / elapsed if elapsed > 0 else 0


def main():
    """Run the augmentation comparison and the throughput sweep."""
    print("="*96)
    print("codelnet Augmentation Benchmark")
    print("="*96)

    patients = TRAIN_PATIENTS_PER_CLASS + TEST_PATIENTS_PER_CLASS
    common = dict(
        patients_per_class=patients,
        test_per_class=TEST_PATIENTS_PER_CLASS * SLICES,
        epochs=EPOCHS,
    )
    plain = [run_experiment("No augmentation", seed, augment_fold=0, **common) for seed in SEEDS]
    augmented = [run_experiment("30-fold augmentation", seed, augment_fold=30, **common)
                 for seed in SEEDS]
    print_results("OVERFITTING VS AUGMENTATION", plain + augmented)

    gap_plain = mean_gap(plain)
    gap_augmented = mean_gap(augmented)
    print(f"\nMean train-test gap, k=0:  {gap_plain:.1%}")
    print(f"Mean train-test gap, k=30: {gap_augmented:.1%}")
    if gap_plain > 0:
        print(f"Gap reduction: {1 - gap_augmented / gap_plain:.0%}")

    sweep = [
        run_experiment(f"{k}-fold augmentation", 0, augment_fold=k, validation_fraction=0.2, **common)
        for k in SWEEP_FOLDS
    ]
    print_results("AUGMENTATION FOLD SWEEP (seed 0)", sweep)
    print(f"\n{'k':>3} {'Validation':>11} {'Test':>7}")
    for r in sweep:
        if r.diverged:
            print(f"{r.augment_fold:>3} {'diverged':>11}")
            continue
        print(f"{r.augment_fold:>3} {r.val_acc:>11.1%} {r.test_acc:>7.1%}")
    scored = [r for r in sweep if not r.diverged]
    if scored:
        best = max(scored, key=lambda r: r.val_acc)
        print(f"Best fold by validation accuracy: k={best.augment_fold}")

    print("\n" + "="*96)
    print("AUGMENTATION THROUGHPUT (252 slices, k=30)")
    print("="*96)
    for workers in (1, 2, 4, 8):
        rate = benchmark_throughput(workers)
        print(f"    {rate:,.0f} samples/s")

    print("\n" + "="*96)
    print("BENCHMARK COMPLETE")
    print("="*96)


if __name__ == "__main__":
    main()
