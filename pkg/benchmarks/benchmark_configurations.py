#!/usr/bin/env python3
"""
Input-channel configuration benchmark on the synthetic phantom dataset.

Trains the desk-scale network on four configurations over two seeds, with
20% of the training pool held out for validation:
1. T1C only, no augmentation
2. T2 only, no augmentation
3. T1C and T2 combined, no augmentation
4. T1C and T2 combined, 30-fold augmentation

Reports sensitivity, specificity and accuracy separately for the training
pool, the validation set and the held-out test set.
"""

from typing import List

from benchmark_phantom_learning import ExperimentResult, run_experiment

SEEDS = (0, 1)
VALIDATION_FRACTION = 0.2
EPOCHS = 30

CONFIGURATIONS = (
    ("1: T1C, no augmentation", "t1c", 0),
    ("2: T2, no augmentation", "t2", 0),
    ("3: T1C+T2, no augmentation", "both", 0),
    ("4: T1C+T2, 30-fold", "both", 30),
)


def percent(value) -> str:
    return "-" if value is None else f"{value:.1%}"


def print_split(title: str, results: List[ExperimentResult], split: str):
    """One row per run with the three metrics of `split` (train, val or test)."""
    print("\n" + "="*80)
    print(title)
    print("="*80)
    print(f"\n{'Configuration':<30} {'Seed':>4} {'Epochs':>6} {'Sens':>7} {'Spec':>7} {'Acc':>7}")
    print("-" * 80)
    for r in results:
        if r.diverged:
            print(f"{r.scenario:<30} {r.seed:>4} {r.epochs_run:>6} {'diverged':>7}")
            continue
        acc = r.train_acc if split == "train" else getattr(r, f"{split}_acc")
        print(f"{r.scenario:<30} {r.seed:>4} {r.epochs_run:>6} "
              f"{percent(getattr(r, f'{split}_sensitivity')):>7} "
              f"{percent(getattr(r, f'{split}_specificity')):>7} {percent(acc):>7}")


def main():
    """Run every configuration on every seed and print the three split tables."""
    print("="*80)
    print("codelnet Channel Configuration Benchmark")
    print("="*80)
    print(f"\n{EPOCHS} epochs, SGD, validation fraction {VALIDATION_FRACTION:.0%}")

    results = [
        run_experiment(
            name,
            seed,
            channels=channels,
            augment_fold=fold,
            epochs=EPOCHS,
            validation_fraction=VALIDATION_FRACTION,
        )
        for name, channels, fold in CONFIGURATIONS
        for seed in SEEDS
    ]

    print_split("TRAINING POOL", results, "train")
    print_split("VALIDATION SET", results, "val")
    print_split("TEST SET", results, "test")

    best = max((r for r in results if not r.diverged), key=lambda r: r.test_acc, default=None)
    if best:
        print(f"\nBest test accuracy: {best.scenario} (seed {best.seed}), {best.test_acc:.1%}")

    print("\n" + "="*80)
    print("BENCHMARK COMPLETE")
    print("="*80)


if __name__ == "__main__":
    main()
