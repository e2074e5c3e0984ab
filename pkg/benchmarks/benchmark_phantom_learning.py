#!/usr/bin/env python3
"""
Desk-scale learning benchmark on the synthetic phantom dataset.

Runs the both-channel, no-augmentation setup on 60 phantom patients
(30 per class, 3 slices each) with the desk-scale architecture:
- SGD over four fixed seeds (expect >= 95% test accuracy for 3 of 4)
- All four optimizers on seed 0 (expect no divergence, >= 85% test accuracy)

Measures per run:
- Phantom generation + preprocessing time
- Training time and epochs run
- Final train accuracy, test sensitivity/specificity/accuracy
"""

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from codelnet.augment import AugmentParams
from codelnet.dataset import SplitSpec, split_dataset
from codelnet.metrics import Metrics, confusion, evaluate_metrics
from codelnet.network import build_network, desk_scale_config
from codelnet.optim import TrainConfig
from codelnet.phantom import PhantomConfig, generate_phantom
from codelnet.preprocess import CHANNELS, preprocess_records
from codelnet.train import DivergenceError, TrainingData, evaluate_samples, train_loop

PATIENTS_PER_CLASS = 30
TEST_PER_CLASS = 45  # 15 patients per class
EPOCHS = 30
SEEDS = (0, 1, 2, 3)

# AdaDelta ignores the learning rate
LEARNING_RATES = {"sgd": 0.01, "rmsprop": 0.001, "adadelta": 1.0, "adam": 0.001}


@dataclass
class ExperimentResult:
    """Results from a single training run."""
    scenario: str
    seed: int
    optimizer: str
    augment_fold: int

    data_time: float
    train_time: float
    epochs_run: int

    train_acc: float
    test_sensitivity: float
    test_specificity: float
    test_acc: float
    diverged: bool = False

    channels: str = "both"
    train_sensitivity: float = 0.0
    train_specificity: float = 0.0
    val_sensitivity: Optional[float] = None
    val_specificity: Optional[float] = None
    val_acc: Optional[float] = None

    @property
    def gap(self) -> float:
        return self.train_acc - self.test_acc


def score(net, samples) -> Metrics:
    """Sensitivity, specificity and accuracy of `net` on a fixed sample set."""
    evaluation = evaluate_samples(net, samples)
    return evaluate_metrics(confusion(evaluation.predictions, [s.label for s in samples]))


def run_experiment(
    scenario: str,
    seed: int,
    optimizer: str = "sgd",
    augment_fold: int = 0,
    patients_per_class: int = PATIENTS_PER_CLASS,
    test_per_class: int = TEST_PER_CLASS,
    channels: str = "both",
    epochs: int = EPOCHS,
    workers: int = 4,
    lr: Optional[float] = None,
    validation_fraction: float = 0.0,
) -> ExperimentResult:
    """Generate a phantom, split, train and score one configuration."""
    print(f"\n  {scenario}: seed={seed} optimizer={optimizer} k={augment_fold} channels={channels}")

    with tempfile.TemporaryDirectory() as tmpdir:
        start_time = time.time()
        phantom = generate_phantom(
            PhantomConfig(patients_per_class=patients_per_class, seed=seed), Path(tmpdir)
        )
        split = split_dataset(
            phantom.manifest,
            SplitSpec(
                test_per_class=test_per_class,
                train_per_class=None,
                validation_fraction=validation_fraction,
                seed=seed,
            ),
        )
        selected = CHANNELS[channels]
        pool = preprocess_records(split.pool, selected, canvas=64, workers=workers)
        validation = preprocess_records(split.validation, selected, canvas=64, workers=workers)
        test = preprocess_records(split.test, selected, canvas=64, workers=workers)
        data_time = time.time() - start_time

    net = build_network(desk_scale_config(input_channels=len(selected), init_seed=seed))
    config = TrainConfig(
        optimizer=optimizer,
        base_lr=lr or LEARNING_RATES[optimizer],
        max_epochs=epochs,
        augmentation_fold=augment_fold,
        master_seed=seed,
    )

    start_time = time.time()
    try:
        result = train_loop(
            net,
            TrainingData(pool=pool, validation=validation),
            config,
            augment_params=AugmentParams(),
            workers=workers,
        )
    except DivergenceError as e:
        print(f"    Diverged: {e}")
        return ExperimentResult(
            scenario, seed, optimizer, augment_fold, data_time, time.time() - start_time,
            e.epoch + 1, 0.0, 0.0, 0.0, 0.0, diverged=True, channels=channels,
        )
    train_time = time.time() - start_time

    # Train metrics on the un-augmented pool, not the last epoch's mix
    train = score(net, pool)
    val = score(net, validation) if validation else None
    test_metrics = score(net, test)
    print(f"    {result.epochs_run} epochs in {train_time:.1f}s, "
          f"train {train.accuracy:.1%}, test {test_metrics.accuracy:.1%}")

    return ExperimentResult(
        scenario=scenario,
        seed=seed,
        optimizer=optimizer,
        augment_fold=augment_fold,
        data_time=data_time,
        train_time=train_time,
        epochs_run=result.epochs_run,
        train_acc=train.accuracy,
        test_sensitivity=test_metrics.sensitivity,
        test_specificity=test_metrics.specificity,
        test_acc=test_metrics.accuracy,
        channels=channels,
        train_sensitivity=train.sensitivity,
        train_specificity=train.specificity,
        val_sensitivity=val.sensitivity if val else None,
        val_specificity=val.specificity if val else None,
        val_acc=val.accuracy if val else None,
    )


def print_results(title: str, results: List[ExperimentResult]):
    """Print experiment results in a formatted table."""
    print("\n" + "="*96)
    print(title)
    print("="*96)

    print(f"\n{'Scenario':<24} {'Seed':>4} {'Optimizer':>9} {'k':>3} {'Epochs':>6} "
          f"{'Train s':>8} {'Train':>7} {'Sens':>7} {'Spec':>7} {'Test':>7}")
    print("-" * 96)

    for r in results:
        if r.diverged:
            print(f"{r.scenario:<24} {r.seed:>4} {r.optimizer:>9} {r.augment_fold:>3} "
                  f"{r.epochs_run:>6} {'diverged':>8}")
            continue
        print(f"{r.scenario:<24} {r.seed:>4} {r.optimizer:>9} {r.augment_fold:>3} "
              f"{r.epochs_run:>6} {r.train_time:>7.1f}s {r.train_acc:>7.1%} "
              f"{r.test_sensitivity:>7.1%} {r.test_specificity:>7.1%} {r.test_acc:>7.1%}")


def main():
    """Run the seed sweep and the optimizer comparison."""
    print("="*96)
    print("codelnet Phantom Learning Benchmark")
    print("="*96)
    print(f"\n{2 * PATIENTS_PER_CLASS} phantom patients, canvas 64, desk-scale network, "
          f"{EPOCHS} epochs, both channels, no augmentation")

    seed_results = [run_experiment("Both channels (SGD)", seed) for seed in SEEDS]
    print_results("SEED SWEEP (SGD)", seed_results)
    passing = sum(1 for r in seed_results if r.test_acc >= 0.95)
    print(f"\nSeeds reaching 95% test accuracy: {passing}/{len(SEEDS)}")

    optimizer_results = [
        run_experiment("Optimizer comparison", 0, optimizer=name) for name in LEARNING_RATES
    ]
    print_results("OPTIMIZER COMPARISON (seed 0)", optimizer_results)
    weak = [r.optimizer for r in optimizer_results if r.diverged or r.test_acc < 0.85]
    print(f"\nOptimizers below 85% test accuracy: {', '.join(weak) if weak else 'none'}")

    print("\n" + "="*96)
    print("BENCHMARK COMPLETE")
    print("="*96)


if __name__ == "__main__":
    main()
