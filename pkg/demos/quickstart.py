"""Minimal end-to-end run: synthetic data, ten rounds, printed metrics.

Runs in a few seconds on one core.  The same experiment is reproducible from
the command line with:

    protofed run --n-samples 400 --n-classes 3 --n-clients 8 --rounds 10 \
        --participation 0.5 --lr 0.01 --seed 7
"""

from protofed.config import ExperimentConfig
from protofed.fedsim import run_experiment


def main():
    cfg = ExperimentConfig(
        algorithm="mfcpl",
        n_samples=400,
        n_classes=3,
        n_clients=8,
        rounds=10,
        participation=0.5,
        lr=0.01,
        seed=7,
    )
    result = run_experiment(cfg)
    for report in result.reports:
        line = (f"round {report.round_index:2d}  clients {report.participants}  "
                f"train loss {report.train_loss:7.4f}  "
                f"val acc {report.val['accuracy']:.3f}")
        if report.test is not None:
            line += f"  test macro-F1 {report.test['macro_f1']:.3f}"
        print(line)
    headline = result.summary["headline"]
    print(f"\nbest round {result.best_round} by validation accuracy")
    print(f"test metrics at best round: accuracy {headline['accuracy']:.3f}, "
          f"macro-F1 {headline['macro_f1']:.3f}, uar {headline['uar']:.3f}")


if __name__ == "__main__":
    main()
