"""Five-regime training experiment and the augmentation-fraction curve.

Regimes: real large L(r), real small S(r), generated-only ODE(s), and the
two augmented combinations.  The generated set is produced once from the
small set's fitted models and shared by every regime containing ODE(s),
so the combined-regime series/point counts are exact sums.  All regimes
share one derived training seed and the same validation/test sets; the
only difference between rows is the training data.
"""

from dataclasses import replace

import numpy as np

from .augment import AugmentationPlan, FittedPair, generate_series_pair
from .benchmark import CONTROL_CHANNEL, RESPONSE_CHANNEL
from .control import AUTO, build_profile, pair_features, segment_control
from .lstm import PredictorConfig, predict, train
from .metrics import MetricsReport, RegimeRow, prf_metrics
from .ode import LINEAR1, SeriesPair, fit
from .scoring import (detect, error_vectors, fit_gaussian, score_series,
                      select_threshold)

REGIMES = ("L(r)", "S(r)", "ODE(s)", "S(r)+ODE(s)", "L(r)+ODE(s)")

_FIT_TAG, _GEN_TAG, _TRAIN_TAG, _SENSOR_TAG = 21, 22, 23, 24


def _derive_seed(*keys):
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint32)[0])


def build_generated(benchmark):
    """Fit ODE models on the small real set and generate synthetic pairs.

    Returns (generated series list, plan).  Deterministic in the benchmark
    seed, independently of which regimes later consume the output.
    """
    config = benchmark.config
    fitted = []
    segmentations = []
    for i, series in enumerate(benchmark.small):
        seg = segment_control(series, CONTROL_CHANNEL, AUTO, min_duration=2)
        segmentations.append(seg)
        pair = SeriesPair.from_series(series, CONTROL_CHANNEL, RESPONSE_CHANNEL)
        fit_config = replace(
            config.fit, seed=_derive_seed(config.seed, _FIT_TAG, i)
        )
        report = fit(pair, LINEAR1, fit_config)
        fitted.append(
            FittedPair(pair_features(seg), report.params, float(pair.dependent[0]))
        )
    plan = AugmentationPlan(
        profile=build_profile(segmentations),
        fitted=fitted,
        count=config.n_generated,
        length=config.series_length,
        seed=_derive_seed(config.seed, _GEN_TAG),
        sample_period=config.sample_period,
        structure=LINEAR1,
        channel_names=(CONTROL_CHANNEL, RESPONSE_CHANNEL),
    )
    generated = [
        _apply_sensor_noise(benchmark, generate_series_pair(plan, k), k)
        for k in range(plan.count)
    ]
    return generated, plan


def _apply_sensor_noise(benchmark, series, k):
    """Pass a synthetic series through the benchmark's sensor model.

    Real benchmark series carry measurement noise; mixing noiseless ODE
    trajectories into training would shift the input distribution, so
    generated dependents receive the same noise level (seeded per pair).
    """
    config = benchmark.config
    if config.noise_std_frac <= 0:
        return series
    rng = np.random.default_rng(
        np.random.SeedSequence([int(config.seed), _SENSOR_TAG, int(k)])
    )
    name = benchmark.dependent_channel
    clean = series.channel(name)
    std = config.noise_std_frac * float(np.max(clean) - np.min(clean))
    return series.with_channel(name, clean + rng.normal(0.0, std, clean.shape[0]))


def _predictor_config(benchmark):
    s = benchmark.config.lstm
    return PredictorConfig(
        input_channels=(CONTROL_CHANNEL, RESPONSE_CHANNEL),
        predicted_channels=(RESPONSE_CHANNEL,),
        layer_sizes=s.layer_sizes,
        prediction_length=s.prediction_length,
        learning_rate=s.learning_rate,
        epochs=s.epochs,
        clip_norm=s.clip_norm,
        tbptt_length=s.tbptt_length,
        series_batch_size=s.series_batch_size,
        patience=s.patience,
        seed=_derive_seed(benchmark.config.seed, _TRAIN_TAG),
    )


def evaluate_training_set(train_series, benchmark):
    """Train, fit the scorer, pick the threshold, and score the test set.

    Returns (precision, recall, f_score) on the pooled point-wise test
    masks.  Pure function of (training list, benchmark): the network seed,
    validation sets, and test set are all fixed by the benchmark.
    """
    config = _predictor_config(benchmark)
    net, _ = train(list(train_series), config, val_series=benchmark.val_normal)

    pooled = []
    for series in benchmark.val_normal:
        preds = predict(net, config, series)
        pooled.extend(error_vectors(preds, series, config))
    scorer = fit_gaussian(pooled, ridge=benchmark.config.ridge)

    scores, labels = [], []
    for series in benchmark.val_anomalous:
        scores.append(score_series(net, config, scorer, series))
        labels.append(series.labels)
    tau, _ = select_threshold(
        np.concatenate(scores), np.concatenate(labels),
        beta=benchmark.config.threshold_beta,
    )
    scorer.threshold = tau

    predicted, actual = [], []
    for series in benchmark.test:
        predicted.append(detect(net, config, scorer, series))
        actual.append(series.labels)
    return prf_metrics(np.concatenate(predicted), np.concatenate(actual))


def _training_sets(benchmark, regimes):
    need_generated = any("ODE(s)" in r for r in regimes)
    generated = build_generated(benchmark)[0] if need_generated else []
    sets = {
        "L(r)": benchmark.large,
        "S(r)": benchmark.small,
        "ODE(s)": generated,
        "S(r)+ODE(s)": benchmark.small + generated,
        "L(r)+ODE(s)": benchmark.large + generated,
    }
    return sets, generated


def run_experiment(benchmark, regimes=REGIMES):
    """Evaluate each requested regime on the shared test set.

    Rows appear in canonical order.  Stage failures are re-raised with the
    regime name attached.
    """
    regimes = list(regimes)
    unknown = [r for r in regimes if r not in REGIMES]
    if unknown:
        raise ValueError(f"unknown regimes {unknown}; choose from {list(REGIMES)}")
    sets, _ = _training_sets(benchmark, regimes)

    rows = []
    for name in REGIMES:
        if name not in regimes:
            continue
        train_series = sets[name]
        try:
            precision, recall, f_score = evaluate_training_set(train_series, benchmark)
        except Exception as exc:
            raise RuntimeError(f"regime {name}: {exc}") from exc
        rows.append(
            RegimeRow(
                regime=name,
                n_series=len(train_series),
                n_points=sum(len(s) for s in train_series),
                precision=precision,
                recall=recall,
                f_score=f_score,
            )
        )
    from .benchmark import config_to_dict

    return MetricsReport(
        rows=rows, config=config_to_dict(benchmark.config),
        seed=benchmark.config.seed,
    )


def augmentation_curve(benchmark, fractions):
    """Test F-score as generated series are mixed into the small real set.

    ``fractions`` must be sorted ascending and contain 0.  Fraction q
    trains on S(r) plus the first floor(q * n_generated) generated series;
    endpoints therefore reproduce the S(r) and S(r)+ODE(s) regime rows
    exactly under a shared seed.
    """
    fractions = [float(q) for q in fractions]
    if not fractions or fractions != sorted(fractions) or fractions[0] != 0.0:
        raise ValueError("fractions must be sorted ascending and start at 0")
    if any(q < 0 or q > 1 for q in fractions):
        raise ValueError("fractions must lie in [0, 1]")

    generated, _ = build_generated(benchmark)
    curve = []
    for q in fractions:
        k = int(np.floor(q * len(generated)))
        train_series = benchmark.small + generated[:k]
        _, _, f_score = evaluate_training_set(train_series, benchmark)
        curve.append((q, f_score))
    return curve


def curve_to_csv_text(curve):
    lines = ["fraction,f_score"]
    lines.extend(f"{q:.6f},{f:.6f}" for q, f in curve)
    return "\n".join(lines) + "\n"
