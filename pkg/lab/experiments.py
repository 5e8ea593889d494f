"""
Experiment drivers. Each returns a DataFrame of result rows; ``write_result``
stores it as CSV plus a JSON document carrying the full provenance.
"""

import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from core import artifacts
from core.choices import HeadKind, SplitName
from core.classifiers import TRIPLET_COLUMNS
from core.detectors import (
    gmm_em,
    isolation_forest,
    kmeans,
    lof_score,
    mahal_distance,
    percentile_threshold,
    threshold_report,
)
from core.evaluation import exact_shapley, pca2, report_from_predictions
from core.features import WindowConfig
from core.qoe import SPOOF_MASKS, SpoofConfig, qoe_report, smooth, spoof, synthetic_head_trajectory
from core.simcore import AttackConfig, run_session
from lab.pipeline import (
    ATTACK_GRID,
    INPUT_SUBSETS,
    PipelineConfig,
    evaluate_head,
    extract_dataset,
    run_pipeline,
    train_head,
)

logger = logging.getLogger(__name__)

EXPERIMENTS = (
    "attack", "window", "cross", "ablation", "unsupervised", "threshold", "latency", "projection", "qoe",
)

# (window, stride) rows of the sliding-window sensitivity study
WINDOW_GRID = ((5, 5), (10, 5), (10, 10), (15, 5), (15, 10), (15, 15), (20, 10), (20, 15))

# name → (session_interval seconds, attack window epochs); None keeps the base value
CROSS_VARIANTS = {
    "interval_20": (20.0, None),
    "interval_25": (25.0, None),
    "epoch_500": (None, 500),
}

THRESHOLD_PERCENTILES = (90, 92, 94, 96, 98)
HEADS = (HeadKind.MLP, HeadKind.GBT)


def write_result(out_dir, name: str, rows: pd.DataFrame, provenance: dict, extra: dict = None) -> Path:
    out_dir = Path(out_dir)
    artifacts.write_csv(out_dir / f"{name}.csv", rows)
    document = {"experiment": name, "provenance": provenance, "rows": rows.to_dict(orient="records")}
    if extra:
        document.update(extra)
    artifacts.write_json(out_dir / f"{name}.json", document)
    logger.info(f"Wrote {name} results ({len(rows)} rows) to {out_dir}")
    return out_dir / f"{name}.csv"


def _metric_row(report, **keys) -> dict:
    return {
        **keys,
        "precision_fake": report.precision_fake,
        "recall_fake": report.recall_fake,
        "f1_fake": report.f1_fake,
        "f1_real": report.f1_real,
        "accuracy": report.accuracy,
        "auc": report.auc,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "tn": report.tn,
    }


# ──────────────────────────────────────────────
# Attack parameters
# ──────────────────────────────────────────────


def attack_grid(cfg: PipelineConfig, num_epochs: int = 5000) -> pd.DataFrame:
    """φ and realised attraction per (ρ, τ) row, attack active for the whole run."""
    rows = []
    for i, (rho, tau) in enumerate(ATTACK_GRID):
        attack = AttackConfig(
            num_switches=cfg.num_switches, target_share=tau, stealth_percentile=rho,
            attack_window=num_epochs, warmup=cfg.warmup, mode=cfg.mode,
        )
        log = run_session(attack, cfg.traffic, num_epochs, cfg.seed + i)
        rows.append({
            "rho": rho,
            "tau": tau,
            "phi": attack.misreport_freq,
            "misreport_rate": log.misreport_rate(),
            "selection_share": log.selection_share(attack.compromised_switch),
        })
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# Window / stride sensitivity
# ──────────────────────────────────────────────


def _window_point(cfg: PipelineConfig, window_len: int, stride: int) -> list:
    point = cfg.replace(window=replace(cfg.window, window_len=window_len, stride=stride))
    result = run_pipeline(point, heads=HEADS)
    return [
        _metric_row(result.metrics[str(kind)], window=window_len, stride=stride, head=str(kind))
        for kind in HEADS
    ]


def window_grid(cfg: PipelineConfig, n_jobs: int = 1, grid=WINDOW_GRID) -> pd.DataFrame:
    points = Parallel(n_jobs=n_jobs)(delayed(_window_point)(cfg, w, s) for w, s in grid)
    return pd.DataFrame([row for rows in points for row in rows])


# ──────────────────────────────────────────────
# Cross-dataset stress
# ──────────────────────────────────────────────


def variant_config(cfg: PipelineConfig, name: str, seed_offset: int = 1000) -> PipelineConfig:
    session_interval, attack_window = CROSS_VARIANTS[name]
    traffic = cfg.traffic
    if session_interval is not None:
        traffic = replace(traffic, session_interval=session_interval)
    return cfg.replace(
        traffic=traffic,
        attack_window=cfg.attack_window if attack_window is None else attack_window,
        seed=cfg.seed + seed_offset,
    )


def cross_dataset(cfg: PipelineConfig, result=None) -> pd.DataFrame:
    """Train on the base configuration, score variants without retraining."""
    result = result or run_pipeline(cfg, heads=HEADS)
    rows = [
        _metric_row(result.metrics[str(kind)], dataset="base", head=str(kind))
        for kind in HEADS
    ]
    for offset, name in enumerate(CROSS_VARIANTS, start=1):
        variant = variant_config(cfg, name, seed_offset=1000 * offset)
        logs = [run_session(a, variant.traffic, variant.session_epochs, s) for a, s in variant.session_attacks()]
        dataset = extract_dataset(logs, WindowConfig(**result.bundle.window))
        scores = result.bundle.score_frame(dataset)
        for kind in HEADS:
            report = evaluate_head(result.heads[str(kind)], scores, split=None)
            rows.append(_metric_row(report, dataset=name, head=str(kind)))
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# Branch ablation
# ──────────────────────────────────────────────


def ablation(cfg: PipelineConfig, result=None) -> pd.DataFrame:
    result = result or run_pipeline(cfg, heads=())
    rows = []
    for kind in HEADS:
        for name, inputs in INPUT_SUBSETS.items():
            head = train_head(
                result.scores, kind, inputs=inputs, use_calibration=cfg.calibrate, seed=cfg.seed,
                mlp_epochs=cfg.mlp_epochs, gbt_rounds=cfg.gbt_rounds,
            )
            rows.append(_metric_row(evaluate_head(head, result.scores), head=str(kind), inputs=name))
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# Unsupervised baselines
# ──────────────────────────────────────────────


def unsupervised_comparison(cfg: PipelineConfig, result=None, percentile: float = 90.0) -> pd.DataFrame:
    """Baselines fit on REAL training windows; FAKE above the REAL-validation percentile."""
    result = result or run_pipeline(cfg, heads=())
    fake = result.dataset.fake
    train = result.split_mask(SplitName.TRAIN) & ~fake
    real_val = result.split_mask(SplitName.VAL) & ~fake
    test = result.split_mask(SplitName.TEST)

    spaces = {
        "combined": result.scores[list(TRIPLET_COLUMNS)].to_numpy(dtype=float),
        "latent": result.latents,
    }
    detectors = (
        ("isolation_forest", "combined", isolation_forest(seed=cfg.seed)),
        ("gmm", "combined", gmm_em(seed=cfg.seed)),
        ("gmm", "latent", gmm_em(seed=cfg.seed)),
        ("lof", "combined", lof_score()),
        ("kmeans", "latent", kmeans(seed=cfg.seed)),
    )

    rows = []
    labels = result.scores["label"].to_numpy()
    for name, space, detector in detectors:
        x = spaces[space]
        detector.fit(x[train])
        scores = detector.score(x)
        threshold = percentile_threshold(scores[real_val], percentile)
        report = report_from_predictions(labels[test], scores[test] > threshold, scores[test], threshold)
        rows.append(_metric_row(report, detector=name, space=space))
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# Reconstruction-threshold sweep
# ──────────────────────────────────────────────


def threshold_sweep(cfg: PipelineConfig, result=None, percentiles=THRESHOLD_PERCENTILES) -> pd.DataFrame:
    result = result or run_pipeline(cfg, heads=())
    recon = result.scores["recon"].to_numpy(dtype=float)
    labels = result.scores["label"].to_numpy()
    real_val = result.split_mask(SplitName.VAL) & ~result.dataset.fake
    test = result.split_mask(SplitName.TEST)

    rows = []
    for p in percentiles:
        report = threshold_report(recon[test], labels[test], recon[real_val], p)
        rows.append({
            "percentile": p,
            "threshold": report.threshold,
            "f1_real": report.f1_real,
            "f1_fake": report.f1_fake,
            "accuracy": report.accuracy,
        })
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# Latency
# ──────────────────────────────────────────────


def time_per_sample(fn, samples, warmup: int = 20) -> float:
    """Median wall-clock seconds of ``fn(sample)``."""
    for sample in samples[:warmup]:
        fn(sample)
    timings = []
    for sample in samples:
        start = time.perf_counter()
        fn(sample)
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def latency_bench(bundle, heads: dict, dataset, num_samples: int = 1000, seed: int = 0) -> pd.DataFrame:
    """
    Warm per-sample latency of every scoring stage plus the fused path with
    and without the transformer. Inputs are single windows drawn with replacement.
    """
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(dataset), size=num_samples)
    sequences = [dataset.sequences[i:i + 1] for i in picks]
    stats = dataset.stat_features()[picks]
    if bundle.mahal_space == "latent":
        mahal_inputs = bundle.transformer.latent(dataset.sequences)[picks]
    else:
        mahal_inputs = bundle.feature_scaler.transform(dataset.features())[picks]
    triplets = bundle.triplets(dataset)[picks]
    head = next(iter(heads.values()), None)

    def without_transformer(i):
        stat = bundle.stat_ae.score(stats[i:i + 1])
        mahal = mahal_distance(bundle.mahal, mahal_inputs[i:i + 1])
        triplet = bundle.normalizer.transform(0.0, stat, mahal)
        return head.predict_proba(triplet) if head else triplet

    def with_transformer(i):
        window = sequences[i]
        recon = bundle.transformer.recon_error(window)
        latent = bundle.transformer.latent(window)
        stat = bundle.stat_ae.score(stats[i:i + 1])
        mahal_input = latent if bundle.mahal_space == "latent" else mahal_inputs[i:i + 1]
        triplet = bundle.normalizer.transform(recon, stat, mahal_distance(bundle.mahal, mahal_input))
        return head.predict_proba(triplet) if head else triplet

    index = list(range(num_samples))
    stages = {
        "transformer_ae": lambda i: (bundle.transformer.recon_error(sequences[i]), bundle.transformer.latent(sequences[i])),
        "statistical_ae": lambda i: bundle.stat_ae.score(stats[i:i + 1]),
        "mahalanobis": lambda i: mahal_distance(bundle.mahal, mahal_inputs[i:i + 1]),
        **{f"{name}_head": (lambda h: lambda i: h.predict_proba(triplets[i:i + 1]))(h) for name, h in heads.items()},
        "fused_without_transformer": without_transformer,
        "fused_with_transformer": with_transformer,
    }
    rows = []
    for name, fn in stages.items():
        median = time_per_sample(fn, index)
        rows.append({"module": name, "median_seconds": median, "median_ms": median * 1e3, "samples": num_samples})
        logger.info(f"Latency {name}: {median * 1e3:.3f} ms median")
    return pd.DataFrame(rows)


# ──────────────────────────────────────────────
# QoE under pose spoofing
# ──────────────────────────────────────────────


def qoe_sweep(seeds=range(10), levels=tuple(SPOOF_MASKS), sigma_t: float = 0.05, sigma_r: float = 2.0,
              num_poses: int = 600, delta: int = 1, smooth_window: int = 100):
    """
    Returns ``(summary, series, ordering)``: mean metrics per level over seeds,
    the smoothed rotational RPE as tidy rows, and the level ranking by rotation error.
    """
    per_run, series = [], []
    for seed in seeds:
        gt = synthetic_head_trajectory(num_poses, seed=seed)
        for level in levels:
            est = spoof(gt, SpoofConfig(level, sigma_t, sigma_r, seed=seed))
            report = qoe_report(gt, est, delta, smooth_window, spoof_level=level)
            per_run.append({
                "level": level, "seed": seed,
                "ate_rmse": report["ate"]["rmse"], "ate_mean": report["ate"]["mean"],
                "ate_median": report["ate"]["median"], "ate_max": report["ate"]["max"],
                "rpe_trans_rmse": report["rpe"]["trans_rmse"], "rpe_rot_rmse_deg": report["rpe"]["rot_rmse_deg"],
            })
            if seed == min(seeds):
                series.extend(
                    {"series": f"spoof_{level}", "x": i, "y": y}
                    for i, y in enumerate(report["rpe_rot_smoothed"])
                )

    runs = pd.DataFrame(per_run)
    summary = runs.drop(columns="seed").groupby("level", as_index=False).mean()
    ranked = summary[summary["level"] > 0].sort_values("rpe_rot_rmse_deg", ascending=False)
    ordering = [int(level) for level in ranked["level"]]
    return summary, pd.DataFrame(series), ordering


# ──────────────────────────────────────────────
# Attribution and projection
# ──────────────────────────────────────────────


def explain_head(head, scores: pd.DataFrame, split=SplitName.TEST, background_size: int = 100,
                 max_samples: int = 500, seed: int = 0):
    """
    Exact Shapley rows per sample plus the global mean |attribution| ranking.
    Background rows are drawn from the training split.
    """
    rng = np.random.default_rng(seed)
    columns = list(TRIPLET_COLUMNS)
    train = scores[scores["split"] == SplitName.TRAIN][columns].to_numpy(dtype=float)
    background = train[rng.choice(len(train), size=min(background_size, len(train)), replace=False)]
    part = scores[scores["split"] == split] if split else scores
    if len(part) > max_samples:
        part = part.iloc[np.sort(rng.choice(len(part), size=max_samples, replace=False))]

    rows = []
    for _, row in part.iterrows():
        x = row[columns].to_numpy(dtype=float)
        attributions, base = exact_shapley(head.predict_proba, x, background)
        probability = float(head.predict_proba(x[None, :])[0])
        rows.append({
            "switch_id": row["switch_id"], "start_epoch": row["start_epoch"], "session": row["session"],
            "label": row["label"], "probability": probability, "base_value": base,
            **{f"phi_{name}": value for name, value in zip(columns, attributions)},
        })
    frame = pd.DataFrame(rows)

    ranking = (
        frame[[f"phi_{name}" for name in columns]].abs().mean()
        .rename(lambda c: c.removeprefix("phi_")).sort_values(ascending=False)
    )
    examples = {}
    predicted_fake = frame["probability"] > 0.5
    fake = frame["label"] == "FAKE"
    for name, mask in (("true_positive", fake & predicted_fake), ("false_negative", fake & ~predicted_fake)):
        if mask.any():
            examples[name] = frame[mask].iloc[0].to_dict()
    return frame, ranking.to_dict(), examples


def pca_projection(result) -> tuple:
    """Tidy PCA rows for fused triplets and latents, with explained variance per space."""
    rows, explained = [], {}
    labels = result.scores["label"].to_numpy()
    for space, data in (("triplet", result.scores[list(TRIPLET_COLUMNS)].to_numpy(dtype=float)),
                        ("latent", result.latents)):
        projection = pca2(data)
        explained[space] = projection.explained.tolist()
        rows.extend(
            {"space": space, "pc1": p[0], "pc2": p[1], "label": label}
            for p, label in zip(projection.projection, labels)
        )
    return pd.DataFrame(rows), explained
