"""
Hybrid detection pipeline: sessions → windows → unsupervised detectors →
fused triplets → supervised heads.

The management commands run these stages one file at a time; the experiment
drivers run them end to end through ``run_pipeline``.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.preprocessing import StandardScaler

from core import artifacts
from core.choices import AttackMode, HeadKind, SplitName
from core.classifiers import (
    TRIPLET_COLUMNS,
    Calibrator,
    calibrate,
    predict_proba,
    train_gbt,
    train_mlp_head,
)
from core.detectors import (
    MAHAL_SPACES,
    ScoreNormalizer,
    TransformerAEConfig,
    fit_mahalanobis,
    mahal_distance,
    train_stat_ae,
    train_transformer_ae,
)
from core.evaluation import MetricsReport, SplitSpec, as_fake_mask, compute_metrics, split_indices
from core.exceptions import ArtifactError, InsufficientData, InvalidConfig
from core.features import (
    FEATURE_NAMES,
    KEY_COLUMNS,
    STAT_FEATURES,
    WindowConfig,
    make_windows,
    samples_to_frame,
    samples_to_sequences,
)
from core.simcore import TELEMETRY_COLUMNS, AttackConfig, TelemetryLog, TrafficConfig, run_session

logger = logging.getLogger(__name__)

# (ρ, τ) per session
ATTACK_GRID = ((0.01, 0.48), (0.01, 0.29), (0.10, 0.48), (0.10, 0.29))

INPUT_SUBSETS = {
    "recon": (0,),
    "stat": (1,),
    "mahal": (2,),
    "fusion": (0, 1, 2),
}
SCORE_COLUMNS = ["switch_id", "start_epoch", *TRIPLET_COLUMNS, "label", "session", "split"]


def parse_inputs(text) -> tuple:
    """'recon,mahal' → (0, 2)"""
    if isinstance(text, (tuple, list)):
        names = list(text)
    else:
        names = [part.strip() for part in str(text).split(",") if part.strip()]
    if names in (["fusion"], ["all"]):
        return INPUT_SUBSETS["fusion"]
    unknown = [n for n in names if n not in TRIPLET_COLUMNS]
    if unknown or not names:
        raise InvalidConfig(f"unknown head inputs {unknown or names}; choose from {', '.join(TRIPLET_COLUMNS)}")
    return tuple(sorted({TRIPLET_COLUMNS.index(n) for n in names}))


# ══════════════════════════════════════════════
# Configuration
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class PipelineConfig:
    num_switches: int = 4
    session_epochs: int = 2000
    attack_start: int = 500
    attack_window: int = 1000
    warmup: int = 100
    attack_grid: tuple = ATTACK_GRID
    mode: str = AttackMode.STEALTHY
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    transformer: TransformerAEConfig = field(default_factory=TransformerAEConfig)
    stat_epochs: int = 60
    mahal_space: str = "latent"
    shrinkage: float = 1e-3
    mlp_epochs: int = 200
    gbt_rounds: int = 200
    calibrate: bool = True
    seed: int = 7

    def __post_init__(self):
        if self.mahal_space not in MAHAL_SPACES:
            raise InvalidConfig(f"Mahalanobis space must be one of {MAHAL_SPACES}")
        if not self.attack_grid:
            raise InvalidConfig("at least one session is required")

    @property
    def split_spec(self) -> SplitSpec:
        return replace(self.split, seed=self.seed)

    def session_attacks(self) -> list:
        """(AttackConfig, seed) per session; the compromised switch rotates."""
        sessions = []
        for i, (rho, tau) in enumerate(self.attack_grid):
            attack = AttackConfig(
                num_switches=self.num_switches,
                target_share=tau,
                stealth_percentile=rho,
                attack_window=self.attack_window,
                compromised_switch=i % self.num_switches,
                attack_start=self.attack_start,
                warmup=self.warmup,
                mode=self.mode,
            )
            sessions.append((attack, self.seed + i))
        return sessions

    def replace(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


# ══════════════════════════════════════════════
# Windows
# ══════════════════════════════════════════════


@dataclass
class WindowDataset:
    frame: pd.DataFrame
    sequences: np.ndarray
    window: Optional[dict] = None

    def __post_init__(self):
        if len(self.frame) != len(self.sequences):
            raise ArtifactError(
                f"{len(self.frame)} feature rows but {len(self.sequences)} sequences"
            )

    def __len__(self):
        return len(self.frame)

    @property
    def fake(self) -> np.ndarray:
        return as_fake_mask(self.frame["label"])

    def features(self) -> np.ndarray:
        return self.frame[FEATURE_NAMES].to_numpy(dtype=float)

    def stat_features(self) -> np.ndarray:
        return self.frame[STAT_FEATURES].to_numpy(dtype=float)

    def subset(self, mask) -> "WindowDataset":
        idx = np.flatnonzero(np.asarray(mask))
        return WindowDataset(self.frame.iloc[idx].reset_index(drop=True), self.sequences[idx], self.window)

    def in_split(self, name) -> np.ndarray:
        if "split" not in self.frame:
            raise InvalidConfig("dataset has no split assignment")
        return (self.frame["split"] == name).to_numpy()

    def with_splits(self, spec: SplitSpec) -> "WindowDataset":
        train, val, test = split_indices(len(self), spec)
        split = np.empty(len(self), dtype=object)
        split[train] = SplitName.TRAIN.value
        split[val] = SplitName.VAL.value
        split[test] = SplitName.TEST.value
        frame = self.frame.copy()
        frame["split"] = split
        return WindowDataset(frame, self.sequences, self.window)

    def save(self, path) -> Path:
        path = Path(path)
        artifacts.write_csv(path, self.frame)
        artifacts.write_arrays(
            sequence_path(path),
            sequences=self.sequences,
            switch_id=self.frame["switch_id"].to_numpy(),
            start_epoch=self.frame["start_epoch"].to_numpy(),
            session=self.frame["session"].to_numpy(),
            window=np.array(json.dumps(self.window or {})),
        )
        return path

    @classmethod
    def load(cls, path) -> "WindowDataset":
        frame = artifacts.read_csv(path, required_columns=[*FEATURE_NAMES, *KEY_COLUMNS, "session"])
        arrays = artifacts.read_arrays(sequence_path(path))
        for key in ("switch_id", "start_epoch", "session"):
            if not np.array_equal(arrays[key], frame[key].to_numpy()):
                raise ArtifactError(f"sequence sidecar of {path} does not match its rows ({key})")
        window = json.loads(str(arrays["window"])) if "window" in arrays else {}
        return cls(frame, arrays["sequences"], window or None)


def sequence_path(feature_path) -> Path:
    feature_path = Path(feature_path)
    return feature_path.with_suffix(".npz")


def extract_dataset(logs, window: WindowConfig) -> WindowDataset:
    frames, sequences = [], []
    for session, log in enumerate(logs):
        samples = make_windows(log, window)
        frames.append(samples_to_frame(samples, session))
        sequences.append(samples_to_sequences(samples))
    return WindowDataset(pd.concat(frames, ignore_index=True), np.concatenate(sequences), window.to_dict())


def simulate_sessions(cfg: PipelineConfig, n_jobs: int = 1) -> list:
    sessions = cfg.session_attacks()
    return Parallel(n_jobs=n_jobs)(
        delayed(run_session)(attack, cfg.traffic, cfg.session_epochs, seed)
        for attack, seed in sessions
    )


TELEMETRY_FILE = "telemetry.csv"
METADATA_FILE = "metadata.json"


def save_telemetry(log: TelemetryLog, out_dir) -> Path:
    """Write ``telemetry.csv`` and ``metadata.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_csv(out_dir / TELEMETRY_FILE, log.to_frame())
    attack = log.attack
    artifacts.write_json(out_dir / METADATA_FILE, {
        "seed": log.rng_seed,
        "num_epochs": len(log.records),
        "attack": attack.to_dict(),
        "traffic": log.traffic.to_dict(),
        "phi": attack.misreport_freq,
        "phi_overridden": attack.misreport_freq_override is not None,
        "mode": str(attack.mode),
        "misreport_rate": log.misreport_rate(),
        "selection_share": log.selection_share(attack.compromised_switch),
        "notes": {
            "misreport_rate": "fraction of attack-active epochs with a fake report",
            "selection_share": "share of attack-active epochs that selected the compromised switch",
            "selected": "1 on the row of the switch the controller picked in that epoch",
        },
    })
    return out_dir


def load_telemetry(path) -> TelemetryLog:
    path = Path(path)
    meta = artifacts.read_json(path / METADATA_FILE)
    frame = artifacts.read_csv(path / TELEMETRY_FILE, required_columns=TELEMETRY_COLUMNS)
    try:
        attack = AttackConfig.from_dict(meta["attack"])
        traffic = TrafficConfig.from_dict(meta["traffic"])
    except (KeyError, TypeError) as e:
        raise ArtifactError(f"{path / METADATA_FILE} is missing session configuration: {e}") from e
    return TelemetryLog.from_frame(frame, attack, traffic, meta.get("seed"))


# ══════════════════════════════════════════════
# Unsupervised detectors
# ══════════════════════════════════════════════


@dataclass
class DetectorBundle:
    transformer: object
    stat_ae: object
    mahal: object
    mahal_space: str
    feature_scaler: StandardScaler
    normalizer: ScoreNormalizer
    window: dict
    seed: int

    def raw_scores(self, dataset: WindowDataset) -> dict:
        latents = self.transformer.latent(dataset.sequences)
        if self.mahal_space == "latent":
            mahal_input = latents
        else:
            mahal_input = self.feature_scaler.transform(dataset.features())
        return {
            "recon": self.transformer.recon_error(dataset.sequences),
            "stat": self.stat_ae.score(dataset.stat_features()),
            "mahal": mahal_distance(self.mahal, mahal_input),
            "latent": latents,
        }

    def triplets(self, dataset: WindowDataset, raw: Optional[dict] = None) -> np.ndarray:
        raw = raw or self.raw_scores(dataset)
        return self.normalizer.transform(raw["recon"], raw["stat"], raw["mahal"])

    def score_frame(self, dataset: WindowDataset, raw: Optional[dict] = None) -> pd.DataFrame:
        triplets = self.triplets(dataset, raw)
        frame = dataset.frame[["switch_id", "start_epoch"]].copy()
        for i, name in enumerate(TRIPLET_COLUMNS):
            frame[name] = triplets[:, i]
        frame["label"] = dataset.frame["label"].to_numpy()
        frame["session"] = dataset.frame["session"].to_numpy()
        frame["split"] = dataset.frame["split"].to_numpy() if "split" in dataset.frame else ""
        return frame[SCORE_COLUMNS]


def train_detectors(dataset: WindowDataset, cfg: PipelineConfig) -> DetectorBundle:
    """Fit every detector on the REAL windows of the training split."""
    real_train = dataset.subset(dataset.in_split(SplitName.TRAIN) & ~dataset.fake)
    if len(real_train) < cfg.transformer.min_windows:
        raise InsufficientData(
            f"{len(real_train)} REAL training windows, need at least {cfg.transformer.min_windows}"
        )
    logger.info(f"Training detectors on {len(real_train)} REAL windows")

    transformer = train_transformer_ae(real_train.sequences, cfg.transformer, seed=cfg.seed)
    stat_ae = train_stat_ae(
        real_train.stat_features(), epochs=cfg.stat_epochs, seed=cfg.seed,
        min_windows=cfg.transformer.min_windows,
    )
    feature_scaler = StandardScaler().fit(real_train.features())

    if cfg.mahal_space == "latent":
        mahal_fit_input = transformer.latent(real_train.sequences)
    else:
        mahal_fit_input = feature_scaler.transform(real_train.features())
    mahal = fit_mahalanobis(mahal_fit_input, cfg.shrinkage)

    bundle = DetectorBundle(
        transformer=transformer,
        stat_ae=stat_ae,
        mahal=mahal,
        mahal_space=cfg.mahal_space,
        feature_scaler=feature_scaler,
        normalizer=None,
        window=dataset.window or cfg.window.to_dict(),
        seed=cfg.seed,
    )
    raw = bundle.raw_scores(real_train)
    bundle.normalizer = ScoreNormalizer.fit(raw["recon"], raw["stat"], raw["mahal"])
    return bundle


# ══════════════════════════════════════════════
# Supervised heads
# ══════════════════════════════════════════════


@dataclass
class HeadArtifact:
    kind: str
    model: object
    calibrator: Optional[Calibrator]
    inputs: tuple
    require_calibration: bool = False

    def predict_proba(self, triplets) -> np.ndarray:
        return predict_proba(self.model, triplets, self.calibrator, self.require_calibration)

    @property
    def input_names(self) -> list:
        return [TRIPLET_COLUMNS[i] for i in self.inputs]


def _split_arrays(scores: pd.DataFrame, name):
    part = scores[scores["split"] == name]
    return part[list(TRIPLET_COLUMNS)].to_numpy(dtype=float), part["label"].to_numpy()


def train_head(scores: pd.DataFrame, kind: str, inputs=(0, 1, 2), use_calibration: bool = True,
               seed: int = 0, mlp_epochs: int = 200, gbt_rounds: int = 200) -> HeadArtifact:
    """Train on the training split; the validation split drives early stopping and calibration."""
    x_train, y_train = _split_arrays(scores, SplitName.TRAIN)
    x_val, y_val = _split_arrays(scores, SplitName.VAL)
    if len(x_train) == 0:
        raise InsufficientData("score file has no training rows")

    if kind == HeadKind.MLP:
        model = train_mlp_head(x_train, y_train, seed=seed, inputs=inputs, epochs=mlp_epochs)
    elif kind == HeadKind.GBT:
        model = train_gbt(x_train, y_train, x_val, y_val, inputs=inputs, rounds=gbt_rounds, seed=seed)
    else:
        raise InvalidConfig(f"unknown head kind {kind!r}")

    calibrator = None
    if use_calibration:
        if len(x_val) == 0:
            raise InsufficientData("calibration needs validation rows")
        calibrator = calibrate(model.decision_function(x_val), y_val, folds=5, seed=seed)
    return HeadArtifact(str(kind), model, calibrator, tuple(inputs), require_calibration=use_calibration)


def evaluate_head(head: HeadArtifact, scores: pd.DataFrame, split: Optional[str] = SplitName.TEST,
                  threshold: float = 0.5) -> MetricsReport:
    part = scores if split is None else scores[scores["split"] == split]
    triplets = part[list(TRIPLET_COLUMNS)].to_numpy(dtype=float)
    return compute_metrics(part["label"].to_numpy(), head.predict_proba(triplets), threshold)


def prediction_frame(head: HeadArtifact, scores: pd.DataFrame, threshold: float = 0.5) -> pd.DataFrame:
    probability = head.predict_proba(scores[list(TRIPLET_COLUMNS)].to_numpy(dtype=float))
    frame = scores[["switch_id", "start_epoch", "session", "split", "label"]].copy()
    frame["probability"] = probability
    frame["prediction"] = np.where(probability > threshold, "FAKE", "REAL")
    return frame


# ══════════════════════════════════════════════
# End to end
# ══════════════════════════════════════════════


@dataclass
class PipelineResult:
    config: PipelineConfig
    logs: list
    dataset: WindowDataset
    bundle: DetectorBundle
    scores: pd.DataFrame
    latents: np.ndarray
    raw: dict
    heads: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def split_mask(self, name) -> np.ndarray:
        return (self.scores["split"] == name).to_numpy()


def run_pipeline(cfg: PipelineConfig, heads=(HeadKind.MLP, HeadKind.GBT), n_jobs: int = 1,
                 inputs=(0, 1, 2)) -> PipelineResult:
    logs = simulate_sessions(cfg, n_jobs=n_jobs)
    dataset = extract_dataset(logs, cfg.window).with_splits(cfg.split_spec)
    bundle = train_detectors(dataset, cfg)
    raw = bundle.raw_scores(dataset)
    scores = bundle.score_frame(dataset, raw)

    result = PipelineResult(cfg, logs, dataset, bundle, scores, raw["latent"], raw)
    for kind in heads:
        head = train_head(
            scores, kind, inputs=inputs, use_calibration=cfg.calibrate, seed=cfg.seed,
            mlp_epochs=cfg.mlp_epochs, gbt_rounds=cfg.gbt_rounds,
        )
        result.heads[str(kind)] = head
        result.metrics[str(kind)] = evaluate_head(head, scores)
        logger.info(
            f"{kind} head: F1_FAKE={result.metrics[str(kind)].f1_fake:.4f} "
            f"AUC={result.metrics[str(kind)].auc}"
        )
    return result
