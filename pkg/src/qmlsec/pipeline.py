"""End-to-end defect-classification flow: synthetic images -> autoencoder ->
latent features -> QNN, with the default hyperparameters used throughout."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cae import CaeConfig, CaeModel, cae_encode_dataset, cae_train
from .data import balanced_subset, generate_synthetic_defects, remap_labels, split_dataset, split_indices
from .qnn import TrainConfig, init_model, train_qnn

THREE_CLASSES = (0, 1, 2)
SIX_CLASSES = (0, 1, 2, 3, 4, 5)


@dataclass
class PipelineConfig:
    # 2223 per class leaves >= 667 holdout images per class, enough for a
    # balanced 2000-sample three-class latent set.
    per_class: int = 2223
    data_seed: int = 0
    split_fraction: float = 0.7
    cae: CaeConfig = field(default_factory=CaeConfig)
    latent_samples: int = 2000
    tasks: dict = field(default_factory=lambda: {"3-class": THREE_CLASSES, "6-class": SIX_CLASSES})
    qnn_layers: int = 2
    head: str = "dense"
    family: str = "crx-ring"
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (0,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = {k: list(v) for k, v in self.tasks.items()}
        d["seeds"] = list(self.seeds)
        d["cae"]["filters"] = list(self.cae.filters)
        return d


@dataclass
class LatentStage:
    cae: CaeModel
    cae_history: list
    latents: np.ndarray
    labels: np.ndarray


def prepare_latents(cfg: PipelineConfig) -> LatentStage:
    """Generate images, train the autoencoder on the training split and encode the holdout."""
    images = generate_synthetic_defects(cfg.per_class, cfg.data_seed)
    train, holdout = split_dataset(images, cfg.split_fraction, cfg.data_seed)
    cae, history = cae_train(train.images, cfg.cae)
    latents, labels = cae_encode_dataset(cae, holdout.images, holdout.labels)
    return LatentStage(cae, history, latents, labels)


def latent_task(latents, labels, classes, n_samples: int, seed: int):
    """Balanced ``n_samples`` subset of the chosen classes, labels remapped to 0..k-1."""
    idx = balanced_subset(labels, classes, n_samples, seed)
    return np.asarray(latents)[idx], remap_labels(np.asarray(labels)[idx], classes)


def run_qnn_task(X, y, n_classes: int, cfg: PipelineConfig, seed: int) -> dict:
    """Seeded split, init and training; reports final-epoch accuracies."""
    tr, va = split_indices(y, cfg.split_fraction, seed)
    model = init_model(X.shape[1], cfg.qnn_layers, cfg.head, n_classes, seed, cfg.family)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    model, history = train_qnn(model, (X[tr], y[tr]), (X[va], y[va]), tcfg)
    return {"seed": seed, "train_acc": history[-1]["train_acc"], "val_acc": history[-1]["val_acc"],
            "history": history, "model": model}


def run_experiments(stage: LatentStage, cfg: PipelineConfig, progress=None) -> dict:
    """``{task: [result per seed]}`` for every configured task."""
    results = {}
    for name, classes in cfg.tasks.items():
        results[name] = []
        for seed in cfg.seeds:
            X, y = latent_task(stage.latents, stage.labels, classes, cfg.latent_samples, seed)
            res = run_qnn_task(X, y, len(classes), cfg, seed)
            res["task"] = name
            results[name].append(res)
            if progress:
                progress(f"{name} seed {seed}: train {res['train_acc']:.3f} val {res['val_acc']:.3f}")
    return results


def accuracy_table(results: dict) -> str:
    """Plain-text table of mean accuracies per task."""
    lines = ["| Task | Train accuracy | Validation accuracy |", "|---|---|---|"]
    for name, runs in results.items():
        tr = np.mean([r["train_acc"] for r in runs])
        va = np.mean([r["val_acc"] for r in runs])
        lines.append(f"| Defect {name.capitalize()} | {tr:.2f} | {va:.2f} |")
    return "\n".join(lines) + "\n"
