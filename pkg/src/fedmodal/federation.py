"""The federated protocol engine.

One global epoch = every participant trains locally from its group's
global parameters, then the server aggregates. Baseline regimes average
within each group only; the framework regimes additionally run the
cross-modal double aggregation, averaging the shared encoder+projector
keys between each unimodal group and the multimodal group.

Local training is a pure function of (global params, local data, derived
rng), so participants may run concurrently and results are bit-identical
regardless of scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import data as data_mod
from . import losses, metrics, models, nn
from .errors import ConfigurationError, IncompatibleMapsError
from .models import ModelBundle
from .nn import ParameterMap

log = logging.getLogger(__name__)

GROUP_ORDER = ("image", "audio", "multimodal")
GROUP_INDEX = {name: i for i, name in enumerate(GROUP_ORDER)}

REGIME_KINDS = (
    "centralized_baseline",
    "fl_baseline",
    "framework_balanced",
    "framework_unbalanced_paired",
    "framework_unbalanced_random",
)
FRAMEWORK_KINDS = REGIME_KINDS[2:]

# Which model each group trains: the baselines use the supervised
# late-fusion model on the multimodal group, the framework uses the
# contrastive model there. Unimodal groups always train classifiers.
BASELINE_MODEL_KINDS = {
    "image": "image_classifier",
    "audio": "audio_classifier",
    "multimodal": "late_fusion",
}
FRAMEWORK_MODEL_KINDS = {
    "image": "image_classifier",
    "audio": "audio_classifier",
    "multimodal": "contrastive",
}


@dataclass(frozen=True)
class ParticipantState:
    """One client: its group, its slice of the training set, its local schedule."""

    id: int
    group: str
    sample_indices: tuple[int, ...]
    local_epochs: int = 10
    local_batch: int = 10

    def __post_init__(self):
        if self.group not in GROUP_ORDER:
            raise ConfigurationError(f"unknown group {self.group!r}")
        if len(self.sample_indices) < 1:
            raise ConfigurationError(f"participant {self.id} has no samples")
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs must be >= 0")
        if self.local_batch < 1:
            raise ConfigurationError("local_batch must be >= 1")


@dataclass(frozen=True)
class ExperimentRegime:
    kind: str
    global_epochs: int = 100

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ConfigurationError(f"unknown regime {self.kind!r}")
        if self.global_epochs < 1:
            raise ConfigurationError("global_epochs must be >= 1")

    @property
    def is_framework(self) -> bool:
        return self.kind in FRAMEWORK_KINDS


@dataclass(frozen=True)
class LocalTrainConfig:
    """Everything a participant needs besides its data: topology, lr, rng inputs."""

    bundle: ModelBundle
    learning_rate: float
    seed: int
    epoch: int
    temperature: float = 0.5


@dataclass(frozen=True)
class FederationState:
    """Global parameters per group plus the run's bookkeeping."""

    regime: ExperimentRegime
    bundles: Mapping[str, ModelBundle]
    participants: Mapping[str, tuple[ParticipantState, ...]]
    global_params: Mapping[str, ParameterMap]
    seed: int
    learning_rate: float = 0.001
    temperature: float = 0.5
    workers: int = 1
    epoch: int = 0
    history: tuple = ()
    agg_calls: int = 0


def participant_rng(seed: int, group: str, participant_id: int, epoch: int):
    """Per-(participant, epoch) rng: reproducible yet decorrelated streams."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, GROUP_INDEX[group], participant_id, epoch])
    )


def derive_seed(seed: int, *path: int) -> int:
    """A deterministic child seed for dataset/init/partition draws."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def _views_for(bundle: ModelBundle, dataset, rows):
    image = dataset.images[rows] if bundle.kind in ("image_classifier", "late_fusion") else None
    audio = dataset.audios[rows] if bundle.kind in ("audio_classifier", "late_fusion") else None
    return image, audio


def local_train_supervised(
    global_params: ParameterMap, participant: ParticipantState, dataset, cfg: LocalTrainConfig
) -> ParameterMap:
    """Mini-batch SGD with cross-entropy over the participant's samples.

    Copies the global parameters and returns the locally updated map;
    the input map is never modified.
    """
    bundle = cfg.bundle
    class_count = models.output_class_count(bundle)
    # Sorted so batches depend only on the sample set and the derived rng,
    # never on the partitioner's internal ordering.
    indices = np.sort(np.asarray(participant.sample_indices, dtype=np.int64))
    rng = participant_rng(cfg.seed, participant.group, participant.id, cfg.epoch)
    params = global_params
    for _ in range(participant.local_epochs):
        order = rng.permutation(len(indices))
        for start in range(0, len(indices), participant.local_batch):
            rows = indices[order[start : start + participant.local_batch]]
            image, audio = _views_for(bundle, dataset, rows)
            logits, aux = models.supervised_logits(bundle, params, image=image, audio=audio)
            targets = losses.one_hot(dataset.labels[rows], class_count)
            _, grad_logits = losses.cross_entropy(nn.softmax(logits), targets)
            grads = models.supervised_param_grads(bundle, params, aux, grad_logits)
            params = nn.sgd_step(params, grads, cfg.learning_rate)
    return params


def local_train_contrastive(
    global_params: ParameterMap, participant: ParticipantState, dataset, cfg: LocalTrainConfig
) -> ParameterMap:
    """Mini-batch SGD on the contrastive loss over paired views; labels unused."""
    bundle = cfg.bundle
    indices = np.sort(np.asarray(participant.sample_indices, dtype=np.int64))
    rng = participant_rng(cfg.seed, participant.group, participant.id, cfg.epoch)
    params = global_params
    for _ in range(participant.local_epochs):
        order = rng.permutation(len(indices))
        for start in range(0, len(indices), participant.local_batch):
            rows = indices[order[start : start + participant.local_batch]]
            if len(rows) == 1:
                log.debug(
                    "participant %d: single-sample batch contributes zero contrastive loss",
                    participant.id,
                )
                continue
            z_img, z_aud, aux = models.contrastive_embeddings(
                bundle, params, dataset.images[rows], dataset.audios[rows]
            )
            batch = losses.ContrastiveBatch(z_img, z_aud, cfg.temperature)
            _, grad_img, grad_aud = losses.ntxent_loss(batch)
            grads = models.contrastive_param_grads(bundle, params, aux, grad_img, grad_aud)
            params = nn.sgd_step(params, grads, cfg.learning_rate)
    return params


# ---------------------------------------------------------------------------
# Aggregation. These take parameter maps only -- never datasets -- which is
# the structural privacy boundary of the protocol.
# ---------------------------------------------------------------------------


def agg(weights: Sequence[ParameterMap]) -> ParameterMap:
    """Elementwise mean over N parameter maps (within-group FedAvg).

    The mean is computed as min + sum(sorted offsets)/N, which makes it
    bit-exact on identical inputs (offsets are exactly zero) and
    invariant to the order of the input list (sorting fixes the
    summation order), properties plain left-to-right summation lacks.
    """
    maps = list(weights)
    if not maps:
        raise IncompatibleMapsError("cannot aggregate zero maps")
    first = maps[0]
    for other in maps[1:]:
        if set(other.keys()) != set(first.keys()):
            offending = sorted(set(other.keys()) ^ set(first.keys()))[0]
            raise IncompatibleMapsError(f"maps disagree on key {offending!r}")
    entries = {}
    for key in first:
        for other in maps[1:]:
            if other[key].shape != first[key].shape:
                raise IncompatibleMapsError(
                    f"key {key!r} has shapes {first[key].shape} vs {other[key].shape}"
                )
        stack = np.stack([m[key] for m in maps])
        low = stack.min(axis=0)
        offsets = np.sort(stack - low, axis=0)
        entries[key] = low + offsets.sum(axis=0) / len(maps)
    return ParameterMap._adopt(entries)


def agg_m2u(w_u: ParameterMap, w_m: ParameterMap) -> ParameterMap:
    """Pull the multimodal group's shared sub-network into a unimodal map.

    Keys shared with the multimodal map become the pairwise mean; all
    other keys (the supervised output layer) keep their unimodal values.
    The output always has exactly w_u's key set.
    """
    entries = {key: w_u[key] for key in w_u}
    for key in models.shared_keys(w_u, w_m):
        entries[key] = (w_u[key] + w_m[key]) / 2.0
    return ParameterMap._adopt(entries)


def agg_u2m(w_i: ParameterMap, w_a: ParameterMap, w_m: ParameterMap) -> ParameterMap:
    """Pull both unimodal groups' towers into the multimodal map.

    Starting from w_m, keys shared with the image map are averaged with
    it, then keys shared with the audio map are averaged with the running
    value. Keys shared with neither stay multimodal. Output key set is
    exactly w_m's.
    """
    entries = {key: w_m[key] for key in w_m}
    for key in models.shared_keys(w_i, w_m):
        entries[key] = (w_i[key] + entries[key]) / 2.0
    for key in models.shared_keys(w_a, w_m):
        entries[key] = (w_a[key] + entries[key]) / 2.0
    return ParameterMap._adopt(entries)


def agg_avg(
    W_i: Sequence[ParameterMap], W_a: Sequence[ParameterMap], W_m: Sequence[ParameterMap]
) -> tuple[ParameterMap, ParameterMap, ParameterMap]:
    """The double aggregation: within-group means, then cross-modal transfer.

    Both transfer stages consume the pre-transfer group means.
    """
    w_i, w_a, w_m = agg(W_i), agg(W_a), agg(W_m)
    return agg_m2u(w_i, w_m), agg_m2u(w_a, w_m), agg_u2m(w_i, w_a, w_m)


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def evaluate_supervised(bundle: ModelBundle, params: ParameterMap, dataset):
    """Loss, accuracy and argmax predictions of a supervised model on a dataset."""
    rows = np.arange(len(dataset))
    image, audio = _views_for(bundle, dataset, rows)
    probs = models.predict_proba(bundle, params, image=image, audio=audio)
    targets = losses.one_hot(dataset.labels, models.output_class_count(bundle))
    loss, _ = losses.cross_entropy(probs, targets)
    predictions = np.argmax(probs, axis=1)
    return loss, metrics.accuracy(predictions, dataset.labels), predictions


def evaluate_contrastive(
    bundle: ModelBundle, params: ParameterMap, dataset, temperature: float, batch: int = 10
) -> float:
    """Mean per-anchor contrastive loss over fixed-order batches."""
    total, anchors = 0.0, 0
    for start in range(0, len(dataset), batch):
        rows = np.arange(start, min(start + batch, len(dataset)))
        z_img, z_aud, _ = models.contrastive_embeddings(
            bundle, params, dataset.images[rows], dataset.audios[rows]
        )
        loss, _, _ = losses.ntxent_loss(losses.ContrastiveBatch(z_img, z_aud, temperature))
        total += loss * 2 * len(rows)
        anchors += 2 * len(rows)
    return total / anchors


# ---------------------------------------------------------------------------
# The global-epoch loop
# ---------------------------------------------------------------------------


def _run_participants(train_fn, global_params, participants, dataset, cfg, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(train_fn, global_params, p, dataset, cfg) for p in participants
            ]
            return [f.result() for f in futures]
    return [train_fn(global_params, p, dataset, cfg) for p in participants]


def run_global_epoch(state: FederationState, train_data, val_data) -> FederationState:
    """One synchronized round: local training, aggregation, metrics.

    Returns the successor state (epoch advanced, history extended);
    the input state is unchanged.
    """
    results: dict[str, list[ParameterMap]] = {}
    for group, bundle in state.bundles.items():
        cfg = LocalTrainConfig(
            bundle, state.learning_rate, state.seed, state.epoch, state.temperature
        )
        train_fn = (
            local_train_contrastive if bundle.kind == "contrastive" else local_train_supervised
        )
        results[group] = _run_participants(
            train_fn, state.global_params[group], state.participants[group],
            train_data, cfg, state.workers,
        )

    agg_calls = state.agg_calls
    if state.regime.kind == "centralized_baseline":
        new_globals = {}
        for group, maps in results.items():
            if len(maps) != 1:
                raise ConfigurationError("centralized baseline expects one participant per group")
            new_globals[group] = maps[0]
    elif state.regime.is_framework:
        w_i, w_a, w_m = agg_avg(results["image"], results["audio"], results["multimodal"])
        new_globals = {"image": w_i, "audio": w_a, "multimodal": w_m}
        agg_calls += 1
    else:
        new_globals = {group: agg(maps) for group, maps in results.items()}
        agg_calls += len(results)

    record = {}
    for group, bundle in state.bundles.items():
        params = new_globals[group]
        if bundle.kind == "contrastive":
            record[group] = {
                "train_loss": evaluate_contrastive(bundle, params, train_data, state.temperature),
                "val_loss": evaluate_contrastive(bundle, params, val_data, state.temperature),
            }
        else:
            train_loss, train_acc, _ = evaluate_supervised(bundle, params, train_data)
            val_loss, val_acc, _ = evaluate_supervised(bundle, params, val_data)
            record[group] = {
                "train_loss": train_loss,
                "train_acc": train_acc,
                "val_loss": val_loss,
                "val_acc": val_acc,
            }

    return replace(
        state,
        global_params=new_globals,
        epoch=state.epoch + 1,
        history=state.history + (record,),
        agg_calls=agg_calls,
    )


# ---------------------------------------------------------------------------
# Full experiment runs
# ---------------------------------------------------------------------------


def _load_dataset(cfg, seed: int):
    if cfg.data_source == "synthetic":
        return data_mod.generate_synthetic(
            classes=cfg.classes,
            per_class=cfg.per_class,
            image_dim=cfg.image_dim,
            audio_dim=cfg.audio_dim,
            latent_dim=cfg.latent_dim,
            noise_sigma=cfg.noise_sigma,
            seed=derive_seed(seed, 11),
            within_class_jitter=cfg.within_class_jitter,
        )
    return data_mod.load_csv_features(
        image_path=cfg.image_csv,
        audio_path=cfg.audio_csv,
        label_path=cfg.label_csv,
        combined_path=cfg.combined_csv,
    )


def default_min_count(train_size: int, participants: int) -> int:
    """Scale the reference floor (50 of an average 460 shard) to this run."""
    return max(1, round(train_size / participants * 50.0 / 460.0))


def _build_partitions(regime, cfg, groups, train_size: int, seed: int):
    if regime.kind == "centralized_baseline":
        everything = tuple(range(train_size))
        return {g: data_mod.Partition(g, (everything,)) for g in groups}
    if regime.kind in ("fl_baseline", "framework_balanced"):
        return {
            g: data_mod.partition_balanced(
                train_size, cfg.participants, derive_seed(seed, 21, GROUP_INDEX[g]), group=g
            )
            for g in groups
        }
    min_count = cfg.min_count
    if min_count is None:
        min_count = default_min_count(train_size, cfg.participants)
    partitioner = (
        data_mod.partition_unbalanced_paired
        if regime.kind == "framework_unbalanced_paired"
        else data_mod.partition_unbalanced_random
    )
    parts = partitioner(train_size, cfg.participants, derive_seed(seed, 22), min_count=min_count)
    return dict(zip(GROUP_ORDER, parts))


def setup_state(regime: ExperimentRegime, cfg, seed: int, train_size: int, model_cfg) -> FederationState:
    """Build bundles, partitions and participants for one seeded run."""
    if regime.is_framework:
        groups = GROUP_ORDER
        kind_map = FRAMEWORK_MODEL_KINDS
    else:
        groups = tuple(g for g in GROUP_ORDER if g in cfg.groups)
        if not groups:
            raise ConfigurationError(f"no valid groups in {cfg.groups!r}")
        kind_map = BASELINE_MODEL_KINDS

    partitions = _build_partitions(regime, cfg, groups, train_size, seed)
    bundles, participants, globals_ = {}, {}, {}
    local_epochs = cfg.local_epochs
    local_batch = cfg.batch_size if regime.kind == "centralized_baseline" else cfg.local_batch
    for group in groups:
        bundle = models.build(kind_map[group], model_cfg, derive_seed(seed, 31, GROUP_INDEX[group]))
        bundles[group] = bundle
        globals_[group] = bundle.params
        participants[group] = tuple(
            ParticipantState(pid, group, piece, local_epochs, local_batch)
            for pid, piece in enumerate(partitions[group].indices)
        )
    return FederationState(
        regime=regime,
        bundles=bundles,
        participants=participants,
        global_params=globals_,
        seed=seed,
        learning_rate=cfg.learning_rate,
        temperature=cfg.temperature,
        workers=cfg.workers,
    )


def run_single_seed(regime: ExperimentRegime, cfg, seed: int) -> dict:
    """One seeded end-to-end run: data, partitions, epochs, final test metrics."""
    log.info("running %s seed=%d for %d global epochs", regime.kind, seed, regime.global_epochs)
    dataset = _load_dataset(cfg, seed)
    spec = data_mod.SplitSpec(
        cfg.train_fraction, cfg.val_fraction, cfg.test_fraction, seed=derive_seed(seed, 12)
    )
    train, val, test = data_mod.split(dataset, spec)
    model_cfg = models.ModelConfig(
        image_dim=train.images.shape[1],
        audio_dim=train.audios.shape[1],
        class_count=dataset.class_count,
        embed_dim=cfg.embed_dim,
        scale=cfg.scale,
        leaky_slope=cfg.leaky_slope,
    )
    state = setup_state(regime, cfg, seed, len(train), model_cfg)
    for _ in range(regime.global_epochs):
        state = run_global_epoch(state, train, val)

    curves = {}
    for group in state.bundles:
        series = {}
        for key in state.history[0][group]:
            series[key] = [record[group][key] for record in state.history]
        curves[group] = series

    final = {}
    for group, bundle in state.bundles.items():
        params = state.global_params[group]
        if bundle.kind == "contrastive":
            final[group] = {
                "test_loss": evaluate_contrastive(bundle, params, test, state.temperature)
            }
        else:
            loss, acc, predictions = evaluate_supervised(bundle, params, test)
            cm = metrics.confusion(predictions, test.labels, dataset.class_count)
            normalized, _ = metrics.normalize(cm)
            final[group] = {
                "test_loss": loss,
                "test_accuracy": acc,
                "confusion": cm.counts.tolist(),
                "confusion_normalized": normalized.tolist(),
            }
    return {"seed": seed, "curves": curves, "final": final, "agg_calls": state.agg_calls}


def run_experiment(regime: ExperimentRegime, cfg) -> dict:
    """Run every configured seed and assemble the aggregate report."""
    runs = [run_single_seed(regime, cfg, seed) for seed in cfg.seeds]

    mean_curves: dict = {}
    mean_final: dict = {}
    for group in runs[0]["curves"]:
        mean_curves[group] = {}
        for series, values in runs[0]["curves"][group].items():
            stacked = np.array([run["curves"][group][series] for run in runs])
            mean_curves[group][series] = stacked.mean(axis=0).tolist()
        mean_final[group] = {}
        for field in ("test_loss", "test_accuracy"):
            if field in runs[0]["final"][group]:
                mean_final[group][field] = float(
                    np.mean([run["final"][group][field] for run in runs])
                )

    return {
        "regime": regime.kind,
        "global_epochs": regime.global_epochs,
        "seeds": list(cfg.seeds),
        "runs": runs,
        "mean": {"curves": mean_curves, "final": mean_final},
    }
