"""Builders for the four model topologies.

All models are assembled from two dense towers with a shared parameter
key contract: the image tower owns ``img.enc.*`` + ``img.proj.*``, the
audio tower ``aud.enc.*`` + ``aud.proj.*``. Because the supervised
classifiers, the late-fusion baseline, and the contrastive model all
spell their towers with the same keys and shapes, the aggregation server
can discover "the same part" of any two models by key intersection.

Reference widths (before scaling): image encoder 512/256/128 (a dense
stand-in for a convolutional backbone), audio encoder 104/977/365,
projector 703 -> 41 on both sides, then a class output layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import nn
from .errors import ConfigurationError, IncompatibleMapsError
from .nn import LayerSpec, Network, ParameterMap

IMAGE_ENCODER_WIDTHS = (512, 256, 128)
AUDIO_ENCODER_WIDTHS = (104, 977, 365)
PROJECTOR_HIDDEN_WIDTH = 703
PROJECTOR_OUT_WIDTH = 41
MIN_HIDDEN_WIDTH = 4

KINDS = ("image_classifier", "audio_classifier", "late_fusion", "contrastive")


@dataclass(frozen=True)
class ModelConfig:
    """Input dims, class count, and the desk-scale width multiplier.

    ``scale=1`` reproduces the reference widths; the default 0.25 shrinks
    every hidden width (floored at 4) so experiments run in minutes.
    ``embed_dim`` overrides the projector output width on both the
    supervised and contrastive sides, keeping their keys shape-compatible.
    """

    image_dim: int
    audio_dim: int
    class_count: int = 9
    embed_dim: int | None = None
    scale: float = 0.25
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.image_dim < 1 or self.audio_dim < 1:
            raise ConfigurationError("input dims must be positive")
        if self.class_count < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.class_count}")
        if self.scale <= 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be positive, got {self.embed_dim}")

    def scaled(self, width: int) -> int:
        """Hidden width after scaling, floored at MIN_HIDDEN_WIDTH."""
        return max(MIN_HIDDEN_WIDTH, int(width * self.scale))

    @property
    def embed_width(self) -> int:
        """Projector output width; shared by all towers so keys stay compatible."""
        return self.embed_dim if self.embed_dim is not None else self.scaled(PROJECTOR_OUT_WIDTH)


@dataclass(frozen=True)
class ModelBundle:
    """A built model: named sub-networks over one merged parameter map.

    ``shared_prefixes`` lists the key prefixes this model exposes to
    cross-group aggregation (encoder + projector, never output layers).
    """

    kind: str
    networks: Mapping[str, Network]
    params: ParameterMap
    shared_prefixes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "networks", MappingProxyType(dict(self.networks)))


def _tower_layers(side: str, in_dim: int, encoder_widths, activation: str, cfg: ModelConfig):
    """Encoder + projector layer specs for one modality tower.

    The final projector layer is linear: its output is the embedding fed
    to cosine similarity on the contrastive side and to the class output
    layer on the supervised side.
    """
    layers = []
    prev = in_dim
    for i, width in enumerate(encoder_widths):
        out = cfg.scaled(width)
        layers.append(LayerSpec(prev, out, activation, f"{side}.enc.{i}", cfg.leaky_slope))
        prev = out
    hidden = cfg.scaled(PROJECTOR_HIDDEN_WIDTH)
    layers.append(LayerSpec(prev, hidden, activation, f"{side}.proj.0", cfg.leaky_slope))
    layers.append(LayerSpec(hidden, cfg.embed_width, "identity", f"{side}.proj.1"))
    return layers


def _image_tower(cfg: ModelConfig):
    return _tower_layers("img", cfg.image_dim, IMAGE_ENCODER_WIDTHS, "leaky_relu", cfg)


def _audio_tower(cfg: ModelConfig):
    return _tower_layers("aud", cfg.audio_dim, AUDIO_ENCODER_WIDTHS, "relu", cfg)


def _init_params(layer_groups, seed: int) -> ParameterMap:
    # One rng stream, drawn in fixed layer order across all sub-networks.
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    entries = {}
    for layers in layer_groups:
        for spec in layers:
            bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            entries[spec.weight_key] = rng.uniform(-bound, bound, (spec.in_dim, spec.out_dim))
            entries[spec.bias_key] = np.zeros(spec.out_dim)
    return ParameterMap._adopt(entries)


def build_image_classifier(cfg: ModelConfig, seed: int) -> ModelBundle:
    """Dense encoder + projector + class output layer for image features."""
    layers = _image_tower(cfg) + [
        LayerSpec(cfg.embed_width, cfg.class_count, "identity", "img.out.0")
    ]
    params = _init_params([layers], seed)
    net = Network(tuple(layers), params)
    return ModelBundle("image_classifier", {"img": net}, params, ("img.enc", "img.proj"))


def build_audio_classifier(cfg: ModelConfig, seed: int) -> ModelBundle:
    """Deep MLP (encoder + projector + class output layer) for audio features."""
    layers = _audio_tower(cfg) + [
        LayerSpec(cfg.embed_width, cfg.class_count, "identity", "aud.out.0")
    ]
    params = _init_params([layers], seed)
    net = Network(tuple(layers), params)
    return ModelBundle("audio_classifier", {"aud": net}, params, ("aud.enc", "aud.proj"))


def build_late_fusion(cfg: ModelConfig, seed: int) -> ModelBundle:
    """Both towers concatenated into a single supervised output layer."""
    img_layers = _image_tower(cfg)
    aud_layers = _audio_tower(cfg)
    fus_layers = [LayerSpec(2 * cfg.embed_width, cfg.class_count, "identity", "fus.out.0")]
    params = _init_params([img_layers, aud_layers, fus_layers], seed)
    networks = {
        "img": Network(tuple(img_layers), params),
        "aud": Network(tuple(aud_layers), params),
        "fus": Network(tuple(fus_layers), params),
    }
    return ModelBundle(
        "late_fusion", networks, params, ("img.enc", "img.proj", "aud.enc", "aud.proj")
    )


def build_contrastive(cfg: ModelConfig, seed: int) -> ModelBundle:
    """Dual towers projecting both modalities into one embedding space."""
    img_layers = _image_tower(cfg)
    aud_layers = _audio_tower(cfg)
    params = _init_params([img_layers, aud_layers], seed)
    networks = {
        "img": Network(tuple(img_layers), params),
        "aud": Network(tuple(aud_layers), params),
    }
    return ModelBundle(
        "contrastive", networks, params, ("img.enc", "img.proj", "aud.enc", "aud.proj")
    )


def build(kind: str, cfg: ModelConfig, seed: int) -> ModelBundle:
    builders = {
        "image_classifier": build_image_classifier,
        "audio_classifier": build_audio_classifier,
        "late_fusion": build_late_fusion,
        "contrastive": build_contrastive,
    }
    if kind not in builders:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return builders[kind](cfg, seed)


def output_class_count(bundle: ModelBundle) -> int:
    """Width of the supervised output layer."""
    heads = {"image_classifier": "img", "audio_classifier": "aud", "late_fusion": "fus"}
    if bundle.kind not in heads:
        raise ConfigurationError(f"{bundle.kind!r} has no supervised head")
    return bundle.networks[heads[bundle.kind]].layers[-1].out_dim


def shared_keys(a: ParameterMap, b: ParameterMap) -> list[str]:
    """Sorted key intersection of two maps; shape conflicts are errors, not drops."""
    keys = []
    for key in a:
        if key in b:
            if a[key].shape != b[key].shape:
                raise IncompatibleMapsError(
                    f"key {key!r} present in both maps with shapes "
                    f"{a[key].shape} vs {b[key].shape}"
                )
            keys.append(key)
    return keys


# ---------------------------------------------------------------------------
# Training-facing forward/backward per bundle kind. These compose nn.forward /
# nn.backward across the bundle's sub-networks and merge the gradient maps, so
# the federation layer can treat every model as (params, batch) -> gradients.
# ---------------------------------------------------------------------------


def supervised_logits(bundle: ModelBundle, params: ParameterMap, image=None, audio=None):
    """Forward pass to class logits. Returns (logits, aux) where aux replays backward."""
    if bundle.kind == "image_classifier":
        logits, tape = nn.forward(bundle.networks["img"].with_params(params), image)
        return logits, ("img", tape)
    if bundle.kind == "audio_classifier":
        logits, tape = nn.forward(bundle.networks["aud"].with_params(params), audio)
        return logits, ("aud", tape)
    if bundle.kind == "late_fusion":
        z_img, tape_img = nn.forward(bundle.networks["img"].with_params(params), image)
        z_aud, tape_aud = nn.forward(bundle.networks["aud"].with_params(params), audio)
        fused = np.concatenate([z_img, z_aud], axis=1)
        logits, tape_fus = nn.forward(bundle.networks["fus"].with_params(params), fused)
        return logits, ("fus", tape_img, tape_aud, tape_fus, z_img.shape[1])
    raise ConfigurationError(f"{bundle.kind!r} has no supervised head")


def supervised_param_grads(bundle: ModelBundle, params: ParameterMap, aux, grad_logits) -> ParameterMap:
    """Backward pass matching :func:`supervised_logits`; returns merged gradients."""
    if aux[0] in ("img", "aud"):
        grads, _ = nn.backward(bundle.networks[aux[0]].with_params(params), aux[1], grad_logits)
        return grads
    _, tape_img, tape_aud, tape_fus, width = aux
    fus_grads, grad_fused = nn.backward(bundle.networks["fus"].with_params(params), tape_fus, grad_logits)
    img_grads, _ = nn.backward(bundle.networks["img"].with_params(params), tape_img, grad_fused[:, :width])
    aud_grads, _ = nn.backward(bundle.networks["aud"].with_params(params), tape_aud, grad_fused[:, width:])
    merged = dict(fus_grads)
    merged.update(img_grads)
    merged.update(aud_grads)
    return ParameterMap._adopt(merged)


def predict_proba(bundle: ModelBundle, params: ParameterMap, image=None, audio=None) -> np.ndarray:
    """Class probabilities (softmax over the supervised logits)."""
    logits, _ = supervised_logits(bundle, params, image=image, audio=audio)
    return nn.softmax(logits)


def contrastive_embeddings(bundle: ModelBundle, params: ParameterMap, image, audio):
    """Both towers' embeddings for paired batches. Returns (z_img, z_aud, aux)."""
    if bundle.kind != "contrastive":
        raise ConfigurationError(f"{bundle.kind!r} is not a contrastive model")
    z_img, tape_img = nn.forward(bundle.networks["img"].with_params(params), image)
    z_aud, tape_aud = nn.forward(bundle.networks["aud"].with_params(params), audio)
    return z_img, z_aud, (tape_img, tape_aud)


def contrastive_param_grads(bundle: ModelBundle, params: ParameterMap, aux, grad_z_img, grad_z_aud) -> ParameterMap:
    """Backward pass through both towers; returns merged gradients."""
    tape_img, tape_aud = aux
    img_grads, _ = nn.backward(bundle.networks["img"].with_params(params), tape_img, grad_z_img)
    aud_grads, _ = nn.backward(bundle.networks["aud"].with_params(params), tape_aud, grad_z_aud)
    merged = dict(img_grads)
    merged.update(aud_grads)
    return ParameterMap._adopt(merged)
