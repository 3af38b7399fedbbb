"""End-to-end desk-scale pipeline: pretrain, transfer, fine-tune, describe, classify.

The source task is object-centric glyph recognition; the target task is
glyph-world scene classification. :func:`run_ablation` trains everything once
per seed and scores the descriptor variants compared in the ablation study.
"""

from dataclasses import dataclass, field, replace
import time

import numpy as np

from .descriptor import DescriptorPipeline, assemble
from .network import (
    TrainConfig,
    TransferNetSpec,
    accuracy,
    build_network,
    extract_conv_features,
    finetune,
    graft,
    pretrain,
    toy_spec,
    train_transfernet,
)
from .pyramid import PatchSpec, PyramidSpec, extract_patches, resize
from .svm import evaluate, train_svm
from .synth import SynthConfig, generate_dataset, generate_glyph_dataset


@dataclass
class PipelineConfig:
    seed: int = 0
    source_per_class: int = 60
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(lr=3e-4, epochs=20, batch_size=16))
    transfer: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, epochs=10, batch_size=32))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(lr=3e-4, epochs=5, batch_size=32))
    hidden: int = 64
    train_patches: PatchSpec = field(default_factory=lambda: PatchSpec(32, 16))
    patches: PatchSpec = field(default_factory=lambda: PatchSpec(32, 8))
    scales: tuple = (0.75, 1.0, 1.25)
    su_blocks: int = 4
    su_prob: float = 0.5
    width: tuple = (8, 16)
    svm_C: float = 2000.0
    svm_epochs: int = 1000
    svm_center: bool = True

    def seeded(self, seed):
        """Copy with every stage's seed derived from ``seed``."""
        return replace(
            self,
            seed=seed,
            pretrain=replace(self.pretrain, seed=seed),
            transfer=replace(self.transfer, seed=seed + 1),
            finetune=replace(self.finetune, seed=seed + 2),
        )


def image_patches(images, labels, spec, base=None):
    """Dense patches from every image (optionally resized first) with the image's label."""
    out, out_labels = [], []
    for img, lbl in zip(images, labels):
        if base is not None:
            img = resize(img, base)
        p, _ = extract_patches(img, spec)
        out.append(p)
        out_labels.append(np.full(len(p), lbl, dtype=np.int64))
    return np.concatenate(out), np.concatenate(out_labels)


@dataclass
class TrainedModels:
    base: object
    transfernet: object
    net_w: object
    net_su: object
    transfer_accuracy: float
    finetune_accuracy: float
    logs: dict


def source_dataset(cfg, synth=None):
    """Single-glyph source images rendered with the scene generator's glyph settings."""
    synth = synth or SynthConfig()
    return generate_glyph_dataset(
        cfg.source_per_class, size=cfg.patches.side, scale_range=synth.scale_range, glyph_size=synth.glyph_size,
        intensity_range=synth.intensity_range, noise_std=synth.noise_std, seed=cfg.seed + 1000,
    )


def train_models(train_images, train_labels, n_classes, cfg, log=None, source=None):
    """Run the transfer procedure and return both fine-tuned networks."""
    cfg = cfg.seeded(cfg.seed)
    logs = {}
    source = source if source is not None else source_dataset(cfg)
    spec = toy_spec(source.n_classes, hidden=cfg.hidden, size=cfg.patches.side, width=tuple(cfg.width))
    base = build_network(spec, seed=cfg.seed)
    base, logs["pretrain"] = pretrain(base, source.images, source.labels, cfg.pretrain, log=log)

    patches, labels = image_patches(train_images, train_labels, cfg.train_patches)
    feats = extract_conv_features(base, patches)
    tspec = TransferNetSpec(feats.shape[1], n_classes, hidden=cfg.hidden)
    tnet, logs["transfer"] = train_transfernet(feats, labels, tspec, cfg.transfer, log=log)
    transfer_acc = accuracy(tnet, feats, labels)

    combined = graft(base, tnet)
    net_w, logs["finetune_w"] = finetune(combined, patches, labels, cfg.finetune, with_su=False, log=log)
    net_su, logs["finetune_su"] = finetune(
        combined, patches, labels, cfg.finetune, with_su=True, su_n=cfg.su_blocks, su_p=cfg.su_prob, log=log
    )
    return TrainedModels(base, tnet, net_w, net_su, transfer_acc, accuracy(net_w, patches, labels), logs)


def descriptor_variants(pipeline, images):
    """Per-image descriptors for every ablation variant, computed from one forward pass per scale."""
    variants = {k: [] for k in ("combined", "baseline", "modified", "no_pyramid", "mean_pool")}
    base_index = list(pipeline.pyramid.scales).index(1.0)
    v = pipeline.net_w.conv_output_shape()[2]
    for img in images:
        sf = pipeline.scale_patch_features(img)
        full = assemble(sf, "max")
        variants["combined"].append(full)
        variants["baseline"].append(full[:v])
        variants["modified"].append(full[v:])
        variants["no_pyramid"].append(assemble([sf[base_index]], "max"))
        variants["mean_pool"].append(assemble(sf, "mean"))
    return {k: np.stack(x) for k, x in variants.items()}


def run_ablation(seed, synth=None, cfg=None, log=None):
    """Train on one synthetic split and return test accuracy per descriptor variant."""
    cfg = (cfg or PipelineConfig()).seeded(seed)
    synth = synth or SynthConfig(seed=seed)
    if synth.seed != seed:
        synth = replace(synth, seed=seed)
    train, test = generate_dataset(synth)
    t0 = time.time()
    models = train_models(train.images, train.labels, train.n_classes, cfg, log=log, source=source_dataset(cfg, synth))
    pipeline = DescriptorPipeline(models.net_w, models.net_su, PyramidSpec(synth.canvas, cfg.scales), cfg.patches)
    d_train = descriptor_variants(pipeline, train.images)
    d_test = descriptor_variants(pipeline, test.images)
    result = {"seed": seed, "transfer_accuracy": models.transfer_accuracy, "finetune_accuracy": models.finetune_accuracy}
    for name in d_train:
        svm = train_svm(d_train[name], train.labels, C=cfg.svm_C, epochs=cfg.svm_epochs,
                        n_classes=train.n_classes, center=cfg.svm_center)
        result[name] = evaluate(svm, d_test[name], test.labels)[0]
        result[name + "_train"] = evaluate(svm, d_train[name], train.labels)[0]
    result["seconds"] = time.time() - t0
    return result
