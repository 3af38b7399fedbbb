"""Train both networks on a synthetic scene split, classify it, and draw a heat map.

Run: python3 demos/transfer_pipeline.py [output-dir]
Takes a couple of minutes on one CPU.
"""

import sys
from pathlib import Path

import numpy as np

from s2ica.descriptor import DescriptorPipeline, contribution_map
from s2ica.imageio import save_image
from s2ica.pipeline import PipelineConfig, source_dataset, train_models
from s2ica.pyramid import PyramidSpec
from s2ica.svm import evaluate, train_svm
from s2ica.synth import SynthConfig, generate_dataset


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    synth = SynthConfig(seed=0)
    train, test = generate_dataset(synth)
    print(f"{len(train.labels)} train / {len(test.labels)} test scenes, {train.n_classes} classes")

    cfg = PipelineConfig(seed=0)
    models = train_models(train.images, train.labels, train.n_classes, cfg, source=source_dataset(cfg, synth))
    print(f"TransferNet patch accuracy {models.transfer_accuracy:.3f}, after fine-tuning {models.finetune_accuracy:.3f}")
    print("grafted census:", models.net_w.census(), "with SU:", models.net_su.census())

    pipe = DescriptorPipeline(models.net_w, models.net_su, PyramidSpec(synth.canvas, cfg.scales), cfg.patches)
    d_train, d_test = pipe.describe_many(train.images), pipe.describe_many(test.images)
    print("descriptor length", d_train.shape[1])

    svm = train_svm(d_train, train.labels, C=cfg.svm_C, epochs=cfg.svm_epochs, center=cfg.svm_center)
    acc, cm = evaluate(svm, d_test, test.labels)
    print(f"layout-stress test accuracy {acc:.3f}\nconfusion matrix\n{cm}")

    cmap = contribution_map(test.images[0], pipe, svm, int(test.labels[0]))
    save_image(out / "scene.pgm", test.images[0])
    save_image(out / "heatmap.pgm", cmap.render())
    print("wrote", out / "scene.pgm", "and", out / "heatmap.pgm")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo-run"))
