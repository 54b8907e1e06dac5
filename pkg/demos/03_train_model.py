"""Train the small segmentation net end to end and round-trip a checkpoint.

Uses a reduced dataset and a slim architecture so the whole demo runs in
well under a minute; the package defaults (64x64 images, 500 train
images, 16/32/32 hidden channels, 30 epochs) give a noticeably better
model and are what the attack evaluations use.
"""

import os
import tempfile

import numpy as np

from segattack import (DatasetSpec, ModelConfig, SegModel, apsr, generate,
                       load_checkpoint, miou, predict, save_checkpoint, train)


def main():
    ds = generate(DatasetSpec(height=32, width=32, train_size=80, val_size=20,
                              seed=7))
    model = SegModel(ModelConfig(num_classes=4, hidden=(12, 16)),
                     ds.mean, ds.scale, init_seed=0)
    print("training (12 epochs on 80 images)...")
    result = train(model, ds.train, epochs=12, batch_size=8, seed=0)
    for i in (0, len(result.epoch_losses) // 2, -1):
        print(f"  epoch {i % len(result.epoch_losses) + 1:2d} "
              f"loss {result.epoch_losses[i]:.4f}")

    preds = [predict(model, im.image).labels for im in ds.val]
    truths = [im.labels for im in ds.val]
    acc = 1.0 - float(np.mean([apsr(p, t) for p, t in zip(preds, truths)]))
    print(f"val pixel accuracy {acc:.3f}, mIoU {miou(preds, truths, 4):.3f}")

    path = os.path.join(tempfile.gettempdir(), "segattack_demo.ckpt")
    save_checkpoint(path, model)
    reloaded = load_checkpoint(path)
    same = all(np.array_equal(a, b)
               for a, b in zip(model.params, reloaded.params))
    print(f"checkpoint round-trip bit-identical: {same} "
          f"({os.path.getsize(path)} bytes)")


if __name__ == "__main__":
    main()
