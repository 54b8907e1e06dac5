"""Run the three dense attack families against a freshly trained model.

Shows the standard picture: FGSM lands a quick hit, I-FGSM with the
n = min{eps+4, floor(1.25 eps)} iteration budget digs deeper at the same
eps, and PGD's random starts buy a little more still.  Perturbations are
measured in [0, 255] pixel units and live inside the eps-ball around the
clean image.
"""

import numpy as np

from segattack import (AttackConfig, DatasetSpec, ModelConfig, SegModel,
                       apsr, fgsm, generate, ifgsm, kurakin_iterations, pgd,
                       predict, train)


def main():
    ds = generate(DatasetSpec(height=32, width=32, train_size=80, val_size=10,
                              seed=7))
    model = SegModel(ModelConfig(num_classes=4, hidden=(12, 16)),
                     ds.mean, ds.scale, init_seed=0)
    print("training a victim model...")
    train(model, ds.train, epochs=12, batch_size=8, seed=0)

    images = ds.val
    clean = float(np.mean([apsr(predict(model, im.image).labels, im.labels)
                           for im in images]))
    print(f"clean APSR (error rate): {clean:.3f}\n")

    eps = 8.0
    print(f"eps = {eps:g}, schedule n = {kurakin_iterations(eps)}")
    runs = [
        ("fgsm", fgsm, AttackConfig(family="fgsm", eps=eps)),
        ("ifgsm", ifgsm, AttackConfig(family="ifgsm", eps=eps, alpha=1.0)),
        ("pgd", pgd, AttackConfig(family="pgd", eps=eps, alpha=1.0,
                                  iterations=20, restarts=2, seed=5)),
    ]
    for name, entry, cfg in runs:
        scores, linf = [], 0.0
        for im in images:
            res = entry(model, im.image, im.labels, cfg)
            scores.append(apsr(res.final_probs, im.labels))
            linf = max(linf, float(np.abs(res.perturbation).max()))
        print(f"  {name:6s} mean APSR {np.mean(scores):.3f}   "
              f"max |perturbation| {linf:.2f} <= eps")

    res = ifgsm(model, images[0].image, images[0].labels,
                AttackConfig(family="ifgsm", eps=eps))
    trace = ", ".join(f"{v:.2f}" for v in res.apsr_trace)
    print(f"\nper-iteration APSR on one image: [{trace}]")


if __name__ == "__main__":
    main()
