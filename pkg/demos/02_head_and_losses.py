"""Poke at the projection head and the training losses.

The head is two dense layers (relu between them) that map visual
features to a 256-dimensional embedding, plus a linear classifier on
top of the embedding.  Training mixes a softmax term on the classifier
logits with a reciprocal triplet term on the embeddings, and stage two
swaps in a cosine loss against fixed genetic anchors.  This script
evaluates each loss on hand-sized inputs and checks one analytic
gradient against central finite differences.

Run:  python3 demos/02_head_and_losses.py
"""

import numpy as np

from xmodal import embednet, losses


def main():
    rng = np.random.default_rng(3)

    params = embednet.init_head(d_in=10, hidden=8, embed_dim=6,
                                n_classes=4, seed=0)
    x = rng.normal(size=(5, 10))
    emb, logits, cache = embednet.forward(params, x)
    print("forward pass on a 5-row batch:")
    print(f"  embeddings {emb.shape}, logits {logits.shape}")
    print(f"  classifier row norms at init: "
          f"{np.round(np.linalg.norm(params.Wc, axis=1), 3)}\n")

    anchor = rng.normal(size=6)
    pos = anchor + 0.1 * rng.normal(size=6)
    neg = rng.normal(size=6)

    print("losses on one (anchor, positive, negative) triple:")
    lv = losses.contrastive(anchor, pos, 0.0, alpha=1.0)
    print(f"  contrastive, same-class pair      {lv.value:8.4f}")
    lv = losses.contrastive(anchor, neg, 1.0, alpha=1.0)
    print(f"  contrastive, cross-class pair     {lv.value:8.4f}")
    lv = losses.triplet(anchor, pos, neg, alpha=0.2)
    print(f"  plain triplet, margin 0.2         {lv.value:8.4f}")
    lv = losses.rtl(anchor, pos, neg)
    print(f"  reciprocal triplet (margin free)  {lv.value:8.4f}")
    lv = losses.cosine_align(anchor, pos, neg, m=0.5)
    print(f"  cosine alignment, margin 0.5      {lv.value:8.4f}\n")

    # the mixed stage-1 objective, on real head outputs
    class_id = 2
    mixed = losses.softmax_rtl(logits[0], class_id, emb[0], emb[1], emb[2],
                               mix_lambda=0.01)
    print(f"stage-1 objective on row 0 (true class {class_id}):")
    print(f"  softmax + 0.01 * rtl = {mixed.value:.4f}\n")

    # spot-check the rtl gradient with central differences
    def f(v):
        return losses.rtl(v, pos, neg).value

    analytic = losses.rtl(anchor, pos, neg).grads["x_a"]
    step = 1e-6
    numeric = np.zeros_like(anchor)
    for i in range(anchor.size):
        up, down = anchor.copy(), anchor.copy()
        up[i] += step
        down[i] -= step
        numeric[i] = (f(up) - f(down)) / (2 * step)
    worst = float(np.max(np.abs(analytic - numeric)))
    print("gradient spot check, d rtl / d anchor vs central differences:")
    print(f"  max abs deviation {worst:.3e}")

    # the same backward machinery trains the head end to end
    d_emb = rng.normal(size=emb.shape)
    d_logits = rng.normal(size=logits.shape)
    grads = embednet.backward(cache, d_emb, d_logits)
    print("\nbackward pass returns one gradient per parameter field:")
    for name in embednet.FIELDS:
        g = getattr(grads, name)
        print(f"  {name:3s} shape {str(g.shape):10s} |g|_max {np.abs(g).max():.4f}")


if __name__ == "__main__":
    main()
