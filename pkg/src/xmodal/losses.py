"""Loss functions with exact gradients.

Each loss returns a LossValue carrying the scalar and the gradient with
respect to every differentiable input, so the trainer never needs
numeric differentiation.  Distances are Euclidean unless a loss says
otherwise.  Hinge terms use the inactive-side convention: the gradient
at the kink is 0.

The five losses:

  contrastive   ((1-Y)/2) d + (Y/2) max(0, alpha - d), Y=1 for a
                different-class pair
  triplet       max(0, d_ap - d_an + alpha)
  rtl           d_ap + 1/(d_an + eps), the margin-free reciprocal form
  softmax_rtl   cross-entropy on logits plus lambda * rtl
  cosine_align  (1 - cos(anchor, pos)) + max(0, cos(anchor, neg) - m),
                anchor held constant
"""

from dataclasses import dataclass, field

import numpy as np

RTL_EPS = 1e-8


@dataclass
class LossValue:
    """Scalar loss plus gradients keyed by input name."""

    value: float
    grads: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite loss value {self.value}")


def _pair(x1, x2):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape or x1.ndim != 1:
        raise ValueError(f"dim mismatch: {x1.shape} vs {x2.shape}")
    return x1, x2


def _dist(x1, x2):
    """Euclidean distance and d(dist)/dx1 (zero vector at coincidence)."""
    diff = x1 - x2
    d = float(np.linalg.norm(diff))
    grad = diff / d if d > 0 else np.zeros_like(diff)
    return d, grad


def contrastive(x1, x2, y, alpha):
    """Pairwise loss; y=0 pulls same-class pairs, y=1 pushes different-class
    pairs apart until their distance reaches alpha."""
    x1, x2 = _pair(x1, x2)
    if y not in (0, 1):
        raise ValueError(f"Y must be 0 or 1, got {y!r}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d, dgrad = _dist(x1, x2)
    if y == 0:
        value = 0.5 * d
        g1 = 0.5 * dgrad
    else:
        hinge = alpha - d
        if hinge > 0:
            value = 0.5 * hinge
            g1 = -0.5 * dgrad
        else:
            value = 0.0
            g1 = np.zeros_like(x1)
    return LossValue(value, {"x1": g1, "x2": -g1})


def _triplet_dists(x_a, x_p, x_n):
    x_a = np.asarray(x_a, dtype=np.float64)
    x_p, x_n = np.asarray(x_p, dtype=np.float64), np.asarray(x_n, dtype=np.float64)
    if not (x_a.shape == x_p.shape == x_n.shape) or x_a.ndim != 1:
        raise ValueError("anchor/positive/negative must share one dimension")
    d_ap, g_ap = _dist(x_a, x_p)
    d_an, g_an = _dist(x_a, x_n)
    return x_a, x_p, x_n, d_ap, g_ap, d_an, g_an


def triplet(x_a, x_p, x_n, alpha):
    """Margin triplet loss max(0, d_ap - d_an + alpha)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x_a, x_p, x_n, d_ap, g_ap, d_an, g_an = _triplet_dists(x_a, x_p, x_n)
    raw = d_ap - d_an + alpha
    if raw > 0:
        return LossValue(raw, {
            "x_a": g_ap - g_an,
            "x_p": -g_ap,
            "x_n": g_an,
        })
    zero = np.zeros_like(x_a)
    return LossValue(0.0, {"x_a": zero, "x_p": zero.copy(), "x_n": zero.copy()})


def rtl(x_a, x_p, x_n):
    """Reciprocal triplet loss d_ap + 1/(d_an + eps): margin-free, pushes the
    negative away with force falling off as the square of its distance."""
    x_a, x_p, x_n, d_ap, g_ap, d_an, g_an = _triplet_dists(x_a, x_p, x_n)
    inv = 1.0 / (d_an + RTL_EPS)
    # d/d(d_an) of 1/(d_an+eps) = -inv^2
    return LossValue(d_ap + inv, {
        "x_a": g_ap - inv * inv * g_an,
        "x_p": -g_ap,
        "x_n": inv * inv * g_an,
    })


def log_softmax(logits):
    """Stable log-softmax (max-subtraction) and the softmax itself."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be a vector")
    shifted = z - z.max()
    log_norm = np.log(np.sum(np.exp(shifted)))
    return shifted - log_norm, np.exp(shifted - log_norm)


def softmax_rtl(logits, class_id, x_a, x_p, x_n, mix_lambda):
    """Cross-entropy plus lambda-weighted RTL, the stage-1 training loss."""
    z = np.asarray(logits, dtype=np.float64)
    class_id = int(class_id)
    if not 0 <= class_id < z.shape[0]:
        raise ValueError(f"class {class_id} out of range for {z.shape[0]} logits")
    if mix_lambda < 0:
        raise ValueError(f"lambda must be non-negative, got {mix_lambda}")
    log_p, p = log_softmax(z)
    ce = -log_p[class_id]
    d_logits = p.copy()
    d_logits[class_id] -= 1.0
    r = rtl(x_a, x_p, x_n)
    grads = {"logits": d_logits}
    for k, g in r.grads.items():
        grads[k] = mix_lambda * g
    return LossValue(ce + mix_lambda * r.value, grads)


def _cosine(a, b):
    """cos(a, b) and the gradient wrt b (a treated as constant)."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    cos = float(np.dot(a, b)) / (na * nb)
    # grad wrt b: a/(|a||b|) - cos * b/|b|^2
    grad_b = a / (na * nb) - cos * b / (nb * nb)
    return cos, grad_b


def cosine_align(anchor, pos, neg, m):
    """Alignment loss: pull pos toward the anchor's direction, push neg away
    once its cosine exceeds the margin m.  The anchor is a fixed target;
    gradients flow to pos and neg only."""
    anchor = np.asarray(anchor, dtype=np.float64)
    pos, neg = np.asarray(pos, dtype=np.float64), np.asarray(neg, dtype=np.float64)
    if not (anchor.shape == pos.shape == neg.shape) or anchor.ndim != 1:
        raise ValueError("anchor/pos/neg must share one dimension")
    if np.linalg.norm(anchor) == 0:
        raise ValueError("zero-norm anchor has no direction to align to")
    if np.linalg.norm(pos) == 0 or np.linalg.norm(neg) == 0:
        raise ValueError("zero-norm embedding: cosine undefined")
    cos_p, grad_p = _cosine(anchor, pos)
    cos_n, grad_n = _cosine(anchor, neg)
    value = 1.0 - cos_p
    g_pos = -grad_p
    if cos_n - m > 0:
        value += cos_n - m
        g_neg = grad_n
    else:
        g_neg = np.zeros_like(neg)
    return LossValue(value, {"pos": g_pos, "neg": g_neg})
