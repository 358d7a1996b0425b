"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    # stencils whose relu activation pattern differed from the base point
    kink_crossings: int = 0
    redraws: int = 0

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error <= tol


# Denominator floor: gradients that are zero by symmetry (e.g. attention key
# biases, which softmax ignores) would otherwise compare noise against noise.
NORM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = NORM_FLOOR) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
    name: str = "",
) -> GradCheckResult:
    """Compare ``backward()`` gradients of the scalar ``fn()`` with central differences.

    ``inputs`` must be float64 tensors with ``requires_grad``. With
    ``max_entries`` set, a random subset of each input's entries is checked.
    """
    from .functional import record_relu_masks

    def evaluate() -> tuple[float, bytes]:
        with record_relu_masks() as masks:
            value = fn()
        return value, b"".join(masks)

    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    out, base = evaluate()
    out.backward()
    worst, checked, crossings = 0.0, 0, 0
    rng = rng or Rng(0)
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.permutation(flat.size)[:max_entries])
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp, mask_p = evaluate()
            flat[i] = orig - h
            fm, mask_m = evaluate()
            flat[i] = orig
            fp, fm = fp.item(), fm.item()
            crossings += mask_p != base or mask_m != base
            numeric[j] = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
        checked += len(idx)
    return GradCheckResult(name, worst, checked, crossings)


def _cases(rng: Rng):
    """(name, fn, inputs) triples covering every differentiable primitive and block."""
    from . import functional as F
    from . import nn

    def leaf(shape, low=-1.0, high=1.0, away_from_zero=False):
        x = rng.uniform(low, high, shape)
        if away_from_zero:
            x = np.where(np.abs(x) < 0.1, np.sign(x + 1e-12) * 0.1 + x, x)
        return Tensor(x, requires_grad=True)

    def weighted(out_fn, shape):
        c = Tensor(rng.normal(0.0, 1.0, shape))
        return lambda: F.sum(F.mul(out_fn(), c))

    a, b = leaf((3, 4)), leaf((3, 4))
    bb = leaf((4,))
    pos = leaf((3, 4), 0.5, 2.0)
    yield "add", weighted(lambda: F.add(a, bb), (3, 4)), [a, bb]
    yield "sub", weighted(lambda: F.sub(a, b), (3, 4)), [a, b]
    yield "mul", weighted(lambda: F.mul(a, bb), (3, 4)), [a, bb]
    yield "div", weighted(lambda: F.div(a, pos), (3, 4)), [a, pos]
    yield "neg", weighted(lambda: F.neg(a), (3, 4)), [a]
    yield "exp", weighted(lambda: F.exp(a), (3, 4)), [a]
    yield "log", weighted(lambda: F.log(pos), (3, 4)), [pos]
    yield "sqrt", weighted(lambda: F.sqrt(pos), (3, 4)), [pos]
    yield "square", weighted(lambda: F.square(a), (3, 4)), [a]
    r = leaf((3, 4), away_from_zero=True)
    yield "relu", weighted(lambda: F.relu(r), (3, 4)), [r]
    yield "gelu", weighted(lambda: F.gelu(a), (3, 4)), [a]
    yield "identity", weighted(lambda: F.identity(a), (3, 4)), [a]
    seed = int(rng.integers(0, 2**31))
    yield "dropout", weighted(lambda: F.dropout(a, 0.3, Rng(seed), train=True), (3, 4)), [a]
    yield "sum", lambda: F.sum(F.square(F.sum(a, axis=0))), [a]
    yield "mean", lambda: F.sum(F.square(F.mean(a, axis=1, keepdims=True))), [a]
    yield "reshape", weighted(lambda: F.reshape(a, (2, 6)), (2, 6)), [a]
    t3 = leaf((2, 3, 4))
    yield "transpose", weighted(lambda: F.transpose(t3, (2, 0, 1)), (4, 2, 3)), [t3]
    yield "swapaxes", weighted(lambda: F.swapaxes(t3, 0, 2), (4, 3, 2)), [t3]
    yield "concat", weighted(lambda: F.concat([a, b], axis=1), (3, 8)), [a, b]
    m1, m2 = leaf((2, 3, 4)), leaf((4, 5))
    yield "matmul", weighted(lambda: F.matmul(m1, m2), (2, 3, 5)), [m1, m2]
    w, bias = leaf((4, 5)), leaf((5,))
    yield "linear", weighted(lambda: F.linear(a, w, bias), (3, 5)), [a, w, bias]
    yield "softmax", weighted(lambda: F.softmax(a, axis=-1), (3, 4)), [a]
    yield "log_softmax", weighted(lambda: F.log_softmax(a, axis=0), (3, 4)), [a]
    g, be = leaf((4,), 0.5, 1.5), leaf((4,))
    yield "layer_norm", weighted(lambda: F.layer_norm(a, g, be), (3, 4)), [a, g, be]
    x, k, kb = leaf((2, 2, 5, 5)), leaf((3, 2, 3, 3)), leaf((3,))
    yield "conv2d", weighted(lambda: F.conv2d(x, k, kb, stride=2, padding=1), (2, 3, 3, 3)), [x, k, kb]
    q, kv = leaf((2, 3, 4)), leaf((2, 5, 4))
    att = nn.init_attention(rng.child(1), 4)
    for t in att.values():
        t.data = t.data.astype(np.float64)
    yield "multi_head_attention", weighted(lambda: nn.multi_head_attention(q, kv, kv, 2, att), (2, 3, 4)), \
        [q, kv] + [att[n] for n in sorted(att)]
    f = nn.init_ffn(rng.child(2), 4, 6)
    yield "ffn", weighted(lambda: nn.ffn(q, f), (2, 3, 4)), [q] + [f[n] for n in sorted(f)]
    blk = nn.init_block(rng.child(3), 4, 8)
    yield "transformer_block", weighted(lambda: nn.transformer_block(q, blk, 2), (2, 3, 4)), \
        [q] + [blk[n] for n in sorted(blk)]


def primitive_checks(seed: int = 0, h: float = 1e-4) -> list[GradCheckResult]:
    """Gradient-check every primitive in 64-bit precision."""
    from .tensor import precision

    rng = Rng(seed)
    with precision(np.float64):
        return [check_gradients(fn, inputs, h=h, name=name) for name, fn, inputs in _cases(rng)]


def model_check(config: str = "tiny", seed: int = 0, h: float = 1e-4, max_entries: Optional[int] = 4,
                max_redraws: int = 20) -> GradCheckResult:
    """Gradient-check the full network on random inputs, all parameters and both inputs.

    Central differences are only valid where the network is smooth across
    the stencil. A draw whose stencil flips any relu is discarded and the
    inputs and parameters are redrawn from the next substream of ``seed``.
    """
    from . import functional as F
    from .tensor import precision
    from ..model import ViskGatConfig, forward, init_params

    cfg = ViskGatConfig.preset(config)
    for attempt in range(max_redraws + 1):
        rng = Rng(seed) if attempt == 0 else Rng(seed).child(1000, attempt)
        with precision(np.float64):
            params = init_params(cfg, rng.child(0))
            img = Tensor(rng.child(1).random((3, cfg.image_size, cfg.image_size)), requires_grad=True)
            pose = Tensor(rng.child(2).random((cfg.pose_points, 2)), requires_grad=True)
            c = Tensor(rng.child(3).normal(0.0, 1.0, cfg.num_classes))
            fn = lambda: F.sum(F.mul(forward(img, pose, params, cfg).logits, c))  # noqa: E731
            inputs = [img, pose] + [params[n] for n in sorted(params)]
            res = check_gradients(fn, inputs, h=h, max_entries=max_entries, rng=rng.child(4), name=f"model[{config}]")
        if res.kink_crossings == 0:
            break
    res.redraws = attempt
    return res
