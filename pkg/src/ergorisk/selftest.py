"""Bundled invariant checks run by ``ergorisk selftest``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import check_gradients
from .autodiff.rng import Rng
from .autodiff.tensor import Tensor, precision
from .model import Trace, ViskGatConfig, forward, init_params
from .reba import assess, class_from_score, group_a, group_b, group_c
from .synth import figure_to_skeleton, upright_spec


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def _tiny_inputs(cfg: ViskGatConfig, rng: Rng):
    img = rng.random((3, cfg.image_size, cfg.image_size))
    pose = rng.random((cfg.pose_points, 2))
    return img, pose


def check_attention_rows(seed: int) -> CheckResult:
    cfg = ViskGatConfig.tiny()
    rng = Rng(seed)
    params = init_params(cfg, rng.child(0))
    trace = Trace()
    forward(*_tiny_inputs(cfg, rng.child(1)), params, cfg, trace=trace)
    worst = max(float(np.abs(w.sum(axis=-1) - 1.0).max()) for ws in trace.attention.values() for w in ws)
    return CheckResult("attention_row_sums", worst <= 1e-6, f"max |row sum - 1| = {worst:.2e}")


def check_layer_norm(seed: int) -> CheckResult:
    x = Rng(seed).normal(3.0, 5.0, (64, 48))
    with precision(np.float64):
        y = F.layer_norm(Tensor(x), Tensor(np.ones(48)), Tensor(np.zeros(48)), eps=1e-12).data
    mean = float(np.abs(y.mean(axis=-1)).max())
    var = float(np.abs(y.var(axis=-1) - 1.0).max())
    return CheckResult("layer_norm_stats", mean <= 1e-6 and var <= 1e-5, f"max |mean| = {mean:.2e}, max |var - 1| = {var:.2e}")


def check_primitive_grads(seed: int) -> CheckResult:
    rng = Rng(seed)
    worst = 0.0
    with precision(np.float64):
        x = Tensor(rng.normal(shape=(3, 5)), requires_grad=True)
        w = Tensor(rng.normal(shape=(5, 4)), requires_grad=True)
        g = Tensor(rng.normal(shape=4) + 1.0, requires_grad=True)
        b = Tensor(rng.normal(shape=4), requires_grad=True)
        c = Tensor(rng.normal(shape=(3, 4)))
        fn = lambda: F.sum(F.mul(F.softmax(F.layer_norm(F.gelu(F.matmul(x, w)), g, b), -1), c))  # noqa: E731
        worst = check_gradients(fn, [x, w, g, b]).max_rel_error
    return CheckResult("gradcheck_primitives", worst <= 1e-3, f"max relative error {worst:.2e}")


def check_model_grads(seed: int) -> CheckResult:
    cfg = ViskGatConfig.tiny()
    rng = Rng(seed)
    with precision(np.float64):
        params = init_params(cfg, rng.child(0))
        img, pose = _tiny_inputs(cfg, rng.child(1))
        c = Tensor(rng.child(2).normal(shape=cfg.num_classes))
        fn = lambda: F.sum(F.mul(forward(img, pose, params, cfg).logits, c))  # noqa: E731
        names = sorted(params)[:: max(1, len(params) // 12)]
        res = check_gradients(fn, [params[n] for n in names], max_entries=2, rng=rng.child(3))
    return CheckResult("gradcheck_tiny_model", res.ok(1e-3),
                       f"max relative error {res.max_rel_error:.2e} over {res.checked} entries")


def check_reba_fixture(seed: int) -> CheckResult:
    res = assess(figure_to_skeleton(upright_spec()))
    cells = [
        group_a(1, 1, 1) == 1,
        group_a(5, 3, 4) == 9,
        group_b(1, 1, 1) == 1,
        group_b(6, 2, 3) == 9,
        group_c(1, 1) == 1,
        group_c(12, 12) == 12,
        class_from_score(11) == 8,
        res.class_label == 1,
    ]
    return CheckResult("reba_fixture_walk", all(cells), f"{sum(cells)}/{len(cells)} fixture cells, upright class {res.class_label}")


CHECKS: list[Callable[[int], CheckResult]] = [
    check_attention_rows,
    check_layer_norm,
    check_primitive_grads,
    check_model_grads,
    check_reba_fixture,
]


def run_selftest(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in CHECKS]
