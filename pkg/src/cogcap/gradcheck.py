"""Central finite-difference checks of every differentiable module at float64.

Each case builds a small module and input, contracts the output with a fixed
random tensor to get a scalar, and compares autograd gradients with
``(f(x + h) - f(x - h)) / 2h`` on a seeded subset of coordinates of every
parameter and every floating input. A coordinate passes if any step in the
fixed ladder agrees within tolerance: a wrong analytic gradient disagrees at
every step, while a correct one only needs one step at which the difference
quotient is accurate (no kink inside [x - h, x + h], no roundoff swamping).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import torch
from torch import nn

STEP = 1e-5
# tried in order when the primary step disagrees: larger steps escape roundoff on
# tiny gradients, smaller ones avoid rectifier kinks and curvature of log terms
FALLBACK_STEPS = (1e-4, 1e-3, 1e-6, 1e-7)
MODULE_TOL = 1e-4
END_TO_END_TOL = 1e-3
END_TO_END_COORDS = 3
# denominators below this are treated as this (both gradients are then ~0)
ABS_FLOOR = 1e-6


@dataclass
class ModuleResult:
    module: str
    max_rel_error: float
    tolerance: float
    worst: str
    n_checked: int
    passed: bool
    seconds: float


@dataclass
class GradcheckReport:
    seed: int
    results: list[ModuleResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[ModuleResult]:
        return [r for r in self.results if not r.passed]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "results": [asdict(r) for r in self.results]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format(self) -> str:
        lines = [f"{'module':<28} {'max rel err':>12} {'tol':>8}  status  worst coordinate"]
        for r in self.results:
            status = "ok" if r.passed else "FAIL"
            lines.append(f"{r.module:<28} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e}  {status:<6}  {r.worst}")
        return "\n".join(lines) + "\n"


Case = tuple[nn.Module, dict[str, torch.Tensor], Callable[..., torch.Tensor]]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ABS_FLOOR)


def check_case(name: str, module: nn.Module, inputs: Mapping[str, torch.Tensor], fn: Callable[..., torch.Tensor],
               seed: int, tolerance: float = MODULE_TOL, coords: int = 6, step: float = STEP,
               faults: Mapping[str, Callable[[torch.Tensor], torch.Tensor]] | None = None) -> ModuleResult:
    """Compare gradients of ``fn(**inputs)`` (a scalar) for every parameter of ``module`` and floating input.

    ``faults`` maps parameter names to functions applied to their analytic
    gradient, so the checker's ability to localize errors can be exercised.
    """
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(seed)
    targets: list[tuple[str, torch.Tensor]] = [(f"param {n}", p) for n, p in module.named_parameters()]
    for n, x in inputs.items():
        if x.is_floating_point():
            x.requires_grad_(True)
            targets.append((f"input {n}", x))

    module.zero_grad(set_to_none=True)
    for _, t in targets:
        t.grad = None
    out = fn(**inputs)
    out.backward()
    analytic = {}
    for label, t in targets:
        grad = t.grad if t.grad is not None else torch.zeros_like(t)
        pname = label.removeprefix("param ")
        if faults and pname in faults:
            grad = faults[pname](grad.clone())
        analytic[label] = grad.detach().clone()

    worst, worst_label, n = 0.0, "-", 0
    with torch.no_grad():
        for label, t in targets:
            flat = t.view(-1)
            k = min(coords, flat.numel())
            idx = torch.randperm(flat.numel(), generator=g)[:k]
            for i in idx.tolist():
                a = analytic[label].view(-1)[i].item()
                err = math.inf
                for h in (step, *FALLBACK_STEPS):
                    err = min(err, relative_error(a, _central_difference(fn, inputs, flat, i, h)))
                    if err <= 0.01 * tolerance:
                        break
                n += 1
                if err > worst or worst_label == "-":
                    worst, worst_label = err, f"{label}[{i}]"
    return ModuleResult(name, worst, tolerance, worst_label, n, worst <= tolerance, time.perf_counter() - t0)


def _central_difference(fn, inputs, flat: torch.Tensor, i: int, h: float) -> float:
    orig = flat[i].item()
    flat[i] = orig + h
    f_plus = fn(**inputs).item()
    flat[i] = orig - h
    f_minus = fn(**inputs).item()
    flat[i] = orig
    return (f_plus - f_minus) / (2 * h)


def _contract(out: torch.Tensor, seed: int) -> torch.Tensor:
    """Fixed random weighting so every output element influences the scalar."""
    g = torch.Generator().manual_seed(seed + 17)
    w = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return (out * w).sum()


def _rand(shape, g, scale=1.0):
    return torch.randn(*shape, generator=g, dtype=torch.float64) * scale


def build_cases(seed: int) -> list[tuple[str, Case, float]]:
    """Named (module, inputs, scalar fn) cases with their tolerances."""
    from .attention_decoder import AttentionDecoder, gaussian_smooth, normalize_map
    from .context_head import GCN, AccidentHead, ContextHead, GRUCell, build_adjacency, pool_max
    from .encoders import EMBED_DIM, MultiHeadSelfAttention, PatchEmbed
    from .fusion import FusionStack, GlobalSummary, PaCa, T2ISFLayer
    from .losses import anticipation_loss, attention_loss, joint_objective
    from .model import CAPModel

    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    m = EMBED_DIM
    cases: list[tuple[str, Case, float]] = []

    def add(name, module, inputs, body, tol=MODULE_TOL):
        module = module.double()
        module.eval()
        cases.append((name, (module, inputs, lambda **kw: _contract(body(module, **kw), seed)), tol))

    add("encoders.patch_embed", PatchEmbed(m), {"images": _rand((1, 224, 224, 3), g).abs()},
        lambda mod, images: mod(images))
    add("encoders.mhsa", MultiHeadSelfAttention(m, 8), {"x": _rand((2, 49, m), g, 0.5)},
        lambda mod, x: mod(x))
    add("fusion.global_summary", GlobalSummary(m, 8, 0.0), {"x": _rand((2, 64, m), g, 0.5)},
        lambda mod, x: mod(x))
    add("fusion.paca", PaCa(m, 8, dropout=0.0), {"x": _rand((2, 64, m), g, 0.5)},
        lambda mod, x: mod(x))
    add("fusion.t2i_layer", T2ISFLayer(m, 8, 0.0), {"text": _rand((1, 15, m), g, 0.5), "vision": _rand((2, 49, m), g, 0.5)},
        lambda mod, text, vision: torch.cat(mod(text, vision), dim=-2))
    add("fusion.stack", FusionStack(3, m, 8, 0.0), {"text": _rand((1, 15, m), g, 0.5), "vision": _rand((2, 49, m), g, 0.5)},
        lambda mod, text, vision: mod(text, vision).fused())

    class _Adjacency(nn.Module):
        def forward(self, x):
            return build_adjacency(x)

    add("context.adjacency", _Adjacency(), {"x": _rand((2, 64, m), g, 0.1)}, lambda mod, x: mod(x))
    add("context.gcn", GCN(m, 512), {"x": _rand((2, 64, m), g, 0.5), "a": torch.softmax(_rand((2, 64, 64), g), -1)},
        lambda mod, x, a: mod(x, a))
    add("context.gru", GRUCell(512, 256), {"s": _rand((3, 512), g), "h": _rand((3, 256), g, 0.5)},
        lambda mod, s, h: mod(s, h))
    add("context.head", AccidentHead(256, 64), {"h": _rand((4, 256), g)}, lambda mod, h: mod(h))
    add("context.full", ContextHead(m), {"x": _rand((3, 64, m), g, 0.3)},
        lambda mod, x: mod.scores(pool_max(mod.context(x)))[0])

    dec = AttentionDecoder()
    add("decoder.raw", dec, {"c": _rand((2, 64, 512), g, 0.5)}, lambda mod, c: mod.raw(c))
    dec_train = AttentionDecoder().double()
    cases.append(("decoder.raw.batchnorm_train", (dec_train, {"c": _rand((3, 64, 512), g, 0.5)},
                                                  lambda c: _contract(dec_train.train().raw(c), seed)), MODULE_TOL))

    class _Smooth(nn.Module):
        def forward(self, x):
            return normalize_map(gaussian_smooth(x))

    add("decoder.smooth_normalize", _Smooth(), {"x": _rand((2, 64, 64), g).abs() + 0.1}, lambda mod, x: mod(x))

    class _Losses(nn.Module):
        def forward(self, d_logits, p_logits):
            pred = torch.softmax(d_logits.flatten(-2), -1).view_as(d_logits)
            gt = torch.softmax(torch.linspace(-1, 1, 64 * 64, dtype=torch.float64), 0).view(1, 64, 64).expand_as(pred)
            p = torch.sigmoid(p_logits)
            L_d = attention_loss(gt, pred)
            L_a = anticipation_loss(p, True, 5, 30.0) + anticipation_loss(p, False)
            return joint_objective(L_d, L_a, 5.0).reshape(1)

    add("losses", _Losses(), {"d_logits": _rand((2, 64, 64), g), "p_logits": _rand((12,), g)},
        lambda mod, d_logits, p_logits: mod(d_logits, p_logits))

    class _EndToEnd(nn.Module):
        def __init__(self):
            super().__init__()
            self.model = CAPModel(vocab_size=12, t2i_layers=3, dropout=0.0)

        def forward(self, images, gt_logits):
            from .losses import anticipation_loss as la, attention_loss as ld

            gt = torch.softmax(gt_logits.flatten(-2), -1).view_as(gt_logits)
            ids = torch.tensor([[2, 3, 4, 5, 6, 7, 0, 0, 0, 0, 0, 0, 0, 0, 0]])
            out = self.model.forward_clip(images, ids)
            return joint_objective(ld(gt, out.maps), la(out.p_hat, True, 1, 30.0), 5.0).reshape(1)

    e2e = _EndToEnd().double()
    e2e.eval()
    gt_logits = _rand((2, 64, 64), g)
    images = _rand((2, 224, 224, 3), g).abs().clamp(max=1.0)
    cases.append(("end_to_end", (e2e, {"images": images, "gt_logits": gt_logits},
                                 lambda images, gt_logits: e2e(images, gt_logits).sum()),
                  END_TO_END_TOL))
    return cases


def run(seed: int = 0, coords: int = 6, only: set[str] | None = None,
        faults: Mapping[str, Callable[[torch.Tensor], torch.Tensor]] | None = None) -> GradcheckReport:
    """Run every case (or those named in ``only``) and collect per-module maxima."""
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        report = GradcheckReport(seed)
        for name, (module, inputs, fn), tol in build_cases(seed):
            if only and name not in only:
                continue
            module_faults = None
            if faults:
                module_faults = {k.split(":", 1)[1]: f for k, f in faults.items() if k.split(":", 1)[0] == name}
            # the full model has ~60 tensors at ~0.1 s per evaluation, so sample fewer coordinates
            n = min(coords, END_TO_END_COORDS) if name == "end_to_end" else coords
            report.results.append(check_case(name, module, inputs, fn, seed, tol, n, faults=module_faults))
        return report
    finally:
        torch.set_default_dtype(prev)


def scale_fault(factor: float = 1.01) -> Callable[[torch.Tensor], torch.Tensor]:
    """A fault that rescales the analytic gradient."""
    return lambda grad: grad * factor


def main_summary(report: GradcheckReport) -> str:
    verdict = "PASS" if report.passed else "FAIL"
    return report.format() + f"overall: {verdict} (seed {report.seed})\n"
