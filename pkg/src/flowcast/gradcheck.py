"""Central finite-difference verification of analytic gradients.

``grad_check`` evaluates a deterministic scalar-valued computation, runs
backward once, then probes parameter elements with central differences and
reports the worst relative disagreement.  Relative error is
``|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import DiffTensor, ParamRegistry
from .errors import ConfigError, NumericError


@dataclass
class ParamCheck:
    name: str
    n_checked: int
    max_rel_err: float
    worst_index: int


@dataclass
class GradCheckReport:
    eps: float
    n_checked: int
    max_rel_err: float
    per_param: list[ParamCheck]

    def worst(self) -> ParamCheck:
        return max(self.per_param, key=lambda c: c.max_rel_err)

    def format(self) -> str:
        lines = [f"{'parameter':<40} {'probed':>7} {'max rel err':>12}"]
        for c in self.per_param:
            lines.append(f"{c.name:<40} {c.n_checked:>7} {c.max_rel_err:>12.3e}")
        lines.append(f"overall max relative error: {self.max_rel_err:.3e} (eps={self.eps:g})")
        return "\n".join(lines)


def _eval_scalar(f: Callable[[], DiffTensor], context: str) -> float:
    out = f()
    if not isinstance(out, DiffTensor) or out.size != 1:
        raise ConfigError("grad_check requires f() to return a scalar DiffTensor")
    v = float(out.values.reshape(()))
    if not np.isfinite(v):
        raise NumericError(f"non-finite objective while probing {context}")
    return v


def grad_check(
    f: Callable[[], DiffTensor],
    params: ParamRegistry,
    eps: float = 1e-5,
    min_sample: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    Every parameter element is probed when the registry holds at most
    ``min_sample`` elements; otherwise a seeded random subsample of at least
    ``min_sample`` elements, spread over all parameters, is probed.  Parameter
    values are perturbed in place and restored, so ``f`` must re-read them on
    every call.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ConfigError(f"grad_check eps must lie in [1e-7, 1e-4], got {eps:g}")
    if len(params) == 0:
        raise ConfigError("grad_check needs at least one parameter")

    params.zero_grads()
    out = f()
    if not isinstance(out, DiffTensor) or out.size != 1:
        raise ConfigError("grad_check requires f() to return a scalar DiffTensor")
    if not np.isfinite(out.values).all():
        raise NumericError("non-finite objective value in grad_check")
    out.backward()

    analytic: dict[str, np.ndarray] = {}
    for name, t in params:
        g = t.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite analytic gradient in tensor {name!r}")
        analytic[name] = g.copy()

    entries = list(params)
    sizes = [t.size for _, t in entries]
    total = sum(sizes)
    if total <= min_sample:
        probes = [(i, j) for i, n in enumerate(sizes) for j in range(n)]
    else:
        rng = np.random.default_rng(seed)
        flat = rng.choice(total, size=min_sample, replace=False)
        bounds = np.cumsum([0] + sizes)
        probes = []
        for idx in sorted(flat.tolist()):
            i = int(np.searchsorted(bounds, idx, side="right") - 1)
            probes.append((i, idx - int(bounds[i])))

    stats = {name: ParamCheck(name, 0, 0.0, -1) for name, _ in entries}
    for i, j in probes:
        name, tensor = entries[i]
        flat_view = tensor.values.reshape(-1)
        orig = flat_view[j]
        flat_view[j] = orig + eps
        f_plus = _eval_scalar(f, f"{name}[{j}]")
        flat_view[j] = orig - eps
        f_minus = _eval_scalar(f, f"{name}[{j}]")
        flat_view[j] = orig

        g_fd = (f_plus - f_minus) / (2.0 * eps)
        g_an = analytic[name].reshape(-1)[j]
        rel = abs(g_an - g_fd) / max(1e-8, abs(g_an) + abs(g_fd))
        rec = stats[name]
        rec.n_checked += 1
        if rel > rec.max_rel_err:
            rec.max_rel_err = rel
            rec.worst_index = j

    checked = [stats[name] for name, _ in entries if stats[name].n_checked > 0]
    overall = max((c.max_rel_err for c in checked), default=0.0)
    return GradCheckReport(eps=eps, n_checked=len(probes), max_rel_err=overall, per_param=checked)
