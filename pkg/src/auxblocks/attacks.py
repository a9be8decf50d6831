"""Adversarial example generation.

Gradient attacks (FGSM, PGD, the adaptive variants, per-head attacks)
differentiate a chosen loss with respect to the input through the autodiff
graph; the boundary attack sees nothing but a label-out callable. All
attacks are pure functions of (frozen model, inputs, config, seed): they
never mutate parameters, every output lies in [0, 1], and L-inf budgeted
outputs stay inside the epsilon ball around their start point.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .models import Model
from .tensor import Tensor, cross_entropy, cw_margin

LossFn = Callable[["Tensor", np.ndarray], "Tensor"]
PredictFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class AttackConfig:
    family: str = "pgd"
    epsilon: float = 0.3
    step_size: float = 0.1
    iterations: int = 5
    random_start: bool = False
    targeted: bool = False
    target_class: Optional[int] = None
    cw_kappa: float = 0.0
    cw_search_steps: int = 6
    cw_iterations: int = 200
    cw_lr: float = 1e-2
    cw_initial_c: float = 1e-2
    max_queries: int = 5000
    source_step: float = 1e-2
    orth_step: float = 1e-2
    seed: int = 0

    FAMILIES = ("fgsm", "pgd", "cw_l2", "boundary", "adp_fgsm", "adp_pgd")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class AdvBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    success: np.ndarray          # bool per example, judged by the supplied predict fn
    linf: np.ndarray             # max-abs distortion per example
    l2: np.ndarray               # euclidean distortion per example
    queries: np.ndarray          # gradient steps or decision queries per example

    def __post_init__(self):
        assert self.originals.shape == self.adversarials.shape


@contextlib.contextmanager
def frozen(model: Model):
    """Temporarily stop recording parameter gradients (input gradients still flow)."""
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def _check_range(x: np.ndarray) -> None:
    if x.min() < -1e-6 or x.max() > 1 + 1e-6:
        raise ValueError("attack inputs must lie in [0, 1]")


def _distortion(orig: np.ndarray, adv: np.ndarray):
    delta = (adv - orig).reshape(len(orig), -1)
    return np.abs(delta).max(axis=1), np.sqrt((delta ** 2).sum(axis=1))


CHUNK = 512  # bound on examples differentiated at once (keeps im2col buffers small)


def _chunks(n: int, size: int = CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# ---------------------------------------------------------------------------
# loss selectors: callables of (input tensor, labels) -> scalar loss
# ---------------------------------------------------------------------------


def public_loss(model: Model) -> LossFn:
    """Cross-entropy of the backbone output only (what a static adversary sees)."""
    def fn(xt: Tensor, y: np.ndarray) -> Tensor:
        return cross_entropy(model.forward_public(xt), y)[0]
    return fn


def block_loss(model: Model, block_index: int) -> LossFn:
    """Cross-entropy of a single head; index m selects the backbone."""
    m = model.num_aux
    if not 0 <= block_index <= m:
        raise ValueError(f"block index {block_index} outside [0, {m}]")

    def fn(xt: Tensor, y: np.ndarray) -> Tensor:
        outputs = model.forward_all(xt)
        return cross_entropy(outputs[block_index], y)[0]
    return fn


def adp_loss_fn(model: Model) -> LossFn:
    """Combined defense loss: unweighted sum of every head's cross-entropy."""
    def fn(xt: Tensor, y: np.ndarray) -> Tensor:
        outputs = model.forward_all(xt)
        total = None
        for out in outputs:
            loss, _ = cross_entropy(out, y)
            total = loss if total is None else total + loss
        return total
    return fn


def adp_loss(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    """J_adp evaluated at x: the sum of all m+1 head cross-entropies."""
    with frozen(model):
        return adp_loss_fn(model)(Tensor(np.asarray(x, dtype=np.float32)), y).item()


def input_gradient(model: Model, loss_fn: LossFn, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d loss / d input with parameter gradients suppressed."""
    with frozen(model):
        xt = Tensor(np.asarray(x, dtype=np.float32), requires_grad=True)
        loss_fn(xt, y).backward()
        return xt.grad


def _default_predict(model: Model) -> PredictFn:
    from .ensemble import predict_logits
    return lambda imgs: predict_logits(model, imgs)[-1].argmax(axis=1)


# ---------------------------------------------------------------------------
# gradient attacks
# ---------------------------------------------------------------------------


def fgsm(model: Model, x: np.ndarray, y: np.ndarray, epsilon: float,
         loss_fn: Optional[LossFn] = None, predict_fn: Optional[PredictFn] = None) -> AdvBatch:
    """Single signed-gradient step of size epsilon, clipped to [0, 1]."""
    _check_range(x)
    x = np.asarray(x, dtype=np.float32)
    loss_fn = loss_fn or public_loss(model)
    adv = np.empty_like(x)
    for sl in _chunks(len(x)):
        grad = input_gradient(model, loss_fn, x[sl], y[sl])
        adv[sl] = np.clip(x[sl] + np.float32(epsilon) * np.sign(grad),
                          np.float32(0.0), np.float32(1.0))
    predict_fn = predict_fn or _default_predict(model)
    linf, l2 = _distortion(x, adv)
    return AdvBatch(x.copy(), adv, predict_fn(adv) != y, linf, l2,
                    np.ones(len(x), dtype=np.int64))


def _pgd_iterate(model: Model, x_center: np.ndarray, y: np.ndarray, epsilon: float,
                 alpha: float, iterations: int, loss_fn: LossFn,
                 random_start: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Projected ascent inside the L-inf ball around ``x_center`` intersected with [0,1].

    Processes in chunks; the random start is drawn chunk by chunk from the
    given generator, so results are deterministic for a fixed seed.
    """
    x_center = np.asarray(x_center, dtype=np.float32)
    eps32 = np.float32(epsilon)
    out = np.empty_like(x_center)
    if random_start and rng is None:
        rng = np.random.default_rng(0)
    for sl in _chunks(len(x_center)):
        center = x_center[sl]
        # all ball arithmetic in float32 so a saturating step lands exactly on the bound
        lo = np.maximum(center - eps32, np.float32(0.0))
        hi = np.minimum(center + eps32, np.float32(1.0))
        if random_start:
            adv = center + rng.uniform(-epsilon, epsilon, size=center.shape).astype(np.float32)
            adv = np.clip(adv, lo, hi)
        else:
            adv = center.copy()
        for _ in range(iterations):
            grad = input_gradient(model, loss_fn, adv, y[sl])
            adv = adv + np.float32(alpha) * np.sign(grad)
            adv = np.clip(adv, lo, hi)
        out[sl] = adv
    return out


def pgd(model: Model, x: np.ndarray, y: np.ndarray, epsilon: float, alpha: float,
        iterations: int, random_start: bool = False, loss_fn: Optional[LossFn] = None,
        predict_fn: Optional[PredictFn] = None,
        rng: Optional[np.random.Generator] = None) -> AdvBatch:
    """Iterated signed-gradient ascent with projection after every step."""
    _check_range(x)
    loss_fn = loss_fn or public_loss(model)
    adv = _pgd_iterate(model, x, y, epsilon, alpha, iterations, loss_fn, random_start, rng)
    predict_fn = predict_fn or _default_predict(model)
    x32 = np.asarray(x, dtype=np.float32)
    linf, l2 = _distortion(x32, adv)
    return AdvBatch(x32.copy(), adv, predict_fn(adv) != y,
                    linf, l2, np.full(len(x), iterations, dtype=np.int64))


def per_block_attack(model: Model, block_index: int, x: np.ndarray, y: np.ndarray,
                     config: AttackConfig,
                     rng: Optional[np.random.Generator] = None) -> AdvBatch:
    """FGSM/PGD against one head's loss only (loss-ratio experiment)."""
    loss_fn = block_loss(model, block_index)
    if config.family == "fgsm":
        return fgsm(model, x, y, config.epsilon, loss_fn=loss_fn)
    if config.family == "pgd":
        return pgd(model, x, y, config.epsilon, config.step_size, config.iterations,
                   random_start=config.random_start, loss_fn=loss_fn, rng=rng)
    raise ValueError(f"per-block attack supports fgsm/pgd, got {config.family!r}")


# ---------------------------------------------------------------------------
# adaptive attacks (full defense knowledge)
# ---------------------------------------------------------------------------


def adp_fgsm(model: Model, x: np.ndarray, y: np.ndarray, config: AttackConfig,
             x_start: Optional[np.ndarray] = None, predict_fn: Optional[PredictFn] = None,
             rng: Optional[np.random.Generator] = None) -> AdvBatch:
    """FGSM on the combined loss over every head.

    ``x_start`` carries the defense's own perturbation when attacking an
    adversarially trained target; the step is taken (and the ball kept)
    around it, so the total budget is its offset plus epsilon.
    """
    return _adp_attack(model, x, y, config, x_start, predict_fn, rng, single_step=True)


def adp_pgd(model: Model, x: np.ndarray, y: np.ndarray, config: AttackConfig,
            x_start: Optional[np.ndarray] = None, predict_fn: Optional[PredictFn] = None,
            rng: Optional[np.random.Generator] = None) -> AdvBatch:
    """PGD on the combined loss over every head."""
    return _adp_attack(model, x, y, config, x_start, predict_fn, rng, single_step=False)


def _adp_attack(model, x, y, config, x_start, predict_fn, rng, single_step):
    _check_range(x)
    center = x if x_start is None else x_start
    loss_fn = adp_loss_fn(model)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if single_step:
        adv = _pgd_iterate(model, center, y, config.epsilon, config.epsilon, 1,
                           loss_fn, config.random_start, rng)
        iters = 1
    else:
        adv = _pgd_iterate(model, center, y, config.epsilon, config.step_size,
                           config.iterations, loss_fn, config.random_start, rng)
        iters = config.iterations
    predict_fn = predict_fn or _default_predict(model)
    linf, l2 = _distortion(x, adv)
    return AdvBatch(x.copy(), adv.astype(np.float32), predict_fn(adv) != y, linf, l2,
                    np.full(len(x), iters, dtype=np.int64))


# ---------------------------------------------------------------------------
# Carlini-Wagner L2 (targeted)
# ---------------------------------------------------------------------------


def cw_l2(model: Model, x: np.ndarray, target: np.ndarray, config: AttackConfig,
          loss_logits: Optional[Callable[[Tensor], Tensor]] = None) -> AdvBatch:
    """Minimum-L2 targeted attack with tanh change of variables.

    Minimizes ||delta||^2 + c * max(0, max_{j!=t} z_j - z_t + kappa) with a
    per-example binary search over c; returns the lowest-L2 success found.
    """
    _check_range(x)
    target = np.asarray(target)
    n = len(x)
    x32 = np.asarray(x, dtype=np.float32)
    logits_of = loss_logits or (lambda xt: model.forward_public(xt))

    # tanh-space anchor; the slack keeps arctanh finite at the range endpoints
    w_orig = np.arctanh((2.0 * x32 - 1.0) * 0.999999).astype(np.float32)

    lower = np.zeros(n)
    upper = np.full(n, 1e10)
    c = np.full(n, config.cw_initial_c)

    best_l2 = np.full(n, np.inf)
    best_adv = x32.copy()
    kappa = config.cw_kappa

    def succeeded(logits: np.ndarray) -> np.ndarray:
        adjusted = logits.copy()
        adjusted[np.arange(n), target] -= kappa
        return adjusted.argmax(axis=1) == target

    with frozen(model):
        for _ in range(config.cw_search_steps):
            w = Tensor(w_orig.copy(), requires_grad=True)
            c32 = c.astype(np.float32)
            found_this_step = np.zeros(n, dtype=bool)
            adam_m = np.zeros_like(w.data)
            adam_v = np.zeros_like(w.data)
            for it in range(config.cw_iterations):
                w.zero_grad()
                x_adv = (w.tanh() + 1.0) * 0.5
                delta = x_adv - x32
                l2_t = (delta * delta).sum(axis=(1, 2, 3))
                logits_t = logits_of(x_adv)
                margin = cw_margin(logits_t, target, kappa)
                loss = (l2_t + Tensor(c32) * margin).sum()
                loss.backward()

                ok = succeeded(logits_t.data)
                l2_now = l2_t.data
                better = ok & (l2_now < best_l2)
                best_l2[better] = l2_now[better]
                best_adv[better] = x_adv.data[better]
                found_this_step |= ok

                # Adam on the modifier
                t = it + 1
                adam_m = 0.9 * adam_m + 0.1 * w.grad
                adam_v = 0.999 * adam_v + 0.001 * w.grad ** 2
                mhat = adam_m / (1 - 0.9 ** t)
                vhat = adam_v / (1 - 0.999 ** t)
                w.data -= config.cw_lr * mhat / (np.sqrt(vhat) + 1e-8)

            # binary search on c
            hit = found_this_step
            upper[hit] = np.minimum(upper[hit], c[hit])
            lower[~hit] = np.maximum(lower[~hit], c[~hit])
            searchable = upper < 1e9
            c = np.where(searchable, (lower + upper) / 2.0, c * np.where(hit, 1.0, 10.0))

    success = np.isfinite(best_l2)
    linf, l2 = _distortion(x32, best_adv)
    queries = np.full(n, config.cw_search_steps * config.cw_iterations, dtype=np.int64)
    return AdvBatch(x32.copy(), best_adv, success, linf, l2, queries)


# ---------------------------------------------------------------------------
# boundary attack (decision-based, gradient-free)
# ---------------------------------------------------------------------------


def boundary_attack(predict_fn: PredictFn, x: np.ndarray, y: np.ndarray,
                    config: AttackConfig, seed: Optional[int] = None,
                    init_draws: int = 100, adapt_every: int = 10) -> AdvBatch:
    """Walk along the decision boundary using label queries only.

    Starts from a uniform-random misclassified point, then alternates an
    orthogonal (distance-preserving) perturbation with a contraction toward
    the original; candidates are accepted only when still misclassified and
    no farther away, so the distance sequence never increases.
    """
    _check_range(x)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = len(x)
    flat = x.reshape(n, -1)
    adv = x.astype(np.float32).copy()
    queries = np.zeros(n, dtype=np.int64)
    initialized = np.zeros(n, dtype=bool)

    # full-batch draws keep the stream position independent of which examples
    # are still active, so runs with different budgets share an exact prefix
    for _ in range(init_draws):
        active = ~initialized
        if not active.any():
            break
        cand = rng.uniform(0.0, 1.0, size=x.shape).astype(np.float32)[active]
        labels = predict_fn(cand)
        queries[active] += 1
        hit = labels != y[active]
        rows = np.flatnonzero(active)[hit]
        adv[rows] = cand[hit]
        initialized[rows] = True

    dist = np.linalg.norm((adv - x).reshape(n, -1), axis=1)
    dist[~initialized] = 0.0
    source_step = np.full(n, config.source_step)
    orth_step = np.full(n, config.orth_step)
    accepted = np.zeros(n, dtype=np.int64)
    proposed = np.zeros(n, dtype=np.int64)

    while True:
        active = initialized & (queries < config.max_queries) & (dist > 1e-7)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx].reshape(len(idx), -1).astype(np.float64)
        cur = adv[idx].reshape(len(idx), -1).astype(np.float64)
        d = cur - xa
        dn = dist[idx]

        eta = rng.normal(size=(n, flat.shape[1]))[idx]
        eta *= (orth_step[idx] * dn / np.linalg.norm(eta, axis=1))[:, None]
        # remove the radial component, then rescale back onto the sphere
        unit = d / dn[:, None]
        eta -= (eta * unit).sum(axis=1, keepdims=True) * unit
        cand = xa + (d + eta) * (dn / np.linalg.norm(d + eta, axis=1))[:, None]
        # contract toward the original
        cand += source_step[idx][:, None] * (xa - cand)
        cand = np.clip(cand, 0.0, 1.0)

        labels = predict_fn(cand.reshape((len(idx),) + x.shape[1:]).astype(np.float32))
        queries[idx] += 1
        new_dist = np.linalg.norm(cand - xa, axis=1)
        accept = (labels != y[idx]) & (new_dist <= dn)
        rows = idx[accept]
        adv[rows] = cand[accept].reshape((-1,) + x.shape[1:]).astype(np.float32)
        dist[rows] = new_dist[accept]
        proposed[idx] += 1
        accepted[rows] += 1

        adapt = proposed >= adapt_every
        if adapt.any():
            rate = accepted[adapt] / proposed[adapt]
            scale = np.where(rate < 0.2, 0.5, np.where(rate > 0.5, 1.2, 1.0))
            orth_step[adapt] = np.minimum(orth_step[adapt] * scale, 1.0)
            source_step[adapt] = np.minimum(source_step[adapt] * scale, 0.5)
            accepted[adapt] = 0
            proposed[adapt] = 0

    linf, l2 = _distortion(x.astype(np.float32), adv)
    return AdvBatch(x.astype(np.float32).copy(), adv, initialized.copy(), linf, l2, queries)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def run_attack(model: Model, x: np.ndarray, y: np.ndarray, config: AttackConfig,
               predict_fn: Optional[PredictFn] = None,
               rng: Optional[np.random.Generator] = None) -> AdvBatch:
    """Run the configured attack family with its config fields."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if config.family == "fgsm":
        return fgsm(model, x, y, config.epsilon, predict_fn=predict_fn)
    if config.family == "pgd":
        return pgd(model, x, y, config.epsilon, config.step_size, config.iterations,
                   random_start=config.random_start, predict_fn=predict_fn, rng=rng)
    if config.family == "cw_l2":
        if config.target_class is not None:
            target = np.full(len(x), config.target_class)
        else:
            # random target different from the true label
            target = (y + rng.integers(1, model.num_classes, size=len(y))) % model.num_classes
        return cw_l2(model, x, target, config)
    if config.family == "boundary":
        fn = predict_fn or _default_predict(model)
        return boundary_attack(fn, x, y, config, seed=config.seed)
    if config.family == "adp_fgsm":
        return adp_fgsm(model, x, y, config, predict_fn=predict_fn, rng=rng)
    if config.family == "adp_pgd":
        return adp_pgd(model, x, y, config, predict_fn=predict_fn, rng=rng)
    raise ValueError(f"unknown attack family {config.family!r}")
