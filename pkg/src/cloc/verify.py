"""Self-checks: finite-difference gradients and loss-oracle equivalence.

Used by ``cloc check`` and by the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradient_check
from .losses import batch_mmnp_oracle, batch_objective, ce_oracle, mmnp_batch
from .margins import MarginSet, OrdinalSchema, cumulative_margin, init_margins
from .model import Model
from .sampler import check_batch


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    stats: dict = field(default_factory=dict)


def random_batch_labels(rng: np.random.Generator, n_classes: int, batch_size: int) -> np.ndarray:
    """Labels with >= 2 ranks and >= 2 samples per present rank."""
    max_ranks = min(n_classes, batch_size // 2)
    k = int(rng.integers(2, max_ranks + 1))
    ranks = np.sort(rng.choice(np.arange(1, n_classes + 1), size=k, replace=False))
    counts = np.full(k, 2)
    for _ in range(batch_size - 2 * k):
        counts[rng.integers(k)] += 1
    return rng.permutation(np.repeat(ranks, counts))


@dataclass
class ObjectiveCase:
    model: Model
    margins: MarginSet
    X: np.ndarray
    y: np.ndarray
    seed: int

    def objective(self) -> Tensor:
        return batch_objective(self.X, self.y, self.model, self.margins).total

    def params(self) -> list[Tensor]:
        return self.model.parameters() + self.margins.parameters()


def random_objective_case(seed: int, n_classes: int, embedding_dim: int, batch_size: int,
                          n_features: int = 5, hidden=(8,)) -> ObjectiveCase:
    rng = np.random.default_rng(seed)
    y = random_batch_labels(rng, n_classes, batch_size)
    X = rng.uniform(-2.0, 2.0, size=(batch_size, n_features))
    model = Model.init(n_features, n_classes, hidden, embedding_dim, classifier_hidden=8, seed=[seed, 0])
    margins = init_margins(OrdinalSchema(n_classes), "per_pair", seed=[seed, 1])
    return ObjectiveCase(model, margins, X, y, seed)


def objective_gradient_check(case: ObjectiveCase, step: float = 1e-5, tolerance: float = 1e-5):
    return gradient_check(case.objective, case.params(), step=step, tolerance=tolerance)


def check_objective_gradients(n_configs: int = 20, seed: int = 0, step: float = 1e-5,
                              tolerance: float = 1e-5) -> CheckResult:
    """Full-objective gradients on random configurations, skipping draws with
    a relu/hinge input within 10 steps of its kink."""
    rng = np.random.default_rng(seed)
    worst, done, skipped = 0.0, 0, 0
    failures = []
    t0 = time.perf_counter()
    while done < n_configs:
        C = int(rng.choice([3, 5, 8]))
        d = int(rng.choice([4, 16]))
        B = int(rng.integers(6, 25))
        case = random_objective_case(int(rng.integers(2**31)), C, d, B)
        if ad.min_kink_distance(case.objective()) < 10 * step:
            skipped += 1
            continue
        rep = objective_gradient_check(case, step, tolerance)
        worst = max(worst, rep.worst)
        if not rep.passed:
            failures.append(f"C={C} d={d} B={B}: {rep.message}")
        done += 1
    elapsed = time.perf_counter() - t0
    return CheckResult("objective gradients", not failures,
                       "; ".join(failures) or f"{done} configs, worst rel err {worst:.2e}",
                       {"worst": worst, "configs": done, "skipped_near_kink": skipped, "seconds": elapsed})


def check_op_gradients(seed: int = 0, step: float = 1e-5, tolerance: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)

    def u(*shape):
        return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)

    a, b = u(3, 4), u(3, 4)
    m, n = u(3, 4), u(4, 2)
    v, w = u(5), u(5)
    pos = Tensor(rng.uniform(0.5, 2, size=(6,)), requires_grad=True)
    logits = u(4, 5)
    labels = rng.integers(0, 5, size=4)
    weights = Tensor(rng.uniform(-1, 1, size=(3, 4)))
    cases = {
        "add": (lambda: ad.tsum(ad.mul(ad.add(a, b), weights)), [a, b]),
        "sub": (lambda: ad.tsum(ad.mul(ad.sub(a, b), weights)), [a, b]),
        "scale": (lambda: ad.tsum(ad.mul(ad.scale(a, -1.7), weights)), [a]),
        "mul": (lambda: ad.tsum(ad.mul(a, b)), [a, b]),
        "matmul": (lambda: ad.tsum(ad.mul(ad.matmul(m, n), Tensor(np.arange(6.0).reshape(3, 2)))), [m, n]),
        "relu": (lambda: ad.tsum(ad.mul(ad.relu(a), weights)), [a]),
        "hinge": (lambda: ad.tsum(ad.mul(ad.hinge(a), weights)), [a]),
        "softplus": (lambda: ad.tsum(ad.mul(ad.softplus(a), weights)), [a]),
        "log": (lambda: ad.tsum(ad.log(pos)), [pos]),
        "exp": (lambda: ad.tsum(ad.exp(v)), [v]),
        "mean": (lambda: ad.mean(ad.mul(a, b)), [a, b]),
        "l2_norm": (lambda: ad.l2_norm(v), [v]),
        "dot": (lambda: ad.dot(v, w), [v, w]),
        "cosine": (lambda: ad.cosine_similarity(v, w), [v, w]),
        "pairwise_cosine": (lambda: ad.tsum(ad.mul(ad.pairwise_cosine(a), Tensor(rng_fixed(3, 3)))), [a]),
        "softmax_ce": (lambda: ad.tsum(ad.softmax_cross_entropy(logits, labels)), [logits]),
    }
    bad, worst = [], 0.0
    for name, (f, params) in cases.items():
        rep = gradient_check(f, params, step=step, tolerance=tolerance)
        if rep.min_kink_distance < 10 * step:
            continue
        worst = max(worst, rep.worst)
        if not rep.passed:
            bad.append(f"{name}: {rep.message}")
    return CheckResult("op gradients", not bad, "; ".join(bad) or f"worst rel err {worst:.2e}", {"worst": worst})


def rng_fixed(*shape) -> np.ndarray:
    return np.linspace(-1.0, 1.0, int(np.prod(shape))).reshape(shape)


def check_loss_oracle(n_batches: int = 100, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n_batches):
        C = int(rng.integers(3, 9))
        d = int(rng.integers(2, 17))
        B = int(rng.integers(6, 25))
        y = random_batch_labels(rng, C, B)
        z = rng.normal(size=(B, d))
        m = rng.uniform(0.05, 1.0, size=C - 1)
        got = mmnp_batch(Tensor(z), y, Tensor(m)).data
        ref = np.array(batch_mmnp_oracle(z, y.tolist(), m.tolist()))
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("mmnp oracle equivalence", worst < tol, f"max |diff| {worst:.2e} over {n_batches} batches",
                       {"worst": worst, "seconds": time.perf_counter() - t0})


def check_ce_oracle(n: int = 50, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        C = int(rng.integers(2, 9))
        v = rng.normal(scale=3.0, size=C)
        y = int(rng.integers(1, C + 1))
        got = ad.softmax_cross_entropy(Tensor(v), y - 1).item()
        worst = max(worst, abs(got - ce_oracle(y, v)))
    return CheckResult("cross-entropy oracle", worst < tol, f"max |diff| {worst:.2e}", {"worst": worst})


def dyadic_margins(rng: np.random.Generator, n: int, bits: int = 20) -> np.ndarray:
    """Positive margins on a 2**-bits grid; their partial sums are exact in float64."""
    return rng.integers(1, 2**bits, size=n) / float(2**bits)


def check_cumulative_additivity(n_sets: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations = 0
    worst_ulps = 0.0
    for _ in range(n_sets):
        C = int(rng.integers(3, 10))
        schema = OrdinalSchema(C)
        for values, exact in ((dyadic_margins(rng, C - 1), True), (rng.uniform(0.01, 1.0, C - 1), False)):
            m = Tensor(values)
            cum = {(a, b): cumulative_margin(MarginSet(schema, "all_fixed"), a, b, m).item()
                   for a in range(1, C + 1) for b in range(1, C + 1) if a != b}
            for a in range(1, C + 1):
                for l in range(a + 1, C + 1):
                    for r in range(l + 1, C + 1):
                        lhs, rhs = cum[(a, r)], cum[(a, l)] + cum[(l, r)]
                        if exact and lhs != rhs:
                            violations += 1
                        elif not exact:
                            worst_ulps = max(worst_ulps, abs(lhs - rhs) / np.spacing(lhs))
                        if cum[(a, r)] != cum[(r, a)]:
                            violations += 1
    ok = violations == 0 and worst_ulps <= 4
    return CheckResult("cumulative margin additivity", ok,
                       f"{violations} exact violations, worst general-float gap {worst_ulps:.0f} ulp",
                       {"violations": violations, "worst_ulps": worst_ulps})


def check_batches(labels, spec, seeds=range(3)) -> CheckResult:
    from .sampler import build_batches

    problems = []
    n = 0
    for s in seeds:
        for b in build_batches(labels, spec, seed=s):
            n += 1
            problems += check_batch(np.asarray(labels)[b])
    return CheckResult("batch structure", not problems, "; ".join(problems[:3]) or f"{n} batches valid")


def run_all(quick: bool = False) -> list[CheckResult]:
    from .datagen import SyntheticSpec, generate
    from .sampler import BatchSpec

    data = generate(SyntheticSpec(n_classes=5, dim=4, n_per_class=[30, 3, 25, 9, 40], seed=1))
    return [
        check_op_gradients(),
        check_objective_gradients(n_configs=5 if quick else 20),
        check_loss_oracle(n_batches=20 if quick else 100),
        check_ce_oracle(),
        check_cumulative_additivity(n_sets=10 if quick else 50),
        check_batches(data.y, BatchSpec()),
        check_batches(data.y, BatchSpec(ranks_per_batch=2, samples_per_rank=2)),
    ]
