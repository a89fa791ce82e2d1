"""Release-gate property checks, runnable from the CLI.

Each check re-derives expected behavior from an independent route (brute
force, finite differences, extended precision, statistical moments) and
compares the implementation against it. `fault` threads a deliberate defect
into one code path so the gate itself can be shown to catch regressions.
"""

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .attention import (
    LayerParams,
    Prompt,
    moe_view_forward,
    msa_forward,
    prefix_moe_view_forward,
    prefix_msa_forward,
)
from .numeric import RngState, cross_entropy, finite_diff_grad, relative_grad_error, softmax, top_k_indices
from .replay import fit_gaussian, fit_mixture, sample

MOE_TOLERANCE = 1e-10
GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    failing_case: dict = None


def check_moe_duality(seed=0, trials=200, fault=None):
    rng = RngState(seed)
    worst = 0.0
    worst_case = None
    for trial in range(trials):
        n_heads = [1, 2, 4][trial % 3]
        dim = [8, 16, 32][trial % 3]
        layer = LayerParams(dim, n_heads, 2 * dim, rng)
        n = int(rng.integers(1, 9))
        x = rng.normal((n, dim))
        use_fault = fault if trial == 0 else None
        delta = float(np.max(np.abs(
            moe_view_forward(x, layer, _fault=use_fault) - msa_forward(x, layer))))
        if delta > worst:
            worst = delta
            worst_case = {"trial": trial, "n": n, "dim": dim, "n_heads": n_heads,
                          "seed": seed, "delta": delta}
    passed = worst < MOE_TOLERANCE
    return CheckResult("moe-duality", passed, f"max |moe - msa| = {worst:.3e}",
                       None if passed else worst_case)


def check_prefix_moe_duality(seed=1, trials=200, fault=None):
    rng = RngState(seed)
    worst = 0.0
    worst_case = None
    for trial in range(trials):
        n_heads = [1, 2][trial % 2]
        dim = [8, 16][trial % 2]
        layer = LayerParams(dim, n_heads, 2 * dim, rng)
        n = int(rng.integers(1, 7))
        n_prompts = int(rng.integers(0, 4))
        x = rng.normal((n, dim))
        prompts = [Prompt(rng.normal((1, dim), 0.5), rng.normal((1, dim), 0.5))
                   for _ in range(n_prompts)]
        use_fault = fault if trial == 0 else None
        a = prefix_msa_forward(x, layer, prompts)
        b = prefix_moe_view_forward(x, layer, prompts, _fault=use_fault)
        delta = float(np.max(np.abs(a - b)))
        if delta > worst:
            worst = delta
            worst_case = {"trial": trial, "n": n, "dim": dim, "n_heads": n_heads,
                          "n_prompts": n_prompts, "seed": seed, "delta": delta}
    passed = worst < MOE_TOLERANCE
    return CheckResult("prefix-moe-duality", passed, f"max |moe - msa| = {worst:.3e}",
                       None if passed else worst_case)


def check_topk_oracle(seed=2, trials=200):
    rng = RngState(seed)
    for trial in range(trials):
        n = int(rng.integers(2, 9))
        scores = rng.normal(n)
        k = int(rng.integers(1, n + 1))
        best = min(itertools.combinations(range(n), k),
                   key=lambda s: sum(scores[i] for i in s))
        got = set(int(i) for i in top_k_indices(scores, k))
        if got != set(best):
            return CheckResult("topk-oracle", False,
                               f"trial {trial}: {sorted(got)} != {sorted(best)}",
                               {"trial": trial, "seed": seed,
                                "scores": scores.tolist(), "k": k})
    return CheckResult("topk-oracle", True, f"{trials} subset enumerations matched")


def check_softmax_oracle(seed=3, trials=50):
    from decimal import Decimal, getcontext

    getcontext().prec = 50
    rng = RngState(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.normal(int(rng.integers(1, 9)), 5.0)
        exps = [Decimal(float(x)).exp() for x in v]
        total = sum(exps)
        want = np.array([float(e / total) for e in exps])
        worst = max(worst, float(np.max(np.abs(softmax(v) - want))))
        label = int(rng.integers(0, v.size))
        lse = sum(exps).ln()
        ce_want = float(lse - Decimal(float(v[label])))
        worst = max(worst, abs(cross_entropy(v, label) - ce_want))
    passed = worst < 1e-12
    return CheckResult("softmax-oracle", passed,
                       f"max deviation from 50-digit oracle = {worst:.3e}",
                       None if passed else {"seed": seed, "worst": worst})


def check_pool_gradients(seed=4, fixtures=5):
    from types import SimpleNamespace

    from .attention import encode_query, init_encoder
    from .heads import new_head
    from .prompt_pool import PromptPool, pool_loss, select

    rng = RngState(seed)
    worst = 0.0
    for f in range(fixtures):
        encoder = init_encoder(vocab_size=16, dim=8, n_heads=2, n_layers=2,
                               max_len=8, rng=RngState(seed * 100 + f))
        tokens = [0] + [int(rng.integers(6, 16)) for _ in range(5)]
        seq = SimpleNamespace(tokens=tokens, e1_span=(1, 2), e2_span=(3, 4))
        pool = PromptPool(0, 3, 2, 8, rng, surrogate_weight=0.3)
        head = new_head(16, 3, rng, hidden_dim=6)
        q = encode_query(seq, encoder)
        sel = select(pool, q)
        label = int(rng.integers(0, 3))

        def loss_flat(flat):
            at = 0
            for i in sel.indices:
                pool.keys[i] = flat[at : at + 8]
                at += 8
            for i in sel.indices:
                pool.prompts[i].p_k[:] = flat[at : at + 8].reshape(1, 8)
                at += 8
            for i in sel.indices:
                pool.prompts[i].p_v[:] = flat[at : at + 8].reshape(1, 8)
                at += 8
            for k in ("w1", "b1", "w2", "b2"):
                p = head.params()[k]
                p[...] = flat[at : at + p.size].reshape(p.shape)
                at += p.size
            return pool_loss(pool, seq, label, encoder, head, q, selection=sel)

        flat0 = np.concatenate(
            [pool.keys[i] for i in sel.indices]
            + [pool.prompts[i].p_k.ravel() for i in sel.indices]
            + [pool.prompts[i].p_v.ravel() for i in sel.indices]
            + [head.params()[k].ravel() for k in ("w1", "b1", "w2", "b2")]
        )
        res = loss_flat(flat0)
        analytic = np.concatenate(
            [res.key_grads.ravel()]
            + [pair[0].ravel() for pair in res.prompt_grads]
            + [pair[1].ravel() for pair in res.prompt_grads]
            + [res.head_grads[k].ravel() for k in ("w1", "b1", "w2", "b2")]
        )
        numeric = finite_diff_grad(lambda p: loss_flat(p).loss, flat0, eps=1e-5)
        worst = max(worst, relative_grad_error(analytic, numeric))
    passed = worst < GRAD_TOLERANCE
    return CheckResult("pool-gradient", passed,
                       f"worst relative error over {fixtures} fixtures = {worst:.3e}",
                       None if passed else {"seed": seed, "worst": worst})


def check_head_gradients(seed=5, fixtures=5):
    from . import autodiff as ad
    from .heads import new_head

    rng = RngState(seed)
    worst = 0.0
    for f in range(fixtures):
        head = new_head(6, 4, rng, hidden_dim=5)
        x = rng.normal((7, 6))
        y = np.array([int(rng.integers(0, 4)) for _ in range(7)])

        def loss_flat(flat):
            at = 0
            for k in ("w1", "b1", "w2", "b2"):
                p = head.params()[k]
                p[...] = flat[at : at + p.size].reshape(p.shape)
                at += p.size
            leaves = head.make_leaves()
            loss = ad.cross_entropy_mean(head.graph_logits(ad.constant(x), leaves), y)
            return loss, leaves

        flat0 = np.concatenate([head.params()[k].ravel() for k in ("w1", "b1", "w2", "b2")])
        loss, leaves = loss_flat(flat0)
        ad.backward(loss)
        analytic = np.concatenate([leaves[k].grad.ravel() for k in ("w1", "b1", "w2", "b2")])
        numeric = finite_diff_grad(lambda p: float(loss_flat(p)[0].value), flat0, eps=1e-5)
        worst = max(worst, relative_grad_error(analytic, numeric))
    passed = worst < GRAD_TOLERANCE
    return CheckResult("head-gradient", passed,
                       f"worst relative error over {fixtures} fixtures = {worst:.3e}",
                       None if passed else {"seed": seed, "worst": worst})


def check_gaussian_roundtrip(seed=6):
    rng = RngState(seed)
    x = rng.normal((400, 4)) @ np.diag([1.0, 2.0, 0.5, 1.5]) + np.array([3.0, -1.0, 0.0, 2.0])
    g = fit_gaussian(x)
    refit = fit_gaussian(sample(g, 50_000, rng))
    mu_err = float(np.linalg.norm(refit.mu - g.mu) / np.linalg.norm(g.mu))
    sig_err = float(np.linalg.norm(refit.sigma - g.sigma) / np.linalg.norm(g.sigma))
    passed = mu_err < 0.01 and sig_err < 0.05
    return CheckResult("gaussian-roundtrip", passed,
                       f"mu err {mu_err:.4f} (<0.01), sigma err {sig_err:.4f} (<0.05)",
                       None if passed else {"seed": seed, "mu_err": mu_err,
                                            "sigma_err": sig_err})


def check_em_monotone(seed=7):
    rng = RngState(seed)
    centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0], [4.0, 4.0]])
    x = np.concatenate([rng.normal((60, 2)) * 0.8 + c for c in centers])
    for k in (1, 3, 5):
        mix = fit_mixture(x, k, rng)
        diffs = np.diff(mix.em_log_likelihoods)
        if diffs.size and float(np.min(diffs)) < -1e-9:
            return CheckResult("em-monotone", False,
                               f"log-likelihood decreased at k={k}",
                               {"seed": seed, "k": k,
                                "trace": list(map(float, mix.em_log_likelihoods))})
    return CheckResult("em-monotone", True, "non-decreasing for k in {1, 3, 5}")


def check_selection_oracle(seed=8, trials=100):
    from .prompt_pool import PromptPool, select

    rng = RngState(seed)
    for trial in range(trials):
        m = int(rng.integers(2, 9))
        k = int(rng.integers(1, m + 1))
        pool = PromptPool(0, m, k, 6, rng)
        pool.keys = rng.normal((m, 6))
        q = rng.normal(6)
        from .numeric import cosine_distance

        dists = np.array([cosine_distance(q, key) for key in pool.keys])
        best = min(itertools.combinations(range(m), k),
                   key=lambda s: sum(dists[i] for i in s))
        got = set(int(i) for i in select(pool, q).indices)
        if got != set(best):
            return CheckResult("selection-oracle", False,
                               f"trial {trial} mismatch",
                               {"trial": trial, "seed": seed, "m": m, "k": k})
    return CheckResult("selection-oracle", True, f"{trials} pools matched brute force")


ALL_CHECKS = (
    check_moe_duality,
    check_prefix_moe_duality,
    check_topk_oracle,
    check_softmax_oracle,
    check_pool_gradients,
    check_head_gradients,
    check_gaussian_roundtrip,
    check_em_monotone,
    check_selection_oracle,
)


def run_all(fault=None):
    results = []
    for check in ALL_CHECKS:
        if fault is not None and "fault" in check.__code__.co_varnames:
            results.append(check(fault=fault))
        else:
            results.append(check())
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name.ljust(width)}  {status}  {r.detail}")
    return "\n".join(lines)


def dump_failures(results, path):
    failures = [
        {"name": r.name, "detail": r.detail, "case": r.failing_case}
        for r in results if not r.passed
    ]
    if failures:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2, sort_keys=True)
        return path
    return None
