"""Release acceptance suite.

Each test checks one numbered release criterion at its stated tolerance and
runtime budget and prints a single PASS/FAIL line (visible under `pytest -s`).
The criteria cover: analytic gradients, the biased-update convergence bound,
trade-off curve shape, brute-force solver agreement, limiting regimes,
conditional-marginal agreement, the three-method end-to-end comparison,
trade-off knob monotonicity, and byte-level output determinism.
"""

import csv
import time

import numpy as np

from satdg.cli import main
from satdg.convergence import Prop1Config, run_prop1
from satdg.discrete_ba import (
    DiscreteBAInstance,
    demo_instance,
    discrete_ba_solve,
    grid_search_regularized_objective,
    rd_curve,
    zero_distortion_penalty,
)
from satdg.mlp import DomainBatch, MlpModel, domain_grad, domain_loss
from satdg.numerics import Rng, finite_diff_grad
from satdg.penalties import coral_penalty, vrex_penalty
from satdg.sign_ba import BaParams, ba_solve, build_gradient_set, sample_update
from satdg.tasks import SyntheticTask
from satdg.training import TrainConfig, train


def _verdict(num, label, ok, detail, elapsed, budget):
    word = "PASS" if ok else "FAIL"
    print(f"criterion {num} ({label}): {word} [{detail}; {elapsed:.1f}s of {budget:.0f}s budget]")
    assert ok, f"criterion {num} ({label}) failed: {detail}"
    assert elapsed < budget, f"criterion {num} overran its {budget:.0f}s budget ({elapsed:.1f}s)"


def _rel_err(analytic, reference):
    return float(
        np.linalg.norm(analytic - reference) / max(np.linalg.norm(reference), 1e-12)
    )


def _model_and_batches(seed, loss, n_domains=3, n=6):
    rng = Rng(seed)
    din, dh = 3, 4
    dout = 1 if loss == "squared_error" else 3
    model = MlpModel([din, dh, dout], loss=loss, rng=rng)
    batches = []
    for e in range(n_domains):
        x = rng.normal(n * din).reshape(n, din)
        if loss == "squared_error":
            y = rng.normal(n).reshape(n, 1)
        else:
            y = rng.integers(dout, n)
        batches.append(DomainBatch(inputs=x, labels=y, domain_id=e))
    return model, batches


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    tol = 1e-4
    worst = {}

    def frozen_eval(model, theta, fn):
        def f(v):
            model.set_params(v)
            value = fn()
            model.set_params(theta)
            return value

        return f

    for s in range(20):
        for loss in ("squared_error", "cross_entropy"):
            model, batches = _model_and_batches(1000 + s, loss)
            theta = model.get_params().copy()
            batch = batches[0]
            analytic = domain_grad(model, batch)
            fd = finite_diff_grad(frozen_eval(model, theta, lambda: domain_loss(model, batch)), theta)
            key = f"loss[{loss}]"
            worst[key] = max(worst.get(key, 0.0), _rel_err(analytic, fd))

        model, batches = _model_and_batches(2000 + s, "squared_error")
        theta = model.get_params().copy()
        for penalty, key in ((coral_penalty, "coral"), (vrex_penalty, "vrex")):
            analytic = penalty(model, batches).grad
            fd = finite_diff_grad(
                frozen_eval(model, theta, lambda: penalty(model, batches).value), theta
            )
            worst[key] = max(worst.get(key, 0.0), _rel_err(analytic, fd))

        weight = 10.0
        analytic = (
            np.mean([domain_grad(model, b) for b in batches], axis=0)
            + weight * coral_penalty(model, batches).grad
        )

        def combined():
            risk = float(np.mean([domain_loss(model, b) for b in batches]))
            return risk + weight * coral_penalty(model, batches).value

        fd = finite_diff_grad(frozen_eval(model, theta, combined), theta)
        worst["combined"] = max(worst.get("combined", 0.0), _rel_err(analytic, fd))

    elapsed = time.perf_counter() - start
    peak = max(worst.values())
    _verdict(
        1,
        "gradient correctness",
        peak <= tol,
        f"worst relative error {peak:.2e} <= {tol:g} over 20 instances of {sorted(worst)}",
        elapsed,
        10.0,
    )


def test_criterion_2_convergence_bound():
    start = time.perf_counter()
    averages = {}
    bound_ok = True
    for name in ("gaussian_bowl", "cosine_ripple", "quadratic"):
        for bias in (0.0, 0.5, 1.0, 2.0):
            for steps in (1000, 4000):
                config = Prop1Config(
                    objective=name,
                    bias_D=bias,
                    steps=steps,
                    noise_scale=0.5,
                    seed=42,
                    repetitions=10,
                )
                result = run_prop1(config)
                bound_ok &= result.avg_sq_grad_norm <= result.bound_value
                averages[(name, bias, steps)] = result.avg_sq_grad_norm
    rate_ok = all(
        averages[(name, bias, 4000)] <= 0.96 * averages[(name, bias, 1000)]
        for name in ("gaussian_bowl", "cosine_ripple", "quadratic")
        for bias in (0.0, 0.5, 1.0, 2.0)
    )
    worst_ratio = max(
        averages[(n, b, 4000)] / averages[(n, b, 1000)]
        for n in ("gaussian_bowl", "cosine_ripple", "quadratic")
        for b in (0.0, 0.5, 1.0, 2.0)
    )
    elapsed = time.perf_counter() - start
    _verdict(
        2,
        "biased-update convergence bound",
        bound_ok and rate_ok,
        f"bound held on all 24 grid points, worst 4000/1000 ratio {worst_ratio:.3f} <= 0.96",
        elapsed,
        60.0,
    )


def test_criterion_3_tradeoff_curve_shape():
    start = time.perf_counter()
    betas = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    worst_mono = 0.0
    worst_slope = 0.0
    worst_excess = -np.inf
    for s in range(20):
        instance = demo_instance(seed=s, candidates=2 + s % 3, domains=1 + s % 3)
        points = rd_curve(instance, betas)
        srt = sorted((float(d), float(r)) for d, r in points)
        window = max(1e-9, 1e-6 * (srt[-1][0] - srt[0][0]))
        merged = []
        for d, r in srt:
            if merged and abs(d - merged[-1][0]) <= window:
                merged[-1] = (merged[-1][0], min(merged[-1][1], r))
            else:
                merged.append((d, r))
        for (_, r1), (_, r2) in zip(merged, merged[1:]):
            worst_mono = max(worst_mono, r2 - r1)
        slopes = [
            (r2 - r1) / (d2 - d1) for (d1, r1), (d2, r2) in zip(merged, merged[1:])
        ]
        for s1, s2 in zip(slopes, slopes[1:]):
            worst_slope = max(worst_slope, s1 - s2)
        ceiling = zero_distortion_penalty(instance)
        for _, r in points:
            worst_excess = max(worst_excess, r - ceiling)
    elapsed = time.perf_counter() - start
    ok = worst_mono <= 1e-8 and worst_slope <= 1e-6 and worst_excess <= 1e-8
    _verdict(
        3,
        "trade-off curve shape",
        ok,
        f"20 draws: monotone slack {worst_mono:.2e} <= 1e-8, curvature slack {worst_slope:.2e} <= 1e-6, "
        f"ceiling excess {worst_excess:.2e} <= 1e-8",
        elapsed,
        30.0,
    )


def test_criterion_4_brute_force_agreement():
    start = time.perf_counter()
    shapes = [(2, 2), (3, 2), (2, 3), (3, 2), (2, 2)]
    worst_gap = 0.0
    for i, (k, e) in enumerate(shapes):
        rng = Rng(8000 + i)
        instance = DiscreteBAInstance(
            candidates=rng.normal(k * 2).reshape(k, 2),
            penalty=rng.uniform(k) * 2.0,
            domain_grads=rng.normal(e * 2).reshape(e, 2),
            beta=0.3 + 0.4 * i,
            gamma=0.3 + 0.2 * i,
        )
        grid_value, _ = grid_search_regularized_objective(instance, step=0.01)
        result = discrete_ba_solve(instance, iterations=500)
        solver_value = (
            result.expected_penalty
            + instance.beta * result.expected_distortion
            + instance.gamma * result.mutual_information
        )
        worst_gap = max(worst_gap, abs(solver_value - grid_value))
    elapsed = time.perf_counter() - start
    _verdict(
        4,
        "solver vs brute force",
        worst_gap <= 1e-3,
        f"worst |solver - lattice optimum| {worst_gap:.2e} <= 1e-3 on 5 instances",
        elapsed,
        120.0,
    )


def test_criterion_5_limiting_regimes():
    start = time.perf_counter()
    worst_deviation = 0.0
    for s in range(20):
        rng = Rng(3000 + s)
        p = 4 + s % 5
        grads = (0.1 + 1.9 * rng.uniform(p)) * np.where(rng.uniform(p) < 0.5, -1.0, 1.0)
        gradset = build_gradient_set([grads], np.zeros(p))
        dist = ba_solve(gradset, BaParams(beta=1.0, gamma=0.01, iterations=25))
        deviation = np.where(grads > 0, 1.0 - dist.prob_plus, dist.prob_plus)
        worst_deviation = max(worst_deviation, float(deviation.max()))
        update = sample_update(gradset, dist, Rng(4000 + s))
        assert np.array_equal(update, grads)

    worst_sign_mass = 1.0
    for s in range(20):
        rng = Rng(5000 + s)
        p = 4 + s % 5
        e = 2 + s % 2
        grads = (0.1 + 1.9 * rng.uniform(e * p).reshape(e, p)) * np.where(
            rng.uniform(p) < 0.5, -1.0, 1.0
        )[None, :]
        pg = (0.1 + 0.9 * rng.uniform(p)) * np.where(rng.uniform(p) < 0.5, -1.0, 1.0)
        gradset = build_gradient_set(grads, pg)
        dist = ba_solve(gradset, BaParams(beta=0.0, gamma=1e-3, iterations=25))
        want_plus = pg * gradset.g_plus < pg * gradset.g_minus
        mass = np.where(want_plus, dist.prob_plus, 1.0 - dist.prob_plus)
        worst_sign_mass = min(worst_sign_mass, float(mass.min()))

    worst_candidate_mass = 1.0
    for s in range(20):
        rng = Rng(6000 + s)
        k = 3 + s % 2
        e = 2 + s % 2
        penalties = np.arange(k) * (0.1 + 0.4 * float(rng.uniform(1)[0])) + float(rng.uniform(1)[0])
        penalties = penalties[rng.permutation(k)]
        instance = DiscreteBAInstance(
            candidates=rng.normal(k * 2).reshape(k, 2),
            penalty=penalties,
            domain_grads=rng.normal(e * 2).reshape(e, 2),
            beta=0.0,
            gamma=1e-4,
        )
        result = discrete_ba_solve(instance, 200)
        worst_candidate_mass = min(
            worst_candidate_mass, float(result.marginal[int(np.argmin(penalties))])
        )

    elapsed = time.perf_counter() - start
    ok = (
        worst_deviation <= 1e-8
        and worst_sign_mass >= 1.0 - 1e-6
        and worst_candidate_mass >= 1.0 - 1e-6
    )
    _verdict(
        5,
        "limiting regimes",
        ok,
        f"pooled-update deviation prob {worst_deviation:.2e} <= 1e-8, min-penalty branch mass "
        f">= {worst_sign_mass:.8f}, min-penalty candidate mass >= {worst_candidate_mass:.8f}",
        elapsed,
        10.0,
    )


def test_criterion_6_conditional_marginal_agreement():
    start = time.perf_counter()
    # Instances whose per-domain gradients agree in sign per parameter: a
    # uniformly preferred branch exists, so the conditionals must collapse
    # onto the marginal. (Sign-conflicted parameters keep a conditional
    # spread by design: that spread is what encodes domain disagreement.)
    worst_late = 0.0
    endpoint_ok = True
    worst_5 = 0.0
    for s in range(20):
        rng = Rng(7000 + s)
        e = 2 + s % 2
        p = 4 + s % 5
        signs = np.where(rng.uniform(p) < 0.5, -1.0, 1.0)
        mags = 0.3 + 1.2 * rng.uniform(e * p).reshape(e, p)
        pg = 0.1 * (2.0 * rng.uniform(p) - 1.0)
        gamma = 0.25 + 0.75 * float(rng.uniform(1)[0])
        gradset = build_gradient_set(signs[None, :] * mags, pg)

        def disagreement(iters):
            params = BaParams(
                beta=1.0, gamma=gamma, iterations=iters, branch_mode="signed_erm"
            )
            return ba_solve(gradset, params).disagreement()

        d5, d25, d200 = disagreement(5), disagreement(25), disagreement(200)
        worst_5 = max(worst_5, d5)
        endpoint_ok &= d25 <= d5 + 1e-12
        worst_late = max(worst_late, d200)
    elapsed = time.perf_counter() - start
    ok = endpoint_ok and worst_late <= 1e-3
    _verdict(
        6,
        "conditional-marginal agreement",
        ok,
        f"max disagreement after 200 iterations {worst_late:.2e} <= 1e-3, "
        f"iteration-25 value never above iteration-5 value (max at 5: {worst_5:.2e})",
        elapsed,
        30.0,
    )


def test_criterion_7_three_method_comparison():
    start = time.perf_counter()
    finals = {"erm": [], "joint": [], "sdg": []}
    for s in range(5):
        task = SyntheticTask(seed=s)
        for method, extra in (
            ("erm", {}),
            ("joint", {"penalty_weight": 10.0}),
            ("sdg", {}),
        ):
            result = train(task, TrainConfig(method=method, seed=s, **extra))
            last = result.epochs[-1]
            finals[method].append((last.in_dist_loss, last.unseen_acc, last.penalty))
    mean = {m: np.array(v).mean(axis=0) for m, v in finals.items()}
    joint_ratio = mean["joint"][0] / mean["erm"][0]
    sdg_ratio = mean["sdg"][0] / mean["erm"][0]
    unseen_gap = mean["sdg"][1] - mean["joint"][1]
    penalty_ok = mean["sdg"][2] <= mean["erm"][2]
    elapsed = time.perf_counter() - start
    ok = joint_ratio >= 1.2 and sdg_ratio <= 1.05 and unseen_gap >= 0.02 and penalty_ok
    _verdict(
        7,
        "three-method comparison",
        ok,
        f"joint/plain loss ratio {joint_ratio:.3f} >= 1.2, sign-update/plain {sdg_ratio:.3f} <= 1.05, "
        f"unseen-accuracy gap {unseen_gap:+.3f} >= 0.02, final penalty "
        f"{mean['sdg'][2]:.4f} <= {mean['erm'][2]:.4f}",
        elapsed,
        300.0,
    )


def _spearman(x, y):
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def test_criterion_8_tradeoff_knob_monotonicity(tmp_path):
    start = time.perf_counter()
    config = tmp_path / "sweep.toml"
    config.write_text("[task]\n[train]\n[sweep]\nbeta_zeros = [0.01, 0.1, 1.0, 10.0]\n")
    per_seed = []
    for s in range(5):
        out = tmp_path / f"seed{s}"
        rc = main(["sweep", "--config", str(config), "--out", str(out), "--seed", str(s)])
        assert rc == 0
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        per_seed.append(
            [(float(r["beta_zero"]), float(r["in_dist_loss"]), float(r["penalty"])) for r in rows]
        )
    mean = np.array(per_seed).mean(axis=0)  # (4, 3): beta_zero, loss, penalty
    knob, loss, penalty = mean[:, 0], mean[:, 1], mean[:, 2]
    pen_violations = sum(1 for a, b in zip(penalty, penalty[1:]) if b < a)
    loss_violations = sum(1 for a, b in zip(loss, loss[1:]) if b > a)
    pen_corr = _spearman(knob, penalty)
    loss_corr = _spearman(knob, loss)
    elapsed = time.perf_counter() - start
    ok = (
        pen_violations <= 1
        and loss_violations <= 1
        and pen_corr >= 0.8
        and loss_corr <= -0.8
    )
    _verdict(
        8,
        "trade-off knob monotonicity",
        ok,
        f"penalty non-decreasing ({pen_violations} adjacent violations, rank corr {pen_corr:+.2f}), "
        f"loss non-increasing ({loss_violations} violations, rank corr {loss_corr:+.2f}) over 5 seeds",
        elapsed,
        600.0,
    )


def test_criterion_9_command_determinism(tmp_path):
    start = time.perf_counter()
    configs = {
        "train": (
            "[task]\nseed = 3\nsamples_per_domain = 60\ntest_samples_per_domain = 40\n"
            "[train]\nseed = 3\nepochs = 3\nsteps_per_epoch = 5\nsamples_per_domain = 20\n"
        ),
        "prop1": "[prop1]\nobjective = 'quadratic'\nsteps = 200\nnoise_scale = 0.5\nseed = 5\nrepetitions = 3\n",
        "rdcurve": "[rdcurve]\nbetas = [0.0, 0.5, 1.0, 2.0, 4.0]\n",
        "sweep": (
            "[task]\nseed = 2\nsamples_per_domain = 60\ntest_samples_per_domain = 40\n"
            "[train]\nseed = 2\nepochs = 2\nsteps_per_epoch = 5\nsamples_per_domain = 20\n"
            "[sweep]\nbeta_zeros = [0.1, 1.0]\n"
        ),
    }
    identical = True
    for command, text in configs.items():
        config = tmp_path / f"{command}.toml"
        config.write_text(text)
        paths = []
        for run in ("a", "b"):
            out = tmp_path / f"{command}_{run}"
            rc = main([command, "--config", str(config), "--out", str(out), "--seed", "7"])
            assert rc == 0
            paths.append(out / "metrics.csv")
        identical &= paths[0].read_bytes() == paths[1].read_bytes()
    elapsed = time.perf_counter() - start
    _verdict(
        9,
        "command determinism",
        identical,
        "metrics.csv byte-identical across repeated runs of all four subcommands",
        elapsed,
        60.0,
    )
