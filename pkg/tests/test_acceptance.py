"""Acceptance suite.

Each test prints one PASS/FAIL line per criterion. Coverage targets come
from the reference study designs (single instrument with varying
invalidity; five moderate instruments with s invalid ones); tolerances
widen with distance from the boundary to absorb binomial error and
unspecified implementation slack in the reference numbers:
+-0.02 for targets at or beyond 0.98/0.02, +-0.035 in [0.9, 0.98),
+-0.06 for mid-range targets.
"""

import json
import math

import numpy as np
import pytest

from possiv import (
    Box,
    L2Ball,
    StructuralPoint,
    Unconstrained,
    build_curve,
    chi2_cdf_1dof,
    conditional_log_possibility,
    experiment1_config,
    experiment2_config,
    fit_reduced_form,
    gamma_star,
    generate_dataset,
    log_structural_possibility,
    parse_method_spec,
    profile_log_possibility,
    project,
    rotation,
    run_experiment,
    sigma_hat_of_beta,
    t_of_beta,
    validify_mc_point,
)
from possiv.cli import main
from possiv.rng import TAG_SIMULATE, substream, substream_seed

from util import make_fit, random_fit, random_spd


def tolerance(target: float) -> float:
    if target >= 0.98 or target <= 0.02:
        return 0.02
    if 0.9 <= target < 0.98:
        return 0.035
    return 0.06


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def check_rows(rows, targets):
    failures = []
    details = []
    for row, target in zip(rows, targets):
        tol = tolerance(target)
        ok = abs(row.coverage - target) <= tol
        details.append(f"{row.method}={row.coverage:.3f} vs {target}+-{tol}")
        if not ok:
            failures.append(details[-1])
    return failures, "; ".join(details)


def test_criterion_1_single_instrument_coverage():
    """Coverage targets, single-instrument design (desk scale)."""
    targets_cheap = {0.0: (0.939, 0.947), 0.25: (0.319, 0.276), 0.5: (0.002, 0.001)}
    targets_mc = {0.0: (1.0, 0.948), 0.25: (1.0, 1.0), 0.5: (0.958, 0.96)}
    failures, all_details = [], []
    for alpha, (t_chi2, t_tsls) in targets_cheap.items():
        cfg = experiment1_config(alpha)
        methods = [parse_method_spec("singleton:0+chi2", 1), parse_method_spec("tsls", 1)]
        rep = run_experiment(cfg, methods, reps=1000, seed=20_250_101)
        bad, det = check_rows(rep.rows, (t_chi2, t_tsls))
        failures += [f"alpha={alpha}: {b}" for b in bad]
        all_details.append(f"alpha={alpha}: {det}")
    for alpha, (t_wide, t_onesided) in targets_mc.items():
        cfg = experiment1_config(alpha)
        methods = [
            parse_method_spec("box:-0.5:0.5+mc", 1, mc_samples=500),
            parse_method_spec("box:0:0.5+mc", 1, mc_samples=500),
        ]
        rep = run_experiment(cfg, methods, reps=500, seed=20_250_102)
        bad, det = check_rows(rep.rows, (t_wide, t_onesided))
        failures += [f"alpha={alpha}: {b}" for b in bad]
        all_details.append(f"alpha={alpha}: {det}")
    report("1 single-instrument coverage", not failures, " | ".join(all_details))
    assert not failures, failures


def test_criterion_2_five_instrument_coverage():
    """Coverage spot targets, five-instrument design (desk scale)."""
    runs = [
        (5, "box:-0.1:0.1+mc", 0.926, 0.06),
        (3, "tsls", 0.562, 0.06),
        (0, "singleton:0+chi2", 0.924, 0.035),
    ]
    failures, details = [], []
    for s, spec_text, target, tol in runs:
        cfg = experiment2_config(s)
        spec = parse_method_spec(spec_text, 5, mc_samples=500)
        rep = run_experiment(cfg, [spec], reps=500, seed=20_250_103)
        cov = rep.rows[0].coverage
        details.append(f"s={s} {spec.label}={cov:.3f} vs {target}+-{tol}")
        if abs(cov - target) > tol:
            failures.append(details[-1])
    report("2 five-instrument coverage", not failures, "; ".join(details))
    assert not failures, failures


def test_criterion_3_strong_validity():
    """Recalibrated possibility at the true effect undershoots no level."""
    cfg = experiment1_config(0.25)
    vset = Box(lower=np.array([-0.5]), upper=np.array([0.5]))
    reps, m, seed = 500, 500, 20_250_104
    pis = np.empty(reps)
    for rep in range(reps):
        data = generate_dataset(cfg, substream(seed, TAG_SIMULATE, rep))
        fit = fit_reduced_form(data)
        pis[rep] = validify_mc_point(
            fit, vset, cfg.beta_true, data.z, m=m, seed=substream_seed(seed, rep)
        )
    failures, details = [], []
    for delta in (0.01, 0.05, 0.10):
        bound = delta + 3 * math.sqrt(delta * (1 - delta) / reps)
        rate = float(np.mean(pis <= delta))
        details.append(f"P(pi<={delta})={rate:.4f} bound={bound:.4f}")
        if rate > bound:
            failures.append(details[-1])
    report("3 strong validity", not failures, "; ".join(details))
    assert not failures, failures


def _box_grid(lower, upper, step):
    # Boundary-inclusive axes: the minimiser often sits on a face, where the
    # objective is first order in any grid offset.
    axes = [
        np.unique(np.append(np.arange(lower[j], upper[j], step), upper[j]))
        for j in range(len(lower))
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _ball_grid(tau, p, step):
    axes = [np.arange(-tau, tau + 1e-12, step) for _ in range(p)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    pts = pts[np.linalg.norm(pts, axis=1) <= tau]
    # Dense boundary shell at the same resolution; exterior projections land
    # exactly on the sphere.
    if p == 2:
        theta = np.arange(0.0, 2 * np.pi, step / tau)
        shell = tau * np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        count = int(np.ceil(4 * np.pi * tau * tau / step**2))
        k = np.arange(count) + 0.5
        phi = np.arccos(1 - 2 * k / count)
        golden = np.pi * (1 + 5**0.5)
        shell = tau * np.column_stack(
            [np.cos(golden * k) * np.sin(phi), np.sin(golden * k) * np.sin(phi), np.cos(phi)]
        )
    return np.vstack([pts, shell])


def test_criterion_4_projection_oracle_equivalence():
    """Solver vs dense-grid brute force and KKT conditions, 200 instances."""
    rng = np.random.default_rng(20_250_105)
    worst_obj, worst_kkt = 0.0, 0.0
    for i in range(200):
        p = 2 if i % 2 == 0 else 3
        gram = random_spd(rng, p, scale=4.0, jitter=1.0)
        t = rng.uniform(-0.3, 0.3, size=p)
        if i % 4 < 2:
            span = 0.12 if p == 2 else 0.06
            lower = rng.uniform(-span, -0.02, size=p)
            upper = rng.uniform(0.02, span, size=p)
            res = project(Box(lower=lower, upper=upper), t, gram)
            pts = _box_grid(lower, upper, 1e-3)
            grad = 2.0 * gram @ (res.alpha_hat - t)
            kkt = 0.0
            for j in range(p):
                if res.alpha_hat[j] <= lower[j]:
                    kkt = max(kkt, max(0.0, -grad[j]))
                elif res.alpha_hat[j] >= upper[j]:
                    kkt = max(kkt, max(0.0, grad[j]))
                else:
                    kkt = max(kkt, abs(grad[j]))
        else:
            tau = float(rng.uniform(0.03, 0.12 if p == 2 else 0.06))
            res = project(L2Ball(tau=tau), t, gram)
            pts = _ball_grid(tau, p, 1e-3)
            grad = 2.0 * gram @ (res.alpha_hat - t)
            if res.interior:
                kkt = float(np.max(np.abs(grad)))
            else:
                kkt = float(np.max(np.abs(grad + 2.0 * res.lam * res.alpha_hat)))
                kkt = max(kkt, abs(np.linalg.norm(res.alpha_hat) - tau))
        diff = pts - t
        brute = float(np.min(((diff @ gram) * diff).sum(axis=1)))
        assert res.sq_distance <= brute + 1e-10
        worst_obj = max(worst_obj, brute - res.sq_distance)
        worst_kkt = max(worst_kkt, kkt)
    ok = worst_obj <= 1e-4 and worst_kkt <= 1e-8
    report(
        "4 projection oracle equivalence",
        ok,
        f"max objective gap {worst_obj:.2e} <= 1e-4; max KKT residual {worst_kkt:.2e} <= 1e-8",
    )
    assert ok


def test_criterion_5_analytic_identities():
    """Closed-form identity suite, 100+ randomised instances each."""
    rng = np.random.default_rng(20_250_106)
    failures, details = [], []

    worst = 0.0
    for _ in range(120):
        psi = random_spd(rng, 2)
        beta = float(rng.uniform(-5, 5))
        fit = make_fit([[0.0, 0.0]], psi, [[1.0]])
        r = rotation(beta)
        worst = max(worst, float(np.max(np.abs(r @ sigma_hat_of_beta(fit, beta) @ r.T - psi))))
    details.append(f"covariance rotation {worst:.2e} <= 1e-12")
    if worst > 1e-12:
        failures.append(details[-1])

    worst = 0.0
    for _ in range(120):
        p = int(rng.integers(1, 4))
        fit = random_fit(rng, n=50, p=p, gamma2=np.full(p, 1.0))
        beta = float(rng.uniform(-3, 3))
        alpha = rng.standard_normal(p)
        point = StructuralPoint(alpha=alpha, beta=beta, sigma=random_spd(rng, 2))
        g = gamma_star(fit, point)
        worst = max(worst, float(np.max(np.abs(g @ np.array([1.0, -beta]) - alpha))))
    details.append(f"constraint identity {worst:.2e} <= 1e-8")
    if worst > 1e-8:
        failures.append(details[-1])

    worst = 0.0
    for _ in range(120):
        p = int(rng.integers(1, 4))
        fit = random_fit(rng, n=60, p=p, gamma2=np.full(p, 1.0))
        beta = float(rng.uniform(-2.5, 2.5))
        alpha = rng.standard_normal(p)
        point = StructuralPoint(alpha=alpha, beta=beta, sigma=sigma_hat_of_beta(fit, beta))
        gap = abs(
            profile_log_possibility(fit, alpha, beta) - log_structural_possibility(fit, point)
        )
        worst = max(worst, gap)
    details.append(f"profile vs full {worst:.2e} <= 1e-9")
    if worst > 1e-9:
        failures.append(details[-1])

    worst = 0.0
    for _ in range(100):
        fit = random_fit(rng, n=40, p=2)
        beta = float(rng.uniform(-5, 5))
        worst = max(worst, abs(conditional_log_possibility(fit, Unconstrained(), beta)))
    flat = build_curve(random_fit(rng, n=40, p=1), Unconstrained())
    worst = max(worst, float(np.max(np.abs(flat.possibility - 1.0))))
    details.append(f"unconstrained flat {worst:.2e} == 0")
    if worst > 0.0:
        failures.append(details[-1])

    xs = np.concatenate([rng.uniform(1e-6, 20, size=100), [0.1, 1.0, 3.84, 10.0]])
    from scipy import special

    worst = float(np.max(np.abs(chi2_cdf_1dof(xs) - special.erf(np.sqrt(xs / 2.0)))))
    details.append(f"chi2 cdf vs erf {worst:.2e} <= 1e-10")
    if worst > 1e-10:
        failures.append(details[-1])

    report("5 analytic identities", not failures, "; ".join(details))
    assert not failures, failures


def test_criterion_6_workflow_with_covariates(tmp_path):
    """End-to-end workflow on a synthetic stand-in (p=1, one covariate,
    intercept): fit both recalibrations, sweep, hypothesis bounds. No
    numeric targets; the external study data is not bundled."""
    rng = np.random.default_rng(20_250_107)
    n = 64
    u = rng.standard_normal(n)
    z = rng.standard_normal(n) + 0.4 * u
    x = 0.8 * z + 0.6 * u + rng.standard_normal(n)
    y = 0.9 * x + 0.5 * u + 1.5 + rng.standard_normal(n)
    path = tmp_path / "study.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("outcome,exposure,instrument,control\n")
        for row in zip(y, x, z, u):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    base = [
        "--data", str(path), "--outcome", "outcome", "--treatment", "exposure",
        "--instruments", "instrument", "--covariates", "control", "--intercept",
    ]
    out = str(tmp_path / "run")
    codes = [
        main(["fit", *base, "--violation", "box:-0.1:0.1", "--method", "chi2", "--out", out]),
        main(
            ["fit", *base, "--violation", "box:-0.1:0.1", "--method", "mc",
             "--mc-samples", "200", "--seed", "5", "--out", out + "_mc"]
        ),
        main(
            ["sweep", *base, "--box-halfwidths", "0,0.1,0.2,0.3,0.4,0.5",
             "--threshold", "0", "--out", str(tmp_path / "sweep.csv")]
        ),
        main(
            ["hypothesis", *base, "--violation", "box:-0.1:0.1", "--threshold", "0",
             "--direction", "greater", "--out", str(tmp_path / "hyp.json")]
        ),
    ]
    with open(out + ".summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)
    ok = codes == [0, 0, 0, 0] and "interval_validified" in summary
    report("6 workflow with covariates", ok, f"exit codes {codes}")
    assert ok
