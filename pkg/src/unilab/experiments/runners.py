"""Experiment suites: universality sweeps, sign-invariance breakdown, VAMP vs state evolution.

Every trial (ensemble x seed) derives its randomness from ``master_seed`` and
a component path. Signal and noise paths do not mention the ensemble, so all
ensembles in a trial see the same signal and noise draw (paired comparison).
Trials may run on a thread pool (``UNILAB_THREADS``); rows are sorted before
writing so output never depends on completion order.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations

import numpy as np

from .. import dynamics as dy
from ..ensembles import sample_ensemble, sample_spike_hwt
from ..errors import ConfigError
from ..regularization import from_dict as regularizer_from_dict
from ..rng import derive_seed, stream
from ..solver import make_instance, mse, nmse, prox_grad, sample_prior
from ..universality import TolProfile, class_report
from .config import prior_names
from .results import ZERO_SIGNAL, ResultTable


def workers():
    try:
        n = int(os.environ.get("UNILAB_THREADS", "1"))
    except ValueError:
        raise ConfigError("UNILAB_THREADS", "must be an integer") from None
    return max(1, n)


def pmap(fn, items):
    items = list(items)
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def label_of(ens):
    return str(ens.get("label", ens["tag"]))


def build_operator(ens, N, seed):
    params = {k: v for k, v in ens.items() if k not in ("tag", "label")}
    return sample_ensemble(ens["tag"], N, seed, **params)


def trial_seed(cfg, kind, s):
    return derive_seed(cfg.master_seed, kind, s)


def _signal(cfg, name, s, chi=None):
    p = cfg.prior
    return sample_prior(name, cfg.N, trial_seed(cfg, "signal", s), chi=chi,
                        atoms=p.get("atoms"), probs=p.get("probs"))


def _check_labels(cfg):
    labels = [label_of(e) for e in cfg.ensembles]
    if len(set(labels)) != len(labels):
        raise ConfigError("ensembles", "labels must be distinct (add a 'label' field)")


def histogram(values, bin_count=101, range=(-25.0, 25.0)):
    """Uniform-bin histogram; values outside ``range`` are not retained.

    Returns ``(edges, counts)``. An empty input gives all-zero counts.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be at least 1")
    values = np.asarray(values, dtype=float).ravel()
    edges = np.linspace(range[0], range[1], bin_count + 1)
    if values.size == 0:
        return edges, np.zeros(bin_count, dtype=int)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def total_variation(c1, c2):
    p = np.asarray(c1, dtype=float)
    q = np.asarray(c2, dtype=float)
    if p.sum() == 0 or q.sum() == 0:
        return float("nan")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def max_pairwise_rel(curves):
    """Per-x max over ensemble pairs of ``|a - b| / min(a, b)``."""
    names = sorted(curves)
    out = np.zeros(len(next(iter(curves.values()))))
    for a, b in combinations(names, 2):
        ca, cb = curves[a], curves[b]
        out = np.maximum(out, np.abs(ca - cb) / np.minimum(np.abs(ca), np.abs(cb)))
    return out


# --------------------------------------------------------------------------
# universality of RLS and of the proximal dynamics: penalty sweep, trajectories, histograms

def _fig1_sweep_trial(cfg, ens, s):
    rows = []
    beta = _signal(cfg, cfg.prior["name"], s)
    for lam1 in cfg.lambda1_grid:
        # stateful samplers (revealed Haar) are rebuilt per grid point
        X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
        inst = make_instance(X, beta, cfg.sigma, seed=trial_seed(cfg, "noise", s))
        rho = regularizer_from_dict(cfg.penalty(lam1))
        tr = prox_grad(inst, rho, T=cfg.iterations, record_every=cfg.iterations, tol=cfg.tol)
        rows += [(label_of(ens), s, lam1, "mse", mse(tr.final, beta)),
                 (label_of(ens), s, lam1, "iterations", tr.T),
                 (label_of(ens), s, lam1, "max_increase", tr.max_increase())]
    return rows


def _fig1_iterations_trial(cfg, ens, s):
    beta = _signal(cfg, cfg.prior["name"], s)
    X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
    inst = make_instance(X, beta, cfg.sigma, seed=trial_seed(cfg, "noise", s))
    rho = regularizer_from_dict(cfg.penalty(cfg.lambda1))
    tr = prox_grad(inst, rho, T=cfg.iterations, record_every=cfg.record_every)
    rows = [(label_of(ens), s, t, "mse", m) for t, m in zip(tr.ts, tr.mse)]
    rows.append((label_of(ens), s, tr.T, "max_increase", tr.max_increase()))
    return rows


def _fig1_histogram_trial(cfg, ens, s):
    beta = _signal(cfg, cfg.prior["name"], s)
    X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
    inst = make_instance(X, beta, cfg.sigma, seed=trial_seed(cfg, "noise", s))
    rho = regularizer_from_dict(cfg.penalty(cfg.lambda1))
    tr = prox_grad(inst, rho, T=cfg.iterations, record_every=cfg.iterations, tol=cfg.tol)
    kept = tr.final[np.abs(tr.final) > cfg.nonzero_threshold]
    edges, counts = histogram(kept, cfg.bins, tuple(cfg.hist_range))
    centers = (edges[:-1] + edges[1:]) / 2
    return [(label_of(ens), s, c, "count", int(n)) for c, n in zip(centers, counts)]


def _run_trials(cfg, trial):
    _check_labels(cfg)
    jobs = [(ens, s) for ens in cfg.ensembles for s in range(cfg.trials)]
    table = ResultTable(cfg.experiment, cfg.header())
    for rows in pmap(lambda job: trial(cfg, *job), jobs):
        table.extend(rows)
    return table


def _curve_summary(table, metric):
    curves, xs = {}, None
    for ens in table.ensembles():
        xs, curves[ens] = table.medians(metric, ens)
    disc = max_pairwise_rel(curves) if len(curves) > 1 else np.zeros(len(xs))
    return {"metric": metric, "x": xs, "median": curves, "max_pairwise_rel": disc,
            "max_discrepancy": float(disc.max()) if disc.size else 0.0}


def run_fig1(cfg):
    """Cross-ensemble comparison: ``fig1_lambda_sweep``, ``fig1_iterations`` or ``fig1_histograms``."""
    if cfg.experiment == "fig1_lambda_sweep":
        table = _run_trials(cfg, _fig1_sweep_trial)
        table.summary = _curve_summary(table, "mse")
        inc = [v for v in table.select("max_increase").values()]
        table.summary["max_objective_increase"] = float(max(inc))
    elif cfg.experiment == "fig1_iterations":
        table = _run_trials(cfg, _fig1_iterations_trial)
        table.summary = _curve_summary(table, "mse")
        table.summary["max_objective_increase"] = float(max(table.select("max_increase").values()))
    elif cfg.experiment == "fig1_histograms":
        table = _run_trials(cfg, _fig1_histogram_trial)
        pooled = {}
        for (ens, _, x), v in table.select("count").items():
            pooled.setdefault(ens, {}).setdefault(x, 0)
            pooled[ens][x] += v
        hist = {e: np.array([pooled[e][x] for x in sorted(pooled[e])]) for e in pooled}
        tv = {f"{a}|{b}": total_variation(hist[a], hist[b]) for a, b in combinations(sorted(hist), 2)}
        table.summary = {"pooled_counts": hist, "total_variation": tv,
                         "max_total_variation": max(tv.values()) if tv else 0.0}
    else:
        raise ConfigError("experiment", f"{cfg.experiment!r} is not a cross-ensemble comparison experiment")
    return table


# --------------------------------------------------------------------------
# sparsity sweep with signed and unsigned designs

def _fig2_trial(cfg, ens, s, name):
    rows = []
    label = f"{label_of(ens)}|{name}"
    rho = regularizer_from_dict(cfg.penalty(cfg.lambda1))
    for chi in cfg.chi_grid:
        beta = _signal(cfg, name, s, chi=chi)
        X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
        inst = make_instance(X, beta, cfg.sigma, seed=trial_seed(cfg, "noise", s))
        if not np.any(beta):
            rows.append((label, s, chi, "nmse", ZERO_SIGNAL))
            continue
        tr = prox_grad(inst, rho, T=cfg.iterations, record_every=cfg.iterations, tol=cfg.tol)
        rows.append((label, s, chi, "nmse", nmse(tr.final, beta)))
    return rows


def gram_ones_diagnostics(M, N, seed=0):
    """Deterministic Gram identities behind the breakdown.

    Unsigned spikes + Hadamard: ``J^T J 1 = 1/2 1 + (sqrt(M)/2)(e_1 + e_{M+1})``;
    signed: coordinates of ``X^T X 1`` have mean near 1/2 and variance near 1/4.
    """
    J = sample_spike_hwt(M, seed=seed, signed=False)
    ones = np.ones(2 * M)
    expected = 0.5 * ones
    expected[0] += np.sqrt(M) / 2
    expected[M] += np.sqrt(M) / 2
    resid = float(np.max(np.abs(J.gram(ones) - expected)))
    X = sample_spike_hwt(N // 2, seed=seed, signed=True)
    g = X.gram(np.ones(N))
    return {"unsigned_identity_residual": resid, "M": M,
            "signed_mean": float(g.mean()), "signed_var": float(g.var()), "N": N}


def breakdown_summary(table, names, ensembles):
    """Unsigned-vs-signed deviation against the signed-vs-signed discrepancy, per prior."""
    out = {}
    tags = [label_of(e) for e in ensembles]
    for name in names:
        curves = {}
        for t in tags:
            xs, curves[t] = table.medians("nmse", f"{t}|{name}")
        per = {"chi": xs, "median": curves, "comparisons": {}}
        signed = [t for t in tags if not t.endswith("_unsigned")]
        for t in tags:
            if not t.endswith("_unsigned") or t.removesuffix("_unsigned") not in curves:
                continue
            base = t.removesuffix("_unsigned")
            dev = np.abs(curves[t] - curves[base])
            others = [o for o in signed if o != base]
            ref = np.zeros_like(dev)
            for o in others:
                ref = np.maximum(ref, np.abs(curves[o] - curves[base]))
            ratio = dev / np.maximum(ref, 1e-12)
            per["comparisons"][t] = {"deviation": dev, "signed_discrepancy": ref,
                                     "ratio": ratio, "breakdown": bool(np.any(ratio > 3.0)) if others else None}
        out[name] = per
    return out


def run_fig2(cfg):
    _check_labels(cfg)
    names = prior_names(cfg)
    jobs = [(ens, s, n) for n in names for ens in cfg.ensembles for s in range(cfg.trials)]
    table = ResultTable(cfg.experiment, cfg.header())
    for rows in pmap(lambda job: _fig2_trial(cfg, *job), jobs):
        table.extend(rows)
    table.summary = breakdown_summary(table, names, cfg.ensembles)
    table.summary["gram_ones"] = gram_ones_diagnostics(16, cfg.N, seed=cfg.master_seed)
    return table


# --------------------------------------------------------------------------
# VAMP vs state evolution

def rademacher_aux(rng, n):
    return np.column_stack([2.0 * rng.integers(0, 2, n) - 1.0])


def vamp_template(name, T):
    """Raw (uncorrected) nonlinearities of a named VAMP program and its auxiliary law.

    ``default``: one unit-variance sign column ``a``; ``f_1 = a``,
    ``f_2 = tanh(2 z_1) + a/2``, ``f_t = soft(z_{t-1} + z_{t-2}; 1/2) + 0.3 a`` after that.
    """
    if name != "default":
        raise ConfigError("dynamics", f"unknown dynamics template {name!r}")
    fs = [dy.Nonlinearity(lambda h, a: a[:, 0], arity=0, lipschitz=0.0, label="signal")]
    if T >= 2:
        fs.append(dy.Nonlinearity(lambda h, a: np.tanh(2 * h[0]) + 0.5 * a[:, 0], arity=1,
                                  lipschitz=2.0, label="tanh"))
    for t in range(3, T + 1):
        def f(h, a):
            u = h[-1] + h[-2]
            return np.sign(u) * np.maximum(np.abs(u) - 0.5, 0.0) + 0.3 * a[:, 0]
        fs.append(dy.Nonlinearity(f, arity=t - 1, lipschitz=2.0, label=f"soft{t}"))
    return fs, rademacher_aux


def _spectral_moments(X, kmax):
    lam = np.asarray(X.lam, dtype=float)
    return [float(np.mean(lam ** k)) for k in range(1, kmax + 1)]


def _vamp_trial(cfg, ens, s, fs, aux_law):
    X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
    moments = _spectral_moments(X, 2 * cfg.T)
    Ms = dy.build_semirandom(dy.centered_powers(X, cfg.T, moments), trial_seed(cfg, "signs", s))
    A = aux_law(stream(cfg.master_seed, "aux", s), cfg.N)
    zs = dy.run_vamp(dy.DynamicsSpec(cfg.T, Ms, fs, None, A))
    return label_of(ens), s, dy.empirical_gram(zs)


def run_vamp_se(cfg):
    _check_labels(cfg)
    raw, aux_law = vamp_template(cfg.dynamics, cfg.T)
    X0 = build_operator(cfg.ensembles[0], cfg.N, trial_seed(cfg, "matrix", 0))
    if X0.lam is None:
        raise ConfigError("ensembles[0]", "VAMP runs need an ensemble with a known spectrum")
    moments = _spectral_moments(X0, 2 * cfg.T)
    omega = dy.centered_power_omega(moments, cfg.T)
    fs, se = dy.divergence_free_program(raw, omega, aux_law, cfg.mc_samples,
                                        seed=derive_seed(cfg.master_seed, "state-evolution"))
    tol = dy.gram_tolerance(se)
    jobs = [(ens, s) for ens in cfg.ensembles for s in range(cfg.trials)]
    table = ResultTable(cfg.experiment, cfg.header())
    grams = {}
    for label, s, G in pmap(lambda job: _vamp_trial(cfg, *job, fs, aux_law), jobs):
        grams[(label, s)] = G
        for i in range(cfg.T):
            for j in range(cfg.T):
                x = i * cfg.T + j
                table.add(label, s, x, "gram", G[i, j])
                table.add(label, s, x, "ratio", abs(G[i, j] - se.Sigma[i, j]) / tol[i, j])
    worst = {f"{k[0]}|{k[1]}": float(np.max(np.abs(G - se.Sigma) / tol)) for k, G in grams.items()}
    labels = [label_of(e) for e in cfg.ensembles]
    mean_gram = {l: np.mean([grams[(l, s)] for s in range(cfg.trials)], axis=0) for l in labels}
    cross = {f"{a}|{b}": float(np.max(np.abs(mean_gram[a] - mean_gram[b]) / tol))
             for a, b in combinations(labels, 2)}
    table.summary = {"omega": omega, "sigma": se.Sigma, "mc_se": se.Sigma_se, "tolerance": tol,
                     "max_ratio": worst, "cross_ensemble_ratio": cross,
                     "mean_gram": mean_gram,
                     "pass": bool(max(worst.values()) <= 1.0 and max(cross.values(), default=0) <= 1.0)}
    return table


# --------------------------------------------------------------------------
# class reports

def _class_trial(cfg, ens, s):
    X = build_operator(ens, cfg.N, trial_seed(cfg, "matrix", s))
    rep = class_report(X, X.measure, ks=cfg.ks, tol_profile=TolProfile(),
                       seed=trial_seed(cfg, "probes", s))
    label = label_of(ens)
    rows = []
    for r in rep.moments:
        rows += [(label, s, r.k, "empirical", r.empirical), (label, s, r.k, "target", r.target),
                 (label, s, r.k, "deviation", r.deviation)]
    rows.append((label, s, 0, "pass", float(rep.passed)))
    return rows


def run_class_report(cfg):
    table = _run_trials(cfg, _class_trial)
    passes = table.select("pass")
    table.summary = {"pass": bool(all(v == 1.0 for v in passes.values())),
                     "median_deviation": {e: dict(zip(*map(list, table.medians("deviation", e))))
                                          for e in table.ensembles()}}
    return table


RUNNERS = {
    "fig1_lambda_sweep": run_fig1,
    "fig1_iterations": run_fig1,
    "fig1_histograms": run_fig1,
    "fig2_sparsity_sweep": run_fig2,
    "vamp_se": run_vamp_se,
    "class_report": run_class_report,
}


def run(cfg):
    return RUNNERS[cfg.experiment](cfg)
