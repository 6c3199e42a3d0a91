"""Command-line interface.

Every command is a pure function of its input files, flags, and seed:
re-execution reproduces the data outputs byte for byte.  Option
precedence is flags > config file > defaults; the config file is plain
``key = value`` text keyed by option names (dashes or underscores).

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import os
import sys

import click
import numpy as np

from . import analytics, diagnostics, inference, mcmc, model, storage
from .dataset import build_design, load_covariates, load_observations
from .errors import InputError, NumericalError, PanelHmmError

SCHEMA_COMMENT = f"# schema-version: {storage.SCHEMA_VERSION}"


def _read_config(path) -> dict:
    out = {}
    if path is None:
        return out
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _resolve(ctx, config: dict, **casts):
    """Apply config-file values for options the user left at default."""
    for key, cast in casts.items():
        source = ctx.get_parameter_source(key)
        if source is not None and source.name != "DEFAULT":
            continue
        if key in config:
            ctx.params[key] = cast(config[key])
    return ctx.params


def _load_data(y_path, x_path, missing_token):
    panel = load_observations(y_path, missing_token=missing_token)
    raw = load_covariates(x_path)
    if raw.n_subjects != panel.n_subjects:
        raise InputError(
            f"subject count mismatch: {panel.n_subjects} rows in {y_path}, "
            f"{raw.n_subjects} in {x_path}"
        )
    return panel, build_design(raw, panel.n_days)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SCHEMA_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_fit(fit_dir):
    if not os.path.exists(os.path.join(fit_dir, storage.SAMPLES_FILE)):
        raise InputError(f"{fit_dir}: no {storage.SAMPLES_FILE}; run `fit` first")
    return storage.load_chain_set(fit_dir)


@click.group()
def cli():
    """Mixed-effects (hidden) Markov models for ordinal panel data."""


@cli.command()
@click.option("--y", "y_path", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_kind", type=click.Choice(["hmm", "markov"]),
              default="hmm", show_default=True)
@click.option("--states", type=int, default=3, show_default=True)
@click.option("--chains", type=int, default=3, show_default=True)
@click.option("--burnin", type=int, default=10_000, show_default=True)
@click.option("--keep", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--step-alpha", type=float, default=0.4, show_default=True)
@click.option("--step-beta", type=float, default=0.1, show_default=True)
@click.option("--missing-token", default="NA", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def fit(ctx, y_path, x_path, model_kind, states, chains, burnin, keep, seed,
        step_alpha, step_beta, missing_token, config_path, out_dir):
    """Run the MCMC sampler and persist posterior samples."""
    config = _read_config(config_path)
    p = _resolve(ctx, config, model_kind=str, states=int, chains=int,
                 burnin=int, keep=int, seed=int, step_alpha=float,
                 step_beta=float, missing_token=str)
    panel, design = _load_data(y_path, x_path, p["missing_token"])
    sampler_config = mcmc.SamplerConfig(
        n_chains=p["chains"], n_burnin=p["burnin"], n_keep=p["keep"],
        rw_step_alpha=p["step_alpha"], rw_step_beta=p["step_beta"],
        seed=p["seed"],
    )
    chain_set = mcmc.run_chains(p["model_kind"], panel, design,
                                config=sampler_config, n_states=p["states"])
    os.makedirs(out_dir, exist_ok=True)
    storage.save_chain_set(out_dir, chain_set)
    storage.write_manifest(
        out_dir, "fit",
        {"model": p["model_kind"], "states": p["states"], "chains": p["chains"],
         "burnin": p["burnin"], "keep": p["keep"],
         "step_alpha": p["step_alpha"], "step_beta": p["step_beta"],
         "missing_token": p["missing_token"]},
        {"y": y_path, "x": x_path}, p["seed"],
    )
    click.echo(f"fit complete: {sum(c.n_kept for c in chain_set.chains)} draws "
               f"in {out_dir}/{storage.SAMPLES_FILE}")


@cli.command()
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--days", type=int, required=True)
@click.option("--subjects", type=int, default=None)
@click.option("--mask-from", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--missing-token", default="NA", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def simulate(params_path, x_path, days, subjects, mask_path, missing_token,
             seed, out_dir):
    """Simulate a panel from serialized parameters."""
    params = model.load_params(params_path)
    raw = load_covariates(x_path)
    design = build_design(raw, days)
    n = subjects if subjects is not None else params.n_subjects
    mask = None
    if mask_path is not None:
        mask = load_observations(mask_path, missing_token=missing_token).mask[:n, :days]
    if isinstance(params, model.HmmParams):
        sim = model.simulate_hmm(params, design, n, days, mask=mask, seed=seed)
    else:
        sim = model.simulate_markov(params, design, n, days, mask=mask, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    from .dataset import save_observations
    save_observations(sim.observed, os.path.join(out_dir, "y_sim.csv"),
                      missing_token=missing_token)
    if sim.hidden is not None:
        np.savetxt(os.path.join(out_dir, "hidden_sim.csv"), sim.hidden,
                   fmt="%d", delimiter=",")
    storage.write_manifest(out_dir, "simulate",
                           {"days": days, "subjects": n},
                           {"params": params_path, "x": x_path}, seed)
    click.echo(f"simulated {n}x{days} panel in {out_dir}")


@cli.command()
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True))
@click.option("--y", "y_path", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--missing-token", default="NA", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def diagnose(fit_dir, y_path, x_path, missing_token, out_dir):
    """Convergence summaries (R-hat, ESS, quantiles) and the DIC report."""
    chain_set = _load_fit(fit_dir)
    panel, design = _load_data(y_path, x_path, missing_token)
    rows = diagnostics.scalar_summaries(chain_set)
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "convergence.csv"),
        ["parameter", "mean", "sd", "q025", "q975", "rhat", "ess"],
        [[r["parameter"], repr(r["mean"]), repr(r["sd"]), repr(r["q025"]),
          repr(r["q975"]),
          "unavailable" if np.isnan(r["rhat"]) else repr(r["rhat"]),
          repr(r["ess"])] for r in rows],
    )
    report = diagnostics.dic(chain_set, panel, design)
    _write_csv(
        os.path.join(out_dir, "dic.csv"),
        ["mean_deviance", "deviance_at_mean", "p_d", "dic"],
        [[repr(report.mean_deviance), repr(report.deviance_at_mean),
          repr(report.p_d), repr(report.dic)]],
    )
    storage.write_manifest(out_dir, "diagnose", {},
                           {"y": y_path, "x": x_path}, None)
    click.echo(f"DIC = {report.dic:.1f} (p_d = {report.p_d:.1f})")


@cli.command()
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True))
@click.option("--y", "y_path", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["new-subjects", "same-subjects"]),
              default="new-subjects", show_default=True)
@click.option("--draws", type=int, default=None,
              help="Subsample this many posterior draws (evenly spaced).")
@click.option("--missing-token", default="NA", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def ppc(fit_dir, y_path, x_path, mode, draws, missing_token, seed, out_dir):
    """Posterior predictive checks of drinking-pattern statistics."""
    chain_set = _load_fit(fit_dir)
    panel, design = _load_data(y_path, x_path, missing_token)
    total = chain_set.n_chains * chain_set.n_kept
    indices = None
    if draws is not None:
        indices = np.linspace(0, total - 1, min(draws, total)).astype(int).tolist()
    results = analytics.ppc_check(
        chain_set, design, panel, mode=mode.replace("-", "_"),
        rng=np.random.default_rng(seed), draw_indices=indices)
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "ppc_replicates.csv"),
        ["statistic", "draw", "value"],
        [[r.name, g, repr(v)] for r in results
         for g, v in enumerate(r.replicates)],
    )
    _write_csv(
        os.path.join(out_dir, "ppc_summary.csv"),
        ["statistic", "observed", "quantile", "rep_q025", "rep_median", "rep_q975"],
        [[r.name, repr(r.observed), repr(r.quantile),
          repr(float(np.nanquantile(r.replicates, 0.025))),
          repr(float(np.nanquantile(r.replicates, 0.5))),
          repr(float(np.nanquantile(r.replicates, 0.975)))] for r in results],
    )
    storage.write_manifest(out_dir, "ppc", {"mode": mode, "draws": draws},
                           {"y": y_path, "x": x_path}, seed)
    click.echo(f"{len(results)} statistics checked; output in {out_dir}")


@cli.command()
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--days", type=int, required=True,
              help="Panel length used for the fit (defines the time grid).")
@click.option("--kind", type=click.Choice(["transition", "stationary"]),
              default="transition", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def apc(fit_dir, x_path, days, kind, out_dir):
    """Average predictive comparisons for every covariate and target."""
    chain_set = _load_fit(fit_dir)
    raw = load_covariates(x_path)
    design = build_design(raw, days)
    R = chain_set.stacked("pi").shape[1]
    covariates = list(design.names)
    if kind == "stationary":
        covariates = [c for c in covariates if c != "time"]
    draws_rows = []
    summary_rows = []
    for name in covariates:
        u_hi, u_lo = analytics.default_comparison_levels(design, name)
        if kind == "transition":
            targets = [("transition", j, m)
                       for j in range(1, R + 1) for m in range(1, R + 1)]
        else:
            targets = [("stationary", s) for s in range(1, R + 1)]
        for target in targets:
            request = analytics.PredictiveComparisonRequest(
                input_name=name, u_hi=u_hi, u_lo=u_lo, target=target)
            if kind == "transition":
                values = analytics.average_transition_difference(
                    chain_set, design, request)
                label = f"B[{target[1]}->{target[2]}]({name})"
            else:
                values = analytics.average_stationary_difference(
                    chain_set, design, request)
                label = f"Bstat[{target[1]}]({name})"
            draws_rows.extend([label, g, repr(v)] for g, v in enumerate(values))
            summary_rows.append([
                label, repr(float(values.mean())),
                repr(float(np.quantile(values, 0.025))),
                repr(float(np.quantile(values, 0.975))),
            ])
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "apc_draws.csv"),
               ["comparison", "draw", "value"], draws_rows)
    _write_csv(os.path.join(out_dir, "apc_summary.csv"),
               ["comparison", "mean", "q025", "q975"], summary_rows)
    storage.write_manifest(out_dir, "apc", {"kind": kind, "days": days},
                           {"x": x_path}, None)
    click.echo(f"{len(summary_rows)} comparisons written to {out_dir}")


@cli.command()
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True))
@click.option("--y", "y_path", required=True, type=click.Path(exists=True))
@click.option("--x", "x_path", required=True, type=click.Path(exists=True))
@click.option("--missing-token", default="NA", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def viterbi(fit_dir, y_path, x_path, missing_token, out_dir):
    """Decode hidden states at the posterior-mean parameters."""
    chain_set = _load_fit(fit_dir)
    if chain_set.model_kind != "hmm":
        raise InputError("viterbi decoding requires an HMM fit")
    panel, design = _load_data(y_path, x_path, missing_token)
    params = chain_set.posterior_mean_params()
    paths = inference.viterbi(panel, design, params)
    marginals = inference.smoothed_marginals(panel, design, params)
    S = params.n_states
    rows = []
    for i, path in enumerate(paths):
        for t in range(panel.n_days):
            observed = (missing_token if panel.mask[i, t]
                        else str(panel.codes[i, t]))
            rows.append([i, t + 1, observed, int(path.states[t])]
                        + [repr(float(marginals[i, t, s])) for s in range(S)])
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "viterbi.csv"),
        ["subject", "day", "observed", "state"]
        + [f"p_state_{s + 1}" for s in range(S)],
        rows,
    )
    storage.write_manifest(out_dir, "viterbi", {},
                           {"y": y_path, "x": x_path}, None)
    click.echo(f"decoded {len(paths)} subjects into {out_dir}/viterbi.csv")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except (InputError, FileNotFoundError, PermissionError) as exc:
        click.echo(f"input error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    except PanelHmmError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
