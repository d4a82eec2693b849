"""Experiment orchestration: config-driven runs with reproducible seeding
and CSV artifacts.

Commands: ``generate``, ``estimate``, ``calibration-study``, ``prior-bias``,
``protocol-check``.  Every run is a pure function of the resolved config and
master seed; replicate-level work is farmed to a process pool and results
are written in replicate order, so output bytes do not depend on the worker
count.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import hashlib
import json
import os
import shlex
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import diagnostics, estimators, mp, ppd
from .data import (
    CausalDataset,
    ConfigurationError,
    CsvSchema,
    DgpSpec,
    child_rng,
    child_seed,
    generate_synthetic,
    load_csv,
    prior_bias_harness,
    save_csv,
    train_test_split,
)
from .external import run_protocol_check

RESULT_COLUMNS = diagnostics.CSV_COLUMNS + ("estimate", "variance", "config_hash", "status")
ESTIMATOR_KEYS = ("plug_in", "aiptw", "plug_in_posterior", "ospc")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    n: int = 1000
    d_x: int = 25
    noise_sd: float = 1.0
    propensity_strength: float = 0.8
    path: str | None = None
    treatment: str = "a"
    outcome: str = "y"
    covariates: tuple[str, ...] | None = None

    def validate(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigurationError(f"dataset.kind must be synthetic or csv, got {self.kind!r}")
        if self.kind == "csv":
            if not self.path:
                raise ConfigurationError("dataset.path is required for csv datasets")
            if not os.path.exists(self.path):
                raise ConfigurationError(f"dataset.path does not exist: {self.path}")


@dataclass(frozen=True)
class BackendSection:
    kind: str = "conjugate"
    basis: str = "linear_squares"
    prior_mean: float = 0.0
    prior_precision: float = 1.0
    prior_shape: float = 2.0
    prior_rate: float = 2.0
    rff_features: int = 64
    rff_seed: int = 0
    rff_lengthscale: float = 1.0
    prob_clip: float = 0.01
    covariate_bandwidth_scale: float = 1.0
    outcome_bandwidth_scale: float = 1.0

    def to_config(self) -> ppd.BackendConfig:
        if self.kind == "conjugate":
            return ppd.ConjugateConfig(
                basis=self.basis,
                prior_mean=self.prior_mean,
                prior_precision=self.prior_precision,
                prior_shape=self.prior_shape,
                prior_rate=self.prior_rate,
                rff_features=self.rff_features,
                rff_seed=self.rff_seed,
                rff_lengthscale=self.rff_lengthscale,
                prob_clip=self.prob_clip,
            )
        if self.kind == "kernel":
            return ppd.KernelConfig(
                covariate_bandwidth_scale=self.covariate_bandwidth_scale,
                outcome_bandwidth_scale=self.outcome_bandwidth_scale,
            )
        raise ConfigurationError(f"backend.kind must be conjugate or kernel, got {self.kind!r}")


@dataclass(frozen=True)
class CopulaSection:
    rho: float = 0.5
    variant: str = "smooth"
    steps: int = 100
    draws: int = 100
    grid_size: int = 201
    max_step_weight: float = 0.1

    def to_config(self) -> mp.CopulaConfig:
        return mp.CopulaConfig(
            rho=self.rho,
            variant=self.variant,
            steps=self.steps,
            draws=self.draws,
            grid_size=self.grid_size,
            max_step_weight=self.max_step_weight,
        )


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    outcome_backend: BackendSection = field(default_factory=BackendSection)
    propensity_backend: BackendSection = field(default_factory=BackendSection)
    copula: CopulaSection = field(default_factory=CopulaSection)
    estimators: tuple[str, ...] = ("aiptw", "ospc")
    variance_ordering: bool = False
    folds: int = 0
    split_fraction: float = 0.8
    replicates: int = 1
    seed: int = 0
    truncation_floor: float = 0.05
    workers: int = 1
    out_dir: str = "results"
    external_command: str | None = None

    def validate(self):
        self.dataset.validate()
        self.outcome_backend.to_config().validate()
        self.propensity_backend.to_config().validate()
        self.copula.to_config()
        for name in self.estimators:
            if name not in ESTIMATOR_KEYS:
                raise ConfigurationError(f"unknown estimator {name!r}; choose from {ESTIMATOR_KEYS}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError("split_fraction must be in (0, 1)")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.folds not in (0,) and self.folds < 2:
            raise ConfigurationError("folds must be 0 (single split) or >= 2")

    def hash(self) -> str:
        # execution parameters (worker count, output location) do not touch
        # the statistics, so rows stay comparable across them
        payload = dataclasses.asdict(self)
        payload.pop("workers", None)
        payload.pop("out_dir", None)
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode()
        ).hexdigest()[:12]


def _build_section(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"unknown keys under {path}: {sorted(unknown)}")
    coerced = dict(raw)
    if "covariates" in coerced and coerced["covariates"] is not None:
        coerced["covariates"] = tuple(coerced["covariates"])
    return cls(**coerced)


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Strict YAML config: unknown keys anywhere are hard errors."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    sections = {
        "dataset": DatasetConfig,
        "outcome_backend": BackendSection,
        "propensity_backend": BackendSection,
        "copula": CopulaSection,
    }
    kwargs = {}
    for key, value in raw.items():
        if key in sections:
            kwargs[key] = _build_section(sections[key], value, key)
        elif key == "estimators":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    config = RunConfig(**kwargs)
    config.validate()
    return config


def _load_dataset(config: RunConfig, rep_seed: int):
    """Returns (dataset, oracle-or-None) for one replicate."""
    dc = config.dataset
    if dc.kind == "synthetic":
        spec = DgpSpec(
            n=dc.n,
            d_x=dc.d_x,
            seed=rep_seed,
            noise_sd=dc.noise_sd,
            propensity_strength=dc.propensity_strength,
        )
        return generate_synthetic(spec)
    schema = CsvSchema(treatment=dc.treatment, outcome=dc.outcome, covariates=dc.covariates)
    return load_csv(dc.path, schema), None


def _fitted_inputs(outcome, propensity, dataset: CausalDataset, floor: float):
    points = dataset.covariates
    return estimators.oracle_eif_inputs(
        dataset,
        outcome.posterior_mean_at(points, 0),
        outcome.posterior_mean_at(points, 1),
        propensity.prob_at(points),
        truncation_floor=floor,
    )


def _reference_law(oracle, test: CausalDataset, fitted_inputs, floor: float):
    """Oracle law when the truth is known, otherwise the fitted law."""
    if oracle is not None:
        mu0, mu1, pi = oracle.nuisances_at(test)
        inputs = estimators.oracle_eif_inputs(test, mu0, mu1, pi, truncation_floor=floor)
        _, law = estimators.aiptw(inputs)
        return law, False
    _, law = estimators.aiptw(fitted_inputs)
    return law, True


def _estimate_replicate(config: RunConfig, rep: int) -> list[dict]:
    rep_seed = child_seed(config.seed, rep)
    dataset, oracle = _load_dataset(config, rep_seed)
    train, test = train_test_split(dataset, 1.0 - config.split_fraction, seed=child_seed(rep_seed, 1))
    out_cfg = config.outcome_backend.to_config()
    prop_cfg = config.propensity_backend.to_config()
    outcome = ppd.fit_outcome(out_cfg, train)
    propensity = ppd.fit_propensity(prop_cfg, train)
    floor = config.truncation_floor
    fitted = _fitted_inputs(outcome, propensity, test, floor)
    law, estimated_ref = _reference_law(oracle, test, fitted, floor)

    base = dict(
        dataset=config.dataset.kind if config.dataset.kind == "synthetic" else config.dataset.path,
        n=dataset.n,
        d_x=dataset.d_x,
        seed=rep_seed,
        config_hash=config.hash(),
        status="ok",
    )
    copula_cfg = config.copula.to_config()
    rows: list[dict] = []

    needs_draws = bool(
        {"plug_in_posterior", "ospc"} & set(config.estimators)
    ) or config.variance_ordering
    draws = None
    if needs_draws:
        draws = mp.sample_nuisance_draws(
            outcome, propensity, train, test.covariates, copula_cfg, seed=child_seed(rep_seed, 2)
        )

    r2_value = None
    if oracle is not None and draws is not None:
        r2_value = diagnostics.r2_check(draws, oracle, test, train.n, floor).r2_hat

    var_cells = {"var_a": None, "var_b": None, "var_c": None}
    if config.variance_ordering:
        posteriors = {}
        for key, variant in (
            ("var_a", "x_independent"),
            ("var_b", "x_parallel"),
            ("var_c", "smooth"),
        ):
            vdraws = mp.sample_nuisance_draws(
                outcome,
                propensity,
                train,
                test.covariates,
                dataclasses.replace(copula_cfg, variant=variant),
                seed=child_seed(rep_seed, 2),
            )
            post = estimators.ospc_posterior(
                vdraws, test, child_rng(rep_seed, 6), truncation_floor=floor
            )
            posteriors[variant] = post
            var_cells[key] = post.variance()

    for name in config.estimators:
        row = dict(base, estimator=name, **var_cells)
        if name == "plug_in":
            row["estimate"] = estimators.plug_in_estimate(fitted.mu0_at, fitted.mu1_at)
        elif name == "aiptw":
            if config.folds >= 2:
                def refit(tr, ev):
                    o = ppd.fit_outcome(out_cfg, tr)
                    p = ppd.fit_propensity(prop_cfg, tr)
                    pts = ev.covariates
                    return (
                        o.posterior_mean_at(pts, 0),
                        o.posterior_mean_at(pts, 1),
                        p.prob_at(pts),
                    )

                est, law_cf, _ = estimators.cross_fit(
                    dataset, config.folds, refit, seed=child_seed(rep_seed, 7), truncation_floor=floor
                )
                row["estimate"], row["variance"] = est, law_cf.variance
            else:
                est, fit_law = estimators.aiptw(fitted)
                row["estimate"], row["variance"] = est, fit_law.variance
        else:
            rng = child_rng(rep_seed, 4 if name == "ospc" else 5)
            if name == "ospc":
                post = estimators.ospc_posterior(
                    draws, test, rng, truncation_floor=floor,
                    variant=copula_cfg.variant, rho=copula_cfg.rho,
                )
            else:
                post = estimators.plug_in_posterior(
                    draws, test, rng, variant=copula_cfg.variant, rho=copula_cfg.rho
                )
            row["estimate"] = post.mean()
            row["variance"] = post.variance()
            row["variant"] = copula_cfg.variant
            row["rho"] = copula_cfg.rho
            row["tv"] = diagnostics.tv_to_normal(post, law, estimated_ref).tv
            row["r2"] = r2_value
        rows.append(row)
    return rows


def _replicate_task(args):
    config, rep = args
    try:
        return rep, _estimate_replicate(config, rep), None
    except Exception as exc:  # recorded as a failed row; the run continues
        return rep, [], f"{type(exc).__name__}: {exc}"


def _run_parallel(config: RunConfig, task, items):
    if config.workers == 1:
        return [task(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(task, items))


def _write_rows(path: str, columns, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([diagnostics.format_cell(row.get(col)) for col in columns])


def cmd_generate(config: RunConfig) -> int:
    if config.dataset.kind != "synthetic":
        raise ConfigurationError("generate requires a synthetic dataset config")
    dataset, oracle = _load_dataset(config, config.seed)
    os.makedirs(config.out_dir, exist_ok=True)
    data_path = os.path.join(config.out_dir, "dataset.csv")
    save_csv(dataset, data_path)
    mu0, mu1, pi = oracle.nuisances_at(dataset)
    sidecar = {
        "spec": {
            "n": config.dataset.n,
            "d_x": config.dataset.d_x,
            "seed": config.seed,
            "noise_sd": config.dataset.noise_sd,
            "propensity_strength": config.dataset.propensity_strength,
        },
        "true_ate": oracle.true_ate,
        "mc_check_z": oracle.mc_check_z,
        "counterfactuals": oracle.counterfactuals.tolist(),
        "mu0_at": mu0.tolist(),
        "mu1_at": mu1.tolist(),
        "pi_at": pi.tolist(),
    }
    with open(os.path.join(config.out_dir, "dataset_oracle.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
    print(f"wrote {data_path} and oracle sidecar")
    return 0


def cmd_estimate(config: RunConfig) -> int:
    results = _run_parallel(
        config, _replicate_task, [(config, rep) for rep in range(config.replicates)]
    )
    results.sort(key=lambda item: item[0])
    rows: list[dict] = []
    failures: list[str] = []
    for rep, rep_rows, error in results:
        if error is None:
            rows.extend(rep_rows)
        else:
            failures.append(f"replicate {rep}: {error}")
            rows.append(
                dict(
                    dataset=config.dataset.kind,
                    seed=child_seed(config.seed, rep),
                    config_hash=config.hash(),
                    status=error.split(":")[0],
                )
            )
    path = os.path.join(config.out_dir, "results.csv")
    _write_rows(path, RESULT_COLUMNS, rows)
    for line in failures:
        print(line, file=sys.stderr)
    print(f"wrote {path} ({len(rows)} rows, {len(failures)} failed replicates)")
    return 0 if not failures else 1


def _calibration_task(args):
    config, rep = args
    rep_seed = child_seed(config.seed, rep)
    try:
        dataset, oracle = _load_dataset(config, rep_seed)
        if oracle is None:
            raise ConfigurationError("calibration-study requires a synthetic dataset")
        train, test = train_test_split(
            dataset, 1.0 - config.split_fraction, seed=child_seed(rep_seed, 1)
        )
        outcome = ppd.fit_outcome(config.outcome_backend.to_config(), train)
        propensity = ppd.fit_propensity(config.propensity_backend.to_config(), train)
        floor = config.truncation_floor
        copula_cfg = config.copula.to_config()
        draws = mp.sample_nuisance_draws(
            outcome, propensity, train, test.covariates, copula_cfg, seed=child_seed(rep_seed, 2)
        )
        kind = "ospc" if "ospc" in config.estimators else "plug_in_posterior"
        rng = child_rng(rep_seed, 4)
        if kind == "ospc":
            post = estimators.ospc_posterior(draws, test, rng, truncation_floor=floor)
        else:
            post = estimators.plug_in_posterior(draws, test, rng)
        fitted = _fitted_inputs(outcome, propensity, test, floor)
        law, _ = _reference_law(oracle, test, fitted, floor)
        tv = diagnostics.tv_to_normal(post, law).tv
        pit = post.pit(oracle.true_ate)
        return rep, {"replicate": rep, "pit": pit, "tv": tv, "seed": rep_seed, "status": "ok"}, None
    except Exception as exc:
        return rep, {"replicate": rep, "seed": rep_seed, "status": f"{type(exc).__name__}"}, str(exc)


def cmd_calibration_study(config: RunConfig) -> int:
    results = _run_parallel(
        config, _calibration_task, [(config, rep) for rep in range(config.replicates)]
    )
    results.sort(key=lambda item: item[0])
    rows = [row for _, row, _ in results]
    failures = [f"replicate {rep}: {err}" for rep, _, err in results if err is not None]
    pits = np.array([row["pit"] for row in rows if row["status"] == "ok"])
    path = os.path.join(config.out_dir, "calibration.csv")
    _write_rows(path, ("replicate", "pit", "tv", "seed", "status"), rows)
    summary_path = os.path.join(config.out_dir, "calibration_summary.csv")
    if len(pits) >= 10:
        report = diagnostics.ks_to_uniform(pits)
        summary = [{"replicates": len(pits), "ks": report.ks, "config_hash": config.hash()}]
    else:
        summary = [{"replicates": len(pits), "ks": None, "config_hash": config.hash()}]
    _write_rows(summary_path, ("replicates", "ks", "config_hash"), summary)
    for line in failures:
        print(line, file=sys.stderr)
    print(f"wrote {path} and {summary_path}")
    return 0 if not failures else 1


def cmd_prior_bias(config: RunConfig) -> int:
    if config.dataset.kind != "synthetic":
        raise ConfigurationError("prior-bias requires a synthetic dataset config")
    spec = DgpSpec(
        n=config.dataset.n,
        d_x=config.dataset.d_x,
        seed=config.seed,
        noise_sd=config.dataset.noise_sd,
        propensity_strength=config.dataset.propensity_strength,
    )
    deltas = prior_bias_harness(spec, config.replicates)
    rows = [
        {"replicate": k, "delta": float(deltas[k]), "seed": child_seed(config.seed, k)}
        for k in range(len(deltas))
    ]
    path = os.path.join(config.out_dir, "prior_bias.csv")
    _write_rows(path, ("replicate", "delta", "seed"), rows)
    print(f"wrote {path} (mean delta {float(np.mean(deltas)):.4f})")
    return 0


def cmd_protocol_check(config: RunConfig, client: str | None) -> int:
    command = client or config.external_command
    if not command:
        raise ConfigurationError("protocol-check needs --client or external_command in the config")
    report = run_protocol_check(shlex.split(command))
    for line in report.details:
        print(line)
    print("protocol-check:", "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="causalmp")
    parser.add_argument("--config", default=None, help="path to the YAML run config")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--workers", type=int, default=None, help="override the worker count")
    parser.add_argument("--out", default=None, help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "estimate", "calibration-study", "prior-bias"):
        sub.add_parser(name)
    check = sub.add_parser("protocol-check")
    check.add_argument("--client", default=None, help="client command line to spawn")
    args = parser.parse_args(argv)

    overrides = {"seed": args.seed, "workers": args.workers, "out_dir": args.out}
    if args.config is None:
        raise SystemExit("--config is required")
    config = load_config(args.config, overrides)

    if args.command == "generate":
        return cmd_generate(config)
    if args.command == "estimate":
        return cmd_estimate(config)
    if args.command == "calibration-study":
        return cmd_calibration_study(config)
    if args.command == "prior-bias":
        return cmd_prior_bias(config)
    if args.command == "protocol-check":
        return cmd_protocol_check(config, args.client)
    raise ConfigurationError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
