"""Config-driven experiment harness: dataset generation, method training,
evaluation and comparison tables.

A single YAML config describes the problem, the noise levels, the methods
with their hyperparameters and the metric settings; everything downstream is
deterministic given the seeds it contains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import baselines, data, generator, interpolation, metrics, nn_core, ode

METHOD_NAMES = ("ensemble", "splines", "multistep", "polyfit", "sindy")


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"missing key {key!r} in {where}")
    return mapping[key]


@dataclass
class ExperimentConfig:
    name: str
    problem: ode.ProblemSpec
    noise_levels: list[float]
    seed: int
    methods: dict
    grid_counts: dict
    restrict_to_data: bool
    solution_n_ics: int
    solution_seed: int
    output_dir: Path
    integrator: ode.IntegratorConfig
    raw: dict

    @property
    def dim(self) -> int:
        return self.problem.rhs.dim


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    prob = _require(raw, "problem", str(path))
    label = _require(prob, "rhs", "problem")
    try:
        rhs = ode.catalog_lookup(label)
    except ode.UnknownLabelError:
        raise ConfigError(f"unknown catalog label {label!r}")
    try:
        problem = ode.ProblemSpec(
            rhs=rhs,
            t_start=float(_require(prob, "t_start", "problem")),
            t_end=float(_require(prob, "t_end", "problem")),
            dt=float(_require(prob, "dt", "problem")),
            n_trajectories=int(_require(prob, "n_trajectories", "problem")),
            ic_box=np.asarray(_require(prob, "ic_box", "problem"), dtype=float),
            ic_seed=int(prob.get("ic_seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem spec: {exc}")

    noise_levels = [float(v) for v in raw.get("noise_levels", [0.0])]
    for lv in noise_levels:
        if not 0.0 <= lv <= data.MAX_NOISE_LEVEL:
            raise ConfigError(f"noise level {lv} outside [0, {data.MAX_NOISE_LEVEL}]")

    methods = raw.get("methods", {})
    if not isinstance(methods, dict) or not methods:
        raise ConfigError("methods section must be a non-empty mapping")
    for name, mcfg in methods.items():
        if name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {name!r}")
        if mcfg is None:
            methods[name] = {}
        if name == "sindy":
            lib = methods[name].get("library", {})
            if lib.get("poly_degree", 1) is None or \
                    (not lib.get("poly_degree", 1) and not lib.get("elementary")):
                raise ConfigError("sindy library must be non-empty")

    mcfg = raw.get("metrics", {})
    grid_counts = mcfg.get("grid_counts", {})
    t_spec = grid_counts.get("t", 200)
    if t_spec != "samples":
        try:
            int(t_spec)
        except (TypeError, ValueError):
            raise ConfigError(f"grid_counts.t must be an integer or 'samples', "
                              f"got {t_spec!r}")

    icfg = raw.get("integrator", {})
    integrator = ode.IntegratorConfig(
        method=icfg.get("method", "rk45_adaptive"),
        abs_tol=float(icfg.get("abs_tol", 1e-9)),
        rel_tol=float(icfg.get("rel_tol", 1e-9)),
    )

    out_dir = raw.get("output_dir")
    if out_dir is None:
        raise ConfigError("output_dir is required")

    return ExperimentConfig(
        name=raw.get("name", path.stem),
        problem=problem,
        noise_levels=noise_levels,
        seed=int(raw.get("seed", 0)),
        methods=methods,
        grid_counts=grid_counts,
        restrict_to_data=bool(mcfg.get("restrict_to_data", True)),
        solution_n_ics=int(mcfg.get("solution_n_ics", 20)),
        solution_seed=int(mcfg.get("solution_seed", 12345)),
        output_dir=Path(out_dir),
        integrator=integrator,
        raw=raw,
    )


# ---------------------------------------------------------------------------
# Artifact locations


def _noise_tag(level: float) -> str:
    return f"noise{level:g}".replace(".", "p")


def dataset_path(cfg: ExperimentConfig, level: float) -> Path:
    return cfg.output_dir / "datasets" / f"{cfg.name}_{_noise_tag(level)}.csv"


def model_dir(cfg: ExperimentConfig, method: str, level: float) -> Path:
    return cfg.output_dir / "models" / f"{method}_{_noise_tag(level)}"


def report_path(cfg: ExperimentConfig, method: str, level: float) -> Path:
    return cfg.output_dir / "reports" / f"{method}_{_noise_tag(level)}.json"


# ---------------------------------------------------------------------------
# Commands


def run_generate(cfg: ExperimentConfig) -> list[Path]:
    clean = data.generate_dataset(cfg.problem, cfg.integrator)
    written = []
    for level in cfg.noise_levels:
        ds = data.add_noise(clean, level, seed=data.derive_seed(cfg.seed, 71,
                                                               int(round(level * 1000))))
        p = dataset_path(cfg, level)
        p.parent.mkdir(parents=True, exist_ok=True)
        data.save_dataset(ds, p, sidecar={"config_name": cfg.name})
        written.append(p)
    return written


def load_dataset_for(cfg: ExperimentConfig, level: float) -> data.TrajectoryDataset:
    p = dataset_path(cfg, level)
    if not p.exists():
        raise MissingArtifactError(f"dataset not found: {p} (run generate first)")
    return data.load_dataset(p)


def _interp_config(block: dict, cfg: ExperimentConfig, dim_hint: int) -> interpolation.InterpConfig:
    if "hidden_widths" not in block:
        raise ConfigError("interpolation block needs hidden_widths")
    return interpolation.InterpConfig(
        hidden_widths=tuple(block["hidden_widths"]),
        alpha=float(block.get("alpha", 0.0)),
        lip_sample_count=int(block.get("lip_sample_count", interpolation.DEFAULT_LIP_SAMPLES)),
        epochs=int(block["epochs"]) if block.get("epochs") is not None else None,
        target_train_mse=block.get("target_train_mse"),
        max_epochs=int(block.get("max_epochs", 60_000)),
        learning_rate=float(block.get("learning_rate", 1e-3)),
        seed=data.derive_seed(cfg.seed, 81),
    )


def _train_interp_for(samples, block, cfg) -> interpolation.InterpolationModel:
    icfg = _interp_config(block, cfg, samples.dim)
    grid = block.get("alpha_grid")
    if grid:
        models = interpolation.train_matched(samples, icfg,
                                             [float(a) for a in grid])
        best = min((m for a, m in models.items() if a != 0.0),
                   key=lambda m: m.test_mse)
        return best
    return interpolation.train_interpolation(samples, icfg)


def _ensemble_velocities(cfg: ExperimentConfig, ds, method_cfg, level):
    gcfg_raw = _require(method_cfg, "generator", "ensemble method")
    floor_spec = gcfg_raw.get("loss_floor", "auto")
    if floor_spec == "auto":
        floor = generator.residual_noise_floor(ds)
    else:
        floor = float(floor_spec)
    gcfg = generator.GeneratorConfig(
        hidden_widths=tuple(_require(gcfg_raw, "hidden_widths", "generator")),
        epochs=int(gcfg_raw.get("epochs", 2000)),
        learning_rate=float(gcfg_raw.get("learning_rate", 1e-3)),
        loss_floor=floor,
        seed=data.derive_seed(cfg.seed, 91, int(round(level * 1000))),
    )
    ens = generator.train_generator(ds, gcfg)
    return ens, generator.predict_velocities(ens, ds)


def _recovery_grid(cfg: ExperimentConfig, samples) -> metrics.EvaluationGrid:
    box = data.input_bounding_box(samples.inputs)
    t_spec = cfg.grid_counts.get("t", 200)
    per_state = int(cfg.grid_counts.get("x", 200))
    counts = [per_state] * cfg.dim
    if t_spec == "samples":
        # evaluate at the sampling times themselves; useful when the field
        # changes faster than the sampling interval resolves
        t_axis = np.unique(samples.inputs[:, 0])
        while len(t_axis) * int(np.prod(counts)) > metrics.MAX_GRID_POINTS:
            counts = [max(2, c // 2) for c in counts]
    else:
        t_count = int(t_spec)
        while t_count * int(np.prod(counts)) > metrics.MAX_GRID_POINTS:
            t_count = max(2, t_count // 2)
            counts = [max(2, c // 2) for c in counts]
        t_axis = np.linspace(box[0, 0], box[0, 1], t_count)
    axes = [t_axis] + [np.linspace(lo, hi, c)
                       for (lo, hi), c in zip(box[1:], counts)]
    return metrics.EvaluationGrid.from_axes(axes)


def _recovery_mask(cfg: ExperimentConfig, grid: metrics.EvaluationGrid,
                   ds) -> np.ndarray | None:
    if not cfg.restrict_to_data:
        return None
    mask = metrics.trajectory_support_mask(grid.points(), ds.times, ds.states)
    if not mask.any():
        return None
    return mask


def _solution_ics(cfg: ExperimentConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.solution_seed)
    return rng.uniform(cfg.problem.ic_box[:, 0], cfg.problem.ic_box[:, 1],
                       size=(cfg.solution_n_ics, cfg.dim))


def _evaluate(cfg: ExperimentConfig, model, ds, method: str, level: float,
              train_mse: float, test_mse: float, samples,
              lipschitz: float | None = None,
              train_comp=None, test_comp=None,
              extra: dict | None = None) -> metrics.EvaluationReport:
    grid = _recovery_grid(cfg, samples)
    mask = _recovery_mask(cfg, grid, ds)
    rec, rec_comp = metrics.recovery_error(model, cfg.problem.rhs, grid, mask)
    solver = ode.IntegratorConfig(method="rk4_fixed")
    sol, sol_comp = metrics.solution_error(model, cfg.problem.rhs,
                                           _solution_ics(cfg), ds.times, solver)
    return metrics.EvaluationReport(
        method=method, problem=cfg.problem.rhs.label, noise_level=level,
        train_mse=train_mse, test_mse=test_mse,
        generalization_gap=test_mse - train_mse,
        recovery_rel_mse=rec, solution_rel_mse=sol,
        estimated_lipschitz=lipschitz,
        recovery_components=rec_comp, solution_components=sol_comp,
        train_mse_components=train_comp or [], test_mse_components=test_comp or [],
        extra=extra or {},
    )


def _quotient_samples(cfg, ds) -> data.InterpSampleSet:
    k, m, d = ds.states.shape
    quot = (ds.states[:, 1:, :] - ds.states[:, :m - 1, :]) / ds.dt
    return data.build_interp_samples(ds, quot, split_seed=data.derive_seed(cfg.seed, 61))


def _baseline_targets(cfg: ExperimentConfig, ds, method_cfg, level):
    source = method_cfg.get("targets", "splines")
    if source == "splines":
        lam = method_cfg.get("lambda")
        vel = baselines.splines_targets(ds, lam)
    elif source == "ensemble":
        ens_cfg = cfg.methods.get("ensemble")
        if ens_cfg is None:
            raise ConfigError("targets: ensemble requires an ensemble method block")
        _, vel = _ensemble_velocities(cfg, ds, ens_cfg, level)
    elif source == "quotients":
        k, m, d = ds.states.shape
        vel = (ds.states[:, 1:, :] - ds.states[:, :m - 1, :]) / ds.dt
    else:
        raise ConfigError(f"unknown target source {source!r}")
    return data.build_interp_samples(ds, vel, split_seed=data.derive_seed(cfg.seed, 61))


def run_train(cfg: ExperimentConfig, method: str, level: float) -> metrics.EvaluationReport:
    if method not in cfg.methods:
        raise ConfigError(f"method {method!r} not present in config")
    method_cfg = cfg.methods[method] or {}
    ds = load_dataset_for(cfg, level)
    mdir = model_dir(cfg, method, level)
    mdir.mkdir(parents=True, exist_ok=True)

    if method == "ensemble":
        ens, vel = _ensemble_velocities(cfg, ds, method_cfg, level)
        samples = data.build_interp_samples(ds, vel,
                                            split_seed=data.derive_seed(cfg.seed, 61))
        model = _train_interp_for(samples, _require(method_cfg, "interpolation",
                                                    "ensemble method"), cfg)
        generator.save_ensemble(ens, mdir / "generator")
        interpolation.save_interpolation(model, mdir / "interpolation")
        report = _evaluate(cfg, model, ds, method, level,
                           model.train_mse, model.test_mse, samples,
                           lipschitz=max(model.estimated_lipschitz),
                           train_comp=model.train_mse_components,
                           test_comp=model.test_mse_components,
                           extra={"alpha": model.alpha,
                                  "lipschitz_components": model.estimated_lipschitz})
    elif method == "splines":
        vel = baselines.splines_targets(ds, method_cfg.get("lambda"))
        samples = data.build_interp_samples(ds, vel,
                                            split_seed=data.derive_seed(cfg.seed, 61))
        model = _train_interp_for(samples, _require(method_cfg, "interpolation",
                                                    "splines method"), cfg)
        interpolation.save_interpolation(model, mdir / "interpolation")
        report = _evaluate(cfg, model, ds, method, level,
                           model.train_mse, model.test_mse, samples,
                           lipschitz=max(model.estimated_lipschitz),
                           train_comp=model.train_mse_components,
                           test_comp=model.test_mse_components,
                           extra={"alpha": model.alpha})
    elif method == "multistep":
        mcfg = baselines.MultistepConfig(
            hidden_widths=tuple(_require(method_cfg, "hidden_widths", "multistep")),
            epochs=int(method_cfg.get("epochs", 3000)),
            learning_rate=float(method_cfg.get("learning_rate", 1e-3)),
            seed=data.derive_seed(cfg.seed, 92),
        )
        model = baselines.multistep_train(ds, mcfg)
        samples = _quotient_samples(cfg, ds)
        tr = interpolation.relative_mse_percent(model.predict(samples.train_inputs),
                                                samples.train_targets)
        te = interpolation.relative_mse_percent(model.predict(samples.test_inputs),
                                                samples.test_targets)
        nn_core.save_model(model.net, mdir / "multistep.json")
        report = _evaluate(cfg, model, ds, method, level, tr, te, samples)
    elif method == "polyfit":
        samples = _baseline_targets(cfg, ds, method_cfg, level)
        model = baselines.polyfit(samples, int(method_cfg.get("degree", 20)))
        tr = interpolation.relative_mse_percent(model.predict(samples.train_inputs),
                                                samples.train_targets)
        te = interpolation.relative_mse_percent(model.predict(samples.test_inputs),
                                                samples.test_targets)
        with open(mdir / "polyfit.json", "w") as f:
            json.dump({"degree": model.degree,
                       "coefficients": model.coeffs_scaled.tolist(),
                       "rank_deficient": model.rank_deficient}, f)
        report = _evaluate(cfg, model, ds, method, level, tr, te, samples,
                           extra={"rank_deficient": model.rank_deficient})
    elif method == "sindy":
        samples = _baseline_targets(cfg, ds, method_cfg, level)
        lib_cfg = method_cfg.get("library", {})
        terms = baselines.polynomial_library(
            cfg.dim, int(lib_cfg.get("poly_degree", 10)),
            include_time=bool(lib_cfg.get("include_time", False)))
        extras = lib_cfg.get("elementary", [])
        if extras:
            scales = [float(s) for s in lib_cfg.get("elementary_scales", [1.0])]
            terms += baselines.elementary_library(cfg.dim, extras, scales)
        lib = baselines.FunctionLibrary(terms)
        model = baselines.sindy_stlsq(samples, lib,
                                      threshold=float(method_cfg.get("threshold", 0.05)),
                                      max_iters=int(method_cfg.get("max_iters", 20)))
        tr = interpolation.relative_mse_percent(model.predict(samples.train_inputs),
                                                samples.train_targets)
        te = interpolation.relative_mse_percent(model.predict(samples.test_inputs),
                                                samples.test_targets)
        with open(mdir / "sindy.json", "w") as f:
            json.dump({"names": lib.names,
                       "coefficients": model.coefficients.tolist(),
                       "threshold": model.threshold,
                       "equation": model.equation_text()}, f, indent=2)
        report = _evaluate(cfg, model, ds, method, level, tr, te, samples,
                           extra={"equation": model.equation_text()})
    else:
        raise ConfigError(f"unknown method {method!r}")

    rp = report_path(cfg, method, level)
    rp.parent.mkdir(parents=True, exist_ok=True)
    with open(rp, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    return report


def load_report(cfg: ExperimentConfig, method: str, level: float) -> metrics.EvaluationReport:
    rp = report_path(cfg, method, level)
    if not rp.exists():
        raise MissingArtifactError(f"report not found: {rp} (run train first)")
    with open(rp) as f:
        return metrics.EvaluationReport.from_dict(json.load(f))


def run_compare(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Emit a methods x noise-levels table of recovery and solution errors."""
    reports = {(m, lv): load_report(cfg, m, lv)
               for m in cfg.methods for lv in cfg.noise_levels}
    tdir = cfg.output_dir / "tables"
    tdir.mkdir(parents=True, exist_ok=True)

    txt_path = tdir / f"{cfg.name}_compare.txt"
    csv_path = tdir / f"{cfg.name}_compare.csv"
    noise_hdrs = [f"{100 * lv:g}% noise" for lv in cfg.noise_levels]
    with open(txt_path, "w") as f:
        for title, attr in (("Relative MSE in the recovery of the RHS", "recovery_rel_mse"),
                            ("Relative MSE in the solution", "solution_rel_mse")):
            f.write(f"{title} ({cfg.problem.rhs.label})\n")
            width = max(len(m) for m in cfg.methods) + 2
            f.write("".ljust(width) + "".join(h.ljust(14) for h in noise_hdrs) + "\n")
            for m in cfg.methods:
                cells = [metrics.format_sig(getattr(reports[(m, lv)], attr))
                         for lv in cfg.noise_levels]
                f.write(m.ljust(width) + "".join(c.ljust(14) for c in cells) + "\n")
            f.write("\n")
    with open(csv_path, "w") as f:
        f.write("method,noise_level,recovery_rel_mse,solution_rel_mse,"
                "train_mse,test_mse,generalization_gap\n")
        for m in cfg.methods:
            for lv in cfg.noise_levels:
                r = reports[(m, lv)]
                f.write(",".join([m, repr(float(lv)),
                                  repr(r.recovery_rel_mse),
                                  repr(r.solution_rel_mse),
                                  repr(r.train_mse), repr(r.test_mse),
                                  repr(r.generalization_gap)]) + "\n")
    return txt_path, csv_path


def load_trained_model(cfg: ExperimentConfig, method: str, level: float):
    """Reload a trained model for evaluation or re-solving."""
    mdir = model_dir(cfg, method, level)
    if method in ("ensemble", "splines"):
        p = mdir / "interpolation"
        if not p.exists():
            raise MissingArtifactError(f"model not found: {p}")
        return interpolation.load_interpolation(p)
    if method == "multistep":
        p = mdir / "multistep.json"
        if not p.exists():
            raise MissingArtifactError(f"model not found: {p}")
        net = nn_core.load_model(p)
        return baselines.MultistepModel(net=net, dt=cfg.problem.dt, final_loss=np.nan)
    raise ConfigError(f"solve/evaluate supports neural models, not {method!r}")


def run_solve(cfg: ExperimentConfig, method: str, level: float,
              ics: np.ndarray, out_path: Path) -> Path:
    model = load_trained_model(cfg, method, level)
    learned = metrics.LearnedRhs(model, cfg.dim)
    times = cfg.problem.times()
    solver = ode.IntegratorConfig(method="rk4_fixed")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        f.write("ic_id,t," + ",".join(f"x{c + 1}" for c in range(cfg.dim)) + "\n")
        for i, ic in enumerate(np.atleast_2d(ics)):
            sol = ode.integrate(learned, ic, times, solver)
            for j, t in enumerate(times):
                f.write(",".join([str(i), repr(float(t))] +
                                 [repr(float(v)) for v in sol[j]]) + "\n")
    return out_path
