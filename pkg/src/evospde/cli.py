"""Scenario configuration and command-line orchestration.

Configs are sectioned INI text. Parsing validates every field and reports
all problems at once; unknown sections or keys are hard errors. Subcommands:

  run          integrate replicas, write trajectory CSVs and a manifest
  verify       certify the hypothesis constants, write the report
  convergence  strong-error study over a nested dt grid
  levelset     extract level-set contours of the pinching example field

Exit codes: 0 success, 1 error, 2 check failure.
"""

import argparse
import configparser
import json
import sys
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import geometry, noise as noise_mod, operators, solver, verify as verify_mod

DEFAULT_DT = 1e-3
DEFAULT_SCHEME = "semi_implicit"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    manifold_kind: str = "circle"
    ambient_n: int = 2
    mode_count: int = 8
    grid_size: int = 0

    metric_kind: str = "static"
    horizon: float = 1.0
    gbm_r: float = 0.0
    gbm_sigma: float = 0.0
    gbm_steps: int = 100
    metric_seed: int = 0
    table_path: str = ""

    operator_kind: str = "heat"
    coef_a: float = 1.0
    coef_b: float = 0.0
    coef_ctilde: float = 0.0
    plaplace_p: float = 4.0
    vh_bound: float = 0.0

    nonlinearity_kind: str = "none"
    nonlinearity_gamma: float = 1.0

    noise_kind: str = "canonical"
    noise_modes: int = 0
    noise_sigma: tuple = ()

    initial_coeffs: tuple = ()

    dt: float = DEFAULT_DT
    scheme: str = DEFAULT_SCHEME
    record_stride: int = 1

    replicas: int = 1
    master_seed: int = 0
    outputs: str = "out"


_SCHEMA = {
    "manifold": {"kind", "ambient_n", "mode_count", "grid_size"},
    "metric": {"kind", "horizon", "r", "sigma", "steps", "metric_seed", "table_path"},
    "operator": {"kind", "a", "b", "ctilde", "p", "k1"},
    "nonlinearity": {"kind", "gamma"},
    "noise": {"kind", "modes", "sigma"},
    "initial": {"coeffs"},
    "solver": {"dt", "scheme", "record_stride"},
    "run": {"replicas", "master_seed", "outputs"},
}


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a config; raises ConfigError listing all problems."""
    errors = []
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"config syntax: {exc}"]) from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {key!r} in [{section}]")

    def get(section, key, conv, default, check=None, describe=""):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            val = conv(raw)
        except ValueError:
            errors.append(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}")
            return default
        if check is not None and not check(val):
            errors.append(f"[{section}] {key} = {raw!r} out of range: {describe}")
        return val

    manifold_kind = get("manifold", "kind", str, "circle", lambda v: v in ("circle", "torus"), "circle or torus")
    ambient_n = get("manifold", "ambient_n", int, 2, lambda v: v >= 2, "needs ambient_n >= 2")
    mode_count = get("manifold", "mode_count", int, 8, lambda v: v >= 1, "needs mode_count >= 1")
    grid_size = get("manifold", "grid_size", int, 0, lambda v: v == 0 or v >= 4 * mode_count + 1,
                    f"needs grid_size >= 4*mode_count+1 = {4 * mode_count + 1}")

    metric_kind = get("metric", "kind", str, "static",
                      lambda v: v in ("static", "mcf", "gbm", "table"), "static, mcf, gbm or table")
    horizon = get("metric", "horizon", float, 1.0, lambda v: v > 0.0, "needs horizon > 0")
    gbm_r = get("metric", "r", float, 0.0)
    gbm_sigma = get("metric", "sigma", float, 0.0)
    gbm_steps = get("metric", "steps", int, 100, lambda v: v >= 1, "needs steps >= 1")
    metric_seed = get("metric", "metric_seed", int, 0)
    table_path = get("metric", "table_path", str, "")

    operator_kind = get("operator", "kind", str, "heat",
                        lambda v: v in ("heat", "mcf_sphere", "general", "plaplace"),
                        "heat, mcf_sphere, general or plaplace")
    coef_a = get("operator", "a", float, 1.0, lambda v: v > 0.0, "needs a > 0")
    coef_b = get("operator", "b", float, 0.0)
    coef_ctilde = get("operator", "ctilde", float, 0.0)
    plaplace_p = get("operator", "p", float, 4.0, lambda v: v > 2.0, "needs p > 2")
    vh_bound = get("operator", "k1", float, 0.0, lambda v: v >= 0.0, "needs k1 >= 0")

    nl_kind = get("nonlinearity", "kind", str, "none",
                  lambda v: v in ("none", "linear", "tanh"), "none, linear or tanh")
    nl_gamma = get("nonlinearity", "gamma", float, 1.0, lambda v: v > 0.0, "needs gamma > 0")

    noise_kind = get("noise", "kind", str, "canonical",
                     lambda v: v in ("canonical", "custom", "off"), "canonical, custom or off")
    noise_modes = get("noise", "modes", int, 0, lambda v: v >= 0, "needs modes >= 0")

    noise_sigma = ()
    if parser.has_option("noise", "sigma"):
        try:
            noise_sigma = tuple(float(tok) for tok in parser.get("noise", "sigma").split())
        except ValueError:
            errors.append("[noise] sigma must be space-separated floats")
        if any(s <= 0.0 for s in noise_sigma):
            errors.append("[noise] sigma entries must be positive")

    initial_coeffs = ()
    if parser.has_option("initial", "coeffs"):
        pairs = []
        for tok in parser.get("initial", "coeffs").split():
            try:
                idx, val = tok.split(":")
                pairs.append((int(idx), float(val)))
            except ValueError:
                errors.append(f"[initial] coeffs entry {tok!r} is not index:value")
        initial_coeffs = tuple(pairs)

    dt = get("solver", "dt", float, DEFAULT_DT, lambda v: v > 0.0, "needs dt > 0")
    scheme = get("solver", "scheme", str, DEFAULT_SCHEME,
                 lambda v: v in ("semi_implicit", "explicit_em"), "semi_implicit or explicit_em")
    record_stride = get("solver", "record_stride", int, 1, lambda v: v >= 1, "needs record_stride >= 1")

    replicas = get("run", "replicas", int, 1, lambda v: v >= 1, "needs replicas >= 1")
    master_seed = get("run", "master_seed", int, 0)
    outputs = get("run", "outputs", str, "out")

    # cross-field consistency
    if metric_kind == "mcf":
        if manifold_kind != "circle":
            errors.append("[metric] kind = mcf requires [manifold] kind = circle")
        t_collapse = 1.0 / (2.0 * ambient_n)
        if horizon >= t_collapse:
            errors.append(
                f"[metric] horizon = {horizon} violates T < 1/(2*ambient_n) = {t_collapse}"
            )
    if metric_kind == "gbm" and gbm_r - 0.5 * gbm_sigma**2 >= 0.0:
        errors.append(
            f"[metric] gbm drift violates r - sigma^2/2 < 0 (got {gbm_r - 0.5 * gbm_sigma ** 2})"
        )
    if metric_kind == "table" and not table_path:
        errors.append("[metric] kind = table requires table_path")
    if operator_kind == "mcf_sphere" and metric_kind != "mcf":
        errors.append("[operator] mcf_sphere requires [metric] kind = mcf")
    if operator_kind == "heat" and metric_kind != "static":
        errors.append("[operator] heat requires [metric] kind = static")
    if operator_kind == "plaplace":
        if nl_kind != "none":
            errors.append("[operator] plaplace requires [nonlinearity] kind = none")
        if metric_kind != "static":
            errors.append("[operator] plaplace requires [metric] kind = static")
        if any(idx == 0 and val != 0.0 for idx, val in initial_coeffs):
            errors.append("[operator] plaplace requires mean-zero initial data (coeff 0 must be 0)")
        if scheme != "explicit_em":
            errors.append("[operator] plaplace requires [solver] scheme = explicit_em")
    dim = 2 * mode_count + 1
    if noise_modes > dim:
        errors.append(f"[noise] modes = {noise_modes} exceeds basis dimension {dim}")
    if noise_kind == "custom" and not noise_sigma:
        errors.append("[noise] kind = custom requires sigma")
    if len(noise_sigma) > dim:
        errors.append(f"[noise] sigma has {len(noise_sigma)} entries, basis dimension is {dim}")
    for idx, _ in initial_coeffs:
        if not 0 <= idx < dim:
            errors.append(f"[initial] coeff index {idx} outside 0..{dim - 1}")

    if errors:
        raise ConfigError(errors)

    return ScenarioConfig(
        manifold_kind=manifold_kind, ambient_n=ambient_n, mode_count=mode_count,
        grid_size=grid_size, metric_kind=metric_kind, horizon=horizon, gbm_r=gbm_r,
        gbm_sigma=gbm_sigma, gbm_steps=gbm_steps, metric_seed=metric_seed,
        table_path=table_path, operator_kind=operator_kind, coef_a=coef_a,
        coef_b=coef_b, coef_ctilde=coef_ctilde, plaplace_p=plaplace_p,
        vh_bound=vh_bound, nonlinearity_kind=nl_kind, nonlinearity_gamma=nl_gamma,
        noise_kind=noise_kind, noise_modes=noise_modes, noise_sigma=noise_sigma,
        initial_coeffs=initial_coeffs, dt=dt, scheme=scheme,
        record_stride=record_stride, replicas=replicas, master_seed=master_seed,
        outputs=outputs,
    )


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical config text; parse_config(serialize_config(c)) == c."""
    lines = [
        "[manifold]",
        f"kind = {cfg.manifold_kind}",
        f"ambient_n = {cfg.ambient_n}",
        f"mode_count = {cfg.mode_count}",
        f"grid_size = {cfg.grid_size if cfg.grid_size else 4 * cfg.mode_count + 1}",
        "",
        "[metric]",
        f"kind = {cfg.metric_kind}",
        f"horizon = {cfg.horizon!r}",
        f"r = {cfg.gbm_r!r}",
        f"sigma = {cfg.gbm_sigma!r}",
        f"steps = {cfg.gbm_steps}",
        f"metric_seed = {cfg.metric_seed}",
    ]
    if cfg.table_path:
        lines.append(f"table_path = {cfg.table_path}")
    lines += [
        "",
        "[operator]",
        f"kind = {cfg.operator_kind}",
        f"a = {cfg.coef_a!r}",
        f"b = {cfg.coef_b!r}",
        f"ctilde = {cfg.coef_ctilde!r}",
        f"p = {cfg.plaplace_p!r}",
        f"k1 = {cfg.vh_bound!r}",
        "",
        "[nonlinearity]",
        f"kind = {cfg.nonlinearity_kind}",
        f"gamma = {cfg.nonlinearity_gamma!r}",
        "",
        "[noise]",
        f"kind = {cfg.noise_kind}",
        f"modes = {cfg.noise_modes}",
    ]
    if cfg.noise_sigma:
        lines.append("sigma = " + " ".join(repr(s) for s in cfg.noise_sigma))
    if cfg.initial_coeffs:
        lines += ["", "[initial]",
                  "coeffs = " + " ".join(f"{i}:{v!r}" for i, v in cfg.initial_coeffs)]
    lines += [
        "",
        "[solver]",
        f"dt = {cfg.dt!r}",
        f"scheme = {cfg.scheme}",
        f"record_stride = {cfg.record_stride}",
        "",
        "[run]",
        f"replicas = {cfg.replicas}",
        f"master_seed = {cfg.master_seed}",
        f"outputs = {cfg.outputs}",
        "",
    ]
    return "\n".join(lines)


def _load_table(path: str) -> geometry.TableProfile:
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    return geometry.TableProfile(rows[:, 0], rows[:, 1], label=f"table:{Path(path).name}")


def build_runtime(cfg: ScenarioConfig):
    """Instantiate the scenario, solver config and noise model of a config."""
    manifold = geometry.ReferenceManifold(
        kind=cfg.manifold_kind,
        ambient_n=cfg.ambient_n,
        mode_count=cfg.mode_count,
        grid_size=cfg.grid_size if cfg.grid_size else 0,
    )
    if cfg.metric_kind == "static":
        profile = geometry.ConstantProfile()
    elif cfg.metric_kind == "mcf":
        profile = geometry.McfProfile(cfg.ambient_n)
    elif cfg.metric_kind == "gbm":
        driver = geometry.GbmDriver(cfg.gbm_r, cfg.gbm_sigma, cfg.gbm_steps, cfg.metric_seed)
        profile = geometry.gbm_factor_path(driver, cfg.horizon)
    else:
        profile = _load_table(cfg.table_path)
    mf = geometry.build_metric_family(manifold, profile, cfg.horizon)

    pmap = None
    if cfg.operator_kind == "heat":
        provider = operators.StaticHeatProvider(manifold, horizon=cfg.horizon)
    elif cfg.operator_kind == "mcf_sphere":
        provider = operators.McfSphereProvider(manifold, cfg.horizon)
        implied_k1 = cfg.ambient_n**2 / (1.0 - 2.0 * cfg.ambient_n * cfg.horizon)
        if cfg.vh_bound and cfg.vh_bound < implied_k1:
            raise ConfigError(
                [f"[operator] k1 = {cfg.vh_bound} below the curvature bound {implied_k1}"]
            )
    elif cfg.operator_kind == "general":
        pmap = geometry.PullbackMap(mf)
        coef = operators.make_parabolic_coefficients(manifold, cfg.coef_a, cfg.coef_b, cfg.coef_ctilde)
        provider = operators.GeneralParabolicProvider(coef, pmap)
    else:
        provider = operators.PLaplaceProvider(cfg.plaplace_p, mf, horizon=cfg.horizon)

    if cfg.noise_kind == "off":
        nm = None
    elif cfg.noise_kind == "custom":
        nm = noise_mod.NoiseModel(sigma=np.asarray(cfg.noise_sigma))
    else:
        J = cfg.noise_modes if cfg.noise_modes else cfg.mode_count
        nm = noise_mod.canonical_embedding(J)

    nl = None
    if cfg.nonlinearity_kind != "none":
        nl = operators.nonlinearity(cfg.nonlinearity_kind, cfg.nonlinearity_gamma)

    dim = 2 * cfg.mode_count + 1
    u0 = np.zeros(dim)
    for idx, val in cfg.initial_coeffs:
        u0[idx] = val

    scenario = solver.Scenario(
        manifold=manifold, metric=mf, provider=provider, u0=u0,
        horizon=cfg.horizon, noise=nm, nl=nl,
        pmap=pmap if pmap is not None else geometry.PullbackMap(mf) if float(mf.factor(0.0)) == 1.0 else None,
        label=cfg.operator_kind,
    )
    solver_cfg = solver.SolverConfig(
        dt=cfg.dt, scheme=cfg.scheme, record_stride=cfg.record_stride,
        master_seed=cfg.master_seed,
    )
    return scenario, solver_cfg, nm


def _write_manifest(outdir: Path, cfg: ScenarioConfig, scenario, command: str, extra=None):
    manifest = {
        "command": command,
        "config_text": serialize_config(cfg),
        "master_seed": cfg.master_seed,
        "scenario_digest": scenario.digest(),
        "dt": cfg.dt,
        "scheme": cfg.scheme,
        "replicas": cfg.replicas,
    }
    if extra:
        manifest.update(extra)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_run(cfg: ScenarioConfig, outdir: Path) -> int:
    scenario, solver_cfg, _ = build_runtime(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    for m in range(cfg.replicas):
        traj = solver.solve_path(scenario, solver_cfg, replica=m)
        solver.trajectory_csv(traj, outdir / f"traj_r{m:04d}.csv")
    if isinstance(scenario.metric.profile, geometry.TableProfile):
        geometry.factor_table_csv(scenario.metric.profile, outdir / "factor_table.csv")
    _write_manifest(outdir, cfg, scenario, "run")
    print(f"run: {cfg.replicas} replica(s) written to {outdir}")
    return 0


def cmd_verify(cfg: ScenarioConfig, outdir: Path, n_probes: int, seed: int) -> int:
    scenario, _, nm = build_runtime(cfg)
    if nm is None:
        print("verify: noise must not be off", file=sys.stderr)
        return 1
    candidates = scenario.provider.analytic_constants(nm)
    if scenario.nl is not None and scenario.nl.kind != "zero":
        candidates = verify_mod.nonlinearity_shifted_constants(
            candidates, scenario.nl, scenario.metric
        )
    report = verify_mod.certify(
        scenario.provider, nm, N=n_probes, seed=seed, nl=scenario.nl, candidates=candidates
    )
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "hypothesis_report.txt").write_text(verify_mod.report_text(report))
    verify_mod.report_samples_csv(report, outdir / "hypothesis_samples.csv")
    _write_manifest(outdir, cfg, scenario, "verify", {"verify_seed": seed, "n_probes": n_probes})
    for name, ok in (
        ("monotonicity", report.c_pass),
        ("coercivity", report.coercivity_pass),
        ("boundedness", report.c3_pass),
        ("hemicontinuity", report.hemicontinuity_pass),
    ):
        print(f"verify {name}: {'pass' if ok else 'FAIL'}")
    return 0 if report.passed else 2


def cmd_convergence(cfg: ScenarioConfig, outdir: Path, dts, dt_ref: float, M: int) -> int:
    scenario, solver_cfg, _ = build_runtime(cfg)
    report = verify_mod.estimate_strong_order(scenario, dts, M, solver_cfg.master_seed, dt_ref)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "convergence.csv", "w", newline="\n") as fh:
        fh.write("dt,error\n")
        for dt, err in zip(report.dts, report.errors):
            fh.write(f"{float(dt)!r},{float(err)!r}\n")
    _write_manifest(outdir, cfg, scenario, "convergence",
                    {"slope": report.slope, "exact": report.exact})
    if report.exact:
        print("convergence: exact (errors at machine epsilon)")
        return 0
    print(f"convergence: slope = {report.slope:.3f}")
    ok = bool(np.all(np.diff(report.errors[::-1]) > 0.0))  # decreasing with dt
    return 0 if ok else 2


def cmd_levelset(levels, grid: int, outdir: Path) -> int:
    field_ = geometry.LevelSetField(nx=grid, ny=grid)
    outdir.mkdir(parents=True, exist_ok=True)
    for c in levels:
        count, polylines = geometry.level_set_components(field_, c)
        geometry.contour_csv(polylines, outdir / f"contour_c{c}.csv")
        print(f"levelset c={c}: {count} component(s)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evospde", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="config file path")
        p.add_argument("--manifest", type=Path, help="rerun from a manifest")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--replicas", type=int, default=None, help="replica count override")

    p_run = sub.add_parser("run", help="integrate and record trajectories")
    add_common(p_run)

    p_verify = sub.add_parser("verify", help="certify hypothesis constants")
    add_common(p_verify)
    p_verify.add_argument("--probes", type=int, default=500)

    p_conv = sub.add_parser("convergence", help="strong-order study")
    add_common(p_conv)
    p_conv.add_argument("--dts", type=str, default="1e-3,5e-4,2.5e-4")
    p_conv.add_argument("--dt-ref", type=float, default=1e-5)

    p_level = sub.add_parser("levelset", help="extract pinching contours")
    p_level.add_argument("levels", type=float, nargs="+")
    p_level.add_argument("--grid", type=int, default=256)
    p_level.add_argument("--out", type=Path, default=Path("out"))

    args = parser.parse_args(argv)

    try:
        if args.command == "levelset":
            return cmd_levelset(args.levels, args.grid, args.out)

        if args.manifest is not None:
            manifest = json.loads(args.manifest.read_text())
            text = manifest["config_text"]
        elif args.config is not None:
            text = args.config.read_text()
        else:
            print("error: --config or --manifest required", file=sys.stderr)
            return 1
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = ScenarioConfig(**{**asdict(cfg), "master_seed": args.seed})
        if args.replicas is not None:
            cfg = ScenarioConfig(**{**asdict(cfg), "replicas": args.replicas})
        outdir = args.out if args.out is not None else Path(cfg.outputs)

        if args.command == "run":
            return cmd_run(cfg, outdir)
        if args.command == "verify":
            seed = cfg.master_seed
            return cmd_verify(cfg, outdir, args.probes, seed)
        if args.command == "convergence":
            dts = [float(tok) for tok in args.dts.split(",")]
            return cmd_convergence(cfg, outdir, dts, args.dt_ref, cfg.replicas)
        print(f"error: unknown command {args.command}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
