"""Command-line front end: training runs, duality verification, property suites.

Configs are flat ``key = value`` INI documents with one section per concern;
unknown keys are rejected and every run echoes its fully resolved config into
the JSON report so results can be reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import gan_trainer, grad_core, loss_metrics, lipschitz_penalty, ot_oracle
from .gan_trainer import (
    MlpConfig,
    SyntheticSpec,
    TrainConfig,
    Trainer,
    TrainingAborted,
)
from .lipschitz_penalty import PenaltySpec
from .ot_oracle import CapacityError, DiscreteDist

__all__ = ["main"]

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_CAPACITY = 4


class ConfigFileError(ValueError):
    """A config document is malformed or carries unknown keys."""


# ---------------------------------------------------------------------------
# config parsing


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigFileError(f"key '{key}': expected a boolean, got '{raw}'")


def _parse_rows(raw: str, key: str) -> list[list[float]]:
    rows = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(v) for v in chunk.split()])
        except ValueError as exc:
            raise ConfigFileError(f"key '{key}': {exc}") from None
    if not rows:
        raise ConfigFileError(f"key '{key}': no values")
    return rows


def _parse_scalar(raw: str, kind: str, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigFileError(f"key '{key}': expected {kind}, got '{raw}'") from None
    return raw


def _read_ini(path: str) -> dict[str, dict[str, str]]:
    import configparser

    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigFileError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigFileError(f"malformed config: {exc}") from None
    return {sec: dict(parser[sec]) for sec in parser.sections()}


_MLP_KEYS = {"hidden_width": "int", "depth": "int", "activation": "str"}

_TRAIN_KEYS = {
    "iterations": "int",
    "seed": "int",
    "batch_size": "int",
    "n_critic": "int",
    "lr": "float",
    "beta1": "float",
    "beta2": "float",
    "fix_generator": "bool",
    "drift_window": "int",
    "field_resolution": "int",
    "field_box": "floats",
}

_DATA_KEYS = {
    "kind": "str",
    "offset": "float",
    "z_lo": "float",
    "z_hi": "float",
    "region1": "floats",
    "region2": "floats",
    "mass_ratio": "float",
    "means": "rows",
    "covs": "rows",
    "weights": "floats",
    "atoms": "rows",
    "masses": "floats",
}

_DATA_KEYS_BY_KIND = {
    "parallel_lines": {"kind", "offset", "z_lo", "z_hi"},
    "two_density_regions": {"kind", "region1", "region2", "mass_ratio"},
    "gaussian_mixture": {"kind", "means", "covs", "weights"},
    "discrete_points": {"kind", "atoms", "masses"},
}


def _check_keys(section: str, entries: dict, allowed) -> None:
    for key in entries:
        if key not in allowed:
            raise ConfigFileError(f"unknown key '{section}.{key}'")


def _parse_data_spec(section: str, entries: dict) -> tuple[SyntheticSpec, dict]:
    _check_keys(section, entries, _DATA_KEYS)
    kind = entries.get("kind")
    if kind is None:
        raise ConfigFileError(f"section [{section}] requires 'kind'")
    if kind not in _DATA_KEYS_BY_KIND:
        raise ConfigFileError(f"key '{section}.kind': unknown data kind '{kind}'")
    _check_keys(section, entries, _DATA_KEYS_BY_KIND[kind])

    echo: dict = {"kind": kind}
    if kind == "parallel_lines":
        offset = float(entries.get("offset", 0.0))
        z_lo = float(entries.get("z_lo", 0.0))
        z_hi = float(entries.get("z_hi", 1.0))
        echo.update(offset=offset, z_lo=z_lo, z_hi=z_hi)
        return SyntheticSpec(kind=kind, offset=offset, z_lo=z_lo, z_hi=z_hi), echo
    if kind == "two_density_regions":
        try:
            r1 = [float(v) for v in entries["region1"].split()]
            r2 = [float(v) for v in entries["region2"].split()]
        except KeyError as exc:
            raise ConfigFileError(f"section [{section}] requires {exc}") from None
        ratio = float(entries.get("mass_ratio", 1.0))
        if len(r1) != 4 or len(r2) != 4:
            raise ConfigFileError(f"section [{section}]: regions need 4 numbers each")
        echo.update(region1=r1, region2=r2, mass_ratio=ratio)
        return (
            SyntheticSpec(kind=kind, regions=(tuple(r1), tuple(r2)), mass_ratio=ratio),
            echo,
        )
    if kind == "gaussian_mixture":
        for need in ("means", "covs", "weights"):
            if need not in entries:
                raise ConfigFileError(f"section [{section}] requires '{need}'")
        means = _parse_rows(entries["means"], f"{section}.means")
        covs = _parse_rows(entries["covs"], f"{section}.covs")
        weights = [float(v) for v in entries["weights"].split()]
        if len(covs) != len(means) or len(weights) != len(means):
            raise ConfigFileError(
                f"section [{section}]: means, covs and weights must align"
            )
        d = len(means[0])
        cov_objs = []
        for row in covs:
            if len(row) == 1:
                cov_objs.append(row[0])
            elif len(row) == d * d:
                cov_objs.append(np.asarray(row).reshape(d, d))
            else:
                raise ConfigFileError(
                    f"section [{section}]: each cov row needs 1 or {d * d} numbers"
                )
        echo.update(means=means, covs=covs, weights=weights)
        return (
            SyntheticSpec(kind=kind, means=means, covs=cov_objs, weights=weights),
            echo,
        )
    # discrete_points
    for need in ("atoms", "masses"):
        if need not in entries:
            raise ConfigFileError(f"section [{section}] requires '{need}'")
    atoms = _parse_rows(entries["atoms"], f"{section}.atoms")
    masses = [float(v) for v in entries["masses"].split()]
    echo.update(atoms=atoms, masses=masses)
    return SyntheticSpec(kind=kind, atoms=atoms, masses=masses), echo


def _parse_mlp(section: str, entries: dict, input_dim_default: int, output_dim: int):
    allowed = dict(_MLP_KEYS)
    if section == "generator":
        allowed["input_dim"] = "int"
    _check_keys(section, entries, allowed)
    width = int(entries.get("hidden_width", 64))
    depth = int(entries.get("depth", 2))
    act = entries.get("activation", "relu")
    input_dim = int(entries.get("input_dim", input_dim_default))
    cfg = MlpConfig(
        input_dim=input_dim,
        hidden_width=width,
        depth=depth,
        activation=act,
        output_dim=output_dim,
    )
    echo = {
        "input_dim": input_dim,
        "hidden_width": width,
        "depth": depth,
        "activation": act,
    }
    return cfg, echo


def load_train_config(path: str) -> tuple[TrainConfig, dict]:
    """Parse and validate a training config; returns (config, resolved echo)."""
    sections = _read_ini(path)
    known_sections = {
        "experiment",
        "train",
        "metric",
        "penalty",
        "critic",
        "generator",
        "data",
        "fake_data",
    }
    for sec in sections:
        if sec not in known_sections:
            raise ConfigFileError(f"unknown section [{sec}]")

    exp = sections.get("experiment", {})
    _check_keys("experiment", exp, {"schema_version"})
    version = exp.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigFileError(
            f"key 'experiment.schema_version': expected '{SCHEMA_VERSION}', got {version!r}"
        )

    train_sec = sections.get("train", {})
    _check_keys("train", train_sec, _TRAIN_KEYS)
    if "iterations" not in train_sec:
        raise ConfigFileError("section [train] requires 'iterations'")

    def _train_val(key, default):
        if key not in train_sec:
            return default
        kind = _TRAIN_KEYS[key]
        if kind == "bool":
            return _parse_bool(train_sec[key], f"train.{key}")
        if kind == "floats":
            vals = [float(v) for v in train_sec[key].split()]
            if len(vals) != 4:
                raise ConfigFileError("key 'train.field_box': expected 4 numbers")
            return tuple(vals)
        return _parse_scalar(train_sec[key], kind, f"train.{key}")

    iterations = _train_val("iterations", None)
    seed = _train_val("seed", 0)
    batch_size = _train_val("batch_size", 256)
    n_critic = _train_val("n_critic", 5)
    lr = _train_val("lr", 1e-4)
    beta1 = _train_val("beta1", 0.0)
    beta2 = _train_val("beta2", 0.9)
    fix_generator = _train_val("fix_generator", False)
    drift_window = _train_val("drift_window", None)
    field_resolution = _train_val("field_resolution", 25)
    field_box = _train_val("field_box", None)

    metric_sec = sections.get("metric", {})
    _check_keys("metric", metric_sec, {"kind", "alpha"})
    metric_kind = metric_sec.get("kind", "logistic")
    metric_alpha = (
        float(metric_sec["alpha"])
        if "alpha" in metric_sec
        else (1.0 if metric_kind in ("quadratic", "hinge") else None)
    )

    pen_sec = sections.get("penalty", {})
    _check_keys("penalty", pen_sec, {"kind", "lambda", "k0", "smax"})
    penalty = PenaltySpec(
        kind=pen_sec.get("kind", "maxgp"),
        weight=float(pen_sec.get("lambda", 10.0)),
        k0=float(pen_sec.get("k0", 1.0)),
        smax_capacity=int(pen_sec.get("smax", 0)),
    )

    if "data" not in sections:
        raise ConfigFileError("section [data] is required")
    data, data_echo = _parse_data_spec("data", sections["data"])
    fake_data = None
    fake_echo = None
    if "fake_data" in sections:
        fake_data, fake_echo = _parse_data_spec("fake_data", sections["fake_data"])

    data_dim = 2
    if data.kind == "gaussian_mixture":
        data_dim = len(data.means[0])
    elif data.kind == "discrete_points":
        data_dim = len(data.atoms[0])

    critic_cfg, critic_echo = _parse_mlp(
        "critic", sections.get("critic", {}), data_dim, 1
    )
    critic_cfg = MlpConfig(
        input_dim=data_dim,
        hidden_width=critic_cfg.hidden_width,
        depth=critic_cfg.depth,
        activation=critic_cfg.activation,
        output_dim=1,
    )
    gen_cfg, gen_echo = _parse_mlp(
        "generator", sections.get("generator", {}), data_dim, data_dim
    )

    try:
        config = TrainConfig(
            iterations=iterations,
            seed=seed,
            data=data,
            metric_kind=metric_kind,
            metric_alpha=metric_alpha,
            penalty=penalty,
            critic_cfg=critic_cfg,
            gen_cfg=gen_cfg,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            n_critic=n_critic,
            batch_size=batch_size,
            fake_data=fake_data,
            fix_generator=fix_generator,
            drift_window=drift_window,
            field_box=field_box,
            field_resolution=field_resolution,
        )
        loss_metrics.make_metric(metric_kind, metric_alpha)
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from None

    echo = {
        "experiment": {"schema_version": SCHEMA_VERSION},
        "train": {
            "iterations": iterations,
            "seed": seed,
            "batch_size": batch_size,
            "n_critic": n_critic,
            "lr": lr,
            "beta1": beta1,
            "beta2": beta2,
            "fix_generator": fix_generator,
            "drift_window": drift_window,
            "field_resolution": field_resolution,
            "field_box": list(field_box) if field_box else None,
        },
        "metric": {"kind": metric_kind, "alpha": metric_alpha},
        "penalty": {
            "kind": penalty.kind,
            "lambda": penalty.weight,
            "k0": penalty.k0,
            "smax": penalty.smax_capacity,
        },
        "critic": critic_echo,
        "generator": gen_echo,
        "data": data_echo,
    }
    if fake_echo is not None:
        echo["fake_data"] = fake_echo
    return config, echo


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_curves(path, report) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iteration,disc_loss,gen_loss,mean_f_real,mean_f_fake,k_hat\n")
        for i in range(len(report.disc_loss)):
            fh.write(
                ",".join(
                    [str(i + 1)]
                    + [
                        _fmt(series[i])
                        for series in (
                            report.disc_loss,
                            report.gen_loss,
                            report.mean_f_real,
                            report.mean_f_fake,
                            report.k_hat,
                        )
                    ]
                )
                + "\n"
            )


def _write_field(path, field) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x1,x2,f,g1,g2\n")
        if field is None:
            return
        nx, ny = field.values.shape
        for i in range(nx):
            for j in range(ny):
                fh.write(
                    ",".join(
                        _fmt(v)
                        for v in (
                            field.xs[i],
                            field.ys[j],
                            field.values[i, j],
                            field.grads[i, j, 0],
                            field.grads[i, j, 1],
                        )
                    )
                    + "\n"
                )


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(config_path: str, out_dir: str) -> int:
    try:
        config, echo = load_train_config(config_path)
    except ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    env_seed = os.environ.get("LIPGAN_SEED")
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError:
            print(f"config error: LIPGAN_SEED={env_seed!r} is not an integer",
                  file=sys.stderr)
            return EXIT_CONFIG
        echo["train"]["seed"] = config.seed

    os.makedirs(out_dir, exist_ok=True)
    try:
        report = Trainer(config).run()
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN

    _write_curves(os.path.join(out_dir, "curves.csv"), report)
    _write_field(os.path.join(out_dir, "field.csv"), report.field)
    summary = {
        "iterations": config.iterations,
        "final_disc_loss": report.disc_loss[-1] if config.iterations else None,
        "final_gen_loss": report.gen_loss[-1] if config.iterations else None,
        "final_k_hat": report.k_hat[-1] if config.iterations else None,
        "mean_f_real_last": report.mean_f_real[-1] if config.iterations else None,
    }
    _write_json(
        os.path.join(out_dir, "report.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "config": echo,
            "drift": report.drift,
            "summary": summary,
        },
    )
    return EXIT_OK


def _random_instance(n: int, d: int, rng) -> DiscreteDist:
    atoms = rng.uniform(-1.0, 1.0, size=(n, d))
    masses = rng.uniform(0.2, 1.0, size=n)
    masses /= masses.sum()
    return DiscreteDist(atoms=atoms, masses=masses)


def cmd_duality(paths, random_spec, seed: int, out_path: str) -> int:
    try:
        if random_spec is not None:
            n, d = random_spec
            rng = np.random.default_rng(seed)
            p = _random_instance(n, d, rng)
            q = _random_instance(n, d, rng)
            instance = {"random": {"atoms": n, "dim": d, "seed": seed}}
        else:
            if len(paths) != 2:
                print(
                    "config error: duality needs two distribution files or --random",
                    file=sys.stderr,
                )
                return EXIT_CONFIG
            p = DiscreteDist.load_csv(paths[0])
            q = DiscreteDist.load_csv(paths[1])
            instance = {"files": list(paths)}
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        rep = ot_oracle.verify_duality(p, q)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY

    _write_json(
        out_path,
        {
            "schema_version": SCHEMA_VERSION,
            "instance": instance,
            "primal": rep.primal,
            "kr": rep.kr,
            "compact": rep.compact,
            "max_gap": rep.max_gap,
        },
    )
    return EXIT_OK if rep.max_gap <= 1e-6 else EXIT_FAIL


# ---------------------------------------------------------------------------
# verify suites


def _suite_grad() -> list[dict]:
    from .gan_trainer import MlpConfig, init_mlp
    from .grad_core import ExprGraph, fd_check, gradient, evaluate, gradient_graph
    from .lipschitz_penalty import grad_norm_expr, penalty_maxgp

    checks = []

    worst = 0.0
    for seed in range(25):
        rng = np.random.default_rng(1000 + seed)
        width = int(rng.integers(2, 17))
        depth = int(rng.integers(1, 4))
        din = int(rng.integers(1, 4))
        batch = int(rng.integers(1, 6))
        cfg = MlpConfig(input_dim=din, hidden_width=width, depth=depth)
        params = init_mlp(cfg, seed)
        graph = ExprGraph()
        x = graph.input("x", (batch, din))
        prefs = [graph.input(f"p{i}", p.shape) for i, p in enumerate(params)]
        out = gan_trainer._mlp_expr(graph, x, prefs, "relu").square().mean()
        bindings = {"x": rng.standard_normal((batch, din))}
        bindings.update({f"p{i}": p for i, p in enumerate(params)})
        rep = fd_check(graph, out, prefs, 1e-6, bindings)
        worst = max(worst, rep.max_rel_error)
    checks.append(
        {"name": "first_order_fd", "pass": worst <= 1e-4, "detail": {"max_rel": worst}}
    )

    worst2 = 0.0
    for seed in range(10):
        rng = np.random.default_rng(2000 + seed)
        cfg = MlpConfig(input_dim=2, hidden_width=int(rng.integers(2, 9)), depth=2)
        params = init_mlp(cfg, seed)
        graph = ExprGraph()
        x = graph.input("x", (4, 2))
        prefs = [graph.input(f"p{i}", p.shape) for i, p in enumerate(params)]
        f = gan_trainer._mlp_expr(graph, x, prefs, "relu")
        pen = penalty_maxgp(grad_norm_expr(graph, f, x), 1.0)
        bindings = {"x": rng.standard_normal((4, 2))}
        bindings.update({f"p{i}": p for i, p in enumerate(params)})
        rep = fd_check(graph, pen, prefs, 1e-5, bindings)
        worst2 = max(worst2, rep.max_rel_error)
    checks.append(
        {
            "name": "double_backward_fd",
            "pass": worst2 <= 1e-3,
            "detail": {"max_rel": worst2},
        }
    )

    worst3 = 0.0
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        graph = ExprGraph()
        x = graph.input("x", (3,))
        f = x.square().sum()
        g = (x.exp() * 0.1).sum()
        a, b = float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
        combo = f * a + g * b
        binding = {"x": rng.standard_normal(3)}
        gf = gradient(graph, f, [x], binding)[x]
        gg = gradient(graph, g, [x], binding)[x]
        gc = gradient(graph, combo, [x], binding)[x]
        worst3 = max(worst3, float(np.abs(gc - (a * gf + b * gg)).max()))
    checks.append(
        {"name": "linearity", "pass": worst3 <= 1e-12, "detail": {"max_abs": worst3}}
    )

    def _run_once():
        rng = np.random.default_rng(77)
        cfg = MlpConfig(input_dim=2, hidden_width=8, depth=2)
        params = init_mlp(cfg, 77)
        graph = ExprGraph()
        x = graph.input("x", (4, 2))
        prefs = [graph.input(f"p{i}", p.shape) for i, p in enumerate(params)]
        out = gan_trainer._mlp_expr(graph, x, prefs, "relu").mean()
        bindings = {"x": rng.standard_normal((4, 2))}
        bindings.update({f"p{i}": p for i, p in enumerate(params)})
        val = evaluate(graph, bindings, out)
        grads = gradient(graph, out, prefs, bindings)
        return float(val), np.concatenate([grads[p].ravel() for p in prefs])

    v1, g1 = _run_once()
    v2, g2 = _run_once()
    same = v1 == v2 and np.array_equal(g1, g2)
    checks.append({"name": "determinism", "pass": bool(same), "detail": {}})
    return checks


_EXPECTED_ADMISSIBLE = {
    "linear": True,
    "logistic": True,
    "sqrt_softplus": True,
    "exp": True,
    "quadratic": False,
    "hinge": False,
}


def _suite_admissible() -> list[dict]:
    checks = []
    for kind, expected in _EXPECTED_ADMISSIBLE.items():
        alpha = 1.0 if kind in ("quadratic", "hinge") else None
        rep = loss_metrics.check_admissible(loss_metrics.make_metric(kind, alpha))
        checks.append(
            {
                "name": f"classify_{kind}",
                "pass": rep.admissible == expected,
                "detail": {"admissible": rep.admissible, "expected": expected},
            }
        )
    return checks


def _suite_theorems() -> list[dict]:
    checks = []

    # scaling of the best mean-score gap in the slope cap
    worst = 0.0
    rng = np.random.default_rng(4000)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        p = _random_instance(n, 2, rng)
        q = _random_instance(n, 2, rng)
        for k in (0.5, 2.0, 7.0):
            rep = ot_oracle.scaling_check(p, q, k)
            worst = max(worst, abs(rep.gap))
    checks.append(
        {"name": "scaling", "pass": worst <= 1e-9, "detail": {"max_gap": worst}}
    )

    # maximal-slope pairs of the one-sided dual on the parallel-lines instance
    real, fake = ot_oracle.line_instance(10)
    sol = ot_oracle.compact_dual(real, fake)
    pairs = ot_oracle.bounding_pairs(sol.values, sol.points, 1.0, 1e-6)
    pair_set = set(pairs)
    expected_pairs = [
        (int(i), int(j))
        for i in sol.real_index
        for j in sol.fake_index
        if abs(sol.points[i][1] - sol.points[j][1]) < 1e-12
    ]
    ok = all(p in pair_set for p in expected_pairs)
    checks.append(
        {
            "name": "bounding_pairs",
            "pass": bool(ok),
            "detail": {"found": len(pairs), "required": len(expected_pairs)},
        }
    )

    # trained critic gradients along a two-atom segment
    x0, y0 = np.array([0.0, 0.0]), np.array([1.5, 0.7])
    cfg = TrainConfig(
        iterations=1500,
        seed=5,
        data=SyntheticSpec(kind="discrete_points", atoms=[y0], masses=[1.0]),
        fake_data=SyntheticSpec(kind="discrete_points", atoms=[x0], masses=[1.0]),
        fix_generator=True,
        metric_kind="logistic",
        penalty=PenaltySpec(kind="maxgp", weight=1.0),
        critic_cfg=MlpConfig(input_dim=2, hidden_width=32, depth=2),
        gen_cfg=MlpConfig(input_dim=2, hidden_width=8, depth=1, output_dim=2),
        lr=2e-3,
        n_critic=1,
        batch_size=32,
    )
    trainer = Trainer(cfg)
    trainer.run()
    k_est = lipschitz_penalty.estimate_k(
        trainer.critic,
        np.tile(y0, (8, 1)),
        np.tile(x0, (8, 1)),
        256,
        np.random.default_rng(0),
    )
    rep = ot_oracle.line_gradient_check(trainer.critic, x0, y0, k_est, m=11)
    min_cos = float(rep.cosines.min())
    checks.append(
        {
            "name": "line_gradient",
            "pass": min_cos >= 0.99,
            "detail": {"min_cosine": min_cos},
        }
    )

    # matched real/fake distributions drive the estimated slope toward zero
    atoms = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    masses = [0.25, 0.25, 0.25, 0.25]
    spec = SyntheticSpec(kind="discrete_points", atoms=atoms, masses=masses)
    cfg = TrainConfig(
        iterations=3000,
        seed=6,
        data=spec,
        fake_data=spec,
        fix_generator=True,
        metric_kind="logistic",
        penalty=PenaltySpec(kind="maxgp", weight=5.0),
        critic_cfg=MlpConfig(input_dim=2, hidden_width=32, depth=2),
        gen_cfg=MlpConfig(input_dim=2, hidden_width=8, depth=1, output_dim=2),
        lr=1e-3,
        n_critic=1,
        batch_size=128,
    )
    trainer = Trainer(cfg)
    trainer.run()
    pts = np.asarray(atoms)
    k_end = lipschitz_penalty.estimate_k(
        trainer.critic, pts, pts, 512, np.random.default_rng(1)
    )
    checks.append(
        {"name": "nash", "pass": k_end <= 0.1, "detail": {"k_hat": k_end}}
    )
    return checks


_SUITES = {
    "grad": _suite_grad,
    "admissible": _suite_admissible,
    "theorems": _suite_theorems,
}


def cmd_verify(suite: str, out_path: str) -> int:
    runner = _SUITES.get(suite)
    if runner is None:
        print(
            f"config error: unknown suite '{suite}', expected one of {sorted(_SUITES)}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    checks = runner()
    all_pass = all(c["pass"] for c in checks)
    _write_json(
        out_path,
        {
            "schema_version": SCHEMA_VERSION,
            "suite": suite,
            "checks": checks,
            "all_pass": all_pass,
        },
    )
    return EXIT_OK if all_pass else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lipgan",
        description="Training, duality verification and property suites "
        "for Lipschitz-penalized adversarial toys.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment from a config")
    p_train.add_argument("config")
    p_train.add_argument("-o", "--out", required=True, help="output directory")

    p_dual = sub.add_parser("duality", help="cross-check the transport solvers")
    p_dual.add_argument("instance", nargs="*", help="two distribution CSV files")
    p_dual.add_argument(
        "--random",
        nargs=2,
        type=int,
        metavar=("N", "D"),
        help="random instance with N atoms per side in D dimensions",
    )
    p_dual.add_argument("--seed", type=int, default=0)
    p_dual.add_argument("-o", "--out", required=True, help="output JSON file")

    p_verify = sub.add_parser("verify", help="run a property suite")
    p_verify.add_argument("suite", help="grad | admissible | theorems")
    p_verify.add_argument("-o", "--out", required=True, help="output JSON file")

    args = parser.parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.out)
    if args.command == "duality":
        return cmd_duality(args.instance, args.random, args.seed, args.out)
    return cmd_verify(args.suite, args.out)


if __name__ == "__main__":
    sys.exit(main())
