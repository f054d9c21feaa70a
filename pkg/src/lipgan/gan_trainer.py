"""Small MLP critics and generators, Adam, and the penalized training loop.

Training graphs are compiled once per run and re-bound every step, so the
per-iteration cost is a single pass over cached numpy kernels.  All
randomness is derived from the config seed; identical configs produce
bit-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grad_core import DomainError, Expr, ExprGraph, evaluate, gradient_graph
from .lipschitz_penalty import (
    PenaltySpec,
    SMaxList,
    grad_norm_expr,
    penalty_expr,
    sample_blend,
)
from .loss_metrics import LossMetric, make_metric

__all__ = [
    "AdamState",
    "FieldGrid",
    "Mlp",
    "MlpConfig",
    "SyntheticSpec",
    "TrainConfig",
    "TrainReport",
    "Trainer",
    "TrainingAborted",
    "adam_init",
    "adam_update",
    "drift_statistic",
    "field_grid",
    "init_mlp",
    "mode_alignment_cosines",
    "mode_coverage",
    "sample_synthetic",
    "train",
]

SELU_SCALE = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

SYNTHETIC_KINDS = (
    "parallel_lines",
    "two_density_regions",
    "gaussian_mixture",
    "discrete_points",
)


class TrainingAborted(RuntimeError):
    """A loss became non-finite; training stops rather than clamping."""

    def __init__(self, iteration: int, term: str, detail: str):
        super().__init__(
            f"non-finite value at iteration {iteration} in {term} update: {detail}"
        )
        self.iteration = iteration
        self.term = term


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_width: int
    depth: int
    activation: str = "relu"
    output_dim: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if min(self.input_dim, self.hidden_width, self.output_dim) < 1:
            raise ValueError("layer sizes must be positive")
        if self.activation not in ("relu", "selu"):
            raise ValueError(f"unknown activation '{self.activation}'")


def init_mlp(cfg: MlpConfig, seed) -> list[np.ndarray]:
    """Deterministic init: weights uniform +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    dims = [cfg.input_dim] + [cfg.hidden_width] * cfg.depth + [cfg.output_dim]
    params: list[np.ndarray] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]


def adam_init(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_update(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float = 1e-8,
    t: int = 1,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam step; returns fresh params and state."""
    if t < 1:
        raise ValueError("step index t must be at least 1")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have the same length")
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)


def _activation_expr(h: Expr, kind: str) -> Expr:
    if kind == "relu":
        return h.relu()
    # selu, assembled from primitives so second derivatives come for free
    mask = h.relu_mask()
    pos = h * mask
    neg = ((h * (1.0 - mask)).exp() - 1.0) * (1.0 - mask)
    return (pos + neg * SELU_ALPHA) * SELU_SCALE


def _mlp_expr(graph: ExprGraph, x: Expr, param_refs: list[Expr], activation: str) -> Expr:
    h = x
    for i in range(0, len(param_refs) - 2, 2):
        h = _activation_expr(h @ param_refs[i] + param_refs[i + 1], activation)
    return h @ param_refs[-2] + param_refs[-1]


class Mlp:
    """Feedforward network with compiled per-batch-size evaluation graphs."""

    def __init__(self, cfg: MlpConfig, params: list[np.ndarray]):
        self.cfg = cfg
        self.params = params
        self._progs: dict[int, tuple] = {}

    def _prog(self, n: int):
        prog = self._progs.get(n)
        if prog is None:
            graph = ExprGraph()
            x = graph.input("x", (n, self.cfg.input_dim))
            prefs = [
                graph.input(f"p{i}", p.shape) for i, p in enumerate(self.params)
            ]
            out = _mlp_expr(graph, x, prefs, self.cfg.activation)
            gx = gradient_graph(graph, out.sum(), x)
            prog = (graph, x, prefs, out, gx)
            self._progs[n] = prog
        return prog

    def _bindings(self, pts: np.ndarray) -> dict:
        b = {"x": pts}
        for i, p in enumerate(self.params):
            b[f"p{i}"] = p
        return b

    def forward(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        graph, _, _, out, _ = self._prog(len(pts))
        return evaluate(graph, self._bindings(pts), out)

    def scores(self, pts) -> np.ndarray:
        """Scalar score per point (requires output_dim == 1)."""
        return self.forward(pts).reshape(-1)

    def input_grads(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        graph, _, _, _, gx = self._prog(len(pts))
        return evaluate(graph, self._bindings(pts), gx)

    def scores_and_grads(self, pts) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts, dtype=np.float64)
        graph, _, _, out, gx = self._prog(len(pts))
        f, g = evaluate(graph, self._bindings(pts), [out, gx])
        return f.reshape(-1), g


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """One of the synthetic 2-D data families used by the experiments."""

    kind: str
    offset: float = 0.0
    z_lo: float = 0.0
    z_hi: float = 1.0
    regions: tuple | None = None
    mass_ratio: float = 1.0
    means: object = None
    covs: object = None
    weights: object = None
    atoms: object = None
    masses: object = None

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind '{self.kind}'")


def _mixture_chols(means, covs):
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2:
        raise ValueError("means must be a (k, d) array")
    k, d = means.shape
    chols = []
    for c in range(k):
        cov = np.asarray(covs[c], dtype=np.float64)
        if cov.ndim == 0:
            L = np.sqrt(float(cov)) * np.eye(d)
        else:
            if cov.shape != (d, d):
                raise ValueError(f"component {c}: covariance must be scalar or ({d},{d})")
            L = np.linalg.cholesky(cov)
        chols.append(L)
    return means, chols


def sample_synthetic(spec: SyntheticSpec, n: int, rng) -> np.ndarray:
    """Draw n i.i.d. samples from the given synthetic family."""
    if n < 1:
        raise ValueError("n must be at least 1")

    if spec.kind == "parallel_lines":
        z = rng.uniform(spec.z_lo, spec.z_hi, size=n)
        return np.column_stack([np.full(n, spec.offset), z])

    if spec.kind == "two_density_regions":
        if spec.regions is None or len(spec.regions) != 2:
            raise ValueError("two_density_regions requires two (x0, y0, x1, y1) boxes")
        if spec.mass_ratio <= 0:
            raise ValueError("mass_ratio must be positive")
        boxes = [np.asarray(r, dtype=np.float64) for r in spec.regions]
        w1 = spec.mass_ratio / (1.0 + spec.mass_ratio)
        pick = rng.random(n) < w1
        u = rng.random((n, 2))
        out = np.empty((n, 2))
        for which, box in enumerate(boxes):
            sel = pick if which == 0 else ~pick
            lo = box[:2]
            hi = box[2:]
            out[sel] = lo + u[sel] * (hi - lo)
        return out

    if spec.kind == "gaussian_mixture":
        if spec.means is None or spec.covs is None or spec.weights is None:
            raise ValueError("gaussian_mixture requires means, covs and weights")
        weights = np.asarray(spec.weights, dtype=np.float64)
        if abs(weights.sum() - 1.0) > 1e-9 or (weights < 0).any():
            raise ValueError("mixture weights must be non-negative and sum to 1")
        means, chols = _mixture_chols(spec.means, spec.covs)
        comp = rng.choice(len(weights), size=n, p=weights)
        z = rng.standard_normal((n, means.shape[1]))
        out = np.empty_like(z)
        for c in range(len(weights)):
            sel = comp == c
            out[sel] = means[c] + z[sel] @ chols[c].T
        return out

    # discrete_points
    if spec.atoms is None or spec.masses is None:
        raise ValueError("discrete_points requires atoms and masses")
    atoms = np.asarray(spec.atoms, dtype=np.float64)
    masses = np.asarray(spec.masses, dtype=np.float64)
    if len(atoms) != len(masses):
        raise ValueError("atoms and masses must have the same length")
    if abs(masses.sum() - 1.0) > 1e-9 or (masses <= 0).any():
        raise ValueError("masses must be positive and sum to 1")
    idx = rng.choice(len(atoms), size=n, p=masses)
    return atoms[idx]


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Critic values and input gradients on a 2-D lattice."""

    box: tuple[float, float, float, float]
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (nx, ny)
    grads: np.ndarray  # (nx, ny, 2)


def field_grid(critic: Mlp, box, resolution) -> FieldGrid:
    """Evaluate the critic and its input gradients on a lattice over ``box``."""
    if critic.cfg.input_dim != 2:
        raise ValueError("field grids are only defined for 2-D critics")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nx, ny = int(resolution[0]), int(resolution[1])
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be at least 2 per axis")
    x_lo, x_hi, y_lo, y_hi = (float(v) for v in box)
    xs = np.linspace(x_lo, x_hi, nx)
    ys = np.linspace(y_lo, y_hi, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    f, g = critic.scores_and_grads(pts)
    return FieldGrid(
        box=(x_lo, x_hi, y_lo, y_hi),
        xs=xs,
        ys=ys,
        values=f.reshape(nx, ny),
        grads=g.reshape(nx, ny, 2),
    )


def drift_statistic(series, window: int) -> float:
    """Standard deviation of the final ``window`` entries of a series."""
    series = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be at least 1")
    if window > len(series):
        raise ValueError("window exceeds series length")
    return float(np.std(series[-window:]))


def nearest_mode_index(samples, modes) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    modes = np.asarray(modes, dtype=np.float64)
    d = np.linalg.norm(samples[:, None, :] - modes[None, :, :], axis=2)
    return d.argmin(axis=1)


def mode_coverage(samples, modes) -> np.ndarray:
    """Fraction of samples assigned to each mode by nearest-mode rule."""
    idx = nearest_mode_index(samples, modes)
    modes = np.asarray(modes, dtype=np.float64)
    return np.bincount(idx, minlength=len(modes)) / len(idx)


def mode_alignment_cosines(critic: Mlp, samples, modes) -> np.ndarray:
    """Cosine between the critic gradient and the direction to the nearest mode."""
    samples = np.asarray(samples, dtype=np.float64)
    modes = np.asarray(modes, dtype=np.float64)
    grads = critic.input_grads(samples)
    target = modes[nearest_mode_index(samples, modes)] - samples
    gn = np.linalg.norm(grads, axis=1)
    tn = np.linalg.norm(target, axis=1)
    denom = gn * tn
    cos = np.where(denom > 0, (grads * target).sum(axis=1) / np.where(denom > 0, denom, 1.0), -1.0)
    return cos


@dataclass
class TrainConfig:
    iterations: int
    seed: int
    data: SyntheticSpec
    metric_kind: str = "logistic"
    metric_alpha: float | None = None
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    critic_cfg: MlpConfig = field(
        default_factory=lambda: MlpConfig(input_dim=2, hidden_width=64, depth=2)
    )
    gen_cfg: MlpConfig = field(
        default_factory=lambda: MlpConfig(
            input_dim=2, hidden_width=64, depth=2, output_dim=2
        )
    )
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    n_critic: int = 5
    batch_size: int = 256
    fake_data: SyntheticSpec | None = None
    fix_generator: bool = False
    drift_window: int | None = None
    field_box: tuple[float, float, float, float] | None = None
    field_resolution: int = 25

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.n_critic < 1:
            raise ValueError("n_critic must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass(eq=False)
class TrainReport:
    disc_loss: np.ndarray
    gen_loss: np.ndarray
    mean_f_real: np.ndarray
    mean_f_fake: np.ndarray
    k_hat: np.ndarray
    field: FieldGrid | None
    drift: float | None


class Trainer:
    """Owns one training run: networks, optimizer state and rng streams."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.metric: LossMetric = make_metric(config.metric_kind, config.metric_alpha)
        self.penalty = config.penalty

        ss = np.random.SeedSequence(config.seed)
        (s_ci, s_gi, s_data, s_fake, s_noise, s_blend, s_box) = ss.spawn(7)
        self._rng_data = np.random.default_rng(s_data)
        self._rng_fake = np.random.default_rng(s_fake)
        self._rng_noise = np.random.default_rng(s_noise)
        self._rng_blend = np.random.default_rng(s_blend)
        self._rng_box = np.random.default_rng(s_box)

        self.critic_params = init_mlp(config.critic_cfg, s_ci)
        self.gen_params = init_mlp(config.gen_cfg, s_gi)
        self._critic_adam = adam_init(self.critic_params)
        self._gen_adam = adam_init(self.gen_params)
        self._critic_t = 0
        self._gen_t = 0

        if config.gen_cfg.output_dim != config.critic_cfg.input_dim:
            raise ValueError("generator output dimension must match critic input")

        self._critic_view = Mlp(config.critic_cfg, self.critic_params)
        self._gen_view = Mlp(config.gen_cfg, self.gen_params)

        self.smax = SMaxList(capacity=self.penalty.smax_capacity)
        if self.penalty.smax_capacity > 0:
            real0 = self._real_batch(self.penalty.smax_capacity)
            fake0 = self._fake_batch(self.penalty.smax_capacity)
            pts0 = sample_blend(real0, fake0, self._rng_blend)
            self.smax.entries = [(pts0[i].copy(), 0.0) for i in range(len(pts0))]

        self._critic_prog = None
        self._gen_prog = None

    # batches ----------------------------------------------------------
    def _real_batch(self, n: int) -> np.ndarray:
        return sample_synthetic(self.config.data, n, self._rng_data)

    def _fake_batch(self, n: int) -> np.ndarray:
        if self.config.fix_generator and self.config.fake_data is not None:
            return sample_synthetic(self.config.fake_data, n, self._rng_fake)
        z = self._rng_noise.standard_normal((n, self.config.gen_cfg.input_dim))
        return self.generator.forward(z)

    # compiled programs --------------------------------------------------
    def _build_critic_prog(self):
        cfg = self.config
        B = cfg.batch_size
        C = self.penalty.smax_capacity
        d = cfg.critic_cfg.input_dim
        g = ExprGraph()
        x_real = g.input("x_real", (B, d))
        x_fake = g.input("x_fake", (B, d))
        x_blend = g.input("x_blend", (B + C, d))
        prefs = [g.input(f"c{i}", p.shape) for i, p in enumerate(self.critic_params)]

        act = cfg.critic_cfg.activation
        f_real = _mlp_expr(g, x_real, prefs, act)
        f_fake = _mlp_expr(g, x_fake, prefs, act)
        f_blend = _mlp_expr(g, x_blend, prefs, act)

        disc = self.metric.fake_loss_expr(f_fake).mean() + self.metric.real_loss_expr(
            f_real
        ).mean()
        norms = grad_norm_expr(g, f_blend, x_blend)
        if self.penalty.weight > 0:
            loss = disc + penalty_expr(self.penalty, norms)
        else:
            loss = disc
        grads = [gradient_graph(g, loss, p) for p in prefs]
        self._critic_prog = {
            "graph": g,
            "prefs": prefs,
            "loss": loss,
            "mean_f_real": f_real.mean(),
            "mean_f_fake": f_fake.mean(),
            "k_hat": norms.max(),
            "norms": norms,
            "grads": grads,
        }

    def _build_gen_prog(self):
        cfg = self.config
        B = cfg.batch_size
        g = ExprGraph()
        z = g.input("z", (B, cfg.gen_cfg.input_dim))
        gprefs = [g.input(f"g{i}", p.shape) for i, p in enumerate(self.gen_params)]
        cprefs = [g.input(f"c{i}", p.shape) for i, p in enumerate(self.critic_params)]
        fake = _mlp_expr(g, z, gprefs, cfg.gen_cfg.activation)
        f = _mlp_expr(g, fake, cprefs, cfg.critic_cfg.activation)
        loss = (-f).mean()
        grads = [gradient_graph(g, loss, p) for p in gprefs]
        self._gen_prog = {"graph": g, "loss": loss, "grads": grads}

    # steps --------------------------------------------------------------
    def critic_step(self, real, fake) -> tuple[float, float, float, float]:
        """One Adam step on the penalized objective.

        Returns (loss, mean score on real, mean score on fake, batch max
        gradient norm over the blend samples).
        """
        if self._critic_prog is None:
            self._build_critic_prog()
        prog = self._critic_prog
        cfg = self.config

        real = np.asarray(real, dtype=np.float64)
        fake = np.asarray(fake, dtype=np.float64)
        blend = sample_blend(real, fake, self._rng_blend)
        if self.penalty.smax_capacity > 0:
            blend = np.vstack([blend, self.smax.points])

        bindings = {"x_real": real, "x_fake": fake, "x_blend": blend}
        for i, p in enumerate(self.critic_params):
            bindings[f"c{i}"] = p

        outs = evaluate(
            prog["graph"],
            bindings,
            [
                prog["loss"],
                prog["mean_f_real"],
                prog["mean_f_fake"],
                prog["k_hat"],
                prog["norms"],
            ]
            + prog["grads"],
        )
        loss, mfr, mff, khat, norms = outs[:5]
        grads = outs[5:]

        self._critic_t += 1
        self.critic_params, self._critic_adam = adam_update(
            self.critic_params,
            grads,
            self._critic_adam,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            t=self._critic_t,
        )
        if self.penalty.smax_capacity > 0:
            self.smax.update(blend, norms)
        return float(loss), float(mfr), float(mff), float(khat)

    def generator_step(self, noise=None) -> float:
        """One Adam step on the generator objective, critic held fixed."""
        if self._gen_prog is None:
            self._build_gen_prog()
        prog = self._gen_prog
        cfg = self.config
        if noise is None:
            noise = self._rng_noise.standard_normal(
                (cfg.batch_size, cfg.gen_cfg.input_dim)
            )
        bindings = {"z": np.asarray(noise, dtype=np.float64)}
        for i, p in enumerate(self.gen_params):
            bindings[f"g{i}"] = p
        for i, p in enumerate(self.critic_params):
            bindings[f"c{i}"] = p
        outs = evaluate(prog["graph"], bindings, [prog["loss"]] + prog["grads"])
        loss, grads = outs[0], outs[1:]
        self._gen_t += 1
        self.gen_params, self._gen_adam = adam_update(
            self.gen_params,
            grads,
            self._gen_adam,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            t=self._gen_t,
        )
        return float(loss)

    # views ----------------------------------------------------------------
    @property
    def critic(self) -> Mlp:
        self._critic_view.params = self.critic_params
        return self._critic_view

    @property
    def generator(self) -> Mlp:
        self._gen_view.params = self.gen_params
        return self._gen_view

    # the loop ---------------------------------------------------------------
    def _default_box(self) -> tuple[float, float, float, float]:
        allpts = np.vstack([self._real_batch(256), self._fake_batch(256)])
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
        pad = 0.5 + 0.1 * (hi - lo)
        return (
            float(lo[0] - pad[0]),
            float(hi[0] + pad[0]),
            float(lo[1] - pad[1]),
            float(hi[1] + pad[1]),
        )

    def run(self) -> TrainReport:
        cfg = self.config
        n = cfg.iterations
        disc_loss = np.empty(n)
        gen_loss = np.empty(n)
        mean_f_real = np.empty(n)
        mean_f_fake = np.empty(n)
        k_hat = np.empty(n)

        for it in range(1, n + 1):
            try:
                for _ in range(cfg.n_critic):
                    real = self._real_batch(cfg.batch_size)
                    fake = self._fake_batch(cfg.batch_size)
                    loss, mfr, mff, khat = self.critic_step(real, fake)
            except DomainError as exc:
                raise TrainingAborted(it, "critic", str(exc)) from exc
            if cfg.fix_generator:
                gl = -mff
            else:
                try:
                    gl = self.generator_step()
                except DomainError as exc:
                    raise TrainingAborted(it, "generator", str(exc)) from exc
            disc_loss[it - 1] = loss
            gen_loss[it - 1] = gl
            mean_f_real[it - 1] = mfr
            mean_f_fake[it - 1] = mff
            k_hat[it - 1] = khat

        field = None
        if cfg.critic_cfg.input_dim == 2:
            box = cfg.field_box if cfg.field_box is not None else self._default_box()
            field = field_grid(self.critic, box, cfg.field_resolution)

        drift = None
        if n > 0:
            window = cfg.drift_window if cfg.drift_window is not None else min(500, n)
            drift = drift_statistic(mean_f_real, window)

        return TrainReport(
            disc_loss=disc_loss,
            gen_loss=gen_loss,
            mean_f_real=mean_f_real,
            mean_f_fake=mean_f_fake,
            k_hat=k_hat,
            field=field,
            drift=drift,
        )


def train(config: TrainConfig) -> TrainReport:
    """Run the alternating loop described by the config and collect curves."""
    return Trainer(config).run()
