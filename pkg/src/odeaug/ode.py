"""ODE model representation, integration, and two-stage parameter fitting.

The model is ``dx/dt = f(P, x, u)`` with window-wise parameters ``P``.
Fitting runs in two stages: a gradient-matching regression solved by
stochastic gradient descent (the derivative targets come from
:mod:`odeaug.series`), followed by an optional particle-swarm refinement
of the integration RMSE.  Several drop fractions of high-curvature
points give multiple gradient-stage candidates; the swarm is seeded with
all of them.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import DivergenceError, RefinementFailedError, UnidentifiableError
from .series import TimeSeries, curvature, derivative, moving_average


@dataclass(frozen=True)
class OdeStructure:
    """Right-hand side of the model plus its parameter gradient.

    ``rhs(params, x, u)`` returns dx/dt; ``rhs_param_gradient(params, x, u)``
    returns the length-``param_count`` vector of partial derivatives of the
    right-hand side with respect to each parameter.  ``linear_in_params``
    marks structures of the form rhs = rhs(0, x, u) + gradient . params,
    which unlocks a much faster regression path.
    """

    id: str
    rhs: Callable
    rhs_param_gradient: Callable
    param_count: int
    linear_in_params: bool = False


def _linear1_rhs(p, x, u):
    return p[0] * u - p[1] * x + p[2]


def _linear1_grad(p, x, u):
    return np.array([u, -x, 1.0])


#: First-order linear response to a control input: gain, decay, offset.
LINEAR1 = OdeStructure("linear1", _linear1_rhs, _linear1_grad, 3,
                       linear_in_params=True)

STRUCTURES = {LINEAR1.id: LINEAR1}


def get_structure(structure_id):
    try:
        return STRUCTURES[structure_id]
    except KeyError:
        raise ValueError(f"unknown ODE structure {structure_id!r}") from None


def evaluate_rhs(structure, params, x_d, x_c):
    """Evaluate dx/dt for one state/control sample; checks parameter arity."""
    params = tuple(float(p) for p in params)
    if len(params) != structure.param_count:
        raise ValueError(
            f"{structure.id} expects {structure.param_count} parameters, "
            f"got {len(params)}"
        )
    return float(structure.rhs(params, float(x_d), float(x_c)))


@dataclass
class OdeParams:
    """Window-wise parameter tuples: list of (start, end, params).

    Windows must be contiguous, non-overlapping, in order, and cover the
    fitted span; ``end`` is exclusive.  Indices outside the span clamp to
    the nearest window, which lets fitted parameters drive generated
    series longer than the fitting pair.
    """

    windows: list

    def __post_init__(self):
        if not self.windows:
            raise ValueError("at least one window required")
        norm = []
        prev_end = None
        for start, end, params in self.windows:
            start, end = int(start), int(end)
            params = tuple(float(p) for p in params)
            if end <= start:
                raise ValueError(f"empty window ({start}, {end})")
            if prev_end is not None and start != prev_end:
                raise ValueError("windows must be contiguous and ordered")
            if not all(math.isfinite(p) for p in params):
                raise ValueError("window parameters must be finite")
            norm.append((start, end, params))
            prev_end = end
        self.windows = norm

    @classmethod
    def single(cls, params, length):
        return cls([(0, int(length), tuple(params))])

    @property
    def span(self):
        return self.windows[0][0], self.windows[-1][1]

    def params_at(self, index):
        """Parameters governing step ``index``; out-of-span indices clamp."""
        for start, end, params in self.windows:
            if index < end:
                return params
        return self.windows[-1][2]


def stability_notes(structure, params):
    """Human-readable warnings for parameter regimes known to be unstable."""
    notes = []
    if structure.id == "linear1":
        for start, end, p in params.windows:
            if p[1] <= 0.0:
                notes.append(
                    f"window [{start},{end}): decay coefficient {p[1]:g} is not "
                    "positive; trajectories will not relax to an equilibrium"
                )
    return notes


@dataclass(frozen=True)
class SeriesPair:
    """Aligned (control, dependent) channels sharing one sample grid."""

    control: np.ndarray
    dependent: np.ndarray
    sample_period: float

    def __post_init__(self):
        object.__setattr__(self, "control", np.asarray(self.control, dtype=float))
        object.__setattr__(self, "dependent", np.asarray(self.dependent, dtype=float))
        if self.control.shape != self.dependent.shape or self.control.ndim != 1:
            raise ValueError("control and dependent must be aligned 1-D arrays")
        if not (self.sample_period > 0):
            raise ValueError("sample_period must be positive")

    @classmethod
    def from_series(cls, series: TimeSeries, control_channel, dependent_channel):
        return cls(
            series.channel(control_channel),
            series.channel(dependent_channel),
            series.sample_period,
        )

    def __len__(self):
        return self.control.shape[0]


# ---------------------------------------------------------------------------
# integration

def integrate(structure, params, control, x0, dt, abs_bound=None):
    """Fixed-step classical Runge-Kutta trajectory under a sampled control.

    The control is held constant over each sample for the intra-step
    stages.  Returns one value per control sample, starting at ``x0``.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite, or ``abs_bound`` is given and
        ``|x|`` exceeds it.  The error carries the offending step index.
    """
    if isinstance(params, (tuple, list)) and params and not isinstance(
        params[0], (tuple, list)
    ):
        params = OdeParams.single(params, len(control))
    control = np.asarray(control, dtype=float)
    n = control.shape[0]
    if n < 1:
        raise ValueError("control must contain at least one sample")
    if not (dt > 0):
        raise ValueError("dt must be positive")
    rhs = structure.rhs
    out = np.empty(n)
    x = float(x0)
    out[0] = x
    half = 0.5 * dt
    sixth = dt / 6.0
    for i in range(n - 1):
        u = control[i]
        p = params.params_at(i)
        k1 = rhs(p, x, u)
        k2 = rhs(p, x + half * k1, u)
        k3 = rhs(p, x + half * k2, u)
        k4 = rhs(p, x + dt * k3, u)
        x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if not math.isfinite(x) or (abs_bound is not None and abs(x) > abs_bound):
            raise DivergenceError(i + 1)
        out[i + 1] = x
    return out


def integration_rmse(structure, params, pair, abs_bound=None):
    """RMSE between the observed dependent channel and the integrated model.

    Integration starts from the first observed dependent sample.  A
    diverging trajectory scores ``inf`` instead of raising.
    """
    try:
        traj = integrate(
            structure,
            params,
            pair.control,
            pair.dependent[0],
            pair.sample_period,
            abs_bound=abs_bound,
        )
    except DivergenceError:
        return math.inf
    return float(np.sqrt(np.mean((traj - pair.dependent) ** 2)))


def _divergence_bound(dependent):
    rng = float(np.max(dependent) - np.min(dependent))
    scale = max(rng, float(np.max(np.abs(dependent))), 1.0)
    return 1e6 * scale


# ---------------------------------------------------------------------------
# configuration

@dataclass
class SgdConfig:
    """Preconditioned SGD schedule: constant warmup, 1/t decay, tail average.

    The per-parameter preconditioner makes the rate scale-free; the decay
    phase plus Polyak tail averaging lets the iterate settle onto the
    least-squares solution instead of hovering around it.  The plateau
    stop (``min_improvement`` > 0) is off by default because it tends to
    fire while the slowest parameter direction is still converging.
    """

    learning_rate: float = 0.05
    epochs: int = 800
    warmup_fraction: float = 0.33
    lr_decay: float = 0.3
    average_fraction: float = 0.4
    min_improvement: float = 0.0


@dataclass
class PsoConfig:
    swarm_size: int = 30
    iterations: int = 100
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0


@dataclass
class FitConfig:
    drop_fractions: tuple = (0.05, 0.1, 0.2)
    smooth_window: int = 5
    curvature_max_order: int = 3
    min_points: int = 32
    seed: int = 0
    sgd: SgdConfig = field(default_factory=SgdConfig)
    use_pso: bool = False
    pso: PsoConfig = field(default_factory=PsoConfig)
    #: Optional explicit window boundaries [(start, end), ...]; None fits a
    #: single window spanning the whole pair.
    window_bounds: list = None


class FitCandidate(NamedTuple):
    params: tuple
    rmse: float
    drop_fraction: float


@dataclass
class FitReport:
    params: OdeParams
    rmse: float
    candidates: list
    dropped_fraction: float
    pso_used: bool
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# gradient-matching stage

def _sgd_minimize(structure, targets, xs, us, config, rng):
    """Per-point SGD on the squared gradient-matching residual.

    Updates are preconditioned by the inverse mean-square gradient
    features at the zero initialization.  The preconditioner is constant,
    so the fixed point is still the unweighted least-squares solution; it
    only makes the step size independent of channel units.
    """
    n_params = structure.param_count
    p = np.zeros(n_params)
    n = targets.shape[0]
    feats0 = np.array(
        [structure.rhs_param_gradient(p, x, u) for x, u in zip(xs, us)], dtype=float
    )
    pre = 1.0 / np.maximum(np.mean(feats0 * feats0, axis=0), 1e-300)
    linear = structure.linear_in_params
    if linear:
        offsets = np.array(
            [structure.rhs(p, x, u) for x, u in zip(xs, us)], dtype=float
        )
        # plain-float rows: the per-point loop is an order of magnitude
        # faster than boxed numpy scalars
        feat_rows = [tuple(row) for row in feats0]
        pf_rows = [tuple(row) for row in feats0 * pre]
        y_off = (targets - offsets).tolist()
        p_work = [0.0] * n_params
    k_range = range(n_params)

    order = np.arange(n)
    warmup = int(config.warmup_fraction * config.epochs)
    avg_start = int((1.0 - config.average_fraction) * config.epochs)
    acc = np.zeros(n_params)
    n_acc = 0
    prev_loss = None
    lr0 = config.learning_rate
    for epoch in range(config.epochs):
        lr = lr0 if epoch < warmup else lr0 / (1.0 + config.lr_decay * (epoch - warmup))
        two_lr = 2.0 * lr
        rng.shuffle(order)
        if linear:
            for t in order.tolist():
                f = feat_rows[t]
                r = y_off[t]
                for j in k_range:
                    r -= f[j] * p_work[j]
                c = two_lr * r
                pf = pf_rows[t]
                for j in k_range:
                    p_work[j] += c * pf[j]
            p = np.array(p_work)
            resid = targets - offsets - feats0 @ p
        else:
            for t in order:
                x, u = xs[t], us[t]
                r = targets[t] - structure.rhs(p, x, u)
                p += (two_lr * r) * (
                    pre * np.asarray(structure.rhs_param_gradient(p, x, u), dtype=float)
                )
            resid = np.array(
                [targets[i] - structure.rhs(p, xs[i], us[i]) for i in range(n)]
            )
        loss = float(np.mean(resid * resid))
        if not math.isfinite(loss):
            raise UnidentifiableError("gradient regression diverged")
        if epoch >= avg_start:
            acc += p
            n_acc += 1
        if (
            config.min_improvement > 0.0
            and prev_loss is not None
            and 0.0 <= prev_loss - loss < config.min_improvement
        ):
            break
        prev_loss = loss
    return acc / n_acc if n_acc else p


def _retained_indices(smoothed, dt, q, max_order):
    n = smoothed.shape[0]
    n_drop = int(round(q * n))
    if n_drop == 0:
        return np.arange(n)
    score = curvature(smoothed, dt, max_order)
    # stable sort keeps ties deterministic
    order = np.argsort(score, kind="stable")
    return np.sort(order[: n - n_drop])


def fit_gradient_sgd(pair, structure, drop_fractions, config=None):
    """Gradient-matching candidates, one per drop fraction.

    For each fraction ``q``: smooth the dependent channel, estimate its
    first derivative, drop the top-``q`` fraction of points by curvature
    score, and regress the derivative targets onto the model right-hand
    side by seeded SGD.  Candidates are scored by integration RMSE against
    the raw pair and returned sorted ascending.

    Raises
    ------
    ValueError
        On a fraction outside [0, 0.5] or fewer than ``min_points``
        retained samples.
    UnidentifiableError
        If the regression design is rank-deficient (e.g. constant control
        with the state held at equilibrium).
    """
    config = config or FitConfig()
    n = len(pair)
    for q in drop_fractions:
        if not (0.0 <= q <= 0.5):
            raise ValueError(f"drop fraction {q} outside [0, 0.5]")
    smoothed = moving_average(pair.dependent, config.smooth_window)
    targets = derivative(smoothed, pair.sample_period, 1)
    bound = _divergence_bound(pair.dependent)

    candidates = []
    ss = np.random.SeedSequence([_seed_entropy(config.seed), 101])
    streams = ss.spawn(len(drop_fractions))
    for q, stream in zip(drop_fractions, streams):
        keep = _retained_indices(smoothed, pair.sample_period, q, config.curvature_max_order)
        if keep.shape[0] < config.min_points:
            raise ValueError(
                f"only {keep.shape[0]} samples retained after dropping; "
                f"need at least {config.min_points}"
            )
        xs = smoothed[keep]
        us = pair.control[keep]
        gs = targets[keep]
        _check_identifiable(structure, xs, us)
        rng = np.random.default_rng(stream)
        p = _sgd_minimize(structure, gs, xs, us, config.sgd, rng)
        rmse = integration_rmse(
            structure, OdeParams.single(p, n), pair, abs_bound=bound
        )
        candidates.append(FitCandidate(tuple(float(v) for v in p), rmse, float(q)))
    candidates.sort(key=lambda c: c.rmse)
    return candidates


def _check_identifiable(structure, xs, us):
    probe = np.zeros(structure.param_count)
    rows = np.array([structure.rhs_param_gradient(probe, x, u) for x, u in zip(xs, us)],
                    dtype=float)
    if np.linalg.matrix_rank(rows) < structure.param_count:
        raise UnidentifiableError(
            "retained points do not identify the parameters "
            "(rank-deficient regression design)"
        )


def _seed_entropy(seed):
    return int(seed) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# particle-swarm refinement

def _candidate_box(candidates):
    arr = np.asarray(candidates, dtype=float)
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    span = hi - lo
    floor = 0.1 * np.maximum(np.abs(lo), np.abs(hi)) + 1e-3
    span = np.maximum(span, floor)
    return lo - 0.5 * span, hi + 0.5 * span


def refine_pso(candidates, pair, structure, config=None):
    """Particle-swarm refinement of the integration RMSE.

    The swarm starts from all candidates plus uniform samples in a box
    around them, so the result is never worse than the best candidate.
    Returns ``(params, rmse)``.

    Raises
    ------
    RefinementFailedError
        If every evaluation in the run diverged; carries the first
        candidate as the best available fallback.
    """
    config = config or PsoConfig()
    if not candidates:
        raise ValueError("need at least one candidate")
    cand = [tuple(float(v) for v in c) for c in candidates]
    dim = len(cand[0])
    bound = _divergence_bound(pair.dependent)

    def objective(vec):
        return integration_rmse(
            structure, OdeParams.single(vec, len(pair)), pair, abs_bound=bound
        )

    rng = np.random.default_rng(
        np.random.SeedSequence([_seed_entropy(config.seed), 202])
    )
    n_particles = max(config.swarm_size, len(cand))
    lo, hi = _candidate_box(cand)
    x = np.empty((n_particles, dim))
    x[: len(cand)] = np.asarray(cand, dtype=float)
    if n_particles > len(cand):
        x[len(cand):] = rng.uniform(lo, hi, size=(n_particles - len(cand), dim))
    v = np.zeros_like(x)

    # only the seeded candidates are scored up front, so a 0-iteration call
    # degenerates to "best candidate"; box-filling particles are first
    # evaluated after they move
    pbest = x.copy()
    pbest_f = np.full(n_particles, math.inf)
    pbest_f[: len(cand)] = [objective(xi) for xi in x[: len(cand)]]
    g_idx = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g_idx].copy(), float(pbest_f[g_idx])

    for _ in range(config.iterations):
        r1 = rng.random((n_particles, dim))
        r2 = rng.random((n_particles, dim))
        v = (config.inertia * v
             + config.cognitive * r1 * (pbest - x)
             + config.social * r2 * (gbest - x))
        x = x + v
        fitness = np.array([objective(xi) for xi in x])
        improved = fitness < pbest_f
        pbest[improved] = x[improved]
        pbest_f[improved] = fitness[improved]
        g_idx = int(np.argmin(pbest_f))
        if pbest_f[g_idx] < gbest_f:
            gbest, gbest_f = pbest[g_idx].copy(), float(pbest_f[g_idx])

    if not math.isfinite(gbest_f):
        raise RefinementFailedError(cand[0], gbest_f)
    return tuple(float(v) for v in gbest), gbest_f


# ---------------------------------------------------------------------------
# full fit

def fit(pair, structure=LINEAR1, config=None):
    """Fit window-wise ODE parameters to a (control, dependent) pair.

    Runs the gradient stage over ``config.drop_fractions`` per window and
    keeps the candidate with the lowest integration RMSE; the swarm
    refinement runs only when ``config.use_pso`` is set (it rarely moves
    the simple built-in structure).  The report's RMSE is re-evaluated on
    the assembled window parameters, so it is self-consistent by
    construction.
    """
    config = config or FitConfig()
    n = len(pair)
    bounds = config.window_bounds or [(0, n)]
    if bounds[0][0] != 0 or bounds[-1][1] != n:
        raise ValueError("window bounds must cover the whole pair")

    windows = []
    all_candidates = []
    dropped_weight = 0.0
    pso_used = False
    for w_idx, (start, end) in enumerate(bounds):
        sub = SeriesPair(
            pair.control[start:end], pair.dependent[start:end], pair.sample_period
        )
        sub_config = replace(config, seed=_seed_entropy(config.seed) + 977 * w_idx)
        cands = fit_gradient_sgd(sub, structure, config.drop_fractions, sub_config)
        best_params, best_rmse, best_q = cands[0]
        if config.use_pso:
            pso_cfg = replace(config.pso, seed=_seed_entropy(config.pso.seed) + w_idx)
            best_params, best_rmse = refine_pso(
                [c.params for c in cands], sub, structure, pso_cfg
            )
            pso_used = True
        windows.append((start, end, best_params))
        all_candidates.extend(cands)
        dropped_weight += best_q * (end - start)

    params = OdeParams(windows)
    rmse = integration_rmse(structure, params, pair)
    return FitReport(
        params=params,
        rmse=rmse,
        candidates=sorted(all_candidates, key=lambda c: c.rmse),
        dropped_fraction=dropped_weight / n,
        pso_used=pso_used,
        notes=stability_notes(structure, params),
    )


# ---------------------------------------------------------------------------
# serialization

def params_to_dict(structure, params, **meta):
    doc = {
        "version": 1,
        "kind": "ode-model",
        "structure": structure.id,
        "windows": [
            {"start": s, "end": e, "params": list(p)} for s, e, p in params.windows
        ],
    }
    doc.update(meta)
    return doc


def params_from_dict(doc):
    if doc.get("kind") != "ode-model":
        raise ValueError("not an ODE model document")
    structure = get_structure(doc["structure"])
    windows = [(w["start"], w["end"], tuple(w["params"])) for w in doc["windows"]]
    return structure, OdeParams(windows)
