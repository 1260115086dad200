"""Experiment drivers: noise-intensity scaling, importance sampling, convergence
studies, assumption validation, and the configuration/persistence glue.

Every experiment is reproducible from its config plus the master seed: replica
r of the study using stream s draws its noise from the derived stream
(master_seed, r, s), chunk results land in replica-indexed arrays, and
reductions run in fixed index order, so outputs are byte-identical across
re-runs regardless of threading.

Stream allocation: eps-scaling assigns stream i to the i-th entry of the eps
list; importance sampling uses stream 0 for both the plain and tilted passes
(paired seeds); the convergence studies use streams 0, 1, 2 for the
Galerkin-noise, controlled-vs-skeleton, and moment-scaling legs.

Rare-event events are threshold functionals of the terminal field: its L^2 or
L^rho norm, a single sine-mode coefficient, or a point value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .action import ActionOptions, minimize_action
from .coeffs import CoefficientSet, make_coefficients, validate_assumptions
from .control import Control, solve_controlled, solve_skeleton
from .lattice import (
    Field,
    GridSpec,
    eigenfunction,
    from_modes,
    lp_norm_values,
    make_field,
    make_grid,
    to_modes,
)
from .mild_solver import (
    BlowUpError,
    SolverConfig,
    _integrate,
    _noise_block,
    default_chunk_size,
    estimate_moments,
    solve_spde,
)
from .noise import SeedDerivation, draw_mode_increments, sample_sheet_expansion
from .storage import (
    ConfigError,
    parse_config_file,
    read_snapshot,
    write_csv,
    write_snapshot,
    format_value,
)

__all__ = [
    "EventSpec",
    "ExperimentConfig",
    "ScalingTable",
    "ScalingRow",
    "ISResult",
    "ConvergenceReport",
    "run_eps_scaling",
    "run_importance_sampling",
    "run_convergence_studies",
    "run_experiment",
    "VALID_KINDS",
]

VALID_KINDS = (
    "simulate",
    "skeleton",
    "minimize-action",
    "mc-scaling",
    "importance",
    "convergence",
    "validate",
)

EVENT_KINDS = ("l2_norm", "lp_norm", "mode_coeff", "point_value")


@dataclass(frozen=True)
class EventSpec:
    """Threshold event {F(u(T)) >= threshold} on the terminal field."""

    kind: str
    param: float
    threshold: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(
                f"unknown event_kind '{self.kind}'; valid kinds: {EVENT_KINDS}"
            )
        if not np.isfinite(self.threshold):
            raise ConfigError("event_threshold must be finite")

    def values(self, terminal: np.ndarray, grid: GridSpec, rho: float) -> np.ndarray:
        if self.kind == "l2_norm":
            return lp_norm_values(terminal, grid.dx, 2.0)
        if self.kind == "lp_norm":
            return lp_norm_values(terminal, grid.dx, rho)
        if self.kind == "mode_coeff":
            k = int(self.param)
            if not 1 <= k <= grid.n_interior:
                raise ConfigError(f"event mode {k} outside 1..{grid.n_interior}")
            return to_modes(terminal, grid)[..., k - 1]
        j = int(round(self.param * grid.nx)) - 1
        if not 0 <= j < grid.n_interior:
            raise ConfigError(f"event point {self.param} has no interior node")
        return terminal[..., j]

    def hits(self, terminal: np.ndarray, grid: GridSpec, rho: float) -> np.ndarray:
        return self.values(terminal, grid, rho) >= self.threshold


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_FAMILY_KEYS = ("f_slope", "g1_slope", "g2_quad", "sigma0", "sigma1")


def _conv(raw: dict, key: str, kind, default=None, required: bool = False):
    if key not in raw:
        if required:
            raise ConfigError(f"missing required config key '{key}'")
        return default
    value = raw[key]
    try:
        if kind is bool:
            return value.lower() in ("1", "true", "yes", "on")
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{key}': cannot parse {value!r}") from exc


def _conv_list(raw: dict, key: str, kind, default=()):
    if key not in raw:
        return tuple(default)
    items = [s.strip() for s in raw[key].split(",") if s.strip()]
    try:
        return tuple(kind(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': cannot parse {raw[key]!r}") from exc


@dataclass
class ExperimentConfig:
    kind: str
    master_seed: int
    nx: int = 64
    nt: int = 256
    T: float = 0.5
    family: str = "linear"
    family_params: dict = field(default_factory=dict)
    rho: float = 8.0
    eps: float = 0.1
    eps_list: tuple = ()
    replicas: int = 1000
    k_modes: int | None = None
    k_noise: int | None = None
    eta_mode: int = 1
    eta_amp: float = 0.0
    event: EventSpec | None = None
    tilt: str = "none"
    psi_mode: int = 1
    psi_amp: float = 0.0
    psi_file: str | None = None
    control_coupling: str = "direct"
    reference_action: float | None = None
    k_list: tuple = (4, 16, 64)
    eta_scales: tuple = (1.0, 2.0, 4.0)
    target_mode: int = 1
    target_amp: float = 1.0
    residual_tol: float = 1e-3
    max_iters: int = 3000
    box_r: float = 100.0
    n_samples: int = 20000
    dump_noise: bool = False
    out_dir: str | None = None
    threads: int = 1

    @classmethod
    def from_raw(cls, raw: dict[str, str]) -> "ExperimentConfig":
        kind = raw.get("kind")
        if kind is None:
            raise ConfigError("missing required config key 'kind'")
        if kind not in VALID_KINDS:
            raise ConfigError(f"unknown kind '{kind}'; valid kinds: {VALID_KINDS}")
        cfg = cls(
            kind=kind,
            master_seed=_conv(raw, "master_seed", int, required=True),
            nx=_conv(raw, "nx", int, 64),
            nt=_conv(raw, "nt", int, 256),
            T=_conv(raw, "T", float, 0.5),
            family=raw.get("family", "linear"),
            family_params={
                k: float(raw[k]) for k in _FAMILY_KEYS if k in raw
            },
            rho=_conv(raw, "rho", float, 8.0),
            eps=_conv(raw, "eps", float, 0.1),
            eps_list=_conv_list(raw, "eps_list", float),
            replicas=_conv(raw, "replicas", int, 1000),
            k_modes=_conv(raw, "k_modes", int) or None,
            k_noise=_conv(raw, "k_noise", int),
            eta_mode=_conv(raw, "eta_mode", int, 1),
            eta_amp=_conv(raw, "eta_amp", float, 0.0),
            tilt=raw.get("tilt", "none"),
            psi_mode=_conv(raw, "psi_mode", int, 1),
            psi_amp=_conv(raw, "psi_amp", float, 0.0),
            psi_file=raw.get("psi_file"),
            control_coupling=raw.get("control_coupling", "direct"),
            reference_action=_conv(raw, "reference_action", float),
            k_list=_conv_list(raw, "k_list", int, (4, 16, 64)),
            eta_scales=_conv_list(raw, "eta_scales", float, (1.0, 2.0, 4.0)),
            target_mode=_conv(raw, "target_mode", int, 1),
            target_amp=_conv(raw, "target_amp", float, 1.0),
            residual_tol=_conv(raw, "residual_tol", float, 1e-3),
            max_iters=_conv(raw, "max_iters", int, 3000),
            box_r=_conv(raw, "box_r", float, 100.0),
            n_samples=_conv(raw, "n_samples", int, 20000),
            dump_noise=_conv(raw, "dump_noise", bool, False),
            out_dir=raw.get("out_dir"),
            threads=_conv(raw, "threads", int, 1),
        )
        if "event_kind" in raw or "event_threshold" in raw:
            cfg.event = EventSpec(
                kind=raw.get("event_kind", "l2_norm"),
                param=_conv(raw, "event_param", float, 1.0),
                threshold=_conv(raw, "event_threshold", float, required=True),
            )
        cfg._validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_raw(parse_config_file(path))

    def _validate(self):
        if self.replicas < 1:
            raise ConfigError("replica count must be >= 1")
        if self.tilt not in ("none", "optimal"):
            raise ConfigError(f"unknown tilt '{self.tilt}' (none | optimal)")
        if self.control_coupling not in ("direct", "integrated"):
            raise ConfigError(
                f"unknown control_coupling '{self.control_coupling}' (direct | integrated)"
            )
        if self.eps_list:
            el = np.asarray(self.eps_list)
            if np.any(el <= 0):
                raise ConfigError("eps_list values must be positive")
            if np.any(np.diff(el) >= 0):
                raise ConfigError("eps_list must be strictly decreasing")
        if self.kind in ("mc-scaling", "convergence") and not self.eps_list:
            raise ConfigError("missing required config key 'eps_list'")
        if self.kind in ("mc-scaling", "importance") and self.event is None:
            raise ConfigError("missing required config key 'event_threshold'")

    # -- derived objects ---------------------------------------------------

    def grid(self) -> GridSpec:
        return make_grid(self.nx, self.nt, self.T)

    def coefficients(self) -> CoefficientSet:
        return make_coefficients(self.family, rho=self.rho, **self.family_params)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            k_modes=self.k_modes,
            k_noise=self.k_noise,
            control_coupling=self.control_coupling,
        )

    def eta_field(self, grid: GridSpec) -> Field:
        if self.eta_amp == 0.0:
            return make_field(grid, np.zeros(grid.n_interior))
        return eigenfunction(grid, self.eta_mode, amplitude=self.eta_amp)

    def psi_control(self, grid: GridSpec) -> Control | None:
        if self.psi_file:
            data, nx, _ = read_snapshot(self.psi_file)
            if nx != grid.nx or data.shape[0] != grid.nt:
                raise ConfigError(
                    f"psi_file grid ({nx}, {data.shape[0]}) does not match "
                    f"config ({grid.nx}, {grid.nt})"
                )
            return Control(data, grid)
        if self.psi_amp == 0.0:
            return None
        profile = eigenfunction(grid, self.psi_mode, amplitude=self.psi_amp).values
        return Control(np.tile(profile, (grid.nt, 1)), grid)

    def echo(self) -> dict:
        """Effective configuration as re-runnable key = value pairs."""
        out = {
            "kind": self.kind,
            "master_seed": self.master_seed,
            "nx": self.nx,
            "nt": self.nt,
            "T": self.T,
            "family": self.family,
            "rho": self.rho,
            "eps": self.eps,
            "replicas": self.replicas,
            "eta_mode": self.eta_mode,
            "eta_amp": self.eta_amp,
            "tilt": self.tilt,
            "psi_mode": self.psi_mode,
            "psi_amp": self.psi_amp,
            "control_coupling": self.control_coupling,
            "target_mode": self.target_mode,
            "target_amp": self.target_amp,
            "residual_tol": self.residual_tol,
            "max_iters": self.max_iters,
            "box_r": self.box_r,
            "n_samples": self.n_samples,
            "threads": self.threads,
        }
        out.update(self.family_params)
        if self.k_modes is not None:
            out["k_modes"] = self.k_modes
        if self.k_noise is not None:
            out["k_noise"] = self.k_noise
        if self.eps_list:
            out["eps_list"] = ", ".join(format_value(e) for e in self.eps_list)
        if self.k_list:
            out["k_list"] = ", ".join(str(k) for k in self.k_list)
        if self.eta_scales:
            out["eta_scales"] = ", ".join(format_value(s) for s in self.eta_scales)
        if self.event is not None:
            out["event_kind"] = self.event.kind
            out["event_param"] = self.event.param
            out["event_threshold"] = self.event.threshold
        if self.reference_action is not None:
            out["reference_action"] = self.reference_action
        if self.psi_file:
            out["psi_file"] = self.psi_file
        if self.dump_noise:
            out["dump_noise"] = 1
        return out


# ---------------------------------------------------------------------------
# Batched Monte Carlo with per-replica tilt weights
# ---------------------------------------------------------------------------


def _mc_terminals(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    grid: GridSpec,
    master: int,
    replicas: int,
    stream: int,
    scfg: SolverConfig,
    psi: np.ndarray | None,
    threads: int = 1,
):
    """Terminal fields plus (for tilted runs) per-replica Girsanov log weights.

    A tilt shifts the white increments themselves, dW -> dW + dt dx psi /
    sqrt(eps), before the plain dynamics are integrated; paired with the log
    weight computed from the unshifted increments this is the exact discrete
    change of measure, so the reweighted estimator is unbiased for any sigma
    (psi = 0 reproduces plain sampling bit for bit). Blown-up replicas are
    returned as NaN rows with their indices collected; the caller decides
    whether partial loss is acceptable.
    """
    nxm = grid.n_interior
    k_noise = nxm if scfg.k_noise is None else scfg.k_noise
    if psi is not None and k_noise < nxm:
        # The tilt must live in the span of the driving noise modes for the
        # change of measure to be exact.
        pm = to_modes(psi, grid)
        pm[:, k_noise:] = 0.0
        psi = from_modes(pm, grid)
    chunk = default_chunk_size(grid)
    terminals = np.full((replicas, nxm), np.nan)
    logw = np.zeros(replicas) if psi is not None else None
    blown: list[int] = []

    def integrate_block(xi, u0):
        return _integrate(
            u0,
            cf,
            grid,
            eps,
            xi=xi if eps > 0 else None,
            k_modes=scfg.k_modes,
            cutoff_radius=scfg.cutoff_radius,
            record="terminal",
        )

    def run_chunk(start: int):
        stop = min(start + chunk, replicas)
        xi = _noise_block(grid, master, range(start, stop), stream, k_noise)
        if logw is not None:
            pairing = np.einsum("rms,ms->r", xi, psi) * grid.dx
            norm_sq = grid.dt * grid.dx * float(np.sum(psi**2))
            logw[start:stop] = -pairing / np.sqrt(eps) - norm_sq / (2.0 * eps)
            xi = xi + (grid.dt / np.sqrt(eps)) * psi
        u0 = np.broadcast_to(eta.values, (stop - start, nxm))
        try:
            terminals[start:stop] = integrate_block(xi, u0)
        except BlowUpError:
            for i in range(stop - start):
                try:
                    terminals[start + i] = integrate_block(xi[i], eta.values.copy())
                except BlowUpError:
                    blown.append(start + i)

    starts = list(range(0, replicas, chunk))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for s in starts:
            run_chunk(s)
    return terminals, logw, sorted(blown)


# ---------------------------------------------------------------------------
# eps-scaling study
# ---------------------------------------------------------------------------


@dataclass
class ScalingRow:
    eps: float
    p_hat: float
    stderr: float
    eps_log_p: float  # nan when censored
    censored: bool
    deviation: float  # |eps log p + I*|, nan without a reference
    blown: int = 0


@dataclass
class ScalingTable:
    rows: list
    reference_action: float | None = None

    CSV_HEADER = ("eps", "p_hat", "stderr", "eps_log_p", "censored", "deviation", "blown")

    def csv_rows(self):
        return [
            (r.eps, r.p_hat, r.stderr, r.eps_log_p, r.censored, r.deviation, r.blown)
            for r in self.rows
        ]


def _tilt_control(cfg: ExperimentConfig, grid: GridSpec, cf: CoefficientSet) -> Control:
    """Optimal tilt: steer the skeleton flow to the cheapest event boundary point."""
    event = cfg.event
    if event.kind in ("l2_norm", "lp_norm"):
        mode = 1
        amp = event.threshold / lp_norm_values(
            eigenfunction(grid, 1).values, grid.dx, cfg.rho if event.kind == "lp_norm" else 2.0
        )
    elif event.kind == "mode_coeff":
        mode = int(event.param)
        amp = event.threshold
    else:
        raise ConfigError(
            "tilt = optimal supports l2_norm, lp_norm and mode_coeff events; "
            "supply psi_file for point events"
        )
    target = eigenfunction(grid, mode, amplitude=float(amp))
    result = minimize_action(
        target,
        cfg.eta_field(grid),
        cf,
        grid,
        ActionOptions(
            residual_tol=cfg.residual_tol,
            max_iters=cfg.max_iters,
            k_modes=cfg.k_modes,
            coupling=cfg.control_coupling,
        ),
    )
    return result.psi_star


def run_eps_scaling(cfg: ExperimentConfig, psi_star: Control | None = None) -> ScalingTable:
    """Monte Carlo P(event) for each eps, plain or Girsanov-tilted.

    Emits (eps, p_hat, stderr, eps log p_hat); zero-hit cells are censored
    rather than -inf. With a reference action I*, the deviation column is
    |eps log p_hat + I*|.
    """
    grid = cfg.grid()
    cf = cfg.coefficients()
    scfg = cfg.solver_config()
    eta = cfg.eta_field(grid)
    if cfg.tilt == "optimal" and psi_star is None:
        psi_star = _tilt_control(cfg, grid, cf)
    psi = psi_star.values if psi_star is not None else None

    rows = []
    for i, eps in enumerate(cfg.eps_list):
        terminals, logw, blown = _mc_terminals(
            eta, cf, eps, grid, cfg.master_seed, cfg.replicas, i, scfg, psi,
            threads=cfg.threads,
        )
        valid = np.ones(cfg.replicas, dtype=bool)
        valid[blown] = False
        if not np.any(valid):
            raise BlowUpError(step=grid.nt, replica=blown[0],
                              seed=SeedDerivation(cfg.master_seed, blown[0], i))
        hits = cfg.event.hits(terminals[valid], grid, cfg.rho)
        if logw is not None:
            terms = np.exp(logw[valid]) * hits
        else:
            terms = hits.astype(float)
        n = int(np.sum(valid))
        p_hat = float(np.mean(terms))
        stderr = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        censored = not p_hat > 0.0
        eps_log_p = float(eps * np.log(p_hat)) if not censored else float("nan")
        deviation = float("nan")
        if cfg.reference_action is not None and not censored:
            deviation = abs(eps_log_p + cfg.reference_action)
        rows.append(
            ScalingRow(eps, p_hat, stderr, eps_log_p, censored, deviation, len(blown))
        )
    return ScalingTable(rows, cfg.reference_action)


# ---------------------------------------------------------------------------
# Importance sampling with paired-seed baseline
# ---------------------------------------------------------------------------


@dataclass
class ISResult:
    estimate: float
    stderr: float
    mean_weight: float
    mean_weight_stderr: float
    plain_estimate: float
    plain_stderr: float
    variance_reduction: float  # nan when the plain baseline has zero variance
    replicas: int

    CSV_HEADER = (
        "estimate",
        "stderr",
        "mean_weight",
        "mean_weight_stderr",
        "plain_estimate",
        "plain_stderr",
        "variance_reduction",
        "replicas",
    )

    def csv_row(self):
        return (
            self.estimate,
            self.stderr,
            self.mean_weight,
            self.mean_weight_stderr,
            self.plain_estimate,
            self.plain_stderr,
            self.variance_reduction,
            self.replicas,
        )


def run_importance_sampling(cfg: ExperimentConfig, psi_star: Control | None = None) -> ISResult:
    """Tilted estimate of P(event) at cfg.eps, with a paired-seed plain baseline.

    Each replica's controlled path is reweighted by exp(girsanov log weight);
    the plain baseline reuses the same derived noise streams so the
    variance-reduction factor is a like-for-like comparison.
    """
    grid = cfg.grid()
    cf = cfg.coefficients()
    scfg = cfg.solver_config()
    eta = cfg.eta_field(grid)
    if psi_star is None:
        psi_star = cfg.psi_control(grid)
    if psi_star is None and cfg.tilt == "optimal":
        psi_star = _tilt_control(cfg, grid, cf)
    psi = psi_star.values if psi_star is not None else None

    term_plain, _, blown_p = _mc_terminals(
        eta, cf, cfg.eps, grid, cfg.master_seed, cfg.replicas, 0, scfg, None,
        threads=cfg.threads,
    )
    if psi is not None:
        term_tilt, logw, blown_t = _mc_terminals(
            eta, cf, cfg.eps, grid, cfg.master_seed, cfg.replicas, 0, scfg, psi,
            threads=cfg.threads,
        )
    else:
        term_tilt, logw, blown_t = term_plain, np.zeros(cfg.replicas), blown_p

    valid = np.ones(cfg.replicas, dtype=bool)
    valid[blown_p] = False
    valid[blown_t] = False
    if not np.any(valid):
        raise BlowUpError(step=grid.nt, replica=0,
                          seed=SeedDerivation(cfg.master_seed, 0, 0))
    n = int(np.sum(valid))
    weights = np.exp(logw[valid])
    terms = weights * cfg.event.hits(term_tilt[valid], grid, cfg.rho)
    plain_terms = cfg.event.hits(term_plain[valid], grid, cfg.rho).astype(float)

    var_tilt = float(np.var(terms, ddof=1)) if n > 1 else 0.0
    var_plain = float(np.var(plain_terms, ddof=1)) if n > 1 else 0.0
    vrf = var_plain / var_tilt if var_tilt > 0 else float("nan")
    if var_plain == 0.0:
        vrf = float("nan")
    return ISResult(
        estimate=float(np.mean(terms)),
        stderr=float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        mean_weight=float(np.mean(weights)),
        mean_weight_stderr=float(np.std(weights, ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        plain_estimate=float(np.mean(plain_terms)),
        plain_stderr=float(np.std(plain_terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        variance_reduction=vrf,
        replicas=n,
    )


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    galerkin_rows: list  # (k, mean_error, stderr)
    galerkin_errors: np.ndarray  # (replicas, len(k_list)) per-seed coupled errors
    galerkin_pass: bool
    controlled_rows: list  # (eps, distance)
    controlled_pass: bool
    moment_rows: list  # (scale, estimate, stderr, ratio)
    moment_pass: bool

    GALERKIN_HEADER = ("k", "mean_error", "stderr")
    CONTROLLED_HEADER = ("eps", "distance")
    MOMENT_HEADER = ("scale", "estimate", "stderr", "ratio")


def galerkin_coupled_errors(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    grid: GridSpec,
    master: int,
    replicas: int,
    k_list,
    stream: int = 0,
    k_modes: int | None = None,
) -> np.ndarray:
    """(replicas, len(k_list)) pathwise sup-in-time L^rho coupled errors.

    Each replica couples the white-noise path against its k-mode truncations
    on the shared stream.
    """
    nxm = grid.n_interior
    modes = np.empty((replicas, grid.nt, nxm))
    for i in range(replicas):
        modes[i] = draw_mode_increments(
            grid, SeedDerivation(master, i, stream).generator()
        )

    def solve_with(k: int) -> np.ndarray:
        cut = modes.copy()
        cut[:, :, k:] = 0.0
        xi = from_modes(cut, grid)
        u0 = np.broadcast_to(eta.values, (replicas, nxm))
        return _integrate(u0, cf, grid, eps, xi=xi, k_modes=k_modes, record="path")

    white = solve_with(nxm)
    errors = np.empty((replicas, len(k_list)))
    for j, k in enumerate(k_list):
        degen = solve_with(int(k))
        diff = lp_norm_values(white - degen, grid.dx, cf.rho)  # (nt+1, replicas)
        errors[:, j] = np.max(diff, axis=0)
    return errors


def run_convergence_studies(cfg: ExperimentConfig) -> ConvergenceReport:
    """Three CSV-ready studies: Galerkin-noise error vs k, controlled-to-skeleton
    distance vs eps, and the moment-bound ratio vs initial-datum scaling."""
    grid = cfg.grid()
    cf = cfg.coefficients()
    scfg = cfg.solver_config()
    eta = cfg.eta_field(grid)

    # (i) Galerkin-noise coupled error vs k.
    errors = galerkin_coupled_errors(
        eta, cf, cfg.eps, grid, cfg.master_seed, cfg.replicas, cfg.k_list,
        stream=0, k_modes=cfg.k_modes,
    )
    means = errors.mean(axis=0)
    stderrs = errors.std(axis=0, ddof=1) / np.sqrt(cfg.replicas) if cfg.replicas > 1 else 0 * means
    galerkin_rows = [(int(k), float(m), float(s)) for k, m, s in zip(cfg.k_list, means, stderrs)]
    galerkin_pass = bool(np.all(np.diff(means) < 0))

    # (ii) controlled-to-skeleton distance vs eps at fixed seed and control.
    psi = cfg.psi_control(grid)
    skeleton = solve_skeleton(eta, cf, psi, grid, scfg)
    controlled_rows = []
    for eps in cfg.eps_list:
        v = solve_controlled(
            eta, cf, psi, eps, cfg.master_seed, grid, scfg, replica=0, stream=1
        )
        controlled_rows.append((float(eps), v.distance_to(skeleton)))
    dists = [d for _, d in controlled_rows]
    controlled_pass = bool(np.all(np.diff(dists) < 0))

    # (iii) moment-bound ratio vs eta scaling.
    moment_rows = []
    ratios = []
    for scale in cfg.eta_scales:
        eta_s = make_field(grid, scale * eta.values)
        est = estimate_moments(
            eta_s, cf, cfg.eps, cfg.rho, cfg.replicas, grid,
            config=scfg, master_seed=cfg.master_seed, stream=2, threads=cfg.threads,
        )
        moment_rows.append((float(scale), est.estimate, est.stderr, est.ratio))
        ratios.append(est.ratio)
    moment_pass = bool(max(ratios) < 2.0 * min(ratios))

    return ConvergenceReport(
        galerkin_rows=galerkin_rows,
        galerkin_errors=errors,
        galerkin_pass=galerkin_pass,
        controlled_rows=controlled_rows,
        controlled_pass=controlled_pass,
        moment_rows=moment_rows,
        moment_pass=moment_pass,
    )


# ---------------------------------------------------------------------------
# Top-level driver with on-disk artifacts
# ---------------------------------------------------------------------------


def _write_manifest(out: Path, cfg: ExperimentConfig) -> None:
    lines = ["# spdelab experiment manifest (re-runnable as a config file)"]
    lines.append(f"version = {__version__}")
    for key, value in sorted(cfg.echo().items()):
        lines.append(f"{key} = {format_value(value)}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_path_outputs(out: Path, sol, grid: GridSpec) -> None:
    write_snapshot(out / "path.spdefld", sol.fields, grid.nx, grid.T)
    rows = [
        (m, grid.t[m], sol.rho_norms[m], sol.linf_norms[m])
        for m in range(grid.nt + 1)
    ]
    write_csv(out / "diagnostics.csv", ("step", "t", "rho_norm", "linf_norm"), rows)


def run_experiment(
    config_path,
    out_dir=None,
    seed: int | None = None,
    threads: int | None = None,
    kind: str | None = None,
    coupling: str | None = None,
) -> Path:
    """Dispatch a config file to its driver and persist artifacts plus manifest.

    Outputs are byte-deterministic given (config, master seed). Returns the
    output directory.
    """
    raw = parse_config_file(config_path)
    if kind is not None:
        raw["kind"] = kind
    if coupling is not None:
        raw["control_coupling"] = coupling
    cfg = ExperimentConfig.from_raw(raw)
    if seed is not None:
        cfg.master_seed = int(seed)
    if threads is not None:
        cfg.threads = int(threads)
    if out_dir is not None:
        cfg.out_dir = str(out_dir)
    if cfg.out_dir is None:
        raise ConfigError("missing required config key 'out_dir' (or pass --out)")
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc

    grid = cfg.grid()
    cf = cfg.coefficients()
    scfg = cfg.solver_config()

    if cfg.kind == "simulate":
        sol = solve_spde(cfg.eta_field(grid), cf, cfg.eps, cfg.master_seed, grid, scfg)
        _write_path_outputs(out, sol, grid)
        if cfg.dump_noise:
            k_noise = grid.n_interior if cfg.k_noise is None else cfg.k_noise
            nz = sample_sheet_expansion(grid, k_noise, cfg.master_seed)
            write_snapshot(out / "noise.spdefld", nz.white_increments, grid.nx, grid.T)
    elif cfg.kind == "skeleton":
        sol = solve_skeleton(cfg.eta_field(grid), cf, cfg.psi_control(grid), grid, scfg)
        _write_path_outputs(out, sol, grid)
    elif cfg.kind == "minimize-action":
        target = eigenfunction(grid, cfg.target_mode, amplitude=cfg.target_amp)
        res = minimize_action(
            target,
            cfg.eta_field(grid),
            cf,
            grid,
            ActionOptions(
                residual_tol=cfg.residual_tol,
                max_iters=cfg.max_iters,
                k_modes=cfg.k_modes,
                coupling=cfg.control_coupling,
            ),
        )
        write_snapshot(out / "psi_star.spdefld", res.psi_star.values, grid.nx, grid.T)
        write_csv(
            out / "trace.csv",
            ("iter", "objective", "action", "residual", "mu"),
            res.trace,
        )
        write_csv(
            out / "summary.csv",
            ("action", "residual", "iterations", "converged"),
            [(res.action, res.residual, res.iterations, res.converged)],
        )
        print(
            f"minimize-action: I = {res.action:.6g}, residual = {res.residual:.3g}, "
            f"iterations = {res.iterations}, converged = {res.converged}"
        )
    elif cfg.kind == "mc-scaling":
        table = run_eps_scaling(cfg)
        write_csv(out / "scaling.csv", ScalingTable.CSV_HEADER, table.csv_rows())
    elif cfg.kind == "importance":
        result = run_importance_sampling(cfg)
        write_csv(out / "importance.csv", ISResult.CSV_HEADER, [result.csv_row()])
    elif cfg.kind == "convergence":
        report = run_convergence_studies(cfg)
        write_csv(out / "galerkin.csv", ConvergenceReport.GALERKIN_HEADER, report.galerkin_rows)
        write_csv(out / "controlled.csv", ConvergenceReport.CONTROLLED_HEADER, report.controlled_rows)
        write_csv(out / "moments.csv", ConvergenceReport.MOMENT_HEADER, report.moment_rows)
        write_csv(
            out / "passfail.csv",
            ("study", "passed"),
            [
                ("galerkin_monotone", report.galerkin_pass),
                ("controlled_monotone", report.controlled_pass),
                ("moment_ratio_factor2", report.moment_pass),
            ],
        )
    elif cfg.kind == "validate":
        report = validate_assumptions(
            cf, r_range=(-cfg.box_r, cfg.box_r), n_samples=cfg.n_samples,
            seed=cfg.master_seed,
        )
        rows = [
            (c.name, c.ok, c.worst_ratio, c.witness[0], c.witness[1], c.witness[2])
            for c in report.checks
        ]
        write_csv(
            out / "assumptions.csv",
            ("check", "ok", "worst_ratio", "witness_t", "witness_x", "witness_r"),
            rows,
        )
        for w in report.warnings:
            print(f"warning: {w}")
    _write_manifest(out, cfg)
    return out
