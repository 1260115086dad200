"""Exponential time integrators for the mild formulation of the semilinear SPDE

    du = u_xx dt + d_x g(t,x,u) dt + f(t,x,u) dt + sqrt(eps) sigma(t,x,u) dW/dxdt

on [0,T]x[0,1] with Dirichlet boundary. One step of the first-order scheme is

    u_{m+1} = S_dt[ u_m + dt f(t_m,u_m) + sqrt(eps) w_m ] + D_dt[ g(t_m,u_m) ],

where S_dt is the heat semigroup, w_m(x_j) = sigma(t_m,x_j,u_m(x_j)) dW_mj/dx,
and D_dt integrates the divergence term exactly in time per mode: mode k picks
up -(1 - exp(-lambda_k dt))/lambda_k <phi_k', g(u_m)>. Exact per-mode time
integration tames the 1/t kernel-derivative singularity that defeats naive
quadrature. The noise rides inside S_dt so high modes stay damped, matching
the G_{t-s} factor of the mild form.

Cutoff runs multiply the three non-initial terms by chi_R(|u(t_m)|_rho)
evaluated explicitly at the current step (an O(dt) lag against the
simultaneous cutoff). Galerkin-noise runs drive the same scheme with the
first k noise modes only, nested-coupled to the white realization of the
same seed so convergence is measurable pathwise.

All stepping broadcasts over leading axes, so replica batches integrate in
lockstep; a single path is the batch of one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .coeffs import CoefficientSet, chi_R, truncate_coefficients
from .lattice import (
    Field,
    GridSpec,
    cos_analysis,
    eigen_values,
    from_modes,
    lp_norm_values,
    to_modes,
)
from .noise import (
    NoiseRealization,
    SeedDerivation,
    draw_mode_increments,
    sample_sheet_expansion,
)

__all__ = [
    "SolverConfig",
    "PathSolution",
    "MomentEstimate",
    "BlowUpError",
    "PicardError",
    "step_mild",
    "solve_spde",
    "solve_truncated",
    "solve_galerkin_noise",
    "picard_solve",
    "estimate_moments",
]


class BlowUpError(RuntimeError):
    """Raised when a step produces non-finite values."""

    def __init__(self, step: int, replica: int | None = None, seed=None):
        self.step = step
        self.replica = replica
        self.seed = seed
        where = f"step {step}"
        if replica is not None:
            where += f", replica {replica}"
        if seed is not None:
            where += f", seed {seed}"
        super().__init__(f"solution blew up at {where}")


class PicardError(RuntimeError):
    """Raised when the fixed-point iteration exhausts its budget."""

    def __init__(self, message: str, trace: list):
        self.trace = trace
        super().__init__(message)


@dataclass(frozen=True)
class SolverConfig:
    """Scheme and resolution knobs shared by all solvers.

    k_modes / k_noise default to the full interior count nx-1 ("white").
    delta weighs the exponential diagnostic norm max_m e^{-delta t_m}|u|_rho.
    """

    scheme: str = "etd"
    k_modes: int | None = None
    k_noise: int | None = None
    cutoff_radius: float | None = None
    truncation_level: int | None = None
    delta: float = 50.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 60
    control_coupling: str = "direct"

    def __post_init__(self):
        if self.scheme not in ("etd", "picard"):
            raise ValueError(f"unknown scheme '{self.scheme}'")
        if self.control_coupling not in ("direct", "integrated"):
            raise ValueError(f"unknown control coupling '{self.control_coupling}'")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if self.cutoff_radius is not None and self.cutoff_radius <= 0:
            raise ValueError("cutoff radius must be positive")
        if self.truncation_level is not None and self.truncation_level < 1:
            raise ValueError("truncation level must be >= 1")


@dataclass
class PathSolution:
    """Time-indexed solution profiles with per-step diagnostics."""

    fields: np.ndarray  # (nt+1, nx-1)
    grid: GridSpec
    eps: float
    rho: float
    rho_norms: np.ndarray  # |u(t_m)|_rho
    linf_norms: np.ndarray
    seed_info: SeedDerivation | None = None
    config: SolverConfig = field(default_factory=SolverConfig)

    def field_at(self, m: int) -> Field:
        return Field(self.fields[m].copy(), self.grid)

    @property
    def terminal(self) -> Field:
        return self.field_at(self.grid.nt)

    @property
    def sup_rho_norm(self) -> float:
        return float(np.max(self.rho_norms))

    @property
    def stability_indicator(self) -> float:
        """Largest one-step amplification of the sup norm."""
        prev = np.maximum(self.linf_norms[:-1], 1e-300)
        return float(np.max(self.linf_norms[1:] / prev))

    def distance_to(self, other: "PathSolution", p: float | None = None) -> float:
        """C([0,T]; L^p) distance max_m |u(t_m) - v(t_m)|_p (default p = rho)."""
        p = self.rho if p is None else p
        diff = lp_norm_values(self.fields - other.fields, self.grid.dx, p)
        return float(np.max(diff))


@dataclass
class MomentEstimate:
    estimate: float
    stderr: float
    ratio: float
    replicas: int


# ---------------------------------------------------------------------------
# Spectral step machinery
# ---------------------------------------------------------------------------


class _Ops:
    """Per-solve cache of mode factors at fixed (grid, dt, k_modes)."""

    def __init__(self, grid: GridSpec, dt: float, k_modes: int | None):
        nxm = grid.n_interior
        self.grid = grid
        self.dt = dt
        self.k_modes = nxm if k_modes is None else int(k_modes)
        if not 1 <= self.k_modes <= nxm:
            raise ValueError(f"k_modes={self.k_modes} outside 1..{nxm}")
        lam = eigen_values(np.arange(1, nxm + 1))
        self.decay = np.exp(-lam * dt)
        self.ed = (1.0 - self.decay) / lam
        if self.k_modes < nxm:
            self.decay = self.decay.copy()
            self.ed = self.ed.copy()
            self.decay[self.k_modes :] = 0.0
            self.ed[self.k_modes :] = 0.0

    def project(self, values: np.ndarray) -> np.ndarray:
        """Galerkin projection onto the active modes."""
        if self.k_modes == self.grid.n_interior:
            return values
        m = to_modes(values, self.grid)
        m[..., self.k_modes :] = 0.0
        return from_modes(m, self.grid)


def _require_dealiasing(cf: CoefficientSet, grid: GridSpec, k_modes: int) -> None:
    # Quadratic transport needs the 4x margin between grid and retained modes.
    probe = np.array([-2.0, 0.7, 3.0])
    quadratic = bool(np.any(np.abs(np.asarray(cf.g2(0.0, probe))) > 0))
    if quadratic and grid.nx < 4 * k_modes:
        raise ValueError(
            f"quadratic transport requires nx >= 4*k_modes "
            f"(nx={grid.nx}, k_modes={k_modes}); lower k_modes in the config"
        )


def _etd_step(
    u: np.ndarray,
    t: float,
    cf: CoefficientSet,
    ops: _Ops,
    xi_slice: np.ndarray | None,
    sqrt_eps: float,
    cutoff_radius: float | None,
    rho: float,
    psi_field: np.ndarray | None,
) -> np.ndarray:
    grid = ops.grid
    x = grid.x
    if cutoff_radius is not None:
        chi = chi_R(lp_norm_values(u, grid.dx, rho), cutoff_radius)
        chi = np.asarray(chi)[..., None]
    else:
        chi = None

    v = u
    if not cf.f_is_zero:
        v = v + ops.dt * _apply_chi(cf.f(t, x, u), chi)
    if xi_slice is not None and sqrt_eps != 0.0:
        sig = cf.sigma_const if cf.sigma_const is not None else cf.sigma(t, x, u)
        v = v + sqrt_eps * _apply_chi(sig * xi_slice, chi)
    modes = to_modes(v, grid) * ops.decay

    if not cf.g_is_zero:
        gv = _apply_chi(cf.g1(t, x, u) + cf.g2(t, u), chi)
        modes = modes - cos_analysis(gv, grid) * ops.ed

    if psi_field is not None:
        modes = modes + to_modes(psi_field, grid) * ops.ed

    return from_modes(modes, grid)


def _apply_chi(values: np.ndarray, chi: np.ndarray | None) -> np.ndarray:
    return values if chi is None else chi * values


def _control_field(
    cf: CoefficientSet,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
    psi_slice: np.ndarray,
    coupling: str,
    dx: float,
) -> np.ndarray:
    sig = cf.sigma_const if cf.sigma_const is not None else cf.sigma(t, x, u)
    if coupling == "direct":
        return sig * psi_slice
    # Literal integrated form: sigma(u) * int_0^y psi(s, y') dy'.
    return sig * (dx * np.cumsum(psi_slice, axis=-1))


def _integrate(
    u0: np.ndarray,
    cf: CoefficientSet,
    grid: GridSpec,
    eps: float,
    xi: np.ndarray | None = None,
    psi: np.ndarray | None = None,
    k_modes: int | None = None,
    cutoff_radius: float | None = None,
    coupling: str = "direct",
    record: str = "path",
):
    """Advance the scheme over all nt steps.

    u0: (..., nx-1); xi: (..., nt, nx-1) spatial noise density; psi: (nt, nx-1).
    record = "path" returns the (nt+1, ...) time-major history, "terminal"
    the final state, "sup_rho" the running max of |u|_rho^rho.
    """
    if eps < 0:
        raise ValueError("noise intensity must be >= 0")
    ops = _Ops(grid, grid.dt, k_modes)
    _require_dealiasing(cf, grid, ops.k_modes)
    u = ops.project(np.asarray(u0, dtype=float))
    sqrt_eps = float(np.sqrt(eps))
    rho = cf.rho
    x = grid.x
    dx = grid.dx

    if record == "path":
        path = np.empty((grid.nt + 1,) + u.shape)
        path[0] = u
    elif record == "sup_rho":
        sup = lp_norm_values(u, dx, rho) ** rho
    elif record != "terminal":
        raise ValueError(f"unknown record mode '{record}'")

    for m in range(grid.nt):
        t = m * grid.dt
        xi_slice = None if xi is None else xi[..., m, :]
        psi_field = None
        if psi is not None:
            psi_field = _control_field(cf, t, x, u, psi[..., m, :], coupling, dx)
        u = _etd_step(
            u, t, cf, ops, xi_slice, sqrt_eps, cutoff_radius, rho, psi_field
        )
        if not np.all(np.isfinite(u)):
            replica = None
            if u.ndim > 1:
                replica = int(np.argwhere(~np.isfinite(u).all(axis=-1))[0][0])
            raise BlowUpError(step=m + 1, replica=replica)
        if record == "path":
            path[m + 1] = u
        elif record == "sup_rho":
            sup = np.maximum(sup, lp_norm_values(u, dx, rho) ** rho)

    if record == "path":
        return path
    if record == "sup_rho":
        return sup
    return u


def _path_solution(path, grid, eps, cf, seed_info, config) -> PathSolution:
    rho_norms = lp_norm_values(path, grid.dx, cf.rho)
    linf = np.max(np.abs(path), axis=-1)
    return PathSolution(
        fields=path,
        grid=grid,
        eps=eps,
        rho=cf.rho,
        rho_norms=rho_norms,
        linf_norms=linf,
        seed_info=seed_info,
        config=config,
    )


def _apply_truncation(cf: CoefficientSet, config: SolverConfig) -> CoefficientSet:
    if config.truncation_level is not None:
        return truncate_coefficients(cf, config.truncation_level)
    return cf


# ---------------------------------------------------------------------------
# Public solvers
# ---------------------------------------------------------------------------


def step_mild(
    state: Field,
    t: float,
    cf: CoefficientSet,
    white_slice: np.ndarray,
    eps: float,
    dt: float,
    k_modes: int | None = None,
) -> Field:
    """One scheme step from a field, given the white increments dW of the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    one_step = GridSpec(grid.nx, 1, dt)
    ops = _Ops(one_step, dt, k_modes)
    xi = None
    if white_slice is not None:
        xi = np.asarray(white_slice, dtype=float) / grid.dx
    out = _etd_step(
        state.values,
        t,
        cf,
        ops,
        xi,
        float(np.sqrt(eps)),
        None,
        cf.rho,
        None,
    )
    if not np.all(np.isfinite(out)):
        raise BlowUpError(step=1)
    return Field(out, grid)


def solve_spde(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    seed: int,
    grid: GridSpec,
    config: SolverConfig | None = None,
    replica: int = 0,
    stream: int = 0,
) -> PathSolution:
    """Full SPDE path driven by white noise; deterministic given (seed, config)."""
    config = config or SolverConfig()
    cf = _apply_truncation(cf, config)
    k_noise = grid.n_interior if config.k_noise is None else config.k_noise
    noise = sample_sheet_expansion(grid, k_noise, seed, replica, stream)
    xi = noise.spatial_density if eps > 0 else None
    path = _integrate(
        eta.values,
        cf,
        grid,
        eps,
        xi=xi,
        k_modes=config.k_modes,
        cutoff_radius=config.cutoff_radius,
        record="path",
    )
    return _path_solution(path, grid, eps, cf, noise.seed_info, config)


def solve_truncated(
    eta: Field,
    cf: CoefficientSet,
    R: float,
    eps: float,
    seed: int,
    grid: GridSpec,
    config: SolverConfig | None = None,
) -> PathSolution:
    """Cutoff dynamics: nonlinear and noise terms weighted by chi_R(|u|_rho)."""
    if not R > 0:
        raise ValueError("cutoff radius R must be positive")
    config = replace(config or SolverConfig(), cutoff_radius=float(R))
    return solve_spde(eta, cf, eps, seed, grid, config)


def solve_galerkin_noise(
    eta: Field,
    cf: CoefficientSet,
    k: int,
    eps: float,
    seed: int,
    grid: GridSpec,
    config: SolverConfig | None = None,
) -> PathSolution:
    """Degenerate equation driven by the first k noise modes of the seed's stream."""
    if not 0 <= k <= grid.n_interior:
        raise ValueError(f"noise mode count {k} outside 0..{grid.n_interior}")
    config = config or SolverConfig()
    cf = _apply_truncation(cf, config)
    noise = sample_sheet_expansion(grid, k, seed)
    xi = noise.spatial_density if (eps > 0 and k > 0) else None
    path = _integrate(
        eta.values,
        cf,
        grid,
        eps,
        xi=xi,
        k_modes=config.k_modes,
        cutoff_radius=config.cutoff_radius,
        record="path",
    )
    return _path_solution(path, grid, eps, cf, noise.seed_info, config)


def picard_solve(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    noise: NoiseRealization | None,
    grid: GridSpec,
    tol: float = 1e-10,
    max_iter: int = 60,
    delta: float = 50.0,
    cutoff_radius: float | None = None,
    k_modes: int | None = None,
):
    """Fixed-point iteration of the discrete mild map over whole paths.

    Each sweep rebuilds the path with every integral term evaluated against
    the frozen previous iterate; the fixed point coincides with the one-step
    scheme's path. Successive distances are measured in the exponentially
    weighted norm max_m e^{-delta t_m} |.|_rho and returned as the trace.
    """
    config = SolverConfig(
        scheme="picard",
        k_modes=k_modes,
        cutoff_radius=cutoff_radius,
        delta=delta,
        picard_tol=tol,
        picard_max_iter=max_iter,
    )
    ops = _Ops(grid, grid.dt, k_modes)
    _require_dealiasing(cf, grid, ops.k_modes)
    nxm = grid.n_interior
    sqrt_eps = float(np.sqrt(eps))
    xi = None
    if noise is not None and eps > 0:
        xi = noise.spatial_density
    rho = cf.rho
    dx = grid.dx
    x = grid.x
    weights = np.exp(-delta * grid.t)

    eta_v = ops.project(eta.values)
    # Zeroth iterate: pure heat flow of the initial field.
    eta_modes = to_modes(eta_v, grid)
    lam = eigen_values(np.arange(1, nxm + 1))
    U = from_modes(np.exp(-np.outer(grid.t, lam)) * eta_modes, grid)

    trace = []
    for _ in range(max_iter):
        V = np.empty_like(U)
        V[0] = eta_v
        if cutoff_radius is not None:
            chis = chi_R(lp_norm_values(U, dx, rho), cutoff_radius)
        for m in range(grid.nt):
            t = m * grid.dt
            u_m = U[m]
            chi = None
            if cutoff_radius is not None:
                chi = np.asarray(chis[m])[..., None]
            v = V[m]
            if not cf.f_is_zero:
                v = v + grid.dt * _apply_chi(cf.f(t, x, u_m), chi)
            if xi is not None and sqrt_eps != 0.0:
                sig = cf.sigma_const if cf.sigma_const is not None else cf.sigma(t, x, u_m)
                v = v + sqrt_eps * _apply_chi(sig * xi[m], chi)
            modes = to_modes(v, grid) * ops.decay
            if not cf.g_is_zero:
                gv = _apply_chi(cf.g1(t, x, u_m) + cf.g2(t, u_m), chi)
                modes = modes - cos_analysis(gv, grid) * ops.ed
            V[m + 1] = from_modes(modes, grid)
        if not np.all(np.isfinite(V)):
            raise BlowUpError(step=int(np.argwhere(~np.isfinite(V).all(axis=-1))[0][0]))
        dist = float(np.max(weights * lp_norm_values(V - U, dx, rho)))
        trace.append(dist)
        U = V
        if dist <= tol:
            seed_info = noise.seed_info if noise is not None else None
            return _path_solution(U, grid, eps, cf, seed_info, config), trace
    raise PicardError(
        f"no contraction below tol={tol} within {max_iter} iterations "
        f"(last distance {trace[-1]:.3e})",
        trace,
    )


# ---------------------------------------------------------------------------
# Replica-parallel Monte Carlo
# ---------------------------------------------------------------------------


def _noise_block(
    grid: GridSpec, master: int, replicas: range, stream: int, k_noise: int
) -> np.ndarray:
    """(len(replicas), nt, nx-1) spatial noise density from derived streams."""
    block = np.empty((len(replicas), grid.nt, grid.n_interior))
    for i, r in enumerate(replicas):
        block[i] = draw_mode_increments(
            grid, SeedDerivation(master, r, stream).generator()
        )
    if k_noise < grid.n_interior:
        block[:, :, k_noise:] = 0.0
    return from_modes(block, grid)


def default_chunk_size(grid: GridSpec, budget_doubles: float = 1.2e7) -> int:
    per_replica = grid.nt * grid.n_interior
    return max(1, int(budget_doubles / max(per_replica, 1)))


def run_replicas(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    grid: GridSpec,
    master_seed: int,
    replicas: int,
    stream: int = 0,
    config: SolverConfig | None = None,
    record: str = "terminal",
    threads: int = 1,
    chunk_size: int | None = None,
):
    """Integrate independent replicas on derived streams; order-stable output.

    Returns an array whose leading axis is the replica index: terminal fields
    for record="terminal", sup-in-time |u|_rho^rho for record="sup_rho".
    """
    config = config or SolverConfig()
    cf_run = _apply_truncation(cf, config)
    k_noise = grid.n_interior if config.k_noise is None else config.k_noise
    chunk = chunk_size or default_chunk_size(grid)
    nxm = grid.n_interior
    if record == "terminal":
        out = np.empty((replicas, nxm))
    elif record == "sup_rho":
        out = np.empty(replicas)
    else:
        raise ValueError(f"record mode '{record}' not supported for replicas")

    def run_chunk(start: int) -> None:
        stop = min(start + chunk, replicas)
        xi = _noise_block(grid, master_seed, range(start, stop), stream, k_noise)
        u0 = np.broadcast_to(eta.values, (stop - start, nxm))
        try:
            out[start:stop] = _integrate(
                u0,
                cf_run,
                grid,
                eps,
                xi=xi if eps > 0 else None,
                k_modes=config.k_modes,
                cutoff_radius=config.cutoff_radius,
                record=record,
            )
        except BlowUpError as err:
            rep = start + (err.replica or 0)
            raise BlowUpError(
                err.step, replica=rep, seed=SeedDerivation(master_seed, rep, stream)
            ) from None

    starts = list(range(0, replicas, chunk))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for s in starts:
            run_chunk(s)
    return out


def estimate_moments(
    eta: Field,
    cf: CoefficientSet,
    eps: float,
    rho: float,
    replicas: int,
    grid: GridSpec,
    config: SolverConfig | None = None,
    master_seed: int = 0,
    stream: int = 0,
    threads: int = 1,
) -> MomentEstimate:
    """Monte Carlo estimate of E sup_t |u(t)|_rho^rho over derived seed streams."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    config = config or SolverConfig()
    cf = cf if cf.rho == rho else _with_rho(cf, rho)
    sup = run_replicas(
        eta,
        cf,
        eps,
        grid,
        master_seed,
        replicas,
        stream=stream,
        config=config,
        record="sup_rho",
        threads=threads,
    )
    estimate = float(np.mean(sup))
    stderr = float(np.std(sup, ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
    norm_eta = lp_norm_values(eta.values, grid.dx, rho) ** rho
    return MomentEstimate(
        estimate=estimate,
        stderr=stderr,
        ratio=estimate / (1.0 + float(norm_eta)),
        replicas=replicas,
    )


def _with_rho(cf: CoefficientSet, rho: float) -> CoefficientSet:
    return replace(cf, rho=float(rho))
