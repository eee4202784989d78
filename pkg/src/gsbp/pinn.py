"""Physics-informed solver for the two-endpoint stochastic steering problem.

One network carries three heads on (t, x): the value surrogate psi, the state
density rho (softplus, so rho >= 0), and the feedback control u. Training
minimizes the weighted sum

    L = L_rho0 + L_rhoT + L_psi + L_rho + sum_j L_uj + L_mass

where L_psi / L_rho / L_uj are mean squared residuals of the coupled
optimality system over interior collocation points and the endpoint terms are
debiased entropic transport losses between the net's induced endpoint cloud
and a batch from the prescribed endpoint distribution. L_mass averages
squared-log quadrature anchors (log integral rho)^2 over five time slices
spanning [0, T]: the density residual is homogeneous in rho at each time
separately and the cloud losses see only the self-normalized shape, so
without anchors the scale of rho at any time slice is a flat direction that
gradient descent actively collapses (shrinking rho shrinks the density
residual for free), after which the density equation stops informing the
control head and the learned policy degenerates.

Residual conventions (all built by automatic differentiation, never finite
differences):

    value:   dpsi/dt - 0.5|u|^2 + <grad_x psi, f> + <G, Hess_x psi>
    density: drho/dt + div_x(rho f) - sum_ij d^2(G_ij rho)/dx_i dx_j
    policy:  u_j - d/du_j [ <grad_x psi, f(t,x,u)> + <G(t,x,u), Hess_x psi> ]

with f, G evaluated at the net's own control u(t, x). Spatial derivatives in
the density residual chain through u(t, x); the policy derivative treats u as
a free variable (an identity node exposes exactly that partial).

Endpoint clouds: locations are drawn from a defensive mixture proposal (half
the endpoint Gaussian, half the same Gaussian widened to 4x covariance),
importance-weighted by rho_net/proposal_pdf (self-normalized), then compared
against an independent i.i.d. batch from the endpoint law. The narrow
component keeps the effective sample size high once the density head has
sharpened onto the endpoint; the wide component keeps weights bounded while
the head is still diffuse early in training. A flat proposal over the state
box would waste almost the whole batch on near-zero-density regions. All
three transport terms of the debiased loss go through the same
fixed-iteration solver, so a cloud whose weights match the target's uniform
weights on identical points scores exactly zero.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import autodiff as ad
from .nets import Mlp, MlpSpec, save_checkpoint
from .optim import Adam, OptimError
from .sde import ControlledDynamics
from .sinkhorn import cost_matrix, sinkhorn_loss_unrolled

__all__ = [
    "BridgeNet",
    "CollocationSet",
    "EndpointSpec",
    "GsbpProblem",
    "LossReport",
    "PinnConfig",
    "PinnError",
    "boundary_loss",
    "classical_sbp_dynamics",
    "control_affine_dynamics",
    "export_solution_grid",
    "fpk_residual",
    "hjb_residual",
    "make_collocation",
    "mass_quadrature",
    "omt_dynamics",
    "policy_residual",
    "residuals",
    "total_loss",
    "train",
    "write_loss_history_csv",
]

log = logging.getLogger(__name__)


class PinnError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# problem description


class EndpointSpec:
    """Gaussian endpoint distribution N(mean, cov)."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        n = self.mean.size
        if self.cov.shape != (n, n):
            raise PinnError(f"cov shape {self.cov.shape} != ({n},{n})")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise PinnError("cov must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as e:
            raise PinnError("cov must be positive definite") from e
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))

    def sample(self, rng, k):
        z = rng.standard_normal((k, self.mean.size))
        return self.mean + z @ self._chol.T

    def pdf(self, X):
        X = np.atleast_2d(X)
        d = X - self.mean
        sol = np.linalg.solve(self.cov, d.T).T
        q = np.sum(d * sol, axis=1)
        n = self.mean.size
        return np.exp(-0.5 * (q + self._logdet + n * np.log(2.0 * np.pi)))

    def sample_proposal(self, rng, k):
        """Defensive proposal draw: an even mixture of N(mean, cov) and the
        widened N(mean, 4 cov), so importance weights stay usable both when
        the density head is still diffuse and once it has sharpened."""
        z = rng.standard_normal((k, self.mean.size))
        scale = np.where(rng.random(k) < 0.5, 2.0, 1.0)[:, None]
        return self.mean + (z * scale) @ self._chol.T

    def proposal_pdf(self, X):
        """Density of sample_proposal's mixture at rows of X."""
        X = np.atleast_2d(X)
        d = X - self.mean
        sol = np.linalg.solve(self.cov, d.T).T
        q = np.sum(d * sol, axis=1)
        n = self.mean.size
        lognorm = self._logdet + n * np.log(2.0 * np.pi)
        narrow = np.exp(-0.5 * (q + lognorm))
        wide = np.exp(-0.5 * (q / 4.0 + lognorm) - 0.5 * n * np.log(4.0))
        return 0.5 * (narrow + wide)


@dataclass
class GsbpProblem:
    dynamics: object
    rho0: EndpointSpec
    rhoT: EndpointSpec
    T: float
    state_box: np.ndarray
    m: int

    def __post_init__(self):
        if self.T <= 0:
            raise PinnError("horizon T must be positive")
        self.state_box = np.asarray(self.state_box, dtype=float).reshape(-1, 2)

    @property
    def n(self):
        return self.state_box.shape[0]


# ---------------------------------------------------------------------------
# reference dynamics instances (written with tape-generic ops)


def classical_sbp_dynamics(n=2):
    """f = u, G = I: drift is the control, unit diffusion tensor."""
    eye = np.eye(n)
    return ControlledDynamics(
        f=lambda t, x, u: u, g=lambda t, x, u: eye, n=n, m=n, p=n
    )


def omt_dynamics(n=2):
    """f = u, G = 0: deterministic transport."""
    zero = np.zeros((n, 1))
    return ControlledDynamics(
        f=lambda t, x, u: u, g=lambda t, x, u: zero, n=n, m=n, p=1
    )


def control_affine_dynamics(ftilde, B, n, p_diffusion=None):
    """f = ftilde(x) + B u with a control-independent diffusion (default 0)."""
    B = np.asarray(B, dtype=float)
    m = B.shape[1]
    gmat = np.zeros((n, 1)) if p_diffusion is None else p_diffusion
    return ControlledDynamics(
        f=lambda t, x, u: ad.add(ftilde(x), ad.matmul(u, B.T)),
        g=lambda t, x, u: gmat,
        n=n,
        m=m,
        p=gmat.shape[1],
    )


# ---------------------------------------------------------------------------
# the bridge network: heads psi, rho, u on (t, x)


class BridgeNet:
    def __init__(self, n, m, hidden=(32, 32), seed=0, theta=None):
        self.n = int(n)
        self.m = int(m)
        self.mlp = Mlp(MlpSpec(1 + n, hidden, 2 + m), theta=theta, seed=seed)

    @property
    def theta(self):
        return self.mlp.theta

    @theta.setter
    def theta(self, v):
        self.mlp.theta = v

    def heads(self, TS, XS, theta=None):
        """TS (B,1), XS (B,n) arrays or nodes -> (psi (B,), rho (B,), u (B,m))."""
        out = self.mlp.forward(ad.concat([TS, XS]), theta)
        psi = out[:, 0]
        rho = ad.softplus(out[:, 1])
        u = out[:, 2:]
        return psi, rho, u


# ---------------------------------------------------------------------------
# residual assembly


def _grad_or_zero(scalar, wrt):
    """Second-order sweeps may start from adjoints that degenerated to plain
    constants (zero curvature); their derivative is identically zero."""
    if isinstance(scalar, ad.Node) and isinstance(wrt, ad.Node):
        return ad.backward(scalar, [wrt], create_graph=True)[0]
    return np.zeros(np.shape(wrt) if not isinstance(wrt, ad.Node) else wrt.shape)


def residuals(net, dyn, tvals, X, theta=None):
    """Batched residual nodes at interior points: returns (r_psi (B,),
    r_rho (B,), r_u (B,m)). Must run inside an active Tape; `net` is anything
    exposing heads(TS, XS[, theta])."""
    tvals = np.asarray(tvals, dtype=float).reshape(-1)
    B = tvals.size
    TS = ad.leaf(tvals.reshape(B, 1))
    XS = ad.leaf(np.asarray(X, dtype=float))
    psi, rho, u = net.heads(TS, XS, theta) if theta is not None else net.heads(TS, XS)
    n = XS.shape[1]

    # value-head derivatives
    psi_t, psi_x = ad.backward(ad.asum(psi), [TS, XS], create_graph=True)
    cols = []
    for k in range(n):
        ck = _grad_or_zero(ad.asum(psi_x[:, k]), XS)
        cols.append(ad.reshape(ck, (B, n, 1)))
    Hpsi = cols[0] if n == 1 else ad.concat(cols)

    # dynamics at the net's own control; the identity node exposes the
    # partial derivative in u while keeping the chain through u(t, x) intact
    uid = ad.identity(u)
    fv = dyn.f(tvals, XS, uid)
    gv = dyn.g(tvals, XS, uid)
    G = ad.matmul(gv, ad.swap_last(gv))

    drift_dot = ad.asum(ad.mul(psi_x, fv), axis=1)
    diffusion_dot = ad.asum(ad.mul(G, Hpsi), axis=(1, 2))
    usq = ad.asum(ad.mul(u, u), axis=1)
    r_psi = ad.add(
        ad.sub(ad.reshape(psi_t, (B,)), ad.mul(0.5, usq)),
        ad.add(drift_dot, diffusion_dot),
    )

    # density-head derivatives
    rho_t = _grad_or_zero(ad.asum(rho), TS)
    div = 0.0
    for i in range(n):
        dPi = _grad_or_zero(ad.asum(ad.mul(rho, fv[:, i])), XS)
        div = ad.add(div, dPi[:, i])
    lap = 0.0
    const_G = not isinstance(G, ad.Node)
    for i in range(n):
        Ai = 0.0
        for j in range(n):
            Gij = G[i, j] if const_G else G[:, i, j]
            if const_G and Gij == 0.0:
                continue
            dT = _grad_or_zero(ad.asum(ad.mul(Gij, rho)), XS)
            Ai = ad.add(Ai, dT[:, j])
        dA = _grad_or_zero(ad.asum(Ai), XS)
        lap = ad.add(lap, dA[:, i])
    r_rho = ad.sub(ad.add(ad.reshape(rho_t, (B,)), div), lap)

    # policy residual: u_j minus the partial of the Hamiltonian coupling
    s = ad.add(drift_dot, diffusion_dot)
    du = _grad_or_zero(ad.asum(s), uid)
    r_u = ad.sub(u, du)
    return r_psi, r_rho, r_u


def _point_residuals(net, dyn, xi):
    xi = np.asarray(xi, dtype=float).reshape(-1)
    with ad.Tape():
        r_psi, r_rho, r_u = residuals(net, dyn, xi[:1], xi[None, 1:])
        return (
            float(ad.value_of(r_psi)[0]),
            float(ad.value_of(r_rho)[0]),
            np.asarray(ad.value_of(r_u))[0],
        )


def hjb_residual(net, dyn, xi):
    """Value-equation residual at one interior point xi = [t, x1, ..., xn]."""
    return _point_residuals(net, dyn, xi)[0]


def fpk_residual(net, dyn, xi):
    """Density-equation residual at one interior point xi = [t, x1, ..., xn]."""
    return _point_residuals(net, dyn, xi)[1]


def policy_residual(net, dyn, xi, j):
    """Stationarity residual for control channel j (1-based) at xi."""
    r_u = _point_residuals(net, dyn, xi)[2]
    if not 1 <= j <= r_u.size:
        raise PinnError(f"channel {j} outside 1..{r_u.size}")
    return float(r_u[j - 1])


# ---------------------------------------------------------------------------
# boundary losses


@dataclass
class CollocationSet:
    interior_t: np.ndarray  # (N,)
    interior_x: np.ndarray  # (N, n)
    proposal0: np.ndarray  # (d, n) locations for the net's t=0 cloud
    target0: np.ndarray  # (d, n) i.i.d. batch from rho0
    proposalT: np.ndarray
    targetT: np.ndarray
    resample_every: int


def make_collocation(problem, N, batch_size, resample_every, seed):
    """Sobol interior points over box x (0, T); endpoint batches at exact
    t = 0 and t = T."""
    n = problem.n
    gen = np.random.default_rng(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # Sobol balance note for non-2^k N
        sob = qmc.Sobol(d=1 + n, scramble=True, seed=gen)
        pts = sob.random(N)
    t = pts[:, 0] * problem.T
    lo, hi = problem.state_box[:, 0], problem.state_box[:, 1]
    x = lo + pts[:, 1:] * (hi - lo)
    return CollocationSet(
        interior_t=t,
        interior_x=x,
        proposal0=problem.rho0.sample_proposal(gen, batch_size),
        target0=problem.rho0.sample(gen, batch_size),
        proposalT=problem.rhoT.sample_proposal(gen, batch_size),
        targetT=problem.rhoT.sample(gen, batch_size),
        resample_every=resample_every,
    )


def _relu(x):
    return ad.amax(ad.concat([ad.reshape(x, (1,)), np.zeros(1)]))


def _box_quadrature(box, nq):
    """Trapezoid nodes and weights over the state box: (Q, n) points, (Q,)
    weights whose dot with a sampled field approximates its integral."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    axes, wts = [], []
    for lo, hi in box:
        xs = np.linspace(lo, hi, nq)
        w = np.full(nq, xs[1] - xs[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(xs)
        wts.append(w)
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    W = wts[0]
    for w in wts[1:]:
        W = np.outer(W, w).ravel()
    return X, W


def _endpoint_mass_node(net, t_value, quad_x, quad_w, theta=None):
    TS = np.full((quad_x.shape[0], 1), float(t_value))
    _, rho, _ = net.heads(TS, quad_x, theta) if theta is not None else net.heads(
        TS, quad_x
    )
    return ad.asum(ad.mul(rho, quad_w))


def _endpoint_cloud_loss(net, endpoint, t_value, proposal, target, eps, iters, theta=None):
    """Debiased transport loss between the net's endpoint cloud and a target
    batch; differentiable in theta through the density head."""
    d = proposal.shape[0]
    TS = np.full((d, 1), float(t_value))
    _, rho, _ = net.heads(TS, proposal, theta) if theta is not None else net.heads(
        TS, proposal
    )
    q = endpoint.proposal_pdf(proposal)
    w_raw = ad.div(ad.add(rho, 1e-30), q)
    wa = ad.div(w_raw, ad.asum(w_raw))
    wb = np.full(target.shape[0], 1.0 / target.shape[0])
    Cab = cost_matrix(proposal, target)
    Caa = cost_matrix(proposal, proposal)
    Cbb = cost_matrix(target, target)
    lab = sinkhorn_loss_unrolled(wa, wb, Cab, eps, iters)
    laa = sinkhorn_loss_unrolled(wa, wa, Caa, eps, iters)
    lbb = sinkhorn_loss_unrolled(wb, wb, Cbb, eps, iters)
    return _relu(ad.sub(lab, ad.mul(0.5, ad.add(laa, lbb))))


def boundary_loss(net, problem, batch_size, eps, iters, seed):
    """(L_rho0, L_rhoT) on freshly drawn endpoint batches; plain floats."""
    if batch_size < 2:
        raise PinnError("batch_size must be >= 2")
    rng = np.random.default_rng(seed)
    l0 = _endpoint_cloud_loss(
        net, problem.rho0, 0.0,
        problem.rho0.sample_proposal(rng, batch_size),
        problem.rho0.sample(rng, batch_size),
        eps, iters,
    )
    lT = _endpoint_cloud_loss(
        net, problem.rhoT, problem.T,
        problem.rhoT.sample_proposal(rng, batch_size),
        problem.rhoT.sample(rng, batch_size),
        eps, iters,
    )
    return float(ad.value_of(l0)), float(ad.value_of(lT))


# ---------------------------------------------------------------------------
# total loss and training


@dataclass
class LossReport:
    l_rho0: float
    l_rhoT: float
    l_psi: float
    l_rho: float
    l_u: tuple
    l_mass: float
    total: float

    def parts(self):
        out = {
            "rho0": self.l_rho0,
            "rhoT": self.l_rhoT,
            "psi": self.l_psi,
            "rho": self.l_rho,
        }
        for j, v in enumerate(self.l_u):
            out[f"u{j + 1}"] = v
        out["mass"] = self.l_mass
        return out


@dataclass
class PinnConfig:
    hidden: tuple = (32, 32)
    N: int = 500
    eps: float = 0.1
    sinkhorn_iters: int = 50
    batch_size: int = 128
    lr0: float = 1e-3
    decay: float = 1.0
    epochs: int = 5000
    resample_every: int = 0  # 0 -> epochs // 5
    seed: int = 0
    checkpoint_every: int = 0
    mass_quad_nx: int = 25
    weights: dict = field(default_factory=dict)

    def resample_period(self):
        return self.resample_every if self.resample_every > 0 else max(1, self.epochs // 5)


def _total_loss_node(net, problem, colloc, cfg, theta=None):
    """Assemble the full loss inside the active tape; returns (total, parts)."""
    r_psi, r_rho, r_u = residuals(
        net, problem.dynamics, colloc.interior_t, colloc.interior_x, theta
    )
    parts = {}
    parts["psi"] = ad.mean(ad.mul(r_psi, r_psi))
    parts["rho"] = ad.mean(ad.mul(r_rho, r_rho))
    m = problem.m
    for j in range(m):
        rj = r_u[:, j]
        parts[f"u{j + 1}"] = ad.mean(ad.mul(rj, rj))
    parts["rho0"] = _endpoint_cloud_loss(
        net, problem.rho0, 0.0, colloc.proposal0, colloc.target0,
        cfg.eps, cfg.sinkhorn_iters, theta,
    )
    parts["rhoT"] = _endpoint_cloud_loss(
        net, problem.rhoT, problem.T, colloc.proposalT, colloc.targetT,
        cfg.eps, cfg.sinkhorn_iters, theta,
    )
    # squared-log mass anchors: the continuity residual is homogeneous in rho
    # at each time separately and the cloud losses are self-normalized, so
    # rho's scale at every time slice is otherwise a flat (and collapsing)
    # direction of the loss; anchoring a few slices removes the degeneracy
    # without constraining the shape
    quad_x, quad_w = _box_quadrature(problem.state_box, cfg.mass_quad_nx)
    anchors = np.linspace(0.0, problem.T, 5)
    acc = 0.0
    for tv in anchors:
        lz = ad.log(_endpoint_mass_node(net, tv, quad_x, quad_w, theta))
        acc = ad.add(acc, ad.mul(lz, lz))
    parts["mass"] = ad.mul(1.0 / anchors.size, acc)
    total = 0.0
    for name, node in parts.items():
        total = ad.add(total, ad.mul(float(cfg.weights.get(name, 1.0)), node))
    return total, parts


def _report_from(parts, total, m):
    vals = {k: float(ad.value_of(v)) for k, v in parts.items()}
    return LossReport(
        l_rho0=vals["rho0"],
        l_rhoT=vals["rhoT"],
        l_psi=vals["psi"],
        l_rho=vals["rho"],
        l_u=tuple(vals[f"u{j + 1}"] for j in range(m)),
        l_mass=vals["mass"],
        total=float(ad.value_of(total)),
    )


def total_loss(net, problem, colloc, cfg):
    """LossReport at the net's current parameters (no training step)."""
    with ad.Tape():
        total, parts = _total_loss_node(net, problem, colloc, cfg)
        return _report_from(parts, total, problem.m)


def _attribute_nonfinite(net, problem, colloc, cfg):
    try:
        with ad.Tape(check_finite=False):
            with np.errstate(all="ignore"):
                total, parts = _total_loss_node(net, problem, colloc, cfg)
                bad = [
                    k for k, v in parts.items()
                    if not np.all(np.isfinite(ad.value_of(v)))
                ]
        return bad or ["unknown"]
    except Exception:  # diagnosis must never mask the original failure
        return ["unknown"]


def train(problem, cfg, out_dir=None):
    """Adam loop over the summed loss; collocation (and boundary batches)
    refresh every resample period. Returns (net, history of LossReport)."""
    net = BridgeNet(problem.n, problem.m, hidden=tuple(cfg.hidden), seed=cfg.seed)
    history = []
    if cfg.epochs == 0:
        return net, history
    period = cfg.resample_period()
    colloc = make_collocation(problem, cfg.N, cfg.batch_size, period, cfg.seed)
    opt = Adam(lr=cfg.lr0, decay=cfg.decay)
    theta = net.theta.copy()
    for epoch in range(cfg.epochs):
        if epoch > 0 and epoch % period == 0:
            colloc = make_collocation(
                problem, cfg.N, cfg.batch_size, period, [cfg.seed, epoch]
            )
        try:
            with ad.Tape():
                th = ad.leaf(theta)
                total, parts = _total_loss_node(net, problem, colloc, cfg, theta=th)
                (g,) = ad.backward(total, [th])
                report = _report_from(parts, total, problem.m)
            theta = opt.step(theta, np.asarray(ad.value_of(g)))
        except (ad.AutodiffError, OptimError) as e:
            net.theta = theta
            bad = _attribute_nonfinite(net, problem, colloc, cfg)
            raise PinnError(
                f"non-finite loss at epoch {epoch} (components: {', '.join(bad)}): {e}"
            ) from e
        history.append(report)
        if out_dir is not None and cfg.checkpoint_every > 0 and (
            (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs
        ):
            os.makedirs(out_dir, exist_ok=True)
            net.theta = theta
            save_checkpoint(
                os.path.join(out_dir, f"bridge_epoch{epoch + 1:06d}.json"),
                net.mlp,
                extra={"epoch": epoch + 1, "n": net.n, "m": net.m},
            )
    net.theta = theta
    return net, history


def write_loss_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        m = len(history[0].l_u) if history else 0
        w.writerow(
            ["epoch", "L_rho0", "L_rhoT", "L_psi", "L_rho"]
            + [f"L_u{j + 1}" for j in range(m)]
            + ["L_mass", "total"]
        )
        for e, r in enumerate(history):
            w.writerow(
                [e]
                + [repr(float(v)) for v in (r.l_rho0, r.l_rhoT, r.l_psi, r.l_rho)]
                + [repr(float(v)) for v in r.l_u]
                + [repr(float(v)) for v in (r.l_mass, r.total)]
            )


# ---------------------------------------------------------------------------
# diagnostics and export


def mass_quadrature(net, problem, t, nx=61):
    """Trapezoid integral of the density head over the state box at time t."""
    lo, hi = problem.state_box[:, 0], problem.state_box[:, 1]
    xs = [np.linspace(lo[d], hi[d], nx) for d in range(problem.n)]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, problem.n)
    TS = np.full((grid.shape[0], 1), float(t))
    _, rho, _ = net.heads(TS, grid)
    rho = np.asarray(ad.value_of(rho)).reshape((nx,) * problem.n)
    for d in range(problem.n - 1, -1, -1):
        rho = np.trapezoid(rho, xs[d], axis=d)
    return float(rho)


def export_solution_grid(path, net, problem, nt=5, nx=41):
    """CSV (t, x1, x2, psi, rho, u1, ..., um) over a regular grid."""
    lo, hi = problem.state_box[:, 0], problem.state_box[:, 1]
    ts = np.linspace(0.0, problem.T, nt)
    xs = [np.linspace(lo[d], hi[d], nx) for d in range(problem.n)]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, problem.n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["t"]
            + [f"x{d + 1}" for d in range(problem.n)]
            + ["psi", "rho"]
            + [f"u{j + 1}" for j in range(problem.m)]
        )
        for t in ts:
            TS = np.full((grid.shape[0], 1), t)
            psi, rho, u = net.heads(TS, grid)
            psi = np.asarray(ad.value_of(psi))
            rho = np.asarray(ad.value_of(rho))
            u = np.asarray(ad.value_of(u))
            for i in range(grid.shape[0]):
                w.writerow(
                    [repr(float(t))]
                    + [repr(float(v)) for v in grid[i]]
                    + [repr(float(psi[i])), repr(float(rho[i]))]
                    + [repr(float(v)) for v in u[i]]
                )
