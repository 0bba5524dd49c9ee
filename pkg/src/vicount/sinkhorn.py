"""Entropically regularized transport plans via log-domain Sinkhorn scaling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .errors import ConfigError


@dataclass
class SinkhornResult:
    plan: torch.Tensor
    iterations: int
    converged: bool
    max_marginal_residual: float


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(x, dtype=torch.float64)


def sinkhorn(
    cost,
    mu,
    nu,
    eps: float = 0.05,
    max_iter: int = 2000,
    tol: float = 1e-9,
    n_fixed_iter: int | None = None,
) -> SinkhornResult:
    """Solve min <plan, cost> + eps * KL(plan || mu x nu) with given marginals.

    Alternating updates run on log-scaled potentials, so small eps stays
    numerically stable.  With ``n_fixed_iter`` set, exactly that many update
    sweeps run with no convergence test, making the output a smooth function
    of the cost (used inside differentiable losses); otherwise iteration stops
    once both marginal residuals drop below ``tol``.
    """
    cost = _as_tensor(cost)
    mu = _as_tensor(mu)
    nu = _as_tensor(nu)
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if (mu < 0).any() or (nu < 0).any():
        raise ConfigError("marginals must be non-negative")
    mass_mu, mass_nu = float(mu.sum()), float(nu.sum())
    if mass_mu <= 0 or abs(mass_mu - mass_nu) > 1e-8 * max(1.0, mass_mu):
        raise ConfigError(f"marginals must carry equal positive mass ({mass_mu} vs {mass_nu})")

    log_k = -cost / eps
    log_mu = torch.log(mu)
    log_nu = torch.log(nu)
    log_u = torch.zeros_like(mu)
    log_v = torch.zeros_like(nu)

    def current_plan():
        return torch.exp(log_u.unsqueeze(1) + log_k + log_v.unsqueeze(0))

    def residual(plan):
        r = torch.max(torch.abs(plan.sum(dim=1) - mu))
        c = torch.max(torch.abs(plan.sum(dim=0) - nu))
        return float(torch.maximum(r, c))

    if n_fixed_iter is not None:
        for _ in range(n_fixed_iter):
            log_u = log_mu - torch.logsumexp(log_k + log_v.unsqueeze(0), dim=1)
            log_v = log_nu - torch.logsumexp(log_k + log_u.unsqueeze(1), dim=0)
        plan = current_plan()
        res = residual(plan.detach())
        return SinkhornResult(plan=plan, iterations=n_fixed_iter,
                              converged=res < tol, max_marginal_residual=res)

    iterations = 0
    res = float("inf")
    for iterations in range(1, max_iter + 1):
        log_u = log_mu - torch.logsumexp(log_k + log_v.unsqueeze(0), dim=1)
        log_v = log_nu - torch.logsumexp(log_k + log_u.unsqueeze(1), dim=0)
        res = residual(current_plan())
        if res < tol:
            return SinkhornResult(plan=current_plan(), iterations=iterations,
                                  converged=True, max_marginal_residual=res)
    warnings.warn(
        f"sinkhorn did not reach tol={tol} in {max_iter} iterations "
        f"(residual {res:.3e}); returning best iterate",
        RuntimeWarning,
        stacklevel=2,
    )
    return SinkhornResult(plan=current_plan(), iterations=iterations,
                          converged=False, max_marginal_residual=res)
