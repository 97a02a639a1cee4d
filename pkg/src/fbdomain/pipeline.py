"""generate -> normalize -> solve -> extend -> constants, in one call."""

from dataclasses import dataclass

from .conjugacy import XI_EXP, build_conjugacy, check_structure, extend_to_degree, select_degrees
from .errors import InvariantFailure
from .fb_map import convergence_params, growth_constants
from .normal_form import NormalizationParams, normalize_sequence


@dataclass
class SolverParams:
    xi_exp: float = XI_EXP
    p: int = None
    q: int = None
    residual_tol: float = 1e-9
    growth_samples: int = 2_000
    residual_samples: int = 500


@dataclass
class PipelineResult:
    norm: object
    profile: object
    data: object
    params: object
    p: int
    q: int

    def summary(self):
        return {
            "p": self.p,
            "q": self.q,
            "a": self.profile.a,
            "b": self.profile.b,
            "xi_order": self.profile.xi_order,
            "dilation": self.norm.dilation,
            "max_residual": float(self.data.residuals.max()),
            "sup_x_norm": self.data.boundedness()[0],
            "convergence": self.params.to_dict(),
            "ill_conditioned_terms": self.data.flags,
        }


def run_pipeline(seq, norm_params=None, solver=None, horizon=None):
    """Full construction for an automorphism sequence; raises on any stage error."""
    solver = solver or SolverParams()
    norm, profile = normalize_sequence(seq, norm_params or NormalizationParams(), horizon)
    p = solver.p
    if p is None:
        p = select_degrees(profile, 1.0, profile.b, solver.xi_exp)[0]
    data = build_conjugacy(norm, p, solver.xi_exp)
    beta, gamma = growth_constants(data.G, solver.growth_samples)
    gamma = max(gamma, 1.0)
    q = solver.q
    if q is None:
        q = select_degrees(profile, gamma, profile.b, solver.xi_exp)[1]
    if q + 1 > p:
        data = extend_to_degree(data, norm, q + 1, solver.xi_exp)
    else:
        data.q = q
    check_structure(data, norm)
    worst = float(data.residuals.max())
    if worst > solver.residual_tol:
        raise InvariantFailure("conjugacy residual above tolerance", stage="conjugacy.residual",
                               details={"max_residual": worst, "tol": solver.residual_tol})
    params = convergence_params(data, norm, profile.b, gamma, beta, solver.residual_samples)
    return PipelineResult(norm, profile, data, params, p, q)
