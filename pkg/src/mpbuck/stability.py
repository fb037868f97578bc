"""Reduced small-signal model and its Routh-Hurwitz screen.

Aggregating the branch currents into one state and writing the loop error as
the other collapses the plant to a 2x2 linear system. Its characteristic
polynomial yields algebraic stability conditions usable as a fast pre-filter
before simulating a candidate configuration; a quadratic-formula eigenvalue
computation rides along as an independent cross-check.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

from .converter import ConverterParams

__all__ = ["ReducedModel", "StabilityReport", "build_reduced_model", "routh_hurwitz"]


@dataclass(frozen=True)
class ReducedModel:
    """Coefficients of the aggregated-current/error system.

    The state matrix is [[b1, g1], [-c_neg, g_diag]]:
      b1     = -r_winding / inductance          (current self-decay, 1/s)
      g1     = n_phases / inductance            (error-to-current coupling)
      c_neg  = 1/(r*C) - r_esr*r_winding/(r*L)  (current-to-error coupling)
      g_diag = -[1/(r*C*r_load) + r_esr*n_f/(r*L)]  (error self-decay, 1/s)
    r_factor is the ESR divider 1 + r_esr/r_load unless overridden; n_f
    defaults to the phase count.
    """

    b1: float
    g1: float
    c_neg: float
    g_diag: float
    r_factor: float
    n_f: int


@dataclass(frozen=True)
class StabilityReport:
    """Routh-Hurwitz verdict plus the eigenvalue oracle for one model."""

    trace: float
    determinant: float
    routh_hurwitz_stable: bool
    eigenvalues: tuple[complex, complex]
    eigen_stable: bool
    agreement: bool

    def to_dict(self) -> dict:
        return {
            "trace": self.trace,
            "determinant": self.determinant,
            "routh_hurwitz_stable": self.routh_hurwitz_stable,
            "eigenvalue_1_real": self.eigenvalues[0].real,
            "eigenvalue_1_imag": self.eigenvalues[0].imag,
            "eigenvalue_2_real": self.eigenvalues[1].real,
            "eigenvalue_2_imag": self.eigenvalues[1].imag,
            "eigen_stable": self.eigen_stable,
            "agreement": self.agreement,
        }


def build_reduced_model(params: ConverterParams, r_load: float,
                        r_factor: float | str = "auto",
                        n_f: int | None = None) -> ReducedModel:
    """Reduced-model coefficients for a converter at a given load.

    "auto" resolves the divider to 1 + r_esr/r_load, which is exactly the
    denominator that appears when the output-voltage constraint is solved for
    u_o; n_f defaults to the phase count.
    """
    if r_factor == "auto":
        r = 1.0 + params.r_esr / r_load
    else:
        r = float(r_factor)
    nf = params.n_phases if n_f is None else int(n_f)
    l = params.inductance
    c = params.capacitance
    b1 = -params.r_winding / l
    g1 = params.n_phases / l
    c_neg = 1.0 / (r * c) - params.r_esr * params.r_winding / (r * l)
    g_diag = -(1.0 / (r * c * r_load) + params.r_esr * nf / (r * l))
    return ReducedModel(b1=b1, g1=g1, c_neg=c_neg, g_diag=g_diag,
                        r_factor=r, n_f=nf)


def routh_hurwitz(model: ReducedModel) -> StabilityReport:
    """Stability verdict for the reduced model.

    For a 2x2 state matrix the Routh-Hurwitz conditions reduce to trace < 0
    and determinant > 0. The determinant of [[b1, g1], [-c_neg, g_diag]] is
    b1*g_diag + c_neg*g1. Eigenvalues from the quadratic formula provide the
    independent verdict recorded in the agreement flag.
    """
    tr = model.b1 + model.g_diag
    det = model.b1 * model.g_diag + model.c_neg * model.g1
    rh_stable = tr < 0.0 and det > 0.0

    disc = cmath.sqrt(tr * tr - 4.0 * det)
    lam1 = (tr + disc) / 2.0
    lam2 = (tr - disc) / 2.0
    eigen_stable = max(lam1.real, lam2.real) < 0.0

    return StabilityReport(
        trace=tr, determinant=det, routh_hurwitz_stable=rh_stable,
        eigenvalues=(lam1, lam2), eigen_stable=eigen_stable,
        agreement=rh_stable == eigen_stable,
    )
