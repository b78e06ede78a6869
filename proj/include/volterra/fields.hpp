#pragma once

#include <memory>
#include <string>
#include <vector>

#include "volterra/ensemble.hpp"
#include "volterra/grids.hpp"

namespace volterra {

struct OrthoResiduals {
    double family_mean = 0.0, family_cond = 0.0;
    double deriv_mean = 0.0, deriv_cond = 0.0;
    double diag_mean = 0.0, diag_cond = 0.0;
};

// Two-parameter solution fields over (s, t).  Layout: U[j][i][p][k] flattened
// row-major, V rows are n x d.  Diagonal arrays are one-parameter ([i][p][k]).
// The simplified solver leaves dU/dV/Vdiag_reconstructed/dUdiag empty.
struct FieldSolution {
    TimeGrid tgrid;
    ParamGrid sgrid;
    int n_paths = 0, n = 0, d = 0;

    std::vector<double> U, dU;    // (J+1)(M+1)P d
    std::vector<double> V, dV;    // (J+1)(M+1)P nd
    std::vector<double> Ydiag;    // (M+1)P d
    std::vector<double> Zdiag;    // (M+1)P nd
    std::vector<double> Udiag;    // (M+1)P d
    std::vector<double> dUdiag;   // (M+1)P d
    std::vector<double> Vdiag_reconstructed;  // (M+1)P nd

    OrthoResiduals ortho_residuals;
    std::vector<double> picard_trace;
    double achieved_distance = 0.0;
    bool converged = false;
    bool simplified = false;

    int J() const { return sgrid.segments(); }
    int M() const { return tgrid.steps; }

    std::size_t uoff(int j, int i, int p) const {
        return ((static_cast<std::size_t>(j) * (M() + 1) + i) * n_paths + p) * d;
    }
    std::size_t voff(int j, int i, int p) const {
        return ((static_cast<std::size_t>(j) * (M() + 1) + i) * n_paths + p) * n * d;
    }
    std::size_t doff(int i, int p) const { return (static_cast<std::size_t>(i) * n_paths + p) * d; }
    std::size_t zoff(int i, int p) const { return (static_cast<std::size_t>(i) * n_paths + p) * n * d; }

    const double* u_at(int j, int i, int p) const { return U.data() + uoff(j, i, p); }
    const double* v_at(int j, int i, int p) const { return V.data() + voff(j, i, p); }
    const double* du_at(int j, int i, int p) const { return dU.data() + uoff(j, i, p); }
    const double* dv_at(int j, int i, int p) const { return dV.data() + voff(j, i, p); }
    const double* ydiag_at(int i, int p) const { return Ydiag.data() + doff(i, p); }
    const double* zdiag_at(int i, int p) const { return Zdiag.data() + zoff(i, p); }
};

// Extracted type-I solution.  Y and Z alias the converged field (Theorem-4.1
// identification Y := U, Z := V); provenance records the fixed-point
// identification errors.
struct BsvieSolution {
    std::shared_ptr<const FieldSolution> field;
    double ident_err_Y = 0.0;  // ||Ydiag - diag(U)||, squared discrete S^2
    double ident_err_Z = 0.0;  // ||Zdiag - Vdiag_reconstructed||, squared discrete H^2
    std::string backend;
    double tol = 0.0;

    const double* y_at(int j, int i, int p) const { return field->u_at(j, i, p); }
    const double* z_at(int j, int i, int p) const { return field->v_at(j, i, p); }
    const double* ydiag_at(int i, int p) const { return field->ydiag_at(i, p); }
    const double* zdiag_at(int i, int p) const { return field->zdiag_at(i, p); }
};

} // namespace volterra
