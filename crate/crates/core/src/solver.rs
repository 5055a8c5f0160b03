//! Newton solver for the prescribed-mean-curvature problem `H(ρ) = l`,
//! Jacobi/stability operators with their spectra, continuation along
//! the metric family and the foliation sweep with lapse computation.
//!
//! The Newton unknown is the full radius field `ρ` in coefficient
//! space. The linearization of `H` under a graph perturbation `v ∂_r`
//! is the exact shape derivative
//! `J v = −Δ_Σ(αv) − (|A|² + Rc(ν,ν)) αv + ⟨∇H, ∂_r^⊤⟩ v` with
//! `α = ⟨∂_r, ν⟩`; the first two terms are assembled from exact
//! per-node jets, the transport term (which vanishes at CMC points)
//! uses spectral derivatives of `H`.

use crate::ambient::{round_radius_for_h, AmbientEval, AmbientMetricSpec};
use crate::error::{Error, Result};
use crate::s2grid::{coeff_index, AngularJet, CoeffVector, Component, GridS2, ScalarField};
use crate::surface::{geometry_of, surface_average, surface_integrate, GraphSurface, SJet, SurfaceGeometry};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use std::f64::consts::PI;

/// Widest `l`-range accepted for foliation-regime runs; the true ε₀ is
/// existential, this default is a config-overridable guard.
pub const DEFAULT_EPSILON0: f64 = 0.1;

/// Bound accepted on `r_{k+1}/r_k²` over the convergent Newton tail.
const QUADRATIC_TAIL_BOUND: f64 = 1e8;

/// A prescribed-mean-curvature problem at fixed `l`.
#[derive(Clone, Copy, Debug)]
pub struct CmcProblem {
    pub l: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Regime floor on the area radius; leaves below it are flagged.
    pub r_hat_floor: f64,
}

impl CmcProblem {
    pub fn new(l: f64) -> Result<Self> {
        Self::with_tolerance(l, 1e-11, 30)
    }

    pub fn with_tolerance(l: f64, tol: f64, max_iter: usize) -> Result<Self> {
        if l <= 2.0 {
            return Err(Error::Domain {
                op: "cmc_solve",
                message: format!("l must exceed 2, got {l}"),
            });
        }
        if !(1e-12..=1e-6).contains(&tol) {
            return Err(Error::Domain {
                op: "cmc_solve",
                message: format!("tolerance {tol} outside [1e-12, 1e-6]"),
            });
        }
        Ok(CmcProblem {
            l,
            tol,
            max_iter,
            r_hat_floor: 2.0,
        })
    }
}

/// Dense stability operators of a leaf on harmonic coefficients.
///
/// `form` is the quadratic form of `P f = −Δ_Σ f − (|A|²+Rc(ν,ν)) f`,
/// i.e. `form_jk = ∫ (⟨∇B_j, ∇B_k⟩ − W B_j B_k) dμ`, and `mass` the
/// `dμ` Gram matrix, so `P = mass⁻¹ form` and the normalized operator
/// `L = (|Σ|/4π) P` is a pure eigenvalue rescaling.
pub struct JacobiMatrix {
    pub form: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub area: f64,
}

impl JacobiMatrix {
    /// `|Σ|/4π`, the eigenvalue scale between `P` and `L`.
    pub fn normalized_scale(&self) -> f64 {
        self.area / (4.0 * PI)
    }

    /// Apply `P` in coefficient space (`mass⁻¹ · form · x`).
    pub fn apply_p(&self, x: &CoeffVector) -> Result<CoeffVector> {
        let v = DVector::from_column_slice(&x.0);
        let rhs = &self.form * v;
        let chol = Cholesky::new(self.mass.clone()).ok_or(Error::SingularJacobian {
            op: "jacobi_operator",
        })?;
        Ok(CoeffVector(chol.solve(&rhs).as_slice().to_vec()))
    }

    /// Worst asymmetry of the assembled form.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.form.nrows() {
            for j in (i + 1)..self.form.ncols() {
                worst = worst.max((self.form[(i, j)] - self.form[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Lowest eigenvalues of `P` and `L` restricted to `dμ`-mean-zero
/// functions.
#[derive(Clone, Copy, Debug)]
pub struct StabilitySpectrum {
    pub lowest_p: f64,
    pub lowest_l: f64,
}

/// Lapse data of a foliation leaf.
#[derive(Clone, Debug)]
pub struct LapseData {
    pub phi: ScalarField,
    /// Average w.r.t. the normalized metric measure (equal to the `dμ`
    /// average since `dμ̂` is a constant multiple of `dμ`).
    pub phi_mean: f64,
    /// Relative sup disagreement between the elliptic-solve lapse and
    /// the finite-difference-of-surfaces lapse.
    pub fd_cross_check: f64,
    /// `|(|Σ|/4π)(dH/dl)/φ̄ + 2 − avg(3τ/(2 sinh r̂))|`; the remainder
    /// of the area-balance relation carries a factor `φ̄`, so the
    /// residual is recorded per unit `φ̄` (envelope `e^{−2r̂}`).
    pub barro_residual: f64,
    pub single_signed: bool,
    /// `min|φ| / max|φ|` over the leaf.
    pub min_over_max: f64,
}

/// A converged constant-mean-curvature leaf.
pub struct FoliationLeaf {
    pub l: f64,
    pub surface: GraphSurface,
    pub geometry: SurfaceGeometry,
    pub r_hat: f64,
    /// Sup-norm Newton residual history (`H − l` at the nodes).
    pub newton_residuals: Vec<f64>,
    /// Worst `r_{k+1}/r_k²` over the convergent tail.
    pub quadratic_tail_ratio: f64,
    pub lowest_p_eigenvalue: f64,
    pub lowest_l_eigenvalue: f64,
    /// Hypothesis (A) monitor `r̄ − r̲ ≤ C₄`.
    pub hypothesis_a_ok: bool,
    /// Area radius at or above the configured regime floor.
    pub above_r_hat_floor: bool,
    pub lapse: Option<LapseData>,
}

/// Harmonic coefficients of `H(surf) − l`.
pub fn cmc_residual(eval: &AmbientEval, surf: &GraphSurface, l: f64) -> Result<CoeffVector> {
    let geom = geometry_of(eval, surf)?;
    residual_coeffs(eval.grid, &geom, l)
}

fn residual_coeffs(grid: &GridS2, geom: &SurfaceGeometry, l: f64) -> Result<CoeffVector> {
    let mut c = grid.analysis(&geom.mean_curvature)?;
    c.0[0] -= l * (4.0 * PI).sqrt();
    Ok(c)
}

/// Exact shape Jacobian of the residual map in coefficient space.
pub fn shape_jacobian(grid: &GridS2, geom: &SurfaceGeometry) -> Result<DMatrix<f64>> {
    let n_c = grid.n_coeffs();
    let n_n = grid.n_nodes();

    // Tangential transport coefficient ⟨∇H, ∂_r^⊤⟩ via spectral ∂H.
    let h_coeffs = grid.analysis(&geom.mean_curvature)?;
    let h_jets = grid.jet(&h_coeffs, 1)?;
    let mut transport = vec![0.0; n_n];
    for (node, out) in transport.iter_mut().enumerate() {
        let gi = &geom.inv_metric[node];
        let t = &geom.radial_tangent_cov[node];
        let dh = [h_jets[node].dt, h_jets[node].dp];
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                acc += gi[a][b] * dh[a] * t[b];
            }
        }
        *out = acc;
    }

    let mut jac = DMatrix::zeros(n_c, n_c);
    let mut basis = vec![AngularJet::default(); n_n];
    let mut col_field = ScalarField(vec![0.0; n_n]);
    for k in 0..n_c {
        let (l, m, comp) = grid.coeff_lm(k);
        grid.basis_jet_into(l, m, comp, &mut basis);
        for node in 0..n_n {
            let b = &basis[node];
            let bj = SJet {
                v: b.v,
                d: [b.dt, b.dp],
                dd: [[b.dtt, b.dtp], [b.dtp, b.dpp]],
            };
            let p = geom.alpha_jets[node] * bj;
            let gi = &geom.inv_metric[node];
            let dr = &geom.lap_drift[node];
            let lap = gi[0][0] * p.dd[0][0]
                + 2.0 * gi[0][1] * p.dd[0][1]
                + gi[1][1] * p.dd[1][1]
                + dr[0] * p.d[0]
                + dr[1] * p.d[1];
            col_field.0[node] = -lap - geom.jacobi_potential.0[node] * p.v + transport[node] * b.v;
        }
        let col = grid.analysis(&col_field)?;
        jac.column_mut(k).copy_from_slice(&col.0);
    }
    Ok(jac)
}

/// Assemble the stability form and mass matrix of a leaf.
pub fn jacobi_operator(grid: &GridS2, geom: &SurfaceGeometry) -> JacobiMatrix {
    let n_c = grid.n_coeffs();
    let n_n = grid.n_nodes();
    let mut bval = DMatrix::zeros(n_n, n_c);
    let mut bt = DMatrix::zeros(n_n, n_c);
    let mut bp = DMatrix::zeros(n_n, n_c);
    let mut basis = vec![AngularJet::default(); n_n];
    for k in 0..n_c {
        let (l, m, comp) = grid.coeff_lm(k);
        grid.basis_jet_into(l, m, comp, &mut basis);
        for node in 0..n_n {
            bval[(node, k)] = basis[node].v;
            bt[(node, k)] = basis[node].dt;
            bp[(node, k)] = basis[node].dp;
        }
    }
    let w = grid.node_weights();
    let mut d_tt = DVector::zeros(n_n);
    let mut d_tp = DVector::zeros(n_n);
    let mut d_pp = DVector::zeros(n_n);
    let mut d_w = DVector::zeros(n_n);
    let mut d_mass = DVector::zeros(n_n);
    for node in 0..n_n {
        let wj = w[node] * geom.area_density.0[node];
        let gi = &geom.inv_metric[node];
        d_tt[node] = wj * gi[0][0];
        d_tp[node] = wj * gi[0][1];
        d_pp[node] = wj * gi[1][1];
        d_w[node] = wj * geom.jacobi_potential.0[node];
        d_mass[node] = wj;
    }
    let scale_rows = |m: &DMatrix<f64>, d: &DVector<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for (node, mut row) in out.row_iter_mut().enumerate() {
            row *= d[node];
        }
        out
    };
    let form = bt.transpose() * scale_rows(&bt, &d_tt)
        + bt.transpose() * scale_rows(&bp, &d_tp)
        + bp.transpose() * scale_rows(&bt, &d_tp)
        + bp.transpose() * scale_rows(&bp, &d_pp)
        - bval.transpose() * scale_rows(&bval, &d_w);
    let mass = bval.transpose() * scale_rows(&bval, &d_mass);
    JacobiMatrix {
        form,
        mass,
        area: geom.area,
    }
}

/// Lowest mean-zero eigenvalues of `P` and the normalized `L` via a
/// generalized symmetric eigensolve with the constant direction
/// deflated.
pub fn stability_spectrum(jm: &JacobiMatrix) -> Result<StabilitySpectrum> {
    let defect = jm.symmetry_defect();
    let scale = jm.form.amax();
    if defect > 1e-8 * scale.max(1.0) {
        return Err(Error::Domain {
            op: "stability_spectrum",
            message: format!("form matrix asymmetric beyond tolerance ({defect:.3e})"),
        });
    }
    let n = jm.mass.nrows();
    let chol = Cholesky::new(jm.mass.clone()).ok_or(Error::SingularJacobian {
        op: "stability_spectrum",
    })?;
    let l_fac = chol.l();
    // Ã = L⁻¹ A L⁻ᵀ
    let y = l_fac
        .solve_lower_triangular(&jm.form)
        .ok_or(Error::SingularJacobian {
            op: "stability_spectrum",
        })?;
    let a_tilde = l_fac
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::SingularJacobian {
            op: "stability_spectrum",
        })?;
    // The mean-zero constraint 1̂ᵀ M x = 0 becomes qᵀ y = 0, q = Lᵀ 1̂.
    let band = (n as f64).sqrt() as usize - 1;
    let one_hat = DVector::from_column_slice(&CoeffVector::constant(band, 1.0).0);
    let q = l_fac.transpose() * one_hat;
    let qn = q.normalize();
    // Householder reflector sending e₁ to q̂, then drop the q̂ row/col.
    let mut u = qn.clone();
    u[0] -= 1.0;
    let un = u.norm();
    let reflected = if un > 1e-14 {
        let u = u / un;
        let au = &a_tilde * &u;
        let uau = u.dot(&au);
        &a_tilde - &au * u.transpose() * 2.0 - u.clone() * au.transpose() * 2.0
            + u.clone() * u.transpose() * (4.0 * uau)
    } else {
        a_tilde.clone()
    };
    let sub = reflected.view((1, 1), (n - 1, n - 1)).into_owned();
    let sym = SymmetricEigen::new(sub);
    let lowest_p = sym
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(StabilitySpectrum {
        lowest_p,
        lowest_l: lowest_p * jm.normalized_scale(),
    })
}

/// Apply a (possibly damped) Newton step and evaluate the resulting
/// residual; `None` when the trial surface leaves the chart.
fn trial_step(
    eval: &AmbientEval,
    problem: &CmcProblem,
    rho: &CoeffVector,
    delta: &DVector<f64>,
) -> Result<Option<(CoeffVector, f64)>> {
    let grid = eval.grid;
    // Cap the sup-norm of the update so early iterates cannot leave the
    // chart; near convergence the cap never binds.
    let step_sup = grid
        .synthesis(&CoeffVector(delta.as_slice().to_vec()))?
        .sup_norm();
    let damping = if step_sup > 0.5 { 0.5 / step_sup } else { 1.0 };
    let mut next = rho.clone();
    for (c, d) in next.0.iter_mut().zip(delta.iter()) {
        *c += damping * d;
    }
    let surf = GraphSurface {
        rho_coeffs: next.clone(),
    };
    match geometry_of(eval, &surf) {
        Ok(geom) => {
            let sup = geom
                .mean_curvature
                .0
                .iter()
                .fold(0.0f64, |acc, h| acc.max((h - problem.l).abs()));
            Ok(Some((next, sup)))
        }
        Err(Error::Domain { .. }) | Err(Error::OrientationViolated { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn quadratic_tail_ratio(residuals: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for pair in residuals.windows(2) {
        let (r0, r1) = (pair[0], pair[1]);
        if r0 <= 1e-2 && r0 >= 1e-9 && r1 > 1e-12 {
            worst = worst.max(r1 / (r0 * r0));
        }
    }
    worst
}

/// Newton solve with warm start. On success the leaf carries its
/// geometry, Newton history and stability eigenvalues.
pub fn cmc_solve(
    eval: &AmbientEval,
    problem: &CmcProblem,
    initial: &GraphSurface,
) -> Result<FoliationLeaf> {
    let grid = eval.grid;
    let mut rho = initial.rho_coeffs.resized(grid.band_limit());
    let mut residuals = Vec::new();

    for iter in 0..=problem.max_iter {
        let surf = GraphSurface {
            rho_coeffs: rho.clone(),
        };
        let geom = geometry_of(eval, &surf)?;
        let sup = geom
            .mean_curvature
            .0
            .iter()
            .fold(0.0f64, |acc, h| acc.max((h - problem.l).abs()));
        residuals.push(sup);

        if sup <= problem.tol {
            let tail = quadratic_tail_ratio(&residuals);
            if tail > QUADRATIC_TAIL_BOUND {
                return Err(Error::Regime {
                    op: "cmc_solve",
                    message: format!("Newton tail not quadratic: worst r_(k+1)/r_k^2 = {tail:.3e}"),
                });
            }
            let jm = jacobi_operator(grid, &geom);
            let spectrum = stability_spectrum(&jm)?;
            let hypothesis_a = geom.outer_radius - geom.inner_radius <= eval.spec.constants.c4;
            let above_floor = geom.r_hat >= problem.r_hat_floor;
            return Ok(FoliationLeaf {
                l: problem.l,
                r_hat: geom.r_hat,
                surface: surf,
                newton_residuals: residuals,
                quadratic_tail_ratio: tail,
                lowest_p_eigenvalue: spectrum.lowest_p,
                lowest_l_eigenvalue: spectrum.lowest_l,
                hypothesis_a_ok: hypothesis_a,
                above_r_hat_floor: above_floor,
                lapse: None,
                geometry: geom,
            });
        }
        if iter == problem.max_iter {
            break;
        }

        let res = residual_coeffs(grid, &geom, problem.l)?;
        let jac = shape_jacobian(grid, &geom)?;
        let rhs = -DVector::from_column_slice(&res.0);

        // LU step first; if it fails to contract the residual (the
        // signature of junk in a near-kernel, e.g. the translation
        // kernel of an exactly hyperbolic spec), take the minimum-norm
        // SVD step instead.
        let mut best: Option<(CoeffVector, f64)> = None;
        if let Some(delta) = jac.clone().lu().solve(&rhs) {
            if delta.iter().all(|v| v.is_finite()) {
                if let Some(cand) = trial_step(eval, problem, &rho, &delta)? {
                    best = Some(cand);
                }
            }
        }
        let contracted = best.as_ref().is_some_and(|(_, r)| *r <= 0.5 * sup);
        if !contracted {
            let svd = jac.clone().svd(true, true);
            if let Ok(delta) = svd.solve(&rhs, 1e-10 * jac.amax()) {
                if let Some(cand) = trial_step(eval, problem, &rho, &delta)? {
                    if best.as_ref().is_none_or(|(_, r)| cand.1 < *r) {
                        best = Some(cand);
                    }
                }
            }
        }
        match best {
            Some((next, _)) => rho = next,
            None => {
                return Err(Error::SingularJacobian { op: "cmc_solve" });
            }
        }
    }
    Err(Error::NoConvergence {
        op: "cmc_solve",
        iterations: problem.max_iter,
        residual: *residuals.last().unwrap_or(&f64::NAN),
    })
}

/// Initial round guess for a target mean curvature in the given spec.
pub fn round_initial_guess(
    spec: &AmbientMetricSpec,
    band_limit: usize,
    l: f64,
) -> Result<GraphSurface> {
    let r = round_radius_for_h(spec.mean_tau(), l)?;
    Ok(GraphSurface::round(band_limit, r))
}

/// Relative agreement between the analytic shape Jacobian and central
/// finite differences of the residual along deterministic band-limited
/// directions. Returns the worst relative l2 error.
pub fn jacobian_fd_agreement(
    eval: &AmbientEval,
    surf: &GraphSurface,
    l: f64,
    n_directions: usize,
    eps: f64,
) -> Result<f64> {
    let grid = eval.grid;
    let geom = geometry_of(eval, surf)?;
    let jac = shape_jacobian(grid, &geom)?;
    let rho = surf.rho_coeffs.resized(grid.band_limit());
    let mut worst: f64 = 0.0;
    for dir in 0..n_directions {
        let v = pseudo_random_coeffs(grid.band_limit(), 0x5EED + dir as u64, 1.0);
        let vnorm = (v.0.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let mut plus = rho.clone();
        let mut minus = rho.clone();
        for (i, (p, m)) in plus.0.iter_mut().zip(minus.0.iter_mut()).enumerate() {
            *p += eps * v.0[i] / vnorm;
            *m -= eps * v.0[i] / vnorm;
        }
        let rp = cmc_residual(eval, &GraphSurface { rho_coeffs: plus }, l)?;
        let rm = cmc_residual(eval, &GraphSurface { rho_coeffs: minus }, l)?;
        let mut fd = DVector::zeros(grid.n_coeffs());
        for i in 0..grid.n_coeffs() {
            fd[i] = (rp.0[i] - rm.0[i]) / (2.0 * eps);
        }
        let vn = DVector::from_column_slice(&v.0) / vnorm;
        let jv = &jac * vn;
        let err = (&jv - &fd).norm() / fd.norm().max(1e-300);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Deterministic xorshift-filled coefficient vector (test directions
/// and perturbed initial guesses).
pub fn pseudo_random_coeffs(band_limit: usize, seed: u64, scale: f64) -> CoeffVector {
    let mut state = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x1234_5678);
    let mut c = CoeffVector::zeros(band_limit);
    for v in c.0.iter_mut() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        *v = scale * ((state as f64 / u64::MAX as f64) - 0.5);
    }
    c
}

/// Solve the same problem from three initial guesses `amplitude` apart
/// in sup norm; returns the max pairwise sup-difference of the
/// converged radius fields.
pub fn uniqueness_probe(
    eval: &AmbientEval,
    problem: &CmcProblem,
    base_guess: &GraphSurface,
    amplitude: f64,
) -> Result<f64> {
    let grid = eval.grid;
    let mut solutions = Vec::new();
    for variant in 0..3u32 {
        let mut guess = base_guess.rho_coeffs.resized(grid.band_limit());
        match variant {
            0 => {}
            1 => {
                // sup |Y₁₀| = sqrt(3/4π)
                guess.0[coeff_index(1, 0, Component::Zonal)] +=
                    amplitude / (3.0 / (4.0 * PI)).sqrt();
            }
            _ => {
                // sup |√2 P̄₂₂ cos 2φ| = sqrt(15/16π)
                guess.0[coeff_index(2, 2, Component::Cos)] -=
                    amplitude / (15.0 / (16.0 * PI)).sqrt();
            }
        }
        let leaf = cmc_solve(eval, problem, &GraphSurface { rho_coeffs: guess })?;
        solutions.push(leaf.surface.values(grid)?);
    }
    let mut worst: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in (i + 1)..solutions.len() {
            let diff = solutions[i]
                .0
                .iter()
                .zip(&solutions[j].0)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            worst = worst.max(diff);
        }
    }
    Ok(worst)
}

/// Lapse of a leaf computed two ways: an elliptic solve of
/// `L φ = (|Σ|/4π) dH/dl` with `dH/dl = 1` by parametrization,
/// cross-checked against a finite difference of neighbouring leaves
/// projected on the normal.
pub fn lapse_of(
    eval: &AmbientEval,
    problem: &CmcProblem,
    leaf_surface: &GraphSurface,
    geom: &SurfaceGeometry,
    jm: &JacobiMatrix,
) -> Result<LapseData> {
    let grid = eval.grid;
    // Route (b): L φ = |Σ|/4π ⇔ P φ = 1 in weak form.
    let one_hat = DVector::from_column_slice(&CoeffVector::constant(grid.band_limit(), 1.0).0);
    let rhs = &jm.mass * one_hat;
    let phi_hat = jm
        .form
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularJacobian { op: "lapse_of" })?;
    let phi = grid.synthesis(&CoeffVector(phi_hat.as_slice().to_vec()))?;

    // Route (a): centered difference of surfaces in l.
    let dl = 1e-6;
    let mut fd_rel = f64::NAN;
    if problem.l - dl > 2.0 {
        let plus = cmc_solve(
            eval,
            &CmcProblem {
                l: problem.l + dl,
                ..*problem
            },
            leaf_surface,
        )?;
        let minus = cmc_solve(
            eval,
            &CmcProblem {
                l: problem.l - dl,
                ..*problem
            },
            leaf_surface,
        )?;
        let rp = plus.surface.values(grid)?;
        let rm = minus.surface.values(grid)?;
        let mut sup_diff: f64 = 0.0;
        let sup_phi = phi.sup_norm();
        for node in 0..grid.n_nodes() {
            let fd = geom.normal_radial.0[node] * (rp.0[node] - rm.0[node]) / (2.0 * dl);
            sup_diff = sup_diff.max((fd - phi.0[node]).abs());
        }
        fd_rel = sup_diff / sup_phi.max(1e-300);
    }

    let phi_mean = surface_average(grid, geom, &phi);
    let avg_term = 3.0 * eval.spec.mean_tau() / (2.0 * geom.r_hat.sinh());
    let barro = ((geom.area / (4.0 * PI)) / phi_mean + 2.0 - avg_term).abs();

    let (mut min_abs, mut max_abs) = (f64::INFINITY, 0.0f64);
    let mut positive = 0usize;
    for v in &phi.0 {
        min_abs = min_abs.min(v.abs());
        max_abs = max_abs.max(v.abs());
        if *v > 0.0 {
            positive += 1;
        }
    }
    let single_signed = positive == 0 || positive == phi.0.len();
    Ok(LapseData {
        phi,
        phi_mean,
        fd_cross_check: fd_rel,
        barro_residual: barro,
        single_signed,
        min_over_max: min_abs / max_abs.max(1e-300),
    })
}

/// Quantitative stability monitor: for `φ` solving `Lφ = α` constant,
/// the mean-zero fluctuation energy against
/// `e^{r̂} [φ̄ (−α − 2φ̄ + φ̄ avg(3τ/(2 sinh r̂))) + φ̄² e^{−2r̂}]`;
/// the quadratic allowance term is part of the bound being monitored.
#[derive(Clone, Copy, Debug)]
pub struct EnergyMonitor {
    pub fluctuation_energy: f64,
    /// `φ̄ (−α − 2φ̄ + φ̄ avg)` without the allowance.
    pub bracket: f64,
    /// Bracket including the `φ̄² e^{−2r̂}` allowance.
    pub padded_bracket: f64,
    pub ratio: f64,
}

pub fn prop_energy_monitor(
    grid: &GridS2,
    spec: &AmbientMetricSpec,
    geom: &SurfaceGeometry,
    jm: &JacobiMatrix,
    alpha_const: f64,
) -> Result<EnergyMonitor> {
    // L φ = α ⇔ P φ = α · 4π/|Σ|.
    let one_hat = DVector::from_column_slice(&CoeffVector::constant(grid.band_limit(), 1.0).0);
    let rhs = &jm.mass * one_hat * (alpha_const * 4.0 * PI / geom.area);
    let phi_hat = jm
        .form
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularJacobian {
            op: "prop_energy_monitor",
        })?;
    let phi = grid.synthesis(&CoeffVector(phi_hat.as_slice().to_vec()))?;
    let phi_mean = surface_average(grid, geom, &phi);
    let centered = ScalarField(phi.0.iter().map(|v| (v - phi_mean).powi(2)).collect());
    // dμ̂-average of (φ − φ̄)², equal to the dμ average.
    let energy = surface_integrate(grid, geom, &centered) / geom.area;
    let avg_term = 3.0 * spec.mean_tau() / (2.0 * geom.r_hat.sinh());
    let bracket = phi_mean * (-alpha_const - 2.0 * phi_mean + phi_mean * avg_term);
    let padded = bracket + phi_mean * phi_mean * (-2.0 * geom.r_hat).exp();
    let denom = geom.r_hat.exp() * padded;
    let ratio = if energy < 1e-13 * phi_mean * phi_mean {
        0.0
    } else {
        energy / denom
    };
    Ok(EnergyMonitor {
        fluctuation_energy: energy,
        bracket,
        padded_bracket: padded,
        ratio,
    })
}

/// One accepted continuation state.
pub struct ContinuationStep {
    pub t: f64,
    pub leaf: FoliationLeaf,
}

/// Continuity-method march from the rotationally symmetric endpoint at
/// `t = 0` to the target metric at `t = 1`, with warm starts and
/// adaptive halving; every accepted leaf must be strictly stable and
/// satisfy the hypothesis (A) monitor.
pub fn continuation_in_t(
    spec: &AmbientMetricSpec,
    grid: &GridS2,
    l: f64,
    t_steps: usize,
) -> Result<Vec<ContinuationStep>> {
    if !(l > 2.0 && l < 2.0 + DEFAULT_EPSILON0) {
        return Err(Error::Domain {
            op: "continuation_in_t",
            message: format!(
                "l = {l} outside the foliation range (2, {})",
                2.0 + DEFAULT_EPSILON0
            ),
        });
    }
    let problem = CmcProblem::new(l)?;
    // Exact round solution of the t = 0 endpoint (mass aspect ≡ 2).
    let r0 = round_radius_for_h(2.0, l)?;
    let mut guess = GraphSurface::round(grid.band_limit(), r0);

    let mut steps = Vec::new();
    let spec0 = spec.family_member(0.0)?;
    let eval0 = AmbientEval::new(&spec0, grid)?;
    let leaf0 = cmc_solve(&eval0, &problem, &guess)?;
    guess = leaf0.surface.clone();
    steps.push(ContinuationStep { t: 0.0, leaf: leaf0 });

    let base_dt = 1.0 / t_steps.max(1) as f64;
    let mut t = 0.0;
    let mut dt = base_dt;
    while t < 1.0 {
        if dt < 1e-4 {
            return Err(Error::StepUnderflow {
                step: dt,
                t,
                diagnostics: format!(
                    "{} accepted leaves, last r_hat {:.6}",
                    steps.len(),
                    steps.last().map(|s| s.leaf.r_hat).unwrap_or(f64::NAN)
                ),
            });
        }
        let t_next = (t + dt).min(1.0);
        let spec_t = spec.family_member(t_next)?;
        let eval_t = AmbientEval::new(&spec_t, grid)?;
        match cmc_solve(&eval_t, &problem, &guess) {
            Ok(leaf) if leaf.lowest_p_eigenvalue >= -1e-8 && leaf.hypothesis_a_ok => {
                guess = leaf.surface.clone();
                steps.push(ContinuationStep { t: t_next, leaf });
                t = t_next;
                dt = (dt * 2.0).min(base_dt);
            }
            Ok(_) | Err(Error::NoConvergence { .. }) | Err(Error::SingularJacobian { .. }) => {
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(steps)
}

/// Foliation sweep over descending `l`-values with lapse computation
/// and the foliation-property check.
pub fn foliation_sweep(
    spec: &AmbientMetricSpec,
    grid: &GridS2,
    l_values: &[f64],
) -> Result<Vec<FoliationLeaf>> {
    if l_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain {
            op: "foliation_sweep",
            message: "l-values must be strictly descending".into(),
        });
    }
    for &l in l_values {
        if !(l > 2.0 && l < 2.0 + DEFAULT_EPSILON0) {
            return Err(Error::Domain {
                op: "foliation_sweep",
                message: format!("l = {l} outside the foliation range"),
            });
        }
    }
    let eval = AmbientEval::new(spec, grid)?;
    let mut leaves: Vec<FoliationLeaf> = Vec::new();
    let mut guess: Option<GraphSurface> = None;
    for &l in l_values {
        let problem = CmcProblem::new(l)?;
        let initial = match &guess {
            Some(g) => g.clone(),
            None => round_initial_guess(spec, grid.band_limit(), l)?,
        };
        let mut leaf = cmc_solve(&eval, &problem, &initial)?;
        let jm = jacobi_operator(grid, &leaf.geometry);
        let lapse = lapse_of(&eval, &problem, &leaf.surface, &leaf.geometry, &jm)?;
        if !lapse.single_signed {
            return Err(Error::FoliationViolated { l });
        }
        guess = Some(leaf.surface.clone());
        leaf.lapse = Some(lapse);
        leaves.push(leaf);
    }
    Ok(leaves)
}

/// Strict nesting of a sweep: each leaf encloses the previous one.
pub fn sweep_is_nested(leaves: &[FoliationLeaf]) -> bool {
    leaves
        .windows(2)
        .all(|w| w[1].geometry.inner_radius > w[0].geometry.outer_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{expansion_mean_curvature, MassAspect};
    use approx::assert_abs_diff_eq;

    fn grid() -> GridS2 {
        GridS2::build(12).unwrap()
    }

    fn aniso_spec(band_limit: usize) -> AmbientMetricSpec {
        let mut coeffs = CoeffVector::constant(band_limit, 2.0);
        coeffs.0[coeff_index(2, 0, Component::Zonal)] = (PI / 5.0).sqrt();
        AmbientMetricSpec::rotationally_symmetric(band_limit, 0.0)
            .with_mass_aspect(MassAspect { coeffs })
    }

    #[test]
    fn hyperbolic_solve_recovers_exact_round_sphere() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let l = 2.0 * 3.0f64.cosh() / 3.0f64.sinh();
        let problem = CmcProblem::new(l).unwrap();
        let guess = GraphSurface::round(12, 2.8);
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        assert_abs_diff_eq!(leaf.r_hat, 3.0, epsilon = 1e-10);
        assert!(leaf.geometry.f.sup_norm() < 1e-10);
    }

    #[test]
    fn rejects_subcritical_mean_curvature() {
        assert!(CmcProblem::new(1.5).is_err());
        assert!(CmcProblem::with_tolerance(2.01, 1e-3, 10).is_err());
    }

    #[test]
    fn symmetric_leaf_matches_area_balance() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let problem = CmcProblem::new(2.01).unwrap();
        let guess = round_initial_guess(&spec, 12, 2.01).unwrap();
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        // |H − 2 − 4π/|Σ|| within an e^{-3r̂} envelope
        let defect = (problem.l - 2.0 - 4.0 * PI / leaf.geometry.area).abs();
        assert!(
            defect <= 30.0 * (-3.0 * leaf.r_hat).exp(),
            "defect {defect:.3e}"
        );
    }

    #[test]
    fn residual_of_translation_mode_is_second_order() {
        // At a CMC sphere in hyperbolic space a degree-1 graph change
        // moves the residual only at second order.
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let l = 2.0 * 3.0f64.cosh() / 3.0f64.sinh();
        let mut sups = Vec::new();
        for delta in [1e-3, 1e-4] {
            let mut c = CoeffVector::constant(12, 3.0);
            c.0[coeff_index(1, 0, Component::Zonal)] = delta;
            let res = cmc_residual(&eval, &GraphSurface { rho_coeffs: c }, l).unwrap();
            sups.push(res.sup_norm());
        }
        assert!(sups[0] / sups[1] > 50.0, "ratio {:.1}", sups[0] / sups[1]);
    }

    #[test]
    fn jacobi_eigenvalues_on_round_hyperbolic_sphere() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let r_hat = 3.0f64;
        let surf = GraphSurface::round(12, r_hat);
        let geom = geometry_of(&eval, &surf).unwrap();
        let jm = jacobi_operator(&g2, &geom);
        assert!(jm.symmetry_defect() < 1e-9 * jm.form.amax());

        // P on a degree-k harmonic: (k(k+1) − 2)/sinh² r̂; |A|²+Rc(ν,ν)
        // equals 2/sinh² r̂ there.
        let s2 = r_hat.sinh().powi(2);
        for (k, idx) in [
            (1usize, coeff_index(1, 0, Component::Zonal)),
            (2, coeff_index(2, 1, Component::Cos)),
            (4, coeff_index(4, 3, Component::Sin)),
        ] {
            let mut x = CoeffVector::zeros(12);
            x.0[idx] = 1.0;
            let px = jm.apply_p(&x).unwrap();
            let expect = (k * (k + 1)) as f64 - 2.0;
            assert_abs_diff_eq!(px.0[idx] * s2, expect, epsilon = 1e-8);
            // the normalized operator has eigenvalue k(k+1) − 2 exactly
            assert_abs_diff_eq!(px.0[idx] * jm.normalized_scale(), expect, epsilon = 1e-8);
        }
        let spectrum = stability_spectrum(&jm).unwrap();
        assert_abs_diff_eq!(spectrum.lowest_p, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn jacobi_matches_normal_graph_finite_differences() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let r_hat = 3.0f64;
        let surf = GraphSurface::round(12, r_hat);
        let geom = geometry_of(&eval, &surf).unwrap();
        let jm = jacobi_operator(&g2, &geom);

        let mut phi_hat = CoeffVector::zeros(12);
        phi_hat.0[coeff_index(2, 0, Component::Zonal)] = 1.0;
        let p_phi = jm.apply_p(&phi_hat).unwrap();
        let p_phi_field = g2.synthesis(&p_phi).unwrap();

        let mut errs = Vec::new();
        for delta in [1e-3, 1e-4] {
            // normal speed φ realized by graph speed φ/α (α = 1 here)
            let mut rho = CoeffVector::constant(12, r_hat);
            for (r, p) in rho.0.iter_mut().zip(&phi_hat.0) {
                *r += delta * p;
            }
            let pert = geometry_of(&eval, &GraphSurface { rho_coeffs: rho }).unwrap();
            let mut sup: f64 = 0.0;
            for node in 0..g2.n_nodes() {
                let fd = (pert.mean_curvature.0[node] - geom.mean_curvature.0[node]) / delta;
                sup = sup.max((fd - p_phi_field.0[node]).abs());
            }
            errs.push(sup);
        }
        // first-order convergence in the perturbation amplitude
        assert!(errs[0] / errs[1] > 5.0, "{errs:?}");
    }

    #[test]
    fn analytic_jacobian_agrees_with_finite_differences() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let problem = CmcProblem::new(2.02).unwrap();
        let guess = round_initial_guess(&spec, 12, 2.02).unwrap();
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        let worst = jacobian_fd_agreement(&eval, &leaf.surface, problem.l, 5, 1e-5).unwrap();
        assert!(worst < 1e-6, "relative disagreement {worst:.3e}");
    }

    #[test]
    fn anisotropic_leaf_is_stable_and_unique() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let problem = CmcProblem::new(2.02).unwrap();
        let guess = round_initial_guess(&spec, 12, 2.02).unwrap();
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        assert!(leaf.lowest_l_eigenvalue > 0.0);
        let spread = uniqueness_probe(&eval, &problem, &guess, 0.1).unwrap();
        assert!(spread < 1e-8, "solutions spread {spread:.3e}");
    }

    #[test]
    fn constant_family_continuation_is_constant() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let steps = continuation_in_t(&spec, &g2, 2.02, 4).unwrap();
        assert!(steps.len() >= 5);
        assert_abs_diff_eq!(steps.last().unwrap().t, 1.0, epsilon = 0.0);
        let first = steps.first().unwrap().leaf.r_hat;
        for s in &steps {
            assert_abs_diff_eq!(s.leaf.r_hat, first, epsilon = 1e-9);
        }
    }

    #[test]
    fn continuation_endpoint_matches_direct_solve() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let steps = continuation_in_t(&spec, &g2, 2.02, 5).unwrap();
        let endpoint = &steps.last().unwrap().leaf;
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let problem = CmcProblem::new(2.02).unwrap();
        let mut guess = round_initial_guess(&spec, 12, 2.02).unwrap();
        guess.rho_coeffs.0[coeff_index(2, 1, Component::Sin)] += 0.05;
        let direct = cmc_solve(&eval, &problem, &guess).unwrap();
        let a = endpoint.surface.values(&g2).unwrap();
        let b = direct.surface.values(&g2).unwrap();
        let sup = a
            .0
            .iter()
            .zip(&b.0)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        assert!(sup < 1e-8, "endpoint mismatch {sup:.3e}");
    }

    #[test]
    fn sweep_produces_nested_single_signed_foliation() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let leaves = foliation_sweep(&spec, &g2, &[2.02, 2.015, 2.01]).unwrap();
        assert_eq!(leaves.len(), 3);
        assert!(sweep_is_nested(&leaves));
        for leaf in &leaves {
            let lapse = leaf.lapse.as_ref().unwrap();
            assert!(lapse.single_signed);
            // a descending sweep moves outward: negative lapse
            assert!(lapse.phi_mean < 0.0);
            assert!(lapse.fd_cross_check < 1e-2);
            // rotationally symmetric leaves stay round coordinate spheres
            assert!(leaf.geometry.outer_radius - leaf.geometry.inner_radius < 1e-9);
        }
    }

    #[test]
    fn energy_monitor_is_bounded() {
        // The bracket carries an e^{-2r̂} φ̄² allowance, so the ratio is
        // only meaningful at radii inside the asymptotic regime.
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let l = expansion_mean_curvature(2.0, 4.5);
        let problem = CmcProblem::new(l).unwrap();
        let guess = GraphSurface::round(12, 4.5);
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        let jm = jacobi_operator(&g2, &leaf.geometry);
        let monitor = prop_energy_monitor(&g2, &spec, &leaf.geometry, &jm, 1.0).unwrap();
        assert!(monitor.ratio.is_finite());
        assert!(
            monitor.padded_bracket > 0.0,
            "padded bracket {} energy {}",
            monitor.padded_bracket,
            monitor.fluctuation_energy
        );
        assert!(
            (0.0..100.0).contains(&monitor.ratio),
            "ratio {}",
            monitor.ratio
        );
    }

    #[test]
    fn expansion_targets_land_near_requested_radius() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let target = 4.0;
        let l = expansion_mean_curvature(2.0, target);
        let problem = CmcProblem::new(l).unwrap();
        let guess = GraphSurface::round(12, target);
        let leaf = cmc_solve(&eval, &problem, &guess).unwrap();
        assert!((leaf.r_hat - target).abs() < 1e-4);
    }
}
