//! Every in-scope estimate turned into a computed residual or a fitted
//! decay exponent: ball fit in the Poincaré model, drift estimate,
//! per-leaf identity residuals and report assembly.
//!
//! Decay claims of the form `O(exp(−k r̲))` carry existential
//! constants, so they are verified as fitted log-linear exponents with
//! fixed slack rather than as absolute values. Quantities that vanish
//! identically on rotationally symmetric specs (where a log fit would
//! measure roundoff noise) pass through an explicit exactness floor
//! and are marked as floored.

use crate::ambient::{
    coordinate_sphere_h, curvature, expansion_mean_curvature, level_set_mean_curvature,
    AmbientEval, AmbientMetricSpec,
};
use crate::conformal::{kw_residual, NormalizedMetricInput, Uniformizer};
use crate::error::{Error, Result};
use crate::s2grid::{GridS2, ScalarField};
use crate::solver::{
    cmc_solve, jacobi_operator, lapse_of, round_initial_guess, CmcProblem, FoliationLeaf,
};
use crate::surface::{surface_integrate, surface_laplacian, GraphSurface};
use std::f64::consts::PI;

/// Values at or below this threshold satisfy any decay claim by
/// exactness; fitting a slope through roundoff noise is meaningless.
pub const EXACTNESS_FLOOR: f64 = 1e-11;

/// Fit tolerance slack applied to every expected decay exponent.
pub const EXPONENT_SLACK: f64 = 0.3;

/// Least-squares slope of `ln(value)` against `r̂`, negated.
pub fn decay_fit(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::Domain {
            op: "decay_fit",
            message: format!("need at least 3 samples, got {}", samples.len()),
        });
    }
    if samples.iter().any(|(_, v)| *v <= 0.0) {
        return Err(Error::Domain {
            op: "decay_fit",
            message: "samples must be positive".into(),
        });
    }
    let n = samples.len() as f64;
    let sx: f64 = samples.iter().map(|(r, _)| r).sum();
    let sy: f64 = samples.iter().map(|(_, v)| v.ln()).sum();
    let sxx: f64 = samples.iter().map(|(r, _)| r * r).sum();
    let sxy: f64 = samples.iter().map(|(r, v)| r * v.ln()).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(-slope)
}

/// Best-fit Euclidean sphere of the surface mapped to the unit-ball
/// model via `x = tanh(ρ/2) θ`.
#[derive(Clone, Debug)]
pub struct BallFit {
    pub center: [f64; 3],
    pub radius: f64,
    pub sup_deviation: f64,
    /// Euclidean area of the embedded image.
    pub euclidean_area: f64,
    /// Consistency diagnostic: sup of
    /// `|dH²/dμ · (2/(1−|x|²))² − 1|`, the measure-conversion defect.
    pub measure_ratio_sup: f64,
}

/// Map a graph surface to the unit-ball model and fit the round sphere
/// through the area, centroid and sup-deviation of the image.
pub fn ball_fit(
    grid: &GridS2,
    surf: &GraphSurface,
    geom_area_density: Option<&ScalarField>,
) -> Result<BallFit> {
    let rho_coeffs = surf.rho_coeffs.resized(grid.band_limit());
    let jets = grid.jet(&rho_coeffs, 1)?;
    let n = grid.n_nodes();
    let mut embed = vec![[0.0; 3]; n];
    let mut density = vec![0.0; n];
    let mut ratio_sup: f64 = 0.0;
    for node in 0..n {
        let (theta, phi) = grid.node_angles(node);
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        let p = [st * cp, st * sp, ct];
        let e1 = [ct * cp, ct * sp, -st];
        let e2 = [-sp, cp, 0.0];
        let rho = jets[node].v;
        let half = 0.5 * rho;
        let t = half.tanh();
        let dt = 0.5 / (half.cosh() * half.cosh());
        for i in 0..3 {
            embed[node][i] = t * p[i];
        }
        // ∂_ϑ E = ρ_ϑ dt p + t e_ϑ ; ∂_φ E = ρ_φ dt p + t sinϑ e_φ
        let mut d1 = [0.0; 3];
        let mut d2 = [0.0; 3];
        for i in 0..3 {
            d1[i] = jets[node].dt * dt * p[i] + t * e1[i];
            d2[i] = jets[node].dp * dt * p[i] + t * st * e2[i];
        }
        let m11 = d1.iter().map(|v| v * v).sum::<f64>();
        let m22 = d2.iter().map(|v| v * v).sum::<f64>();
        let m12 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum::<f64>();
        let det = m11 * m22 - m12 * m12;
        density[node] = det.sqrt() / st;
        if let Some(g_density) = geom_area_density {
            let conv = (1.0 - t * t) / 2.0;
            let ratio = density[node] / (g_density.0[node] * conv * conv);
            ratio_sup = ratio_sup.max((ratio - 1.0).abs());
        }
    }
    let mut area = 0.0;
    let mut center = [0.0; 3];
    for node in 0..n {
        let w = grid.node_weights()[node] * density[node];
        area += w;
        for i in 0..3 {
            center[i] += w * embed[node][i];
        }
    }
    for c in center.iter_mut() {
        *c /= area;
    }
    let radius = (area / (4.0 * PI)).sqrt();
    let mut dev: f64 = 0.0;
    for e in &embed {
        let d = ((e[0] - center[0]).powi(2)
            + (e[1] - center[1]).powi(2)
            + (e[2] - center[2]).powi(2))
        .sqrt();
        dev = dev.max((d - radius).abs());
    }
    Ok(BallFit {
        center,
        radius,
        sup_deviation: dev,
        euclidean_area: area,
        measure_ratio_sup: ratio_sup,
    })
}

/// Hyperbolic displacement of the origin under the translation taking
/// `0` to the ball-model centroid: `2 artanh|a⃗|`. The group metric on
/// isometries is not pinned upstream; this origin-displacement choice
/// is recorded in the report metadata.
pub fn drift_estimate(fit: &BallFit) -> Result<f64> {
    let norm = (fit.center[0].powi(2) + fit.center[1].powi(2) + fit.center[2].powi(2)).sqrt();
    if norm >= 1.0 {
        return Err(Error::Domain {
            op: "drift_estimate",
            message: format!("centroid outside the ball model (|a| = {norm})"),
        });
    }
    Ok(2.0 * norm.atanh())
}

/// Named residuals of one converged leaf.
#[derive(Clone, Debug)]
pub struct LeafEstimates {
    pub r_hat: f64,
    pub area: f64,
    /// `|H² − 4 − 16π/|Σ||`.
    pub lemma41: f64,
    /// `|∫ e^{−2s} dμ − π|`.
    pub prop42i: f64,
    /// `∫ (1 − ⟨∂_s, ν⟩)² dμ`.
    pub prop42ii: f64,
    /// `∫ |∂_s^⊤|² dμ`.
    pub prop42iii: f64,
    /// Sup of the detailed Laplace-comparison residual.
    pub prop33_sup: f64,
    /// Sup of the Gauss-equation cross-check.
    pub gauss_eq_sup: f64,
    /// `sup |w| = sup |ρ − r̂|`.
    pub w_sup: f64,
    /// `∫ |Å|² dμ`.
    pub ring_a_l2: f64,
    /// `sup |Å|²`.
    pub ring_a_sup: f64,
}

/// Compute each named residual exactly as the difference between the
/// two sides of the corresponding display, with `s` read in the fixed
/// centered coordinate system.
pub fn identity_residuals(eval: &AmbientEval, leaf: &FoliationLeaf) -> Result<LeafEstimates> {
    let grid = eval.grid;
    let geom = &leaf.geometry;
    let h = leaf.l;

    let lemma41 = (h * h - 4.0 - 16.0 * PI / geom.area).abs();

    let exp_field = ScalarField(geom.rho.0.iter().map(|r| (-2.0 * r).exp()).collect());
    let prop42i = (surface_integrate(grid, geom, &exp_field) - PI).abs();

    let align = ScalarField(
        geom.normal_radial
            .0
            .iter()
            .map(|a| (1.0 - a) * (1.0 - a))
            .collect(),
    );
    let prop42ii = surface_integrate(grid, geom, &align);
    let prop42iii = surface_integrate(grid, geom, &geom.radial_tangent_sq);

    // Detailed display: Δ_Σ s = H(s) − H + (H−2)(1−⟨∂_s,ν⟩)
    //   + (1−⟨∂_s,ν⟩)² − 2|∂_s^⊤|² e^{−2s} + (remainder).
    let lap_s = surface_laplacian(grid, geom, &geom.rho)?;
    let mut prop33_sup: f64 = 0.0;
    for node in 0..grid.n_nodes() {
        let rho = geom.rho.0[node];
        let jet = eval.metric_jet(node, rho)?;
        let h_coord = level_set_mean_curvature(&jet);
        let a = geom.normal_radial.0[node];
        let rhs = h_coord - h + (h - 2.0) * (1.0 - a) + (1.0 - a) * (1.0 - a)
            - 2.0 * geom.radial_tangent_sq.0[node] * (-2.0 * rho).exp();
        prop33_sup = prop33_sup.max((lap_s.0[node] - rhs).abs());
    }

    let mut gauss_eq_sup: f64 = 0.0;
    for node in 0..grid.n_nodes() {
        gauss_eq_sup = gauss_eq_sup
            .max((geom.gauss_intrinsic.0[node] - geom.gauss_from_ambient.0[node]).abs());
    }

    let ring_a_l2 = surface_integrate(grid, geom, &geom.ring_a_sq);
    let ring_a_sup = geom.ring_a_sq.sup_norm();

    Ok(LeafEstimates {
        r_hat: geom.r_hat,
        area: geom.area,
        lemma41,
        prop42i,
        prop42ii,
        prop42iii,
        prop33_sup,
        gauss_eq_sup,
        w_sup: geom.f.sup_norm(),
        ring_a_l2,
        ring_a_sup,
    })
}

/// Pass rule of a report entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PassRule {
    /// Fitted decay exponent at least this value (after slack).
    MinExponent(f64),
    /// Every recorded value at most this threshold.
    MaxValue(f64),
    /// Recorded, always passing.
    Monitor,
}

/// One named estimate with its samples and verdict.
#[derive(Clone, Debug)]
pub struct EstimateEntry {
    pub name: &'static str,
    /// `(abscissa, value)` samples; the abscissa is `r̂` for leaf-based
    /// entries and the coordinate radius for ambient sweeps.
    pub values: Vec<(f64, f64)>,
    pub rule: PassRule,
    pub fitted_exponent: Option<f64>,
    pub pass: bool,
    /// Passed through the exactness floor rather than a slope fit.
    pub floored: bool,
}

fn evaluate_entry(name: &'static str, values: Vec<(f64, f64)>, rule: PassRule) -> EstimateEntry {
    let mut fitted = None;
    let mut floored = false;
    let pass = match rule {
        PassRule::MinExponent(expected) => {
            let max = values.iter().fold(0.0f64, |a, (_, v)| a.max(v.abs()));
            if max <= EXACTNESS_FLOOR {
                floored = true;
                true
            } else if values.iter().all(|(_, v)| *v > 0.0) {
                match decay_fit(&values) {
                    Ok(e) => {
                        fitted = Some(e);
                        e >= expected
                    }
                    Err(_) => false,
                }
            } else {
                false
            }
        }
        PassRule::MaxValue(bound) => values.iter().all(|(_, v)| v.abs() <= bound),
        PassRule::Monitor => true,
    };
    EstimateEntry {
        name,
        values,
        rule,
        fitted_exponent: fitted,
        pass,
        floored,
    }
}

/// The assembled report: every named estimate present.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub label: String,
    pub entries: Vec<EstimateEntry>,
}

impl EstimateReport {
    pub fn entry(&self, name: &str) -> Option<&EstimateEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// Flat `name → entry` document, 17 significant digits,
    /// deterministic ordering.
    pub fn render_flat(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("label = {}\n", self.label));
        out.push_str("drift_metric = hyperbolic displacement of the origin, 2*artanh|a|\n");
        for e in &self.entries {
            out.push_str(&format!("[{}]\n", e.name));
            out.push_str(&format!("pass = {}\n", e.pass));
            out.push_str(&format!("floored = {}\n", e.floored));
            match e.rule {
                PassRule::MinExponent(x) => {
                    out.push_str(&format!("expected_exponent = {:.16e}\n", x))
                }
                PassRule::MaxValue(x) => out.push_str(&format!("max_value = {:.16e}\n", x)),
                PassRule::Monitor => out.push_str("monitor = true\n"),
            }
            if let Some(f) = e.fitted_exponent {
                out.push_str(&format!("fitted_exponent = {:.16e}\n", f));
            }
            for (r, v) in &e.values {
                out.push_str(&format!("value at {:.16e} = {:.16e}\n", r, v));
            }
        }
        out
    }

    /// Comma-separated table, one row per sample per estimate.
    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "label,estimate,abscissa,value,fitted_exponent,expected_exponent,pass,floored\n",
        );
        for e in &self.entries {
            let (fit, expect) = match (e.fitted_exponent, e.rule) {
                (Some(f), PassRule::MinExponent(x)) => {
                    (format!("{:.16e}", f), format!("{:.16e}", x))
                }
                (None, PassRule::MinExponent(x)) => (String::new(), format!("{:.16e}", x)),
                _ => (String::new(), String::new()),
            };
            for (r, v) in &e.values {
                out.push_str(&format!(
                    "{},{},{:.16e},{:.16e},{},{},{},{}\n",
                    self.label, e.name, r, v, fit, expect, e.pass, e.floored
                ));
            }
        }
        out
    }
}

/// Verification driver settings.
#[derive(Clone, Debug)]
pub struct VerifySettings {
    /// Area radii the leaves are steered to (via `l` from the two-term
    /// expansion).
    pub r_hat_values: Vec<f64>,
    /// Coordinate radii of the ambient curvature sweeps.
    pub ambient_radii: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Worker threads for independent leaf solves.
    pub threads: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            r_hat_values: vec![4.0, 5.0, 6.0],
            ambient_radii: vec![3.0, 4.0, 5.0, 6.0],
            tol: 1e-11,
            max_iter: 30,
            threads: 1,
        }
    }
}

/// Everything computed for one leaf of the verification matrix.
pub struct VerifiedLeaf {
    pub leaf: FoliationLeaf,
    pub estimates: LeafEstimates,
    pub ball: BallFit,
    pub drift: f64,
    pub sup_beta: f64,
    pub grad_beta_energy: f64,
    pub gauge_sup: f64,
    pub kw_sup: f64,
    pub barro_residual: f64,
    pub lapse_single_signed: bool,
    pub lapse_min_over_max: f64,
}

/// Solve the leaves of the verification matrix; independent solves may
/// run on worker threads, results come back in input order.
pub fn solve_verification_leaves(
    spec: &AmbientMetricSpec,
    grid: &GridS2,
    settings: &VerifySettings,
) -> Result<Vec<FoliationLeaf>> {
    let tau_mean = spec.mean_tau();
    let solve_one = |r_hat: f64| -> Result<FoliationLeaf> {
        let eval = AmbientEval::new(spec, grid)?;
        let l = expansion_mean_curvature(tau_mean, r_hat);
        let problem = CmcProblem::with_tolerance(l, settings.tol, settings.max_iter)?;
        let guess = round_initial_guess(spec, grid.band_limit(), l)?;
        cmc_solve(&eval, &problem, &guess)
    };
    if settings.threads <= 1 || settings.r_hat_values.len() <= 1 {
        settings.r_hat_values.iter().map(|r| solve_one(*r)).collect()
    } else {
        let mut out: Vec<Option<Result<FoliationLeaf>>> =
            (0..settings.r_hat_values.len()).map(|_| None).collect();
        let chunk = settings.threads;
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (i, r) in settings.r_hat_values.iter().enumerate() {
                handles.push((i, scope.spawn(move || solve_one(*r))));
                if handles.len() == chunk {
                    for (idx, h) in handles.drain(..) {
                        out[idx] = Some(h.join().expect("leaf solver thread"));
                    }
                }
            }
            for (idx, h) in handles.drain(..) {
                out[idx] = Some(h.join().expect("leaf solver thread"));
            }
        });
        out.into_iter().map(|o| o.expect("filled slot")).collect()
    }
}

/// Run the full estimate matrix for one spec.
pub fn run_estimates(
    spec: &AmbientMetricSpec,
    grid: &GridS2,
    uni: &Uniformizer,
    settings: &VerifySettings,
    label: &str,
) -> Result<EstimateReport> {
    let eval = AmbientEval::new(spec, grid)?;
    let tau_field = grid.synthesis(&spec.effective_tau().resized(grid.band_limit()))?;

    // Ambient curvature sweeps.
    let mut scalar_sup = Vec::new();
    let mut h_expansion_sup = Vec::new();
    for &r in &settings.ambient_radii {
        let mut sup_r: f64 = 0.0;
        for node in 0..grid.n_nodes() {
            let jet = eval.metric_jet(node, r)?;
            let (_, scalar) = curvature(&jet);
            sup_r = sup_r.max((scalar + 6.0).abs());
        }
        scalar_sup.push((r, sup_r));
        let h_field = coordinate_sphere_h(&eval, r)?;
        let mut sup_h: f64 = 0.0;
        for (node, h) in h_field.0.iter().enumerate() {
            sup_h = sup_h.max((h - expansion_mean_curvature(tau_field.0[node], r)).abs());
        }
        h_expansion_sup.push((r, sup_h));
    }

    // Leaves of the matrix.
    let leaves = solve_verification_leaves(spec, grid, settings)?;
    let mut verified = Vec::new();
    for leaf in leaves {
        let v = verify_leaf(&eval, grid, uni, leaf, settings)?;
        verified.push(v);
    }

    Ok(assemble_report(label, scalar_sup, h_expansion_sup, &verified))
}

/// Per-leaf verification work shared by the driver and the front end.
pub fn verify_leaf(
    eval: &AmbientEval,
    grid: &GridS2,
    uni: &Uniformizer,
    leaf: FoliationLeaf,
    settings: &VerifySettings,
) -> Result<VerifiedLeaf> {
    let estimates = identity_residuals(eval, &leaf)?;
    let ball = ball_fit(grid, &leaf.surface, Some(&leaf.geometry.area_density))?;
    let drift = drift_estimate(&ball)?;

    let input = NormalizedMetricInput::from_geometry(&leaf.geometry);
    let unif = uni.uniformize(&input)?;
    let gauge_sup = unif
        .gauge_moments
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let kw = kw_residual(grid, &unif)?;
    let kw_sup = kw.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let jm = jacobi_operator(grid, &leaf.geometry);
    let problem = CmcProblem::with_tolerance(leaf.l, settings.tol, settings.max_iter)?;
    let lapse = lapse_of(eval, &problem, &leaf.surface, &leaf.geometry, &jm)?;

    Ok(VerifiedLeaf {
        estimates,
        ball,
        drift,
        sup_beta: unif.sup_beta,
        grad_beta_energy: unif.grad_beta_energy,
        gauge_sup,
        kw_sup,
        barro_residual: lapse.barro_residual,
        lapse_single_signed: lapse.single_signed,
        lapse_min_over_max: lapse.min_over_max,
        leaf,
    })
}

fn assemble_report(
    label: &str,
    scalar_sup: Vec<(f64, f64)>,
    h_expansion_sup: Vec<(f64, f64)>,
    verified: &[VerifiedLeaf],
) -> EstimateReport {
    let by_leaf = |f: &dyn Fn(&VerifiedLeaf) -> f64| -> Vec<(f64, f64)> {
        verified.iter().map(|v| (v.estimates.r_hat, f(v))).collect()
    };
    let mut entries = Vec::new();
    entries.push(evaluate_entry(
        "lemma31i_H_expansion",
        h_expansion_sup,
        PassRule::MinExponent(4.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "lemma31iii_scalar",
        scalar_sup,
        PassRule::MinExponent(4.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "lemma41_H_identity",
        by_leaf(&|v| v.estimates.lemma41),
        PassRule::MinExponent(3.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "prop42i_exp_integral",
        by_leaf(&|v| v.estimates.prop42i),
        PassRule::MinExponent(1.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "prop42ii_normal_alignment",
        by_leaf(&|v| v.estimates.prop42ii),
        PassRule::MinExponent(1.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "prop42iii_radial_tangent",
        by_leaf(&|v| v.estimates.prop42iii),
        PassRule::MaxValue(10.0),
    ));
    entries.push(evaluate_entry(
        "prop44_ringA_L2",
        by_leaf(&|v| v.estimates.ring_a_l2),
        PassRule::MinExponent(4.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "thm52_ringA_sup",
        by_leaf(&|v| v.estimates.ring_a_sup),
        PassRule::MinExponent(4.0 - EXPONENT_SLACK),
    ));
    let beta_entry = {
        let mut e = evaluate_entry(
            "thm51_beta_sup",
            by_leaf(&|v| v.sup_beta),
            PassRule::MinExponent(1.0 - EXPONENT_SLACK),
        );
        // gauge condition folded into the pass verdict
        let gauge_ok = verified.iter().all(|v| v.gauge_sup <= 1e-8);
        e.pass = e.pass && gauge_ok;
        e
    };
    entries.push(beta_entry);
    entries.push(evaluate_entry(
        "thm61_ball_fit",
        by_leaf(&|v| v.ball.sup_deviation),
        PassRule::MinExponent(2.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "thm71_w_sup",
        by_leaf(&|v| v.estimates.w_sup),
        PassRule::MinExponent(1.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "thm71_radial_tangent_L2",
        by_leaf(&|v| v.estimates.prop42iii),
        PassRule::MinExponent(2.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "kw_residual",
        by_leaf(&|v| v.kw_sup),
        PassRule::MaxValue(1e-6),
    ));
    entries.push(evaluate_entry(
        "drift",
        by_leaf(&|v| v.drift),
        PassRule::MinExponent(1.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "barro_residual",
        by_leaf(&|v| v.barro_residual),
        PassRule::MinExponent(2.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "prop33_laplace_residual",
        by_leaf(&|v| v.estimates.prop33_sup),
        PassRule::MinExponent(3.0 - EXPONENT_SLACK),
    ));
    entries.push(evaluate_entry(
        "gauss_equation_residual",
        by_leaf(&|v| v.estimates.gauss_eq_sup),
        PassRule::MaxValue(1e-7),
    ));
    EstimateReport {
        label: label.to_string(),
        entries,
    }
}
