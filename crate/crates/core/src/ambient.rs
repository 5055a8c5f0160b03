//! The asymptotically hyperbolic metric family on the exterior chart
//! `(r, θ) ∈ [r₁, ∞) × S²`, its Christoffel symbols and curvature
//! tensors.
//!
//! The metric is `g = dr² + sinh²r g₀ + h/(3 sinh r) + Q` with the mass
//! term restricted to pure-trace form `h = (τ/2) g₀`, so the tangential
//! block is `(sinh²r + τ(θ)/(6 sinh r)) g₀ + Q`. Angular derivatives of
//! the components come from exact spherical-harmonic differentiation of
//! `τ` (and of the optional `Q` profile); radial derivatives are closed
//! form. Nothing in this module differentiates the metric numerically.
//!
//! Coordinate index order everywhere: `0 = r`, `1 = ϑ`, `2 = φ`.

use crate::error::{Error, Result};
use crate::s2grid::{coeff_index, AngularJet, CoeffVector, Component, GridS2, ScalarField};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Mat3 = [[f64; 3]; 3];

/// Hypothesis (H) constants, stored rather than assumed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HypothesisConstants {
    /// Decay constant of `Q` in Definition-style bounds.
    pub c1: f64,
    /// Bound on `|h|_{C³(S²)}` (sup of τ and its first three derivatives,
    /// computed spectrally; the norm convention is not pinned upstream).
    pub c2: f64,
    /// Positive lower bound on `tr_{g₀} h`.
    pub c3: f64,
    /// Outer-minus-inner radius bound for hypothesis (A).
    pub c4: f64,
}

impl Default for HypothesisConstants {
    fn default() -> Self {
        HypothesisConstants {
            c1: 1.0,
            c2: 10.0,
            c3: 0.5,
            c4: 1.0,
        }
    }
}

/// The scalar `τ(θ) = tr_{g₀} h` as real harmonic coefficients, with
/// the convention `h = (τ/2) g₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct MassAspect {
    pub coeffs: CoeffVector,
}

impl MassAspect {
    pub fn constant(band_limit: usize, value: f64) -> Self {
        MassAspect {
            coeffs: CoeffVector::constant(band_limit, value),
        }
    }

    pub fn band_limit(&self) -> usize {
        self.coeffs.band_limit()
    }

    /// Degree-1 coefficients, the obstruction to the centering condition.
    pub fn degree_one(&self) -> [f64; 3] {
        [
            self.coeffs.0[coeff_index(1, 0, Component::Zonal)],
            self.coeffs.0[coeff_index(1, 1, Component::Cos)],
            self.coeffs.0[coeff_index(1, 1, Component::Sin)],
        ]
    }

    /// Centered iff all degree-1 coefficients vanish to `tol`.
    pub fn is_centered(&self, tol: f64) -> bool {
        self.degree_one().iter().all(|c| c.abs() <= tol)
    }

    /// First moments `∫ x_i τ dμ₀` by quadrature (the centering
    /// condition verified independently of the coefficient view).
    pub fn moments(&self, grid: &GridS2) -> Result<[f64; 3]> {
        let tau = grid.synthesis(&self.coeffs.resized(grid.band_limit()))?;
        let mut m = [0.0; 3];
        for (node, (v, w)) in tau.0.iter().zip(grid.node_weights()).enumerate() {
            let p = grid.node_unit_vector(node);
            for (mi, pi) in m.iter_mut().zip(&p) {
                *mi += pi * v * w;
            }
        }
        Ok(m)
    }

    pub fn min_on_grid(&self, grid: &GridS2) -> Result<f64> {
        let tau = grid.synthesis(&self.coeffs.resized(grid.band_limit()))?;
        Ok(tau.0.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Sup of `|τ| + |∂τ| + |∂²τ| + |∂³τ|` over the grid in the
    /// orthonormal frame, standing in for `|h|_{C³(S²)}`.
    pub fn c3_norm(&self, grid: &GridS2) -> Result<f64> {
        let jets = grid.jet(&self.coeffs.resized(grid.band_limit()), 3)?;
        let mut sup: f64 = 0.0;
        for (node, j) in jets.iter().enumerate() {
            let is = 1.0 / grid.sin_colat(node);
            let d1 = j.dt.hypot(j.dp * is);
            let d2 =
                (j.dtt.powi(2) + 2.0 * (j.dtp * is).powi(2) + (j.dpp * is * is).powi(2)).sqrt();
            let d3 = (j.dttt.powi(2)
                + (j.dttp * is).powi(2)
                + (j.dtpp * is * is).powi(2)
                + (j.dppp * is * is * is).powi(2))
            .sqrt();
            sup = sup.max(j.v.abs() + d1 + d2 + d3);
        }
        Ok(sup)
    }
}

/// Which metric components carry the `Q` profile.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct QStructure {
    pub rr: bool,
    pub r_tangent: bool,
    pub tangent: bool,
}

/// Optional decay term of Definition-2.1 type: profile times `exp(−4r)`
/// in the orthonormal frame of the leading hyperbolic metric.
#[derive(Clone, Debug, PartialEq)]
pub struct QTerm {
    pub amplitude: f64,
    pub profile: CoeffVector,
    pub structure: QStructure,
}

/// Closed-form asymptotically hyperbolic metric: mass aspect, optional
/// Q-term, family parameter `t`, chart floor `r₁`, hypothesis constants.
#[derive(Clone, Debug)]
pub struct AmbientMetricSpec {
    pub mass_aspect: MassAspect,
    pub q_term: Option<QTerm>,
    /// Interpolation parameter of the metric family: the effective mass
    /// aspect is `t·τ + 2(1−t)` and `Q` is scaled by `t`.
    pub t: f64,
    pub r1: f64,
    pub constants: HypothesisConstants,
}

impl AmbientMetricSpec {
    /// Rotationally symmetric spec with constant mass aspect.
    pub fn rotationally_symmetric(band_limit: usize, tau: f64) -> Self {
        AmbientMetricSpec {
            mass_aspect: MassAspect::constant(band_limit, tau),
            q_term: None,
            t: 1.0,
            r1: 1.0,
            constants: HypothesisConstants::default(),
        }
    }

    /// Pure hyperbolic space (`τ ≡ 0`, `Q = 0`); does not satisfy (H)
    /// but is the exactness floor for every geometric computation.
    pub fn hyperbolic(band_limit: usize) -> Self {
        Self::rotationally_symmetric(band_limit, 0.0)
    }

    pub fn with_mass_aspect(mut self, aspect: MassAspect) -> Self {
        self.mass_aspect = aspect;
        self
    }

    /// Coefficients of the effective mass aspect `t·τ + 2(1−t)`.
    pub fn effective_tau(&self) -> CoeffVector {
        let mut c = self.mass_aspect.coeffs.clone();
        for v in c.0.iter_mut() {
            *v *= self.t;
        }
        c.0[0] += 2.0 * (1.0 - self.t) * (4.0 * PI).sqrt();
        c
    }

    pub fn effective_q_amplitude(&self) -> f64 {
        self.q_term.as_ref().map_or(0.0, |q| q.amplitude * self.t)
    }

    /// Mean of the effective mass aspect over S².
    pub fn mean_tau(&self) -> f64 {
        self.effective_tau().0[0] / (4.0 * PI).sqrt()
    }

    /// Member of the family `g^t` interpolating between the
    /// rotationally symmetric endpoint (`t = 0`, mass aspect ≡ 2,
    /// `Q = 0`) and this spec's data at `t = 1`.
    pub fn family_member(&self, t: f64) -> Result<AmbientMetricSpec> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                op: "family_metric",
                message: format!("family parameter must lie in [0, 1], got {t}"),
            });
        }
        let mut out = self.clone();
        out.t = t;
        Ok(out)
    }

    /// Hypothesis (H): `τ_eff ≥ C₃ > 0` at every grid node, `|h|_{C³}`
    /// within `C₂`, and the aspect centered (degree-1 moments vanish).
    pub fn check_hypothesis_h(&self, grid: &GridS2) -> Result<()> {
        let aspect = MassAspect {
            coeffs: self.effective_tau(),
        };
        let min = aspect.min_on_grid(grid)?;
        if min < self.constants.c3 {
            return Err(Error::Regime {
                op: "check_hypothesis_h",
                message: format!(
                    "tr h = {min:.6} dips below C₃ = {:.6} on the grid",
                    self.constants.c3
                ),
            });
        }
        let c3norm = aspect.c3_norm(grid)?;
        if c3norm > self.constants.c2 {
            return Err(Error::Regime {
                op: "check_hypothesis_h",
                message: format!(
                    "|h|_C3 = {c3norm:.6} exceeds C₂ = {:.6}",
                    self.constants.c2
                ),
            });
        }
        let m = aspect.moments(grid)?;
        let worst = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if worst > 1e-10 * (1.0 + aspect.coeffs.sup_norm()) {
            return Err(Error::Regime {
                op: "check_hypothesis_h",
                message: format!("mass aspect not centered, first moments {m:?}"),
            });
        }
        Ok(())
    }

    /// Sampled check of the decay bound `|Q| + |DQ| ≤ C₁ e^{−4r}`
    /// against the closed form, in the hyperbolic orthonormal frame.
    pub fn check_q_decay(&self, grid: &GridS2, radii: &[f64]) -> Result<()> {
        let Some(q) = &self.q_term else {
            return Ok(());
        };
        let jets = grid.jet(&q.profile.resized(grid.band_limit()), 1)?;
        let amp = self.effective_q_amplitude().abs();
        for &r in radii {
            for (node, j) in jets.iter().enumerate() {
                let is = 1.0 / grid.sin_colat(node);
                let frame_sup = j.v.abs() + j.dt.abs() + (j.dp * is).abs();
                let bound = self.constants.c1 * (-4.0 * r).exp();
                // profile plus one angular and one radial derivative
                let q_norm = amp * (-4.0 * r).exp() * (frame_sup + 4.0 * j.v.abs());
                if q_norm > bound {
                    return Err(Error::Regime {
                        op: "check_q_decay",
                        message: format!(
                            "|Q| + |DQ| = {q_norm:.3e} exceeds C1 e^(-4r) = {bound:.3e} at r = {r}"
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-node angular data of a spec bound to a grid: jets of the
/// effective mass aspect and of the Q profile. The radial dependence of
/// the metric stays closed-form, so this is all the angular caching the
/// evaluators need.
pub struct AmbientEval<'a> {
    pub spec: &'a AmbientMetricSpec,
    pub grid: &'a GridS2,
    tau: Vec<AngularJet>,
    qp: Vec<AngularJet>,
    q_amplitude: f64,
    q_structure: QStructure,
}

impl<'a> AmbientEval<'a> {
    pub fn new(spec: &'a AmbientMetricSpec, grid: &'a GridS2) -> Result<Self> {
        let tau = grid.jet(&spec.effective_tau().resized(grid.band_limit()), 2)?;
        let (qp, q_amplitude, q_structure) = match &spec.q_term {
            Some(q) => (
                grid.jet(&q.profile.resized(grid.band_limit()), 2)?,
                spec.effective_q_amplitude(),
                q.structure,
            ),
            None => (
                vec![AngularJet::default(); grid.n_nodes()],
                0.0,
                QStructure::default(),
            ),
        };
        Ok(AmbientEval {
            spec,
            grid,
            tau,
            qp,
            q_amplitude,
            q_structure,
        })
    }

    pub fn tau_jet(&self, node: usize) -> &AngularJet {
        &self.tau[node]
    }

    /// Full second-order metric jet at `(r, node)`.
    pub fn metric_jet(&self, node: usize, r: f64) -> Result<MetricJet> {
        guard_radius(self.spec, r, "metric_at")?;
        let st = self.grid.sin_colat(node);
        let ct = self.grid.cos_colat(node);
        Ok(metric_jet_from_parts(
            r,
            st,
            ct,
            &self.tau[node],
            &self.qp[node],
            self.q_amplitude,
            self.q_structure,
        ))
    }

    /// Metric jet at an arbitrary chart point.
    pub fn metric_jet_at(&self, r: f64, theta: f64, phi: f64) -> Result<MetricJet> {
        guard_radius(self.spec, r, "metric_at")?;
        let tau = self.grid.eval_jet_at(
            &self.spec.effective_tau().resized(self.grid.band_limit()),
            theta,
            phi,
            2,
        );
        let qp = match &self.spec.q_term {
            Some(q) => self
                .grid
                .eval_jet_at(&q.profile.resized(self.grid.band_limit()), theta, phi, 2),
            None => AngularJet::default(),
        };
        Ok(metric_jet_from_parts(
            r,
            theta.sin(),
            theta.cos(),
            &tau,
            &qp,
            self.q_amplitude,
            self.q_structure,
        ))
    }
}

fn guard_radius(spec: &AmbientMetricSpec, r: f64, op: &'static str) -> Result<()> {
    if r < spec.r1 {
        return Err(Error::Domain {
            op,
            message: format!("interior region not modeled: r = {r} < r1 = {}", spec.r1),
        });
    }
    Ok(())
}

/// Metric components and their first two derivatives at one point.
/// `d[μ][i][j] = ∂_μ g_ij`, `dd[μ][ν][i][j] = ∂_μ ∂_ν g_ij`.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: Mat3,
    pub ginv: Mat3,
    pub d: [Mat3; 3],
    pub dd: [[Mat3; 3]; 3],
}

impl MetricJet {
    /// `∂_μ g^{ij} = −g^{ik} ∂_μ g_kl g^{lj}`.
    pub fn dinv(&self, mu: usize) -> Mat3 {
        let tmp = mat_mul(&self.ginv, &self.d[mu]);
        neg(&mat_mul(&tmp, &self.ginv))
    }

    /// `∂_μ ∂_ν g^{ij}` from the first/second derivatives of `g`.
    pub fn ddinv(&self, mu: usize, nu: usize) -> Mat3 {
        let dnu_inv = self.dinv(nu);
        let t1 = mat_mul(&mat_mul(&dnu_inv, &self.d[mu]), &self.ginv);
        let t2 = mat_mul(&mat_mul(&self.ginv, &self.dd[mu][nu]), &self.ginv);
        let t3 = mat_mul(&mat_mul(&self.ginv, &self.d[mu]), &dnu_inv);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = -(t1[i][j] + t2[i][j] + t3[i][j]);
            }
        }
        out
    }
}

/// Components of the ambient metric at a point with first derivatives;
/// the public face of `metric_at`.
#[derive(Clone, Debug)]
pub struct MetricAt {
    pub g: Mat3,
    pub g_inv: Mat3,
    pub dg_dr: Mat3,
    pub dg_dtheta: Mat3,
    pub dg_dphi: Mat3,
}

impl From<&MetricJet> for MetricAt {
    fn from(j: &MetricJet) -> Self {
        MetricAt {
            g: j.g,
            g_inv: j.ginv,
            dg_dr: j.d[0],
            dg_dtheta: j.d[1],
            dg_dphi: j.d[2],
        }
    }
}

fn metric_jet_from_parts(
    r: f64,
    sin_t: f64,
    cos_t: f64,
    tau: &AngularJet,
    qp: &AngularJet,
    q_amp: f64,
    q_structure: QStructure,
) -> MetricJet {
    let s = r.sinh();
    let c = r.cosh();
    let e4 = (-4.0 * r).exp();

    // Radial profiles with two derivatives.
    let f1 = [s * s, 2.0 * s * c, 2.0 * (c * c + s * s)];
    let f2 = [
        1.0 / (6.0 * s),
        -c / (6.0 * s * s),
        (2.0 * c * c / (s * s * s) - 1.0 / s) / 6.0,
    ];
    // Q profiles: frame scalings for rr / r-tangent / tangent-tangent.
    let q0 = [e4, -4.0 * e4, 16.0 * e4];
    let q1 = [e4 * s, e4 * (c - 4.0 * s), e4 * (17.0 * s - 8.0 * c)];
    let q2 = [
        e4 * s * s,
        e4 * (2.0 * s * c - 4.0 * s * s),
        e4 * (18.0 * s * s - 16.0 * s * c + 2.0 * c * c),
    ];

    let a_rr = if q_structure.rr { q_amp } else { 0.0 };
    let a_rt = if q_structure.r_tangent { q_amp } else { 0.0 };
    let a_tt = if q_structure.tangent { q_amp } else { 0.0 };

    let zero3 = [0.0, 0.0, 0.0];
    // W = sinh²r + τ f₂ + a_tt p q₂, the tangent-block scalar.
    let wj = scalar_jet(&f1, &f2, tau, a_tt, &q2, qp);
    // rr component 1 + a_rr p q₀ (no τ dependence).
    let rj = scalar_jet(&[1.0, 0.0, 0.0], &zero3, &AngularJet::default(), a_rr, &q0, qp);
    // r-tangent scalar a_rt p q₁.
    let uj = scalar_jet(&zero3, &zero3, &AngularJet::default(), a_rt, &q1, qp);

    let s1 = [sin_t, cos_t, -sin_t];
    let s2 = [
        sin_t * sin_t,
        2.0 * sin_t * cos_t,
        2.0 * (cos_t * cos_t - sin_t * sin_t),
    ];

    let mut g = [[0.0; 3]; 3];
    let mut d = [[[0.0; 3]; 3]; 3];
    let mut dd = [[[[0.0; 3]; 3]; 3]; 3];

    set_component(&mut g, &mut d, &mut dd, 0, 0, &rj, None);
    set_component(&mut g, &mut d, &mut dd, 0, 1, &uj, None);
    set_component(&mut g, &mut d, &mut dd, 0, 2, &uj, Some(&s1));
    set_component(&mut g, &mut d, &mut dd, 1, 1, &wj, None);
    // g_ϑφ = 0 for the pure-trace tangent block
    set_component(&mut g, &mut d, &mut dd, 2, 2, &wj, Some(&s2));

    let ginv = mat3_inverse(&g);
    MetricJet { g, ginv, d, dd }
}

/// Jet of `base(r) + τ(θ) f₂(r) + a p(θ) q(r)` in the 10-slot layout
/// `(v, ∂r, ∂ϑ, ∂φ, ∂rr, ∂rϑ, ∂rφ, ∂ϑϑ, ∂ϑφ, ∂φφ)`.
fn scalar_jet(
    base: &[f64; 3],
    f2: &[f64; 3],
    tau: &AngularJet,
    a: f64,
    q: &[f64; 3],
    qp: &AngularJet,
) -> [f64; 10] {
    [
        base[0] + tau.v * f2[0] + a * qp.v * q[0],
        base[1] + tau.v * f2[1] + a * qp.v * q[1],
        tau.dt * f2[0] + a * qp.dt * q[0],
        tau.dp * f2[0] + a * qp.dp * q[0],
        base[2] + tau.v * f2[2] + a * qp.v * q[2],
        tau.dt * f2[1] + a * qp.dt * q[1],
        tau.dp * f2[1] + a * qp.dp * q[1],
        tau.dtt * f2[0] + a * qp.dtt * q[0],
        tau.dtp * f2[0] + a * qp.dtp * q[0],
        tau.dpp * f2[0] + a * qp.dpp * q[0],
    ]
}

/// Write component `(i, j)` (and its mirror) of the metric jet from a
/// scalar jet, optionally multiplied by a ϑ-only trigonometric factor
/// carrying two derivatives.
fn set_component(
    g: &mut Mat3,
    d: &mut [Mat3; 3],
    dd: &mut [[Mat3; 3]; 3],
    i: usize,
    j: usize,
    sj: &[f64; 10],
    trig: Option<&[f64; 3]>,
) {
    let (t, t1, t2) = match trig {
        Some(f) => (f[0], f[1], f[2]),
        None => (1.0, 0.0, 0.0),
    };
    let v = sj[0] * t;
    let dr = sj[1] * t;
    let dth = sj[2] * t + sj[0] * t1;
    let dph = sj[3] * t;
    let drr = sj[4] * t;
    let drt = sj[5] * t + sj[1] * t1;
    let drp = sj[6] * t;
    let dtt = sj[7] * t + 2.0 * sj[2] * t1 + sj[0] * t2;
    let dtp = sj[8] * t + sj[3] * t1;
    let dpp = sj[9] * t;

    g[i][j] = v;
    g[j][i] = v;
    let firsts = [(0, dr), (1, dth), (2, dph)];
    for (mu, val) in firsts {
        d[mu][i][j] = val;
        d[mu][j][i] = val;
    }
    let seconds = [
        (0, 0, drr),
        (0, 1, drt),
        (0, 2, drp),
        (1, 1, dtt),
        (1, 2, dtp),
        (2, 2, dpp),
    ];
    for (mu, nu, val) in seconds {
        dd[mu][nu][i][j] = val;
        dd[mu][nu][j][i] = val;
        dd[nu][mu][i][j] = val;
        dd[nu][mu][j][i] = val;
    }
}

pub fn mat3_inverse(m: &Mat3) -> Mat3 {
    let det = mat3_det(m);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    out
}

pub fn mat3_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for (j, col) in (0..3).enumerate() {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += a[i][k] * b[k][col];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn neg(a: &Mat3) -> Mat3 {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    out
}

/// Christoffel symbols `Γ^k_{ij}` (symmetric in `i, j`).
pub fn christoffel(jet: &MetricJet) -> [Mat3; 3] {
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for l in 0..3 {
                    acc += jet.ginv[k][l] * (jet.d[i][j][l] + jet.d[j][i][l] - jet.d[l][i][j]);
                }
                gamma[k][i][j] = 0.5 * acc;
            }
        }
    }
    gamma
}

/// Christoffel symbols and their coordinate derivatives `∂_μ Γ^k_{ij}`.
pub fn christoffel_with_derivatives(jet: &MetricJet) -> ([Mat3; 3], [[Mat3; 3]; 3]) {
    let gamma = christoffel(jet);
    let dinv = [jet.dinv(0), jet.dinv(1), jet.dinv(2)];
    let mut dgamma = [[[[0.0; 3]; 3]; 3]; 3];
    for mu in 0..3 {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc += dinv[mu][k][l] * (jet.d[i][j][l] + jet.d[j][i][l] - jet.d[l][i][j])
                            + jet.ginv[k][l]
                                * (jet.dd[mu][i][j][l] + jet.dd[mu][j][i][l]
                                    - jet.dd[mu][l][i][j]);
                    }
                    dgamma[mu][k][i][j] = 0.5 * acc;
                }
            }
        }
    }
    (gamma, dgamma)
}

/// Ricci tensor and scalar curvature from the metric jet.
pub fn curvature(jet: &MetricJet) -> (Mat3, f64) {
    let (gamma, dgamma) = christoffel_with_derivatives(jet);
    let mut ricci = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += dgamma[k][k][i][j] - dgamma[j][k][k][i];
                for l in 0..3 {
                    acc += gamma[k][k][l] * gamma[l][i][j] - gamma[k][j][l] * gamma[l][k][i];
                }
            }
            ricci[i][j] = acc;
        }
    }
    let mut scalar = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            scalar += jet.ginv[i][j] * ricci[i][j];
        }
    }
    (ricci, scalar)
}

/// Mean curvature of the coordinate sphere `{r = s}` w.r.t. the outward
/// normal, computed from the Christoffel symbols (divergence of the
/// level-set unit normal), not from the asymptotic expansion.
pub fn coordinate_sphere_h(eval: &AmbientEval, s: f64) -> Result<ScalarField> {
    guard_radius(eval.spec, s, "coordinate_sphere_H")?;
    let grid = eval.grid;
    let mut out = vec![0.0; grid.n_nodes()];
    for (node, h) in out.iter_mut().enumerate() {
        let jet = eval.metric_jet(node, s)?;
        *h = level_set_mean_curvature(&jet);
    }
    Ok(ScalarField(out))
}

/// `H = div ν` for `ν = grad r / |grad r|` at one point.
pub fn level_set_mean_curvature(jet: &MetricJet) -> f64 {
    let gamma = christoffel(jet);
    let n_sq = jet.ginv[0][0];
    let n = n_sq.sqrt();
    let nu = [jet.ginv[0][0] / n, jet.ginv[1][0] / n, jet.ginv[2][0] / n];
    let mut div = 0.0;
    for i in 0..3 {
        let dinv = jet.dinv(i);
        let dn = dinv[0][0] / (2.0 * n);
        div += dinv[i][0] / n - jet.ginv[i][0] * dn / n_sq;
        for k in 0..3 {
            div += gamma[i][i][k] * nu[k];
        }
    }
    div
}

/// Two-term expansion `H(s) ≈ 2 coth s − τ_eff / (2 sinh³ s)` used as a
/// reference value by the residual checks.
pub fn expansion_mean_curvature(tau_eff: f64, s: f64) -> f64 {
    2.0 * s.cosh() / s.sinh() - tau_eff / (2.0 * s.sinh().powi(3))
}

/// `Rc(∂_r, ∂_r) ≈ −2 − τ_eff / (2 sinh³ s)`.
pub fn expansion_ricci_rr(tau_eff: f64, s: f64) -> f64 {
    -2.0 - tau_eff / (2.0 * s.sinh().powi(3))
}

/// Exact mean curvature of the coordinate sphere `{r = s}` in a
/// rotationally symmetric spec (constant `τ`, `Q = 0`): `H = T'/T`
/// with `T = sinh²s + τ/(6 sinh s)`.
pub fn round_mean_curvature(tau: f64, s: f64) -> f64 {
    let sh = s.sinh();
    let ch = s.cosh();
    let t = sh * sh + tau / (6.0 * sh);
    let dt = 2.0 * sh * ch - tau * ch / (6.0 * sh * sh);
    dt / t
}

/// Radius of the round sphere with `H = l` in a rotationally symmetric
/// spec, by Newton on the closed form. `l` must exceed 2.
pub fn round_radius_for_h(tau: f64, l: f64) -> Result<f64> {
    if l <= 2.0 {
        return Err(Error::Domain {
            op: "round_radius_for_h",
            message: format!("mean curvature must exceed 2, got {l}"),
        });
    }
    let mut r = (2.0 / l).atanh();
    for _ in 0..60 {
        let sh = r.sinh();
        let ch = r.cosh();
        let t = sh * sh + tau / (6.0 * sh);
        let dt = 2.0 * sh * ch - tau * ch / (6.0 * sh * sh);
        let ddt = 2.0 * (ch * ch + sh * sh) + tau * (2.0 * ch * ch / sh - sh) / (6.0 * sh * sh);
        let h = dt / t;
        let dh = ddt / t - h * h;
        let dr = (h - l) / dh;
        r -= dr;
        if (h - l).abs() <= 1e-14 * l || dr.abs() <= 1e-13 * (1.0 + r.abs()) {
            return Ok(r);
        }
    }
    let residual = (round_mean_curvature(tau, r) - l).abs();
    if residual <= 1e-12 * l {
        return Ok(r);
    }
    Err(Error::NoConvergence {
        op: "round_radius_for_h",
        iterations: 60,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> GridS2 {
        GridS2::build(12).unwrap()
    }

    pub(crate) fn aniso_spec(band_limit: usize) -> AmbientMetricSpec {
        // τ = 1 + 0.3 (3x₃² − 1) = 1 + 0.3 sqrt(16π/5) Y₂₀
        let mut coeffs = CoeffVector::constant(band_limit, 1.0);
        coeffs.0[coeff_index(2, 0, Component::Zonal)] = 0.3 * (16.0 * PI / 5.0).sqrt();
        AmbientMetricSpec::rotationally_symmetric(band_limit, 0.0)
            .with_mass_aspect(MassAspect { coeffs })
    }

    #[test]
    fn hyperbolic_metric_components() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let jet = eval.metric_jet_at(3.0, 1.1, 0.4).unwrap();
        let s2 = 3.0f64.sinh().powi(2);
        assert_abs_diff_eq!(jet.g[0][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(jet.g[1][1], s2, epsilon = 1e-10);
        assert_abs_diff_eq!(jet.g[2][2], s2 * 1.1f64.sin().powi(2), epsilon = 1e-10);
        assert_abs_diff_eq!(jet.g[0][1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_mass_aspect_shifts_tangent_block() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let jet = eval.metric_jet_at(3.0, 0.9, 1.0).unwrap();
        let expect = 3.0f64.sinh().powi(2) + 1.0 / (3.0 * 3.0f64.sinh());
        assert_abs_diff_eq!(jet.g[1][1], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(jet.g[2][2], expect * 0.9f64.sin().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn anisotropic_aspect_at_the_pole() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        // τ(north pole) = 1 + 0.3·2 = 1.6
        let jet = eval.metric_jet_at(5.0, 0.0, 0.0).unwrap();
        let expect = 5.0f64.sinh().powi(2) + (1.6 / 2.0) / (3.0 * 5.0f64.sinh());
        assert_abs_diff_eq!(jet.g[1][1], expect, epsilon = 1e-10);
    }

    #[test]
    fn metric_inverse_is_exact() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        for node in [0usize, 33, 140] {
            let jet = eval.metric_jet(node, 4.0).unwrap();
            let prod = mat_mul(&jet.g, &jet.ginv);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(prod[i][j], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn interior_radius_is_rejected() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        assert!(eval.metric_jet(0, 0.5).is_err());
    }

    #[test]
    fn hyperbolic_christoffel_closed_form() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let jet = eval.metric_jet_at(2.0, 1.2, 0.3).unwrap();
        let gamma = christoffel(&jet);
        // Γ^r_{ϑϑ} = −sinh cosh, Γ^ϑ_{rϑ} = coth
        assert_abs_diff_eq!(
            gamma[0][1][1],
            -(2.0f64.sinh() * 2.0f64.cosh()),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(gamma[1][0][1], 2.0f64.cosh() / 2.0f64.sinh(), epsilon = 1e-12);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(gamma[k][i][j], gamma[k][j][i]);
                }
            }
        }
    }

    #[test]
    fn christoffel_matches_finite_differences_of_metric() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let (r, th, ph) = (4.0, 1.0, 0.7);
        let jet = eval.metric_jet_at(r, th, ph).unwrap();
        let gamma = christoffel(&jet);

        let h = 1e-6;
        let jp = eval.metric_jet_at(r + h, th, ph).unwrap();
        let jm = eval.metric_jet_at(r - h, th, ph).unwrap();
        let tp = eval.metric_jet_at(r, th + h, ph).unwrap();
        let tm = eval.metric_jet_at(r, th - h, ph).unwrap();
        let pp = eval.metric_jet_at(r, th, ph + h).unwrap();
        let pm = eval.metric_jet_at(r, th, ph - h).unwrap();

        let mut dg_fd = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                dg_fd[0][i][j] = (jp.g[i][j] - jm.g[i][j]) / (2.0 * h);
                dg_fd[1][i][j] = (tp.g[i][j] - tm.g[i][j]) / (2.0 * h);
                dg_fd[2][i][j] = (pp.g[i][j] - pm.g[i][j]) / (2.0 * h);
            }
        }
        let mut gamma_fd = [[[0.0; 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc +=
                            jet.ginv[k][l] * (dg_fd[i][j][l] + dg_fd[j][i][l] - dg_fd[l][i][j]);
                    }
                    gamma_fd[k][i][j] = 0.5 * acc;
                }
            }
        }
        let scale = 4.0f64.sinh().powi(2);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(gamma[k][i][j], gamma_fd[k][i][j], epsilon = 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn hyperbolic_space_curvature_is_exact() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        for node in [0usize, 77, 250] {
            let jet = eval.metric_jet(node, 3.0).unwrap();
            let (ricci, scalar) = curvature(&jet);
            assert_abs_diff_eq!(scalar, -6.0, epsilon = 1e-10);
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(
                        ricci[i][j],
                        -2.0 * jet.g[i][j],
                        epsilon = 1e-10 * jet.g[i][j].abs().max(1.0)
                    );
                }
            }
        }
    }

    #[test]
    fn radial_ricci_matches_two_term_expansion() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let jet = eval.metric_jet(40, 5.0).unwrap();
        let (ricci, _) = curvature(&jet);
        let expect = expansion_ricci_rr(2.0, 5.0);
        // envelope e^{-4r} at r = 5
        assert!((ricci[0][0] - expect).abs() <= (-20.0f64).exp());
    }

    #[test]
    fn scalar_curvature_decay_rate() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let mut sups = Vec::new();
        for r in [3.0, 4.0, 5.0] {
            let mut sup: f64 = 0.0;
            for node in 0..g2.n_nodes() {
                let jet = eval.metric_jet(node, r).unwrap();
                let (_, scalar) = curvature(&jet);
                sup = sup.max((scalar + 6.0).abs());
            }
            sups.push(sup);
        }
        let e1 = (sups[0] / sups[1]).ln();
        let e2 = (sups[1] / sups[2]).ln();
        assert!(e1 > 3.7 && e2 > 3.7, "decay exponents {e1:.2}, {e2:.2}");
    }

    #[test]
    fn coordinate_sphere_mean_curvature() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let h = coordinate_sphere_h(&eval, 5.0).unwrap();
        let expect = 2.0 * 5.0f64.cosh() / 5.0f64.sinh();
        for v in &h.0 {
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
        }
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let h = coordinate_sphere_h(&eval, 4.0).unwrap();
        let expect = expansion_mean_curvature(2.0, 4.0);
        for v in &h.0 {
            assert!((v - expect).abs() <= (-16.0f64).exp());
        }
    }

    #[test]
    fn anisotropic_h_deviation_decays_fast() {
        let g2 = grid();
        let spec = aniso_spec(12);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let tau = g2.synthesis(&spec.effective_tau()).unwrap();
        let mut sups = Vec::new();
        for s in [3.0, 4.0, 5.0] {
            let h = coordinate_sphere_h(&eval, s).unwrap();
            let mut sup: f64 = 0.0;
            for (node, v) in h.0.iter().enumerate() {
                sup = sup.max((v - expansion_mean_curvature(tau.0[node], s)).abs());
            }
            sups.push(sup);
        }
        let e1 = (sups[0] / sups[1]).ln();
        let e2 = (sups[1] / sups[2]).ln();
        assert!(e1 > 3.7 && e2 > 3.7, "fitted exponents {e1:.2}, {e2:.2}");
    }

    #[test]
    fn family_member_interpolates_the_aspect() {
        let spec = aniso_spec(12);
        assert!(spec.family_member(1.5).is_err());
        let t1 = spec.family_member(1.0).unwrap();
        assert_eq!(t1.effective_tau(), spec.effective_tau());
        let t0 = spec.family_member(0.0).unwrap();
        let c = t0.effective_tau();
        assert_abs_diff_eq!(c.0[0], 2.0 * (4.0 * PI).sqrt(), epsilon = 1e-14);
        for v in &c.0[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
        let fixed = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        let half = fixed.family_member(0.5).unwrap();
        assert_abs_diff_eq!(half.mean_tau(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn positive_definite_across_radii_and_specs() {
        let g2 = grid();
        let mut spec = aniso_spec(12);
        spec.q_term = Some(QTerm {
            amplitude: 0.05,
            profile: CoeffVector::constant(12, 1.0),
            structure: QStructure {
                rr: true,
                r_tangent: true,
                tangent: true,
            },
        });
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        for r in [1.0, 3.0, 7.0, 12.0] {
            for node in (0..g2.n_nodes()).step_by(37) {
                let jet = eval.metric_jet(node, r).unwrap();
                let m1 = jet.g[0][0];
                let m2 = jet.g[0][0] * jet.g[1][1] - jet.g[0][1] * jet.g[0][1];
                let m3 = mat3_det(&jet.g);
                assert!(m1 > 0.0 && m2 > 0.0 && m3 > 0.0, "not SPD at r={r}");
            }
        }
    }

    #[test]
    fn q_term_decay_envelope_holds() {
        let g2 = grid();
        let mut spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        spec.q_term = Some(QTerm {
            amplitude: 0.02,
            profile: CoeffVector::constant(12, 1.0),
            structure: QStructure {
                rr: true,
                ..Default::default()
            },
        });
        spec.check_q_decay(&g2, &[2.0, 4.0, 8.0]).unwrap();
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        for r in [3.0, 5.0, 8.0] {
            let jet = eval.metric_jet(11, r).unwrap();
            let (_, scalar) = curvature(&jet);
            assert!(
                (scalar + 6.0).abs() * (4.0 * r).exp() < 1e3,
                "R+6 envelope violated at r={r}"
            );
        }
    }

    #[test]
    fn hypothesis_h_checks() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(12, 2.0);
        spec.check_hypothesis_h(&g2).unwrap();
        assert!(AmbientMetricSpec::hyperbolic(12)
            .check_hypothesis_h(&g2)
            .is_err());
        let mut coeffs = CoeffVector::constant(12, 2.0);
        coeffs.0[coeff_index(1, 0, Component::Zonal)] = 0.4;
        let off = AmbientMetricSpec::rotationally_symmetric(12, 2.0)
            .with_mass_aspect(MassAspect { coeffs });
        assert!(off.check_hypothesis_h(&g2).is_err());
    }

    #[test]
    fn round_radius_inverts_round_mean_curvature() {
        let r = round_radius_for_h(2.0, 2.01).unwrap();
        assert_abs_diff_eq!(round_mean_curvature(2.0, r), 2.01, epsilon = 1e-12);
        assert!(round_radius_for_h(2.0, 1.5).is_err());
    }
}
