//! Extrinsic and intrinsic geometry of graph spheres
//! `Σ = {(r̂ + f(θ), θ)}`: fundamental forms, mean curvature, normal,
//! Gauss curvature, area, radial projections, surface Laplacian.
//!
//! Fundamental forms are computed from the embedding tangent vectors
//! `e_a = ∂_a + (∂_a ρ) ∂_r` with ambient Christoffel symbols. All
//! angular derivatives of the induced metric are evaluated pointwise by
//! the chain rule through the closed-form ambient metric jet and the
//! exact spectral jet of `ρ`, so for band-limited `ρ` every per-node
//! field is free of discretization error.

use crate::ambient::{christoffel, curvature, AmbientEval};
use crate::error::{Error, Result};
use crate::s2grid::{AngularJet, CoeffVector, GridS2, ScalarField};
use std::ops::{Add, Mul, Neg, Sub};

/// A sphere written as `r(θ) = r̂ + f(θ)` over the fixed coordinate
/// system; the radius field is stored spectrally.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSurface {
    pub rho_coeffs: CoeffVector,
}

impl GraphSurface {
    /// The coordinate sphere `ρ ≡ r̂`.
    pub fn round(band_limit: usize, r_hat: f64) -> Self {
        GraphSurface {
            rho_coeffs: CoeffVector::constant(band_limit, r_hat),
        }
    }

    pub fn from_values(grid: &GridS2, rho: &ScalarField) -> Result<Self> {
        Ok(GraphSurface {
            rho_coeffs: grid.analysis(rho)?,
        })
    }

    pub fn values(&self, grid: &GridS2) -> Result<ScalarField> {
        grid.synthesis(&self.rho_coeffs.resized(grid.band_limit()))
    }
}

/// Scalar with two surface derivatives: value, `∂_a`, `∂_a∂_b` in the
/// angular chart. Carries product and chain rules so induced-metric
/// derivatives assemble without hand expansion.
#[derive(Clone, Copy, Debug, Default)]
pub struct SJet {
    pub v: f64,
    pub d: [f64; 2],
    pub dd: [[f64; 2]; 2],
}

impl SJet {
    pub fn constant(v: f64) -> Self {
        SJet {
            v,
            ..Default::default()
        }
    }

    /// Jet of `1/self`.
    pub fn inv(self) -> SJet {
        let iv = 1.0 / self.v;
        let iv2 = iv * iv;
        let mut out = SJet {
            v: iv,
            ..Default::default()
        };
        for c in 0..2 {
            out.d[c] = -self.d[c] * iv2;
        }
        for c in 0..2 {
            for e in 0..2 {
                out.dd[c][e] = -self.dd[c][e] * iv2 + 2.0 * self.d[c] * self.d[e] * iv2 * iv;
            }
        }
        out
    }

    /// Jet of `sqrt(self)`.
    pub fn sqrt(self) -> SJet {
        let u = self.v.sqrt();
        let mut out = SJet {
            v: u,
            ..Default::default()
        };
        for c in 0..2 {
            out.d[c] = 0.5 * self.d[c] / u;
        }
        for c in 0..2 {
            for e in 0..2 {
                out.dd[c][e] =
                    0.5 * self.dd[c][e] / u - 0.25 * self.d[c] * self.d[e] / (u * u * u);
            }
        }
        out
    }

    /// Jet of `self^{-1/2}`.
    pub fn inv_sqrt(self) -> SJet {
        let s = self.v;
        let a = s.powf(-0.5);
        let a3 = s.powf(-1.5);
        let a5 = s.powf(-2.5);
        let mut out = SJet {
            v: a,
            ..Default::default()
        };
        for c in 0..2 {
            out.d[c] = -0.5 * a3 * self.d[c];
        }
        for c in 0..2 {
            for e in 0..2 {
                out.dd[c][e] = -0.5 * a3 * self.dd[c][e] + 0.75 * a5 * self.d[c] * self.d[e];
            }
        }
        out
    }

    pub fn scale(self, k: f64) -> SJet {
        SJet {
            v: self.v * k,
            d: [self.d[0] * k, self.d[1] * k],
            dd: [
                [self.dd[0][0] * k, self.dd[0][1] * k],
                [self.dd[1][0] * k, self.dd[1][1] * k],
            ],
        }
    }
}

impl Add for SJet {
    type Output = SJet;
    fn add(self, o: SJet) -> SJet {
        let mut out = self;
        out.v += o.v;
        for c in 0..2 {
            out.d[c] += o.d[c];
            for e in 0..2 {
                out.dd[c][e] += o.dd[c][e];
            }
        }
        out
    }
}

impl Sub for SJet {
    type Output = SJet;
    fn sub(self, o: SJet) -> SJet {
        self + (-o)
    }
}

impl Neg for SJet {
    type Output = SJet;
    fn neg(self) -> SJet {
        self.scale(-1.0)
    }
}

impl Mul for SJet {
    type Output = SJet;
    fn mul(self, o: SJet) -> SJet {
        let mut out = SJet {
            v: self.v * o.v,
            ..Default::default()
        };
        for c in 0..2 {
            out.d[c] = self.d[c] * o.v + self.v * o.d[c];
        }
        for c in 0..2 {
            for e in 0..2 {
                out.dd[c][e] = self.dd[c][e] * o.v
                    + self.d[c] * o.d[e]
                    + self.d[e] * o.d[c]
                    + self.v * o.dd[c][e];
            }
        }
        out
    }
}

/// Total surface derivatives of an ambient component evaluated along
/// the graph: `X(ρ(θ), θ)` with coordinate derivatives of `X` supplied
/// closed-form.
fn ambient_sjet(x: f64, xd: [f64; 3], xdd: &[[f64; 3]; 3], rho: &AngularJet) -> SJet {
    let rd = [rho.dt, rho.dp];
    let rdd = [[rho.dtt, rho.dtp], [rho.dtp, rho.dpp]];
    let mut out = SJet {
        v: x,
        ..Default::default()
    };
    for c in 0..2 {
        out.d[c] = xd[0] * rd[c] + xd[c + 1];
    }
    for c in 0..2 {
        for e in 0..2 {
            out.dd[c][e] = xdd[0][0] * rd[c] * rd[e]
                + xd[0] * rdd[c][e]
                + xdd[0][e + 1] * rd[c]
                + xdd[0][c + 1] * rd[e]
                + xdd[c + 1][e + 1];
        }
    }
    out
}

/// SJet of `∂_ϑ ρ` (consumes the third-order part of the ρ jet).
fn rho_t_sjet(j: &AngularJet) -> SJet {
    SJet {
        v: j.dt,
        d: [j.dtt, j.dtp],
        dd: [[j.dttt, j.dttp], [j.dttp, j.dtpp]],
    }
}

/// SJet of `∂_φ ρ`.
fn rho_p_sjet(j: &AngularJet) -> SJet {
    SJet {
        v: j.dp,
        d: [j.dtp, j.dpp],
        dd: [[j.dttp, j.dtpp], [j.dtpp, j.dppp]],
    }
}

/// Per-node extrinsic/intrinsic fields of a graph sphere.
pub struct SurfaceGeometry {
    /// Total area `|Σ|`.
    pub area: f64,
    /// Area radius: `|Σ| = 4π sinh² r̂` exactly.
    pub r_hat: f64,
    /// Inner radius (min ρ over the grid).
    pub inner_radius: f64,
    /// Outer radius (max ρ).
    pub outer_radius: f64,
    pub rho: ScalarField,
    /// Graph function `f = ρ − r̂`.
    pub f: ScalarField,
    /// Induced metric `γ_ab` per node.
    pub induced_metric: Vec<[[f64; 2]; 2]>,
    /// Inverse induced metric `γ^{ab}`.
    pub inv_metric: Vec<[[f64; 2]; 2]>,
    /// `dμ / dμ₀ = sqrt(det γ) / sin ϑ`.
    pub area_density: ScalarField,
    /// Ambient components of the outward unit normal `ν^i`.
    pub normal: Vec<[f64; 3]>,
    /// `⟨∂_r, ν⟩` (positive on graphs).
    pub normal_radial: ScalarField,
    /// Second fundamental form `A_ab`, signed so that round hyperbolic
    /// spheres have `H = tr A = 2 coth r̂ > 0` w.r.t. the outward normal.
    pub second_fundamental: Vec<[[f64; 2]; 2]>,
    pub mean_curvature: ScalarField,
    /// `|Å|²` with `Å = A − (H/2)γ`.
    pub ring_a_sq: ScalarField,
    /// `|A|²`.
    pub a_sq: ScalarField,
    /// Gauss curvature computed intrinsically from the induced metric.
    pub gauss_intrinsic: ScalarField,
    /// Gauss curvature via `K = R/2 − Rc(ν,ν) + H²/4 − |Å|²/2`, kept
    /// separately as a cross-check.
    pub gauss_from_ambient: ScalarField,
    /// `|∂_r^⊤|²`.
    pub radial_tangent_sq: ScalarField,
    /// Covariant components `g(∂_r, e_a)` of the radial projection.
    pub radial_tangent_cov: Vec<[f64; 2]>,
    pub ricci_nu_nu: ScalarField,
    pub scalar_curvature: ScalarField,
    /// `g(∂_r, ∂_r)` along the surface.
    pub g_rr: ScalarField,
    /// Jacobi potential `W = |A|² + Rc(ν,ν)`.
    pub jacobi_potential: ScalarField,
    /// Jet of `α = ⟨∂_r, ν⟩` with exact surface derivatives (shape
    /// Jacobian support).
    pub alpha_jets: Vec<SJet>,
    /// Drift coefficients `C^a = (1/√γ) ∂_b(√γ γ^{ba})` of the
    /// divergence-form Laplacian, evaluated analytically.
    pub lap_drift: Vec<[f64; 2]>,
}

/// Closed-form inverse of `|Σ| = 4π sinh² r̂`.
pub fn area_radius(area: f64) -> Result<f64> {
    if area <= 0.0 {
        return Err(Error::Domain {
            op: "area_radius",
            message: format!("area must be positive, got {area}"),
        });
    }
    Ok((area / (4.0 * std::f64::consts::PI)).sqrt().asinh())
}

/// Populate every geometric field of the graph surface in the ambient
/// spec. Pure; nodes are independent.
pub fn geometry_of(eval: &AmbientEval, surf: &GraphSurface) -> Result<SurfaceGeometry> {
    let grid = eval.grid;
    let n = grid.n_nodes();
    let rho_coeffs = surf.rho_coeffs.resized(grid.band_limit());
    let rho_jets = grid.jet(&rho_coeffs, 3)?;

    let rho_vals: Vec<f64> = rho_jets.iter().map(|j| j.v).collect();
    let inner = rho_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let outer = rho_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if inner <= eval.spec.r1 {
        return Err(Error::Domain {
            op: "geometry_of",
            message: format!(
                "surface leaves the chart: min rho = {inner} <= r1 = {}",
                eval.spec.r1
            ),
        });
    }

    let mut geom = SurfaceGeometry {
        area: 0.0,
        r_hat: 0.0,
        inner_radius: inner,
        outer_radius: outer,
        rho: ScalarField(rho_vals),
        f: ScalarField(vec![0.0; n]),
        induced_metric: vec![[[0.0; 2]; 2]; n],
        inv_metric: vec![[[0.0; 2]; 2]; n],
        area_density: ScalarField(vec![0.0; n]),
        normal: vec![[0.0; 3]; n],
        normal_radial: ScalarField(vec![0.0; n]),
        second_fundamental: vec![[[0.0; 2]; 2]; n],
        mean_curvature: ScalarField(vec![0.0; n]),
        ring_a_sq: ScalarField(vec![0.0; n]),
        a_sq: ScalarField(vec![0.0; n]),
        gauss_intrinsic: ScalarField(vec![0.0; n]),
        gauss_from_ambient: ScalarField(vec![0.0; n]),
        radial_tangent_sq: ScalarField(vec![0.0; n]),
        radial_tangent_cov: vec![[0.0; 2]; n],
        ricci_nu_nu: ScalarField(vec![0.0; n]),
        scalar_curvature: ScalarField(vec![0.0; n]),
        g_rr: ScalarField(vec![0.0; n]),
        jacobi_potential: ScalarField(vec![0.0; n]),
        alpha_jets: vec![SJet::default(); n],
        lap_drift: vec![[0.0; 2]; n],
    };

    for node in 0..n {
        node_geometry(eval, node, &rho_jets[node], &mut geom)?;
    }

    let mut area = 0.0;
    for (w, j) in grid.node_weights().iter().zip(&geom.area_density.0) {
        area += w * j;
    }
    geom.area = area;
    geom.r_hat = area_radius(area)?;
    for (f, r) in geom.f.0.iter_mut().zip(&geom.rho.0) {
        *f = r - geom.r_hat;
    }
    Ok(geom)
}

fn node_geometry(
    eval: &AmbientEval,
    node: usize,
    rho: &AngularJet,
    geom: &mut SurfaceGeometry,
) -> Result<()> {
    let grid = eval.grid;
    let jet = eval.metric_jet(node, rho.v)?;
    let sin_t = grid.sin_colat(node);

    let dinv = [jet.dinv(0), jet.dinv(1), jet.dinv(2)];
    let mut ddinv = [[[[0.0; 3]; 3]; 3]; 3];
    for mu in 0..3 {
        for nu in 0..3 {
            ddinv[mu][nu] = jet.ddinv(mu, nu);
        }
    }

    let amb = |i: usize, j: usize| -> SJet {
        let xd = [jet.d[0][i][j], jet.d[1][i][j], jet.d[2][i][j]];
        let mut xdd = [[0.0; 3]; 3];
        for mu in 0..3 {
            for nu in 0..3 {
                xdd[mu][nu] = jet.dd[mu][nu][i][j];
            }
        }
        ambient_sjet(jet.g[i][j], xd, &xdd, rho)
    };
    let amb_inv = |i: usize, j: usize| -> SJet {
        let xd = [dinv[0][i][j], dinv[1][i][j], dinv[2][i][j]];
        let mut xdd = [[0.0; 3]; 3];
        for mu in 0..3 {
            for nu in 0..3 {
                xdd[mu][nu] = ddinv[mu][nu][i][j];
            }
        }
        ambient_sjet(jet.ginv[i][j], xd, &xdd, rho)
    };

    let rt = rho_t_sjet(rho);
    let rp = rho_p_sjet(rho);
    let rj = [rt, rp];

    // Induced metric γ_ab with two exact surface derivatives.
    let mut gam = [[SJet::default(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            gam[a][b] = amb(a + 1, b + 1)
                + amb(0, b + 1) * rj[a]
                + amb(0, a + 1) * rj[b]
                + amb(0, 0) * rj[a] * rj[b];
        }
    }
    let det = gam[0][0] * gam[1][1] - gam[0][1] * gam[0][1];
    if det.v <= 0.0 {
        return Err(Error::Domain {
            op: "geometry_of",
            message: format!("induced metric degenerate at node {node}"),
        });
    }
    let inv_det = det.inv();
    let gi = [
        [gam[1][1] * inv_det, -(gam[0][1] * inv_det)],
        [-(gam[0][1] * inv_det), gam[0][0] * inv_det],
    ];
    let sqrt_det = det.sqrt();

    // Conormal n = dr − ρ_a dθ^a; S = |n|²_g; α = ⟨∂_r, ν⟩ = 1/√S.
    let s_jet = amb_inv(0, 0) - (amb_inv(0, 1) * rt).scale(2.0) - (amb_inv(0, 2) * rp).scale(2.0)
        + amb_inv(1, 1) * rt * rt
        + (amb_inv(1, 2) * rt * rp).scale(2.0)
        + amb_inv(2, 2) * rp * rp;
    if s_jet.v <= 0.0 || !s_jet.v.is_finite() {
        return Err(Error::OrientationViolated { op: "geometry_of" });
    }
    let alpha = s_jet.inv_sqrt();
    let n_cov = [1.0, -rho.dt, -rho.dp];
    let n_norm = s_jet.v.sqrt();
    let mut nu = [0.0; 3];
    for (i, out) in nu.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..3 {
            acc += jet.ginv[i][j] * n_cov[j];
        }
        *out = acc / n_norm;
    }

    // Second fundamental form A_ab = −α (ρ_ab + n_j Γ^j_{ik} e_a^i e_b^k).
    let gamma3 = christoffel(&jet);
    let rdd = [[rho.dtt, rho.dtp], [rho.dtp, rho.dpp]];
    let rd = [rho.dt, rho.dp];
    let mut a_form = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut chris = 0.0;
            for (j, nj) in n_cov.iter().enumerate() {
                chris += nj
                    * (gamma3[j][0][0] * rd[a] * rd[b]
                        + gamma3[j][0][b + 1] * rd[a]
                        + gamma3[j][a + 1][0] * rd[b]
                        + gamma3[j][a + 1][b + 1]);
            }
            a_form[a][b] = -alpha.v * (rdd[a][b] + chris);
        }
    }

    let gi_v = [[gi[0][0].v, gi[0][1].v], [gi[1][0].v, gi[1][1].v]];
    let mut h = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            h += gi_v[a][b] * a_form[a][b];
        }
    }
    let gam_v = [[gam[0][0].v, gam[0][1].v], [gam[1][0].v, gam[1][1].v]];
    let mut ring = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            ring[a][b] = a_form[a][b] - 0.5 * h * gam_v[a][b];
        }
    }
    let mut ring_sq = 0.0;
    let mut a_sq = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for d in 0..2 {
                    ring_sq += ring[a][b] * ring[c][d] * gi_v[a][c] * gi_v[b][d];
                    a_sq += a_form[a][b] * a_form[c][d] * gi_v[a][c] * gi_v[b][d];
                }
            }
        }
    }

    let (ricci, scalar) = curvature(&jet);
    let mut rc_nn = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            rc_nn += ricci[i][j] * nu[i] * nu[j];
        }
    }

    // Radial projections: T_a = g(∂_r, e_a); |∂_r^⊤|² = γ^{ab} T_a T_b.
    let t_cov = [
        jet.g[0][1] + jet.g[0][0] * rd[0],
        jet.g[0][2] + jet.g[0][0] * rd[1],
    ];
    let mut rad_tan_sq = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            rad_tan_sq += gi_v[a][b] * t_cov[a] * t_cov[b];
        }
    }

    let k_int = intrinsic_gauss(&gam, &gi, det.v);
    let k_gauss = 0.5 * scalar - rc_nn + 0.25 * h * h - 0.5 * ring_sq;

    // C^a = Σ_b ∂_b γ^{ba} + γ^{ba} ∂_b ln √γ.
    let mut drift = [0.0; 2];
    for (a, out) in drift.iter_mut().enumerate() {
        let mut acc = 0.0;
        for b in 0..2 {
            acc += gi[b][a].d[b] + gi[b][a].v * sqrt_det.d[b] / sqrt_det.v;
        }
        *out = acc;
    }

    geom.induced_metric[node] = gam_v;
    geom.inv_metric[node] = gi_v;
    geom.area_density.0[node] = sqrt_det.v / sin_t;
    geom.normal[node] = nu;
    geom.normal_radial.0[node] = alpha.v;
    geom.second_fundamental[node] = a_form;
    geom.mean_curvature.0[node] = h;
    geom.ring_a_sq.0[node] = ring_sq;
    geom.a_sq.0[node] = a_sq;
    geom.gauss_intrinsic.0[node] = k_int;
    geom.gauss_from_ambient.0[node] = k_gauss;
    geom.radial_tangent_sq.0[node] = rad_tan_sq;
    geom.radial_tangent_cov[node] = t_cov;
    geom.ricci_nu_nu.0[node] = rc_nn;
    geom.scalar_curvature.0[node] = scalar;
    geom.g_rr.0[node] = jet.g[0][0];
    geom.jacobi_potential.0[node] = a_sq + rc_nn;
    geom.alpha_jets[node] = alpha;
    geom.lap_drift[node] = drift;
    Ok(())
}

/// `K = R_{0101}/det γ` from the 2D metric jet (Brioschi-type, with
/// analytic derivatives).
fn intrinsic_gauss(gam: &[[SJet; 2]; 2], gi: &[[SJet; 2]; 2], det: f64) -> f64 {
    let mut chr = [[[0.0; 2]; 2]; 2];
    let mut dchr = [[[[0.0; 2]; 2]; 2]; 2];
    for c in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                let mut v = 0.0;
                for d in 0..2 {
                    v += gi[c][d].v * (gam[b][d].d[a] + gam[a][d].d[b] - gam[a][b].d[d]);
                }
                chr[c][a][b] = 0.5 * v;
                for e in 0..2 {
                    let mut dv = 0.0;
                    for d in 0..2 {
                        dv += gi[c][d].d[e] * (gam[b][d].d[a] + gam[a][d].d[b] - gam[a][b].d[d])
                            + gi[c][d].v
                                * (gam[b][d].dd[a][e] + gam[a][d].dd[b][e]
                                    - gam[a][b].dd[d][e]);
                    }
                    dchr[e][c][a][b] = 0.5 * dv;
                }
            }
        }
    }
    // R^c_{101} = ∂_0 Γ^c_{11} − ∂_1 Γ^c_{01} + Γ^c_{0e}Γ^e_{11} − Γ^c_{1e}Γ^e_{01}
    let mut r_up = [0.0; 2];
    for (c, r) in r_up.iter_mut().enumerate() {
        let mut acc = dchr[0][c][1][1] - dchr[1][c][0][1];
        for e in 0..2 {
            acc += chr[c][0][e] * chr[e][1][1] - chr[c][1][e] * chr[e][0][1];
        }
        *r = acc;
    }
    let r_0101 = gam[0][0].v * r_up[0] + gam[0][1].v * r_up[1];
    r_0101 / det
}

/// `∫_Σ f dμ` by quadrature against the area density.
pub fn surface_integrate(grid: &GridS2, geom: &SurfaceGeometry, field: &ScalarField) -> f64 {
    field
        .0
        .iter()
        .zip(&geom.area_density.0)
        .zip(grid.node_weights())
        .map(|((f, j), w)| f * j * w)
        .sum()
}

/// Mean of a field w.r.t. `dμ`.
pub fn surface_average(grid: &GridS2, geom: &SurfaceGeometry, field: &ScalarField) -> f64 {
    surface_integrate(grid, geom, field) / geom.area
}

/// Surface Laplacian `Δ_Σ f = γ^{ab} ∂_a∂_b f + C^a ∂_a f` with exact
/// per-node coefficients and spectral derivatives of `f`.
pub fn surface_laplacian(
    grid: &GridS2,
    geom: &SurfaceGeometry,
    field: &ScalarField,
) -> Result<ScalarField> {
    let coeffs = grid.analysis(field)?;
    let jets = grid.jet(&coeffs, 2)?;
    let mut out = vec![0.0; grid.n_nodes()];
    for (node, j) in jets.iter().enumerate() {
        out[node] = laplacian_from_jet(geom, node, j);
    }
    Ok(ScalarField(out))
}

/// Apply the Laplacian to a field given as a per-node jet.
pub fn laplacian_from_jet(geom: &SurfaceGeometry, node: usize, j: &AngularJet) -> f64 {
    let gi = &geom.inv_metric[node];
    let c = &geom.lap_drift[node];
    gi[0][0] * j.dtt + 2.0 * gi[0][1] * j.dtp + gi[1][1] * j.dpp + c[0] * j.dt + c[1] * j.dp
}

/// Worst-node violation of `|∂_r^⊤|² + ⟨∂_r,ν⟩² = g(∂_r,∂_r)`.
pub fn orientation_consistency(geom: &SurfaceGeometry) -> f64 {
    let mut worst: f64 = 0.0;
    for node in 0..geom.rho.len() {
        let lhs = geom.radial_tangent_sq.0[node] + geom.normal_radial.0[node].powi(2);
        worst = worst.max((lhs - geom.g_rr.0[node]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{coordinate_sphere_h, AmbientMetricSpec, MassAspect};
    use crate::s2grid::{coeff_index, Component};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid() -> GridS2 {
        GridS2::build(16).unwrap()
    }

    fn aniso_spec(band_limit: usize) -> AmbientMetricSpec {
        let mut coeffs = CoeffVector::constant(band_limit, 2.0);
        coeffs.0[coeff_index(2, 0, Component::Zonal)] = (PI / 5.0).sqrt();
        AmbientMetricSpec::rotationally_symmetric(band_limit, 0.0)
            .with_mass_aspect(MassAspect { coeffs })
    }

    fn perturbed_surface(band_limit: usize, r_hat: f64, amp: f64) -> GraphSurface {
        let mut c = CoeffVector::constant(band_limit, r_hat);
        c.0[coeff_index(2, 1, Component::Cos)] = amp;
        c.0[coeff_index(3, 2, Component::Sin)] = 0.6 * amp;
        GraphSurface { rho_coeffs: c }
    }

    #[test]
    fn round_hyperbolic_sphere_is_umbilic() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = GraphSurface::round(16, 3.0);
        let geom = geometry_of(&eval, &surf).unwrap();
        let coth3 = 3.0f64.cosh() / 3.0f64.sinh();
        for node in 0..g2.n_nodes() {
            assert_abs_diff_eq!(geom.mean_curvature.0[node], 2.0 * coth3, epsilon = 1e-10);
            assert!(geom.ring_a_sq.0[node].abs() < 1e-10);
            assert!(geom.radial_tangent_sq.0[node].abs() < 1e-10);
            assert_abs_diff_eq!(geom.normal_radial.0[node], 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(geom.area, 4.0 * PI * 3.0f64.sinh().powi(2), epsilon = 1e-8);
        assert_abs_diff_eq!(geom.r_hat, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_bonnet_on_round_sphere() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = GraphSurface::round(16, 3.0);
        let geom = geometry_of(&eval, &surf).unwrap();
        let total = surface_integrate(&g2, &geom, &geom.gauss_intrinsic);
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-8);
    }

    #[test]
    fn gauss_bonnet_on_perturbed_sphere() {
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.05);
        let geom = geometry_of(&eval, &surf).unwrap();
        let total = surface_integrate(&g2, &geom, &geom.gauss_intrinsic);
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-8);
    }

    #[test]
    fn coordinate_sphere_h_cross_check() {
        let g2 = grid();
        let spec = AmbientMetricSpec::rotationally_symmetric(16, 2.0);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = GraphSurface::round(16, 4.0);
        let geom = geometry_of(&eval, &surf).unwrap();
        let h_ref = coordinate_sphere_h(&eval, 4.0).unwrap();
        for node in 0..g2.n_nodes() {
            assert_abs_diff_eq!(geom.mean_curvature.0[node], h_ref.0[node], epsilon = 1e-10);
        }
    }

    #[test]
    fn gauss_equation_residual_small_everywhere() {
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.08);
        let geom = geometry_of(&eval, &surf).unwrap();
        for node in 0..g2.n_nodes() {
            let resid = (geom.gauss_intrinsic.0[node] - geom.gauss_from_ambient.0[node]).abs();
            assert!(resid < 1e-7, "Gauss-equation residual {resid:.3e} at node {node}");
        }
    }

    #[test]
    fn radial_decomposition_is_consistent() {
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.08);
        let geom = geometry_of(&eval, &surf).unwrap();
        assert!(orientation_consistency(&geom) < 1e-10);
    }

    #[test]
    fn induced_metric_derivatives_match_finite_differences() {
        // Oracle: rebuild γ_ab at shifted angles from pointwise
        // evaluations and compare against the chain-rule jets.
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.05);
        let rho_coeffs = surf.rho_coeffs.resized(16);

        let gamma_at = |theta: f64, phi: f64| -> [[f64; 2]; 2] {
            let rj = g2.eval_jet_at(&rho_coeffs, theta, phi, 1);
            let jet = eval.metric_jet_at(rj.v, theta, phi).unwrap();
            let rd = [rj.dt, rj.dp];
            let mut out = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    out[a][b] = jet.g[a + 1][b + 1]
                        + jet.g[0][b + 1] * rd[a]
                        + jet.g[0][a + 1] * rd[b]
                        + jet.g[0][0] * rd[a] * rd[b];
                }
            }
            out
        };

        let node = 3 * g2.n_phi() + 7;
        let (t0, p0) = g2.node_angles(node);
        let rho_jets = g2.jet(&rho_coeffs, 3).unwrap();
        let jet = eval.metric_jet(node, rho_jets[node].v).unwrap();
        let rho = &rho_jets[node];
        let rt = rho_t_sjet(rho);
        let rp = rho_p_sjet(rho);
        let rj = [rt, rp];
        let amb = |i: usize, j: usize| -> SJet {
            let xd = [jet.d[0][i][j], jet.d[1][i][j], jet.d[2][i][j]];
            let mut xdd = [[0.0; 3]; 3];
            for mu in 0..3 {
                for nu in 0..3 {
                    xdd[mu][nu] = jet.dd[mu][nu][i][j];
                }
            }
            ambient_sjet(jet.g[i][j], xd, &xdd, rho)
        };
        let mut gam = [[SJet::default(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                gam[a][b] = amb(a + 1, b + 1)
                    + amb(0, b + 1) * rj[a]
                    + amb(0, a + 1) * rj[b]
                    + amb(0, 0) * rj[a] * rj[b];
            }
        }

        let h = 1e-5;
        let gp = gamma_at(t0 + h, p0);
        let gm = gamma_at(t0 - h, p0);
        let g0 = gamma_at(t0, p0);
        let qp = gamma_at(t0, p0 + h);
        let qm = gamma_at(t0, p0 - h);
        let scale = 4.0f64.sinh().powi(2);
        for a in 0..2 {
            for b in 0..2 {
                let fd_t = (gp[a][b] - gm[a][b]) / (2.0 * h);
                let fd_p = (qp[a][b] - qm[a][b]) / (2.0 * h);
                let fd_tt = (gp[a][b] - 2.0 * g0[a][b] + gm[a][b]) / (h * h);
                assert_abs_diff_eq!(gam[a][b].d[0], fd_t, epsilon = 1e-8 * scale);
                assert_abs_diff_eq!(gam[a][b].d[1], fd_p, epsilon = 1e-8 * scale);
                assert_abs_diff_eq!(gam[a][b].dd[0][0], fd_tt, epsilon = 1e-4 * scale);
            }
        }
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.05);
        let geom = geometry_of(&eval, &surf).unwrap();
        let lap = surface_laplacian(&g2, &geom, &ScalarField::constant(&g2, 2.5)).unwrap();
        assert!(lap.sup_norm() < 1e-12);
    }

    #[test]
    fn laplacian_eigenvalue_on_round_sphere() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let r_hat = 3.0;
        let surf = GraphSurface::round(16, r_hat);
        let geom = geometry_of(&eval, &surf).unwrap();
        let x3 = ScalarField(
            (0..g2.n_nodes())
                .map(|node| g2.node_unit_vector(node)[2])
                .collect(),
        );
        let lap = surface_laplacian(&g2, &geom, &x3).unwrap();
        let factor = -2.0 / r_hat.sinh().powi(2);
        for (l, v) in lap.0.iter().zip(&x3.0) {
            assert_abs_diff_eq!(*l, factor * v, epsilon = 1e-8);
        }
        let one = ScalarField::constant(&g2, 1.0);
        assert_abs_diff_eq!(
            surface_integrate(&g2, &geom, &one),
            4.0 * PI * r_hat.sinh().powi(2),
            epsilon = 1e-8
        );
    }

    #[test]
    fn laplacian_is_self_adjoint_and_divergence_free() {
        let g2 = grid();
        let spec = aniso_spec(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = perturbed_surface(16, 4.0, 0.05);
        let geom = geometry_of(&eval, &surf).unwrap();
        let mut cf = CoeffVector::zeros(16);
        cf.0[coeff_index(2, 0, Component::Zonal)] = 0.9;
        cf.0[coeff_index(5, 3, Component::Cos)] = 0.4;
        let mut cg = CoeffVector::zeros(16);
        cg.0[coeff_index(1, 1, Component::Sin)] = 1.1;
        cg.0[coeff_index(4, 2, Component::Cos)] = -0.7;
        let f = g2.synthesis(&cf).unwrap();
        let gfield = g2.synthesis(&cg).unwrap();
        let lf = surface_laplacian(&g2, &geom, &f).unwrap();
        let lg = surface_laplacian(&g2, &geom, &gfield).unwrap();
        let lhs = surface_integrate(
            &g2,
            &geom,
            &ScalarField(f.0.iter().zip(&lg.0).map(|(a, b)| a * b).collect()),
        );
        let rhs = surface_integrate(
            &g2,
            &geom,
            &ScalarField(gfield.0.iter().zip(&lf.0).map(|(a, b)| a * b).collect()),
        );
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        let total = surface_integrate(&g2, &geom, &lf);
        assert!(total.abs() < 1e-8, "divergence defect {total:.3e}");
    }

    #[test]
    fn area_radius_closed_form() {
        assert_abs_diff_eq!(
            area_radius(4.0 * PI * 3.0f64.sinh().powi(2)).unwrap(),
            3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(area_radius(4.0 * PI).unwrap(), 1.0f64.asinh(), epsilon = 1e-12);
        assert!(area_radius(-1.0).is_err());
        let mut last = 0.0;
        for a in [1e-6, 1e-4, 1e-2, 1.0] {
            let r = area_radius(a).unwrap();
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn surface_outside_chart_is_rejected() {
        let g2 = grid();
        let spec = AmbientMetricSpec::hyperbolic(16);
        let eval = AmbientEval::new(&spec, &g2).unwrap();
        let surf = GraphSurface::round(16, 0.5);
        assert!(geometry_of(&eval, &surf).is_err());
    }
}
