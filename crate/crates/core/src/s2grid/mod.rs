//! Spectral kernel on S²: Gauss–Legendre × equispaced-longitude grid,
//! real spherical-harmonic analysis/synthesis, angular differentiation
//! and quadrature.
//!
//! Nodes are `(ϑ_i, φ_j)` with `ϑ_i` the Gauss–Legendre colatitudes
//! (no pole samples) and `φ_j = 2πj / n_φ`, `n_φ = 2L + 2`. Quadrature
//! is exact for harmonics of degree ≤ 2L. Transform plans are immutable
//! after construction and all operations are pure.
//!
//! Real basis and packing order (documented for the config schema):
//! `Y_{l0} = P̄_{l0}`, `Y^c_{lm} = √2 P̄_{lm} cos mφ`,
//! `Y^s_{lm} = √2 P̄_{lm} sin mφ`, stored as
//! `index(l, 0) = l²`, `index(l, m, cos) = l² + 2m − 1`,
//! `index(l, m, sin) = l² + 2m`. In `{l, m, value}` triples the sine
//! component carries `m < 0`.

mod legendre;

pub use legendre::{gauss_legendre, plm_jet, plm_values, PlmJet};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Scalar samples at the grid nodes, row-major `i_theta * n_phi + i_phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn constant(grid: &GridS2, value: f64) -> Self {
        ScalarField(vec![value; grid.n_nodes()])
    }
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Real spherical-harmonic coefficients, packed as described in the
/// module docs; length `(L + 1)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffVector(pub Vec<f64>);

impl CoeffVector {
    pub fn zeros(band_limit: usize) -> Self {
        CoeffVector(vec![0.0; (band_limit + 1) * (band_limit + 1)])
    }

    /// Coefficient vector of the constant function `value`.
    pub fn constant(band_limit: usize, value: f64) -> Self {
        let mut c = Self::zeros(band_limit);
        c.0[0] = value * (4.0 * PI).sqrt();
        c
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn band_limit(&self) -> usize {
        (self.0.len() as f64).sqrt() as usize - 1
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Restrict or zero-pad to a new band limit.
    pub fn resized(&self, band_limit: usize) -> CoeffVector {
        let mut out = CoeffVector::zeros(band_limit);
        let lmax = self.band_limit().min(band_limit);
        for l in 0..=lmax {
            for k in (l * l)..(l + 1) * (l + 1) {
                out.0[k] = self.0[k];
            }
        }
        out
    }

    pub fn to_triples(&self) -> Vec<HarmonicCoefficient> {
        let mut out = Vec::new();
        let lmax = self.band_limit();
        for l in 0..=lmax {
            let v = self.0[coeff_index(l, 0, Component::Zonal)];
            if v != 0.0 {
                out.push(HarmonicCoefficient {
                    l: l as u32,
                    m: 0,
                    value: v,
                });
            }
            for m in 1..=l {
                let c = self.0[coeff_index(l, m, Component::Cos)];
                if c != 0.0 {
                    out.push(HarmonicCoefficient {
                        l: l as u32,
                        m: m as i32,
                        value: c,
                    });
                }
                let s = self.0[coeff_index(l, m, Component::Sin)];
                if s != 0.0 {
                    out.push(HarmonicCoefficient {
                        l: l as u32,
                        m: -(m as i32),
                        value: s,
                    });
                }
            }
        }
        out
    }

    pub fn from_triples(band_limit: usize, triples: &[HarmonicCoefficient]) -> Result<CoeffVector> {
        let mut out = CoeffVector::zeros(band_limit);
        for t in triples {
            let l = t.l as usize;
            let m = t.m.unsigned_abs() as usize;
            if l > band_limit || m > l {
                return Err(Error::Domain {
                    op: "coeff_from_triples",
                    message: format!("coefficient (l={}, m={}) outside band limit {}", t.l, t.m, band_limit),
                });
            }
            let comp = if t.m == 0 {
                Component::Zonal
            } else if t.m > 0 {
                Component::Cos
            } else {
                Component::Sin
            };
            out.0[coeff_index(l, m, comp)] = t.value;
        }
        Ok(out)
    }
}

/// One `{l, m, value}` entry of a serialized coefficient vector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HarmonicCoefficient {
    pub l: u32,
    /// `m = 0` zonal, `m > 0` cosine, `m < 0` sine component of `|m|`.
    pub m: i32,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Zonal,
    Cos,
    Sin,
}

/// Flat index of the real coefficient `(l, m)`.
pub fn coeff_index(l: usize, m: usize, component: Component) -> usize {
    match component {
        Component::Zonal => l * l,
        Component::Cos => l * l + 2 * m - 1,
        Component::Sin => l * l + 2 * m,
    }
}

/// Value and angular derivatives of a scalar at one point, up to third
/// order. Unused orders stay zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct AngularJet {
    pub v: f64,
    pub dt: f64,
    pub dp: f64,
    pub dtt: f64,
    pub dtp: f64,
    pub dpp: f64,
    pub dttt: f64,
    pub dttp: f64,
    pub dtpp: f64,
    pub dppp: f64,
}

/// First derivatives, orthonormal-frame gradient components and
/// Laplace–Beltrami image of a band-limited field w.r.t. `g₀`.
#[derive(Clone, Debug)]
pub struct AngularDerivatives {
    pub d_theta: ScalarField,
    pub d_phi: ScalarField,
    /// `∂ϑ f` (gradient component along `e_ϑ`).
    pub grad_theta: ScalarField,
    /// `(1/sin ϑ) ∂φ f` (gradient component along `e_φ`).
    pub grad_phi: ScalarField,
    pub laplacian: ScalarField,
}

struct MTables {
    /// Row-major `[i_theta][l - m]` tables of P̄ and its ϑ-derivatives.
    val: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
    cols: usize,
}

/// Spectral sphere grid with quadrature weights and transform plans.
pub struct GridS2 {
    band_limit: usize,
    n_theta: usize,
    n_phi: usize,
    colatitudes: Vec<f64>,
    longitudes: Vec<f64>,
    sin_colat: Vec<f64>,
    cos_colat: Vec<f64>,
    gl_weights: Vec<f64>,
    node_weights: Vec<f64>,
    tables: Vec<MTables>,
    /// `cos(m φ_j)` at `m * n_phi + j`, `m = 0..=L`.
    cos_mphi: Vec<f64>,
    sin_mphi: Vec<f64>,
}

impl GridS2 {
    /// Build the transform plan for band limit `L ≥ 8`.
    pub fn build(band_limit: usize) -> Result<GridS2> {
        if band_limit < 8 {
            return Err(Error::Domain {
                op: "build_grid",
                message: format!("band limit must be at least 8, got {band_limit}"),
            });
        }
        let n_theta = band_limit + 1;
        let n_phi = 2 * band_limit + 2;
        let (x, w) = gauss_legendre(n_theta);
        // Ascending x = cos ϑ means descending ϑ; store colatitudes ascending.
        let colatitudes: Vec<f64> = x.iter().rev().map(|xi| xi.acos()).collect();
        let gl_weights: Vec<f64> = w.iter().rev().copied().collect();
        let longitudes: Vec<f64> = (0..n_phi)
            .map(|j| 2.0 * PI * j as f64 / n_phi as f64)
            .collect();
        let sin_colat: Vec<f64> = colatitudes.iter().map(|t| t.sin()).collect();
        let cos_colat: Vec<f64> = colatitudes.iter().map(|t| t.cos()).collect();

        let dphi = 2.0 * PI / n_phi as f64;
        let mut node_weights = Vec::with_capacity(n_theta * n_phi);
        for wi in &gl_weights {
            for _ in 0..n_phi {
                node_weights.push(wi * dphi);
            }
        }

        let mut tables = Vec::with_capacity(band_limit + 1);
        for m in 0..=band_limit {
            let cols = band_limit - m + 1;
            let mut t = MTables {
                val: vec![0.0; n_theta * cols],
                d1: vec![0.0; n_theta * cols],
                d2: vec![0.0; n_theta * cols],
                d3: vec![0.0; n_theta * cols],
                cols,
            };
            for (i, theta) in colatitudes.iter().enumerate() {
                let jet = plm_jet(m, band_limit, *theta);
                t.val[i * cols..(i + 1) * cols].copy_from_slice(&jet.val);
                t.d1[i * cols..(i + 1) * cols].copy_from_slice(&jet.d1);
                t.d2[i * cols..(i + 1) * cols].copy_from_slice(&jet.d2);
                t.d3[i * cols..(i + 1) * cols].copy_from_slice(&jet.d3);
            }
            tables.push(t);
        }

        let mut cos_mphi = vec![0.0; (band_limit + 1) * n_phi];
        let mut sin_mphi = vec![0.0; (band_limit + 1) * n_phi];
        for m in 0..=band_limit {
            for (j, phi) in longitudes.iter().enumerate() {
                cos_mphi[m * n_phi + j] = (m as f64 * phi).cos();
                sin_mphi[m * n_phi + j] = (m as f64 * phi).sin();
            }
        }

        Ok(GridS2 {
            band_limit,
            n_theta,
            n_phi,
            colatitudes,
            longitudes,
            sin_colat,
            cos_colat,
            gl_weights,
            node_weights,
            tables,
            cos_mphi,
            sin_mphi,
        })
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn n_nodes(&self) -> usize {
        self.n_theta * self.n_phi
    }
    pub fn n_coeffs(&self) -> usize {
        (self.band_limit + 1) * (self.band_limit + 1)
    }
    pub fn colatitudes(&self) -> &[f64] {
        &self.colatitudes
    }
    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }
    /// Solid-angle quadrature weight of each node (sums to 4π).
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn node_angles(&self, node: usize) -> (f64, f64) {
        let i = node / self.n_phi;
        let j = node % self.n_phi;
        (self.colatitudes[i], self.longitudes[j])
    }

    /// Unit-vector position of a node in the ambient ℝ³ chart.
    pub fn node_unit_vector(&self, node: usize) -> [f64; 3] {
        let i = node / self.n_phi;
        let j = node % self.n_phi;
        let (st, ct) = (self.sin_colat[i], self.cos_colat[i]);
        let (sp, cp) = (self.longitudes[j].sin(), self.longitudes[j].cos());
        [st * cp, st * sp, ct]
    }

    pub fn sin_colat(&self, node: usize) -> f64 {
        self.sin_colat[node / self.n_phi]
    }
    pub fn cos_colat(&self, node: usize) -> f64 {
        self.cos_colat[node / self.n_phi]
    }

    /// `∫_{S²} f dμ₀` by quadrature.
    pub fn integrate(&self, field: &ScalarField) -> f64 {
        debug_assert_eq!(field.len(), self.n_nodes());
        field
            .0
            .iter()
            .zip(&self.node_weights)
            .map(|(f, w)| f * w)
            .sum()
    }

    /// Harmonic analysis: quadrature projection onto the real basis.
    pub fn analysis(&self, field: &ScalarField) -> Result<CoeffVector> {
        if field.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                op: "sh_analysis",
                expected: self.n_nodes(),
                got: field.len(),
            });
        }
        let l_max = self.band_limit;
        let dphi = 2.0 * PI / self.n_phi as f64;
        // Fourier stage: ring-wise projections onto cos(mφ), sin(mφ).
        let mut ring_cos = vec![0.0; self.n_theta * (l_max + 1)];
        let mut ring_sin = vec![0.0; self.n_theta * (l_max + 1)];
        for i in 0..self.n_theta {
            let row = &field.0[i * self.n_phi..(i + 1) * self.n_phi];
            for m in 0..=l_max {
                let (mut a, mut b) = (0.0, 0.0);
                let ct = &self.cos_mphi[m * self.n_phi..(m + 1) * self.n_phi];
                let st = &self.sin_mphi[m * self.n_phi..(m + 1) * self.n_phi];
                for j in 0..self.n_phi {
                    a += row[j] * ct[j];
                    b += row[j] * st[j];
                }
                ring_cos[i * (l_max + 1) + m] = a * dphi;
                ring_sin[i * (l_max + 1) + m] = b * dphi;
            }
        }
        // Legendre stage.
        let mut out = CoeffVector::zeros(l_max);
        let sqrt2 = std::f64::consts::SQRT_2;
        for m in 0..=l_max {
            let t = &self.tables[m];
            for (k, l) in (m..=l_max).enumerate() {
                let (mut c, mut s) = (0.0, 0.0);
                for i in 0..self.n_theta {
                    let p = t.val[i * t.cols + k] * self.gl_weights[i];
                    c += p * ring_cos[i * (l_max + 1) + m];
                    s += p * ring_sin[i * (l_max + 1) + m];
                }
                if m == 0 {
                    out.0[coeff_index(l, 0, Component::Zonal)] = c;
                } else {
                    out.0[coeff_index(l, m, Component::Cos)] = sqrt2 * c;
                    out.0[coeff_index(l, m, Component::Sin)] = sqrt2 * s;
                }
            }
        }
        Ok(out)
    }

    /// Harmonic synthesis at the grid nodes.
    pub fn synthesis(&self, coeffs: &CoeffVector) -> Result<ScalarField> {
        let mut out = vec![0.0; self.n_nodes()];
        self.synth_order_into(coeffs, 0, 0, &mut out)?;
        Ok(ScalarField(out))
    }

    /// Synthesis of `∂ϑ^a ∂φ^p f` at the nodes, `a ≤ 3`, `a + p ≤ 3`.
    pub fn synth_deriv(&self, coeffs: &CoeffVector, a: usize, p: usize) -> Result<ScalarField> {
        let mut out = vec![0.0; self.n_nodes()];
        self.synth_order_into(coeffs, a, p, &mut out)?;
        Ok(ScalarField(out))
    }

    fn synth_order_into(
        &self,
        coeffs: &CoeffVector,
        a: usize,
        p: usize,
        out: &mut [f64],
    ) -> Result<()> {
        if coeffs.len() != self.n_coeffs() {
            return Err(Error::DimensionMismatch {
                op: "sh_synthesis",
                expected: self.n_coeffs(),
                got: coeffs.len(),
            });
        }
        assert!(a <= 3 && p <= 3, "jet order capped at 3");
        let l_max = self.band_limit;
        let sqrt2 = std::f64::consts::SQRT_2;
        out.fill(0.0);
        // Legendre stage with the a-th ϑ-derivative tables.
        let mut ring_cos = vec![0.0; self.n_theta * (l_max + 1)];
        let mut ring_sin = vec![0.0; self.n_theta * (l_max + 1)];
        for m in 0..=l_max {
            let t = &self.tables[m];
            let table = match a {
                0 => &t.val,
                1 => &t.d1,
                2 => &t.d2,
                _ => &t.d3,
            };
            for i in 0..self.n_theta {
                let (mut c, mut s) = (0.0, 0.0);
                for (k, l) in (m..=l_max).enumerate() {
                    let pv = table[i * t.cols + k];
                    if m == 0 {
                        c += coeffs.0[coeff_index(l, 0, Component::Zonal)] * pv;
                    } else {
                        c += coeffs.0[coeff_index(l, m, Component::Cos)] * pv;
                        s += coeffs.0[coeff_index(l, m, Component::Sin)] * pv;
                    }
                }
                if m > 0 {
                    c *= sqrt2;
                    s *= sqrt2;
                }
                ring_cos[i * (l_max + 1) + m] = c;
                ring_sin[i * (l_max + 1) + m] = s;
            }
        }
        // Fourier stage with p φ-derivatives: (c, s) ↦ twisted pair.
        for i in 0..self.n_theta {
            let base = i * self.n_phi;
            for m in 0..=l_max {
                let mut c = ring_cos[i * (l_max + 1) + m];
                let mut s = ring_sin[i * (l_max + 1) + m];
                for _ in 0..p {
                    let (c1, s1) = (m as f64 * s, -(m as f64) * c);
                    c = c1;
                    s = s1;
                }
                if c == 0.0 && s == 0.0 {
                    continue;
                }
                let ct = &self.cos_mphi[m * self.n_phi..(m + 1) * self.n_phi];
                let st = &self.sin_mphi[m * self.n_phi..(m + 1) * self.n_phi];
                for j in 0..self.n_phi {
                    out[base + j] += c * ct[j] + s * st[j];
                }
            }
        }
        Ok(())
    }

    /// Full derivative jet at the nodes up to `order ≤ 3`.
    pub fn jet(&self, coeffs: &CoeffVector, order: usize) -> Result<Vec<AngularJet>> {
        let mut out = vec![AngularJet::default(); self.n_nodes()];
        self.jet_into(coeffs, order, &mut out)?;
        Ok(out)
    }

    /// Same as [`GridS2::jet`] but reusing a caller buffer.
    pub fn jet_into(
        &self,
        coeffs: &CoeffVector,
        order: usize,
        out: &mut [AngularJet],
    ) -> Result<()> {
        assert!(order <= 3);
        assert_eq!(out.len(), self.n_nodes());
        let mut buf = vec![0.0; self.n_nodes()];
        let orders: &[(usize, usize)] = match order {
            0 => &[(0, 0)],
            1 => &[(0, 0), (1, 0), (0, 1)],
            2 => &[(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
            _ => &[
                (0, 0),
                (1, 0),
                (0, 1),
                (2, 0),
                (1, 1),
                (0, 2),
                (3, 0),
                (2, 1),
                (1, 2),
                (0, 3),
            ],
        };
        for &(a, p) in orders {
            self.synth_order_into(coeffs, a, p, &mut buf)?;
            for (jet, v) in out.iter_mut().zip(&buf) {
                match (a, p) {
                    (0, 0) => jet.v = *v,
                    (1, 0) => jet.dt = *v,
                    (0, 1) => jet.dp = *v,
                    (2, 0) => jet.dtt = *v,
                    (1, 1) => jet.dtp = *v,
                    (0, 2) => jet.dpp = *v,
                    (3, 0) => jet.dttt = *v,
                    (2, 1) => jet.dttp = *v,
                    (1, 2) => jet.dtpp = *v,
                    _ => jet.dppp = *v,
                }
            }
        }
        Ok(())
    }

    /// Jet of a single real basis function at every node by table
    /// lookup; the workhorse of operator assembly.
    pub fn basis_jet_into(
        &self,
        l: usize,
        m: usize,
        component: Component,
        out: &mut [AngularJet],
    ) {
        assert_eq!(out.len(), self.n_nodes());
        let t = &self.tables[m];
        let k = l - m;
        let (c0, s0) = match component {
            Component::Zonal => (1.0, 0.0),
            Component::Cos => (std::f64::consts::SQRT_2, 0.0),
            Component::Sin => (0.0, std::f64::consts::SQRT_2),
        };
        let mf = m as f64;
        // (c, s) pairs after p φ-derivatives of c·cos(mφ) + s·sin(mφ).
        let mut cs = [(c0, s0); 4];
        for p in 1..4 {
            let (c, s) = cs[p - 1];
            cs[p] = (mf * s, -mf * c);
        }
        let ct = &self.cos_mphi[m * self.n_phi..(m + 1) * self.n_phi];
        let st = &self.sin_mphi[m * self.n_phi..(m + 1) * self.n_phi];
        for i in 0..self.n_theta {
            let pv = [
                t.val[i * t.cols + k],
                t.d1[i * t.cols + k],
                t.d2[i * t.cols + k],
                t.d3[i * t.cols + k],
            ];
            for j in 0..self.n_phi {
                let f = |a: usize, p: usize| -> f64 {
                    let (c, s) = cs[p];
                    pv[a] * (c * ct[j] + s * st[j])
                };
                out[i * self.n_phi + j] = AngularJet {
                    v: f(0, 0),
                    dt: f(1, 0),
                    dp: f(0, 1),
                    dtt: f(2, 0),
                    dtp: f(1, 1),
                    dpp: f(0, 2),
                    dttt: f(3, 0),
                    dttp: f(2, 1),
                    dtpp: f(1, 2),
                    dppp: f(0, 3),
                };
            }
        }
    }

    /// `(l, m, component)` of a flat coefficient index.
    pub fn coeff_lm(&self, index: usize) -> (usize, usize, Component) {
        let l = (index as f64).sqrt() as usize;
        let off = index - l * l;
        if off == 0 {
            (l, 0, Component::Zonal)
        } else if off % 2 == 1 {
            (l, off.div_ceil(2), Component::Cos)
        } else {
            (l, off / 2, Component::Sin)
        }
    }

    /// Pointwise jet of a band-limited field at an arbitrary interior
    /// point (recurrence-based, no interpolation).
    pub fn eval_jet_at(&self, coeffs: &CoeffVector, theta: f64, phi: f64, order: usize) -> AngularJet {
        assert!(order <= 3);
        let l_max = self.band_limit;
        let theta = theta.clamp(1e-12, PI - 1e-12);
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut jet = AngularJet::default();
        for m in 0..=l_max {
            let pj = plm_jet(m, l_max, theta);
            // Legendre sums for this m at each ϑ-order.
            let mut c = [0.0f64; 4];
            let mut s = [0.0f64; 4];
            for (k, l) in (m..=l_max).enumerate() {
                let (cc, ss) = if m == 0 {
                    (coeffs.0[coeff_index(l, 0, Component::Zonal)], 0.0)
                } else {
                    (
                        coeffs.0[coeff_index(l, m, Component::Cos)],
                        coeffs.0[coeff_index(l, m, Component::Sin)],
                    )
                };
                let tabs = [pj.val[k], pj.d1[k], pj.d2[k], pj.d3[k]];
                for (ord, t) in tabs.iter().enumerate().take(order + 1) {
                    c[ord] += cc * t;
                    s[ord] += ss * t;
                }
            }
            if m > 0 {
                for ord in 0..=order {
                    c[ord] *= sqrt2;
                    s[ord] *= sqrt2;
                }
            }
            let mf = m as f64;
            let (cp, sp) = ((mf * phi).cos(), (mf * phi).sin());
            // φ-twists: value, 1st, 2nd, 3rd φ-derivative of c·cos + s·sin.
            let fourier = |c: f64, s: f64, p: usize| -> f64 {
                let (mut cc, mut ss) = (c, s);
                for _ in 0..p {
                    let (c1, s1) = (mf * ss, -mf * cc);
                    cc = c1;
                    ss = s1;
                }
                cc * cp + ss * sp
            };
            jet.v += fourier(c[0], s[0], 0);
            if order >= 1 {
                jet.dt += fourier(c[1], s[1], 0);
                jet.dp += fourier(c[0], s[0], 1);
            }
            if order >= 2 {
                jet.dtt += fourier(c[2], s[2], 0);
                jet.dtp += fourier(c[1], s[1], 1);
                jet.dpp += fourier(c[0], s[0], 2);
            }
            if order >= 3 {
                jet.dttt += fourier(c[3], s[3], 0);
                jet.dttp += fourier(c[2], s[2], 1);
                jet.dtpp += fourier(c[1], s[1], 2);
                jet.dppp += fourier(c[0], s[0], 3);
            }
        }
        jet
    }

    /// First derivatives, gradient components and Laplacian w.r.t. g₀.
    pub fn angular_derivatives(&self, field: &ScalarField) -> Result<AngularDerivatives> {
        let coeffs = self.analysis(field)?;
        let d_theta = self.synth_deriv(&coeffs, 1, 0)?;
        let d_phi = self.synth_deriv(&coeffs, 0, 1)?;
        let mut lap_coeffs = coeffs.clone();
        for l in 0..=self.band_limit {
            let lam = -(l as f64) * (l as f64 + 1.0);
            for k in (l * l)..(l + 1) * (l + 1) {
                lap_coeffs.0[k] *= lam;
            }
        }
        let laplacian = self.synthesis(&lap_coeffs)?;
        let mut grad_phi = vec![0.0; self.n_nodes()];
        for (node, v) in d_phi.0.iter().enumerate() {
            grad_phi[node] = v / self.sin_colat(node);
        }
        Ok(AngularDerivatives {
            grad_theta: d_theta.clone(),
            grad_phi: ScalarField(grad_phi),
            d_theta,
            d_phi,
            laplacian,
        })
    }

    /// Coefficients of `Δ₀ f` from coefficients of `f`.
    pub fn laplacian_coeffs(&self, coeffs: &CoeffVector) -> CoeffVector {
        let mut out = coeffs.clone();
        for l in 0..=self.band_limit {
            let lam = -(l as f64) * (l as f64 + 1.0);
            for k in (l * l)..(l + 1) * (l + 1) {
                out.0[k] *= lam;
            }
        }
        out
    }

    /// `∫ f g dμ₀` by quadrature.
    pub fn integrate_product(&self, f: &ScalarField, g: &ScalarField) -> f64 {
        f.0.iter()
            .zip(&g.0)
            .zip(&self.node_weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn x3_field(grid: &GridS2) -> ScalarField {
        ScalarField((0..grid.n_nodes()).map(|n| grid.node_unit_vector(n)[2]).collect())
    }

    #[test]
    fn rejects_small_band_limit() {
        assert!(GridS2::build(7).is_err());
    }

    #[test]
    fn weights_sum_to_sphere_area() {
        let grid = GridS2::build(16).unwrap();
        let total: f64 = grid.node_weights().iter().sum();
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn first_and_second_moments_of_coordinates() {
        let grid = GridS2::build(16).unwrap();
        let x3 = x3_field(&grid);
        assert_abs_diff_eq!(grid.integrate(&x3), 0.0, epsilon = 1e-12);
        let x3sq = ScalarField(x3.0.iter().map(|v| v * v).collect());
        assert_abs_diff_eq!(grid.integrate(&x3sq), 4.0 * PI / 3.0, epsilon = 1e-12);
        // off-diagonal moment ∫ x₁x₂ dμ₀ = 0
        let x1x2 = ScalarField(
            (0..grid.n_nodes())
                .map(|n| {
                    let p = grid.node_unit_vector(n);
                    p[0] * p[1]
                })
                .collect(),
        );
        assert_abs_diff_eq!(grid.integrate(&x1x2), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_field_analyzes_to_single_coefficient() {
        let grid = GridS2::build(8).unwrap();
        let c = grid.analysis(&ScalarField::constant(&grid, 1.0)).unwrap();
        assert_abs_diff_eq!(c.0[0], (4.0 * PI).sqrt(), epsilon = 1e-12);
        for v in &c.0[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn x3_is_a_pure_degree_one_harmonic() {
        let grid = GridS2::build(8).unwrap();
        let c = grid.analysis(&x3_field(&grid)).unwrap();
        let idx = coeff_index(1, 0, Component::Zonal);
        for (k, v) in c.0.iter().enumerate() {
            if k == idx {
                assert_abs_diff_eq!(*v, (4.0 * PI / 3.0).sqrt(), epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_eigenvalues() {
        let grid = GridS2::build(12).unwrap();
        // Δ₀ x₃ = −2 x₃
        let x3 = x3_field(&grid);
        let d = grid.angular_derivatives(&x3).unwrap();
        for (lap, v) in d.laplacian.0.iter().zip(&x3.0) {
            assert_abs_diff_eq!(*lap, -2.0 * v, epsilon = 1e-10);
        }
        // Δ₀ Y₂₀ = −6 Y₂₀
        let mut c = CoeffVector::zeros(12);
        c.0[coeff_index(2, 0, Component::Zonal)] = 1.0;
        let y20 = grid.synthesis(&c).unwrap();
        let d = grid.angular_derivatives(&y20).unwrap();
        for (lap, v) in d.laplacian.0.iter().zip(&y20.0) {
            assert_abs_diff_eq!(*lap, -6.0 * v, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let grid = GridS2::build(8).unwrap();
        let d = grid
            .angular_derivatives(&ScalarField::constant(&grid, 3.25))
            .unwrap();
        assert!(d.grad_theta.sup_norm() < 1e-12);
        assert!(d.grad_phi.sup_norm() < 1e-12);
    }

    #[test]
    fn pointwise_jet_matches_grid_jet_at_nodes() {
        let grid = GridS2::build(10).unwrap();
        let mut c = CoeffVector::zeros(10);
        c.0[coeff_index(3, 2, Component::Cos)] = 0.7;
        c.0[coeff_index(5, 4, Component::Sin)] = -0.4;
        c.0[coeff_index(1, 0, Component::Zonal)] = 1.3;
        let jets = grid.jet(&c, 3).unwrap();
        for node in [0usize, 17, 101, grid.n_nodes() - 1] {
            let (t, p) = grid.node_angles(node);
            let jp = grid.eval_jet_at(&c, t, p, 3);
            assert_abs_diff_eq!(jp.v, jets[node].v, epsilon = 1e-11);
            assert_abs_diff_eq!(jp.dt, jets[node].dt, epsilon = 1e-10);
            assert_abs_diff_eq!(jp.dp, jets[node].dp, epsilon = 1e-10);
            assert_abs_diff_eq!(jp.dtt, jets[node].dtt, epsilon = 1e-9);
            assert_abs_diff_eq!(jp.dtp, jets[node].dtp, epsilon = 1e-9);
            assert_abs_diff_eq!(jp.dppp, jets[node].dppp, epsilon = 1e-9);
            assert_abs_diff_eq!(jp.dttt, jets[node].dttt, epsilon = 1e-8);
        }
    }

    #[test]
    fn basis_jet_matches_generic_jet() {
        let grid = GridS2::build(9).unwrap();
        let mut out = vec![AngularJet::default(); grid.n_nodes()];
        for index in [0usize, 4, 11, 26, 77] {
            let (l, m, comp) = grid.coeff_lm(index);
            assert_eq!(coeff_index(l, m, comp), index);
            grid.basis_jet_into(l, m, comp, &mut out);
            let mut c = CoeffVector::zeros(9);
            c.0[index] = 1.0;
            let reference = grid.jet(&c, 3).unwrap();
            for (a, b) in out.iter().zip(&reference) {
                assert_abs_diff_eq!(a.v, b.v, epsilon = 1e-13);
                assert_abs_diff_eq!(a.dt, b.dt, epsilon = 1e-12);
                assert_abs_diff_eq!(a.dpp, b.dpp, epsilon = 1e-12);
                assert_abs_diff_eq!(a.dttp, b.dttp, epsilon = 1e-11);
                assert_abs_diff_eq!(a.dppp, b.dppp, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn integration_by_parts_on_the_sphere() {
        // ∫ f Δ₀ g dμ₀ = −∫ ⟨∇f, ∇g⟩ dμ₀: used verbatim by the
        // Kazdan–Warner computation.
        let grid = GridS2::build(16).unwrap();
        let mut cf = CoeffVector::zeros(16);
        cf.0[coeff_index(2, 1, Component::Cos)] = 0.8;
        cf.0[coeff_index(4, 0, Component::Zonal)] = -0.3;
        let mut cg = CoeffVector::zeros(16);
        cg.0[coeff_index(3, 2, Component::Sin)] = 0.5;
        cg.0[coeff_index(2, 1, Component::Cos)] = 0.4;
        let f = grid.synthesis(&cf).unwrap();
        let g = grid.synthesis(&cg).unwrap();
        let df = grid.angular_derivatives(&f).unwrap();
        let dg = grid.angular_derivatives(&g).unwrap();
        let lhs = grid.integrate_product(&f, &dg.laplacian);
        let grad_dot = ScalarField(
            (0..grid.n_nodes())
                .map(|n| {
                    df.grad_theta.0[n] * dg.grad_theta.0[n] + df.grad_phi.0[n] * dg.grad_phi.0[n]
                })
                .collect(),
        );
        let rhs = -grid.integrate(&grad_dot);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn triples_round_trip() {
        let mut c = CoeffVector::zeros(9);
        c.0[coeff_index(0, 0, Component::Zonal)] = 2.0;
        c.0[coeff_index(3, 1, Component::Sin)] = -0.25;
        c.0[coeff_index(9, 9, Component::Cos)] = 1e-3;
        let triples = c.to_triples();
        let back = CoeffVector::from_triples(9, &triples).unwrap();
        assert_eq!(c, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn analysis_synthesis_round_trip(seed in 0u64..1000) {
            // Deterministic pseudo-random band-limited coefficients.
            let grid = GridS2::build(12).unwrap();
            let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
            let mut c = CoeffVector::zeros(12);
            for v in c.0.iter_mut() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                *v = (state as f64 / u64::MAX as f64) - 0.5;
            }
            let f = grid.synthesis(&c).unwrap();
            let c2 = grid.analysis(&f).unwrap();
            for (a, b) in c.0.iter().zip(&c2.0) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn parseval_for_band_limited_fields(seed in 0u64..1000) {
            let grid = GridS2::build(10).unwrap();
            let mut state = seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(17);
            let mut c = CoeffVector::zeros(10);
            for v in c.0.iter_mut() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                *v = (state as f64 / u64::MAX as f64) - 0.5;
            }
            let f = grid.synthesis(&c).unwrap();
            let node_space = grid.integrate_product(&f, &f);
            let coeff_space: f64 = c.0.iter().map(|v| v * v).sum();
            prop_assert!((node_space - coeff_space).abs() < 1e-10 * coeff_space.max(1.0));
        }
    }
}
