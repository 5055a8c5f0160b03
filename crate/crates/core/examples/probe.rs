use ahcmc_core::ambient::*;
use ahcmc_core::s2grid::*;
use ahcmc_core::solver::*;
use ahcmc_core::surface::*;
use std::time::Instant;

fn main() {
    let g2 = GridS2::build(24).unwrap();
    let spec = AmbientMetricSpec::rotationally_symmetric(24, 2.0);
    let eval = AmbientEval::new(&spec, &g2).unwrap();
    let surf = GraphSurface::round(24, 4.0);
    let t0 = Instant::now();
    let geom = geometry_of(&eval, &surf).unwrap();
    println!("geometry: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let jac = shape_jacobian(&g2, &geom).unwrap();
    println!("jacobian assembly: {:?}", t0.elapsed());
    let rhs = nalgebra::DVector::from_element(g2.n_coeffs(), 1.0);
    let t0 = Instant::now();
    let _ = jac.clone().lu().solve(&rhs);
    println!("lu solve: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let svd = jac.clone().svd(true, true);
    let _ = svd.solve(&rhs, 1e-10).unwrap();
    println!("svd solve: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let jm = jacobi_operator(&g2, &geom);
    println!("operator assembly: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let spec2 = stability_spectrum(&jm).unwrap();
    println!("spectrum: {:?} lowest_p {:.3e}", t0.elapsed(), spec2.lowest_p);
}
