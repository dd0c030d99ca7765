//! The flattening map `Phi_eta` of an epigraph: round trip error and the
//! finite-difference Jacobian determinant, which should equal `-eta`.
use nalgebra::DMatrix;
use nonlocal_korn::geometry::{EpigraphDomain, Profile};

fn fd_jacobian_det(dom: &EpigraphDomain, eta: f64, x: &[f64]) -> f64 {
    let d = x.len();
    let h = 1e-6;
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (dom.phi_eta(eta, &xp).unwrap(), dom.phi_eta(eta, &xm).unwrap());
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac.determinant()
}

fn main() -> nonlocal_korn::Result<()> {
    // (x', depth below the graph)
    let points = [(0.3, 0.9), (-1.2, 0.05), (2.0, 1.7)];
    for name in Profile::NAMES {
        let dom = EpigraphDomain::new(2, Profile::with_lipschitz(name, 0.45)?)?;
        for eta in [0.5, 1.0, 2.0] {
            let (mut trip, mut det_err) = (0.0f64, 0.0f64);
            for &(xp, depth) in &points {
                let x = [xp, dom.height(&[xp, 0.0]) - depth];
                let y = dom.phi_eta(eta, &x)?;
                let back = dom.phi_eta_inverse(eta, &y)?;
                trip = trip.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                det_err = det_err.max((fd_jacobian_det(&dom, eta, &x) + eta).abs());
            }
            println!("{name:>6} eta={eta}: round trip {trip:.1e}, |det + eta| {det_err:.1e}");
        }
    }
    Ok(())
}
