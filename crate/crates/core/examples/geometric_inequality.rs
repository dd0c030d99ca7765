//! Monte Carlo check of the distance comparison between a point of the
//! epigraph and its reflection, plus a scan of the scalar threshold.
use nonlocal_korn::geometry::{comparison_threshold, geometric_inequality_check, EpigraphDomain, Profile};

fn main() -> nonlocal_korn::Result<()> {
    let dom = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.59)?)?;
    for eta in [0.5f64, 1.0, 2.0] {
        let c = 2.0 * eta.max(1.0);
        let r = geometric_inequality_check(&dom, eta, c, 100_000, 7)?;
        println!(
            "eta={eta} C={c}: threshold {:.4}, violations {}, quadratic-form violations {}, worst ratio {:.4}",
            r.threshold, r.violations, r.polynomial_violations, r.worst_ratio
        );
    }
    let min = (0..100)
        .map(|k| {
            let eta = 10f64.powf(-1.0 + 2.0 * k as f64 / 99.0);
            comparison_threshold(eta, 2.0 * eta.max(1.0))
        })
        .fold(f64::INFINITY, f64::min);
    println!("smallest threshold on the eta grid: {min:.6} (9/25 = 0.36)");

    let steep = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.7)?)?;
    if let Err(e) = geometric_inequality_check(&steep, 1.0, 2.0, 1000, 7) {
        println!("M = 0.7: {e}");
    }
    Ok(())
}
