//! Searches over bump fields for a large Korn ratio with Nelder-Mead restarts.
use nonlocal_korn::geometry::BallDomain;
use nonlocal_korn::korn::{max_ratio_search, SearchFamily, SearchOptions};
use nonlocal_korn::seminorms::SeminormParams;

fn main() -> nonlocal_korn::Result<()> {
    let params = SeminormParams::new(0.4, 2.0)?;
    let opts = SearchOptions { family: SearchFamily::Skew, restarts: 3, iterations: 120, eval_budget: 5_000, ..Default::default() };
    let report = max_ratio_search(&BallDomain::unit(2), &params, &opts)?;
    let meta = report.search.as_ref().expect("search metadata");
    println!(
        "best ratio {:.4} after {} evaluations (best start {:.4}, improvement x{:.3})",
        report.max_ratio, meta.evaluations, meta.initial_best, meta.improvement_factor
    );
    for atom in meta.best_atoms.atoms() {
        println!("  atom at {:?} radius {:.3}", atom.center, atom.radius);
    }
    Ok(())
}
