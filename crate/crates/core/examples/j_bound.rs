//! Decay of the boundary integral `J` as the base point approaches the graph.
use nonlocal_korn::geometry::{EpigraphDomain, Profile};
use nonlocal_korn::korn::j_bound_check;
use nonlocal_korn::seminorms::SeminormParams;

fn main() -> nonlocal_korn::Result<()> {
    let dom = EpigraphDomain::new(2, Profile::with_lipschitz("ridge", 0.5)?)?;
    let distances = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    for (s, p) in [(0.4, 2.0), (0.6, 3.0)] {
        let params = SeminormParams::new(s, p)?;
        let r = j_bound_check(&dom, &params, &[0.2], &distances, 40_000, 1)?;
        println!("s={s} p={p}: slope {:.4} (expected {:.1}), sup J a^sp = {:.4e}", r.slope, -params.sp(), r.sup_product);
    }
    Ok(())
}
