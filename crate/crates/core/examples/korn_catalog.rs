//! Korn ratios of the catalog fields on a ball, and the scale invariance of
//! both seminorms under `u(x) = r^s v((x - x0) / r)`.
use nonlocal_korn::fields::catalog_field;
use nonlocal_korn::geometry::BallDomain;
use nonlocal_korn::korn::{ball_scaling_check, catalog_korn_report};
use nonlocal_korn::quadrature::PlanSettings;
use nonlocal_korn::seminorms::SeminormParams;

fn main() -> nonlocal_korn::Result<()> {
    let params = SeminormParams::new(0.4, 2.0)?;
    let report = catalog_korn_report(&BallDomain::unit(2), &params, PlanSettings::default(), 0)?;
    for r in &report.records {
        println!("{:>11}: ratio {:.4}", r.field_id, r.ratio);
    }
    println!("largest ratio {:.4}", report.max_ratio);

    let v = catalog_field("random", 2, 5)?;
    let scaling = ball_scaling_check(v, &[0.3, -0.2], &[0.5, 2.0, 4.0], &params, PlanSettings::default(), 11)?;
    for row in &scaling.rows {
        println!("r={}: X gap {:.2} sigma, W gap {:.2} sigma, ratio {:.4}", row.r, row.x_sigmas, row.w_sigmas, row.ratio);
    }
    Ok(())
}
