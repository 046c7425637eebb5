//! Monte Carlo error sweep for the clipped-cubic demonstration case,
//! printing one line per noise level (same snippet as the README).

use backpar::experiments::{run_mise, ManufacturedCase, Method, DEFAULT_DELTAS};

fn main() -> backpar::Result<()> {
    let case = ManufacturedCase::cubic_demo()?;
    let report = run_mise(
        &case,
        &Method::Truncation { clip_radius: 1.0, a_exp: 7.0, b_exp: 0.017 },
        &DEFAULT_DELTAS,
        &[case.t_horizon / 2.0],
        200, // trials
        7,   // seed
    )?;
    for row in &report.rows {
        println!("delta={} mise={} envelope={}", row.delta, row.mise_mean, row.envelope);
    }
    Ok(())
}
