//! Per-request prices and break-even request rates against the presets.

use coordsim::cost::{baselines, CostParams};

fn main() -> coordsim::Result<()> {
    let p = CostParams::default();
    println!("100k reads:  ${:.4}", 1e5 * p.cost_read(1.0)?);
    println!("100k writes: ${:.4}", 1e5 * p.cost_write(1.0)?);
    println!();
    for b in baselines() {
        let n = p.break_even(0.99, b.daily_cost(), 1.0)?;
        println!("{:<24} ${:>6.2}/day  break-even {:>6.2}M requests/day", b.name, b.daily_cost(), n / 1e6);
    }
    Ok(())
}
