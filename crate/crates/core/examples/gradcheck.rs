//! Finite-difference check of the full training objective.

use strength_transfer::gradcheck::{check_total_loss, EndToEndConfig};

fn main() -> strength_transfer::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = EndToEndConfig { seed, ..EndToEndConfig::default() };
    let (report, names) = check_total_loss(&cfg)?;
    for p in &report.probes {
        println!(
            "{:<22} [{:>5}]  analytic {:>13.6e}  numeric {:>13.6e}  rel {:.2e}",
            names[p.tensor], p.index, p.analytic, p.numeric, p.rel_error
        );
    }
    println!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), report.tolerance);
    Ok(())
}
