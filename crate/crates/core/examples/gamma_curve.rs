//! Print the residual gate γ(α, β) over the trained strength range.
//!
//! ```text
//! cargo run --example gamma_curve -- 0.5
//! ```

use strength_transfer::strength::{alpha_grid, gamma};

fn main() {
    let beta: f64 = std::env::args().nth(1).map(|s| s.parse().expect("beta must be a number")).unwrap_or(1.0);
    println!("beta = {beta}");
    println!("{:>6}  {:>8}", "alpha", "gamma");
    for alpha in alpha_grid().into_iter().step_by(5) {
        let g = gamma(alpha, beta);
        let bar = "#".repeat((g * 20.0).round() as usize);
        println!("{alpha:>6.1}  {g:>8.5}  {bar}");
    }
    // extrapolation keeps saturating below 2
    for alpha in [20.0, 100.0, 1e6] {
        println!("{alpha:>6}  {:>8.5}", gamma(alpha, beta));
    }
}
