//! Rates of the two-user `(2,4,4)` scheme at 18 dB and 5 dB.
//!
//! ```text
//! cargo run --release -p tinbc --example design_point [seed]
//! ```

use tinbc::rate::{evaluate_plan, EstimatorSettings};
use tinbc::scheme::{plan, OrderMatrix, SystemSpec};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SystemSpec::from_snr_db(1.0, &[(128, 1e-6, 18.0), (256, 1e-4, 5.0)]);
    let p = plan(&spec, &OrderMatrix::from_flat(2, &[2, 4, 4]).unwrap()).unwrap();
    let r = evaluate_plan(&p, EstimatorSettings::figure(seed)).unwrap();
    for (k, u) in r.users.iter().enumerate() {
        println!(
            "user {}: N = {:4}  R = {:.4}  I = {:.4}  V = {:.4}  power = {:.4}",
            k + 1,
            u.blocklength,
            u.rate.rate,
            u.rate.first_order,
            u.rate.dispersion,
            p.user_power(k)
        );
    }
}
