//! Finite-difference check of the network and loss gradients.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use beamdip::autodiff::{check_gradients, GradCheckOptions, Tensor};
use beamdip::dipnet::{build_skip_net, sample_input_z, NetConfig};
use beamdip::losses_metrics::{weight_map_values, LossContext, LossWeights};
use ndarray::Array2;

fn main() -> beamdip::Result<()> {
    let cfg = NetConfig {
        down_filters: 4,
        up_filters: 4,
        ..NetConfig::default()
    };
    let mut net = build_skip_net(&cfg)?;
    // The head starts at zero; nudge it so every path carries gradient.
    for p in net.params_mut() {
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += 0.05 * ((i * 7919 % 13) as f64 - 6.0) / 6.0;
        }
    }
    let n = 16;
    let z = sample_input_z(n, n, 3);
    let target = Array2::from_shape_fn((n, n), |(r, c)| (-((r as f64 - 8.0).powi(2) + (c as f64 - 8.0).powi(2)) / 20.0).exp());
    let mask = Array2::from_elem((n, n), true);
    let weights = weight_map_values(target.view(), 0.1)?;
    let ctx = LossContext::new(target.view(), weights.view(), &mask, LossWeights::default())?;

    let opts = GradCheckOptions {
        h: 1e-5,
        max_entries: 8,
        ..GradCheckOptions::default()
    };
    let report = check_gradients(net.params(), &opts, |g, v| {
        let x = g.constant(z.clone());
        let out = net.forward(g, x, v)?;
        Ok(ctx.build(g, out)?.total)
    })?;
    println!("{} parameters, {} entries checked, max relative error {:.2e}", net.param_count(), report.checked, report.max_rel_error);

    let image = Tensor::new(&[1, n, n], target.iter().map(|v| 0.9 * v + 0.013).collect())?;
    let report = check_gradients(&[image], &GradCheckOptions { h: 1e-6, ..GradCheckOptions::default() }, |g, v| Ok(ctx.build(g, v[0])?.total))?;
    println!("loss alone: {} entries, max relative error {:.2e}", report.checked, report.max_rel_error);
    Ok(())
}
