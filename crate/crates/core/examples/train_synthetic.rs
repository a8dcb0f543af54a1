//! Trains the reference network on the blob-versus-ring synthetic task.
//!
//! `cargo run --release -p selfonn --example train_synthetic -- [Q] [seed]`

use std::time::Instant;

use selfonn::data::synthetic::{generate, SyntheticSpec};
use selfonn::train::{train, TrainConfig};
use selfonn::{Network, NetworkConfig};

fn main() -> selfonn::Result<()> {
    let mut args = std::env::args().skip(1);
    let q: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = generate(&SyntheticSpec { seed, ..Default::default() })?;
    let mut net = Network::build(&NetworkConfig::with_q(q), seed)?;
    let started = Instant::now();
    let outcome = train(&mut net, &data, &TrainConfig { seed, ..Default::default() })?;
    for e in &outcome.history.epochs {
        println!("epoch {:>2}  loss {:.5}  train error {:.3}", e.epoch, e.mean_loss, e.train_error);
    }
    println!("converged {} in {:.1?}", outcome.converged, started.elapsed());
    Ok(())
}
