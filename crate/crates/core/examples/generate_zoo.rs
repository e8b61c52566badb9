//! Train a small clean/poisoned population and write it to disk.
//!
//! cargo run --release --example generate_zoo -- [out_dir]

use trojan_weights::zoo::{generate_zoo, ZooConfig};

fn main() -> trojan_weights::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "zoo".into());
    let config = ZooConfig {
        n_clean: 10,
        n_poisoned: 10,
        seed: 1,
        ..ZooConfig::default()
    };
    let (manifest, stats) = generate_zoo(&config, &out)?;
    println!("wrote {} models to {out}", manifest.models.len());
    for m in &stats.models {
        match (m.trigger, m.asr) {
            (Some(kind), Some(asr)) => {
                println!("{} {:?} clean acc {:.3} asr {:.3}", m.id, kind, m.clean_accuracy, asr)
            }
            _ => println!("{} clean acc {:.3}", m.id, m.clean_accuracy),
        }
    }
    Ok(())
}
