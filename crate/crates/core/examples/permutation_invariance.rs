//! Permuting hidden units leaves the function unchanged. Sorted features
//! ignore the permutation; unsorted features do not.
//!
//! cargo run --release --example permutation_invariance

use rand::seq::SliceRandom;
use trojan_weights::preprocess::process_model;
use trojan_weights::split::rng;
use trojan_weights::weight_store::common_architecture;
use trojan_weights::zoo::{train_zoo, Mlp, ZooConfig, FC3_ARCH};
use trojan_weights::{NormMethod, PreprocessConfig};

fn main() -> trojan_weights::Result<()> {
    let zoo = train_zoo(&ZooConfig {
        n_clean: 1,
        n_poisoned: 1,
        seed: 3,
        ..ZooConfig::default()
    })?;
    let model = &zoo[0].weights;
    let sig = common_architecture(std::slice::from_ref(model))?;

    let mut permuted = Mlp::from_weights(model)?;
    let mut r = rng(0);
    for (layer, width) in [(0, 64), (1, 32)] {
        let mut perm: Vec<usize> = (0..width).collect();
        perm.shuffle(&mut r);
        permuted.permute_hidden(layer, &perm)?;
    }
    let permuted = permuted.to_weights(FC3_ARCH);

    for sorted in [true, false] {
        let config = PreprocessConfig {
            reference: None,
            norm: NormMethod::Tensor,
            sorted,
            tensor_whitelist: None,
        };
        let a = process_model(model, &config, &sig)?;
        let b = process_model(&permuted, &config, &sig)?;
        let max_diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("sorted {sorted}: identical {}, max |diff| {max_diff:.3e}", a == b);
    }
    Ok(())
}
