//! Multiplicative leaf updates with the routing held fixed: the tree NLL on the
//! batch falls while every leaf stays a probability distribution.
//!
//! cargo run --release -p ndf --example leaf_update

use ndf::forest::{tree_nll, AssignmentScheme, Forest, LeafInit};
use ndf::network::Network;
use ndf::Samples;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ndf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = 4;
    let n = 400;
    // four Gaussian blobs in the plane
    let centres = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        data.push(centres[y][0] + rng.gen_range(-0.6..0.6));
        data.push(centres[y][1] + rng.gen_range(-0.6..0.6));
        labels.push(y);
    }
    let samples = Samples::new(vec![2], data)?;

    let extractor = Network::mlp(vec![2], &[16], 15, &mut rng)?;
    let mut forest = Forest::new(
        extractor,
        4,
        1,
        LeafInit::Classification(classes),
        AssignmentScheme::Sequential,
        &mut rng,
    )?;
    let batch: Vec<usize> = (0..n).collect();
    let weights = forest.weights_samples(&samples, &batch)?.remove(0);

    for round in 0..=20 {
        if round > 0 {
            forest.leaf_update_classification(&samples, &labels, &batch, 1)?;
        }
        if round % 4 == 0 {
            let leaves = &forest.trees[0].leaves;
            println!(
                "update {round:2}: nll {:.5}, max simplex error {:.1e}",
                tree_nll(leaves, &weights, &labels),
                leaves.simplex_error()
            );
        }
    }
    Ok(())
}
