//! Soft routing through a single depth-3 tree with hand-picked split scores:
//! arrival probabilities, leaf weights, the greedy maximum path and the
//! resulting prediction.
//!
//! cargo run -p ndf --example routing_weights

use ndf::tree::{
    arrival_probabilities, leaf_weights, predict, trace_max_path, LeafStore, TreeTopology,
};

fn main() -> ndf::Result<()> {
    let top = TreeTopology::new(3)?;
    // score of going left at nodes 1..=7
    let scores = [0.9, 0.3, 0.6, 0.95, 0.1, 0.5, 0.5];

    let mu = arrival_probabilities(top, &scores);
    for node in 1..2 * top.leaf_count() {
        let kind = if top.is_leaf(node) { "leaf" } else { "split" };
        println!("node {node:2} ({kind:5}) arrival {:.4}", mu[node]);
    }

    let w = leaf_weights(top, &scores);
    println!(
        "leaf weights {:?}, sum {:.12}",
        w.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
        w.iter().sum::<f64>()
    );

    let path: Vec<String> = trace_max_path(top, &scores)
        .iter()
        .map(|s| format!("(N{}, P{:.3})", s.node, s.probability))
        .collect();
    println!("max path {}", path.join(" -> "));

    // three classes; each leaf prefers class (leaf % 3)
    let mut leaves = LeafStore::uniform(top.leaf_count(), 3);
    for l in 0..top.leaf_count() {
        let row = leaves.leaf_mut(l);
        row.fill(0.1);
        row[l % 3] = 0.8;
    }
    let p = predict(&w, &leaves);
    println!(
        "class probabilities {:?}",
        p.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
    );
    Ok(())
}
