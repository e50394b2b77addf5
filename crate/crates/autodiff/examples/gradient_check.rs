//! Builds a small conv → relu → pool → dense graph, runs backward, and compares
//! every kernel gradient with a central difference.
//!
//! cargo run -p ndf-autodiff --example gradient_check

use ndf_autodiff::{Graph, Result, Tensor, Var};

fn loss(x: &Tensor, kernel: &Tensor, w: &Tensor) -> Result<(Graph, Var, Var)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.param(kernel.clone());
    let wv = g.constant(w.clone());
    let h = g.conv2d(xv, k, None, 1, 0)?;
    let h = g.relu(h)?;
    let h = g.maxpool2d(h, 2)?;
    let h = g.reshape(h, &[1, 4])?;
    let y = g.matmul(h, wv)?;
    let y = g.sigmoid(y)?;
    let out = g.sum(y)?;
    Ok((g, out, k))
}

fn main() -> Result<()> {
    let x = Tensor::new(
        vec![1, 1, 6, 6],
        (0..36)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0)
            .collect(),
    )?;
    let kernel = Tensor::new(
        vec![1, 1, 3, 3],
        vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.3, 0.2, 0.1, -0.1],
    )?;
    let w = Tensor::new(vec![4, 2], vec![0.5, -1.0, 0.25, 0.8, -0.6, 0.3, 1.1, -0.4])?;

    let (mut g, out, k) = loss(&x, &kernel, &w)?;
    g.backward(out)?;
    let analytic = g.grad(k).expect("kernel is a parameter").to_vec();
    println!(
        "tape holds {} nodes, loss {:.6}",
        g.len(),
        g.value(out).data[0]
    );

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..kernel.numel() {
        let mut up = kernel.clone();
        up.data[i] += h;
        let mut down = kernel.clone();
        down.data[i] -= h;
        let (gu, ou, _) = loss(&x, &up, &w)?;
        let (gd, od, _) = loss(&x, &down, &w)?;
        let numeric = (gu.value(ou).data[0] - gd.value(od).data[0]) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
        println!("k[{i}]  tape {:+.8}  fd {:+.8}", analytic[i], numeric);
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
