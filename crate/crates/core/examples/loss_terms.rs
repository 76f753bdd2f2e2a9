//! Evaluate the pairwise metric loss and the quantization loss on a tiny
//! hand-written batch, with their gradients in the codes.
//!
//! cargo run --example loss_terms

use mvhash::data::MultiHot;
use mvhash::linalg::Matrix;
use mvhash::loss::{build_pair_block, total_loss, LossConfig};

fn main() -> mvhash::Result<()> {
    let codes = Matrix::from_rows(&[
        vec![0.9, -0.8, 0.7],
        vec![-0.6, 0.5, 0.95],
        vec![0.8, -0.9, 0.6],
        vec![0.7, 0.9, -0.99],
    ])?;
    let labels = [
        MultiHot::from_indices(3, &[0])?,
        MultiHot::from_indices(3, &[1])?,
        MultiHot::from_indices(3, &[0, 2])?,
        MultiHot::from_indices(3, &[2])?,
    ];
    let cfg = LossConfig::default();
    let block = build_pair_block(&codes, &labels, &cfg)?;
    println!("rows {:?} paired with rows {:?}", block.prec_indices, block.rest_indices);
    println!("inner products {:?}", block.phi.as_slice());
    println!("similarity     {:?}", block.sim.as_slice());

    let out = total_loss(&codes, &labels, &cfg)?;
    println!("metric {:.6}  quantization {:.6}  total {:.6}", out.metric, out.quantization, out.total);
    for r in 0..out.d_codes.rows() {
        println!("dL/dh[{r}] = {:?}", out.d_codes.row(r));
    }
    Ok(())
}
