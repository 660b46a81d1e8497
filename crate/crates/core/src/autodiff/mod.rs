//! Reverse-mode automatic differentiation over dense `f64` matrices, plus the
//! Adam optimizer and parameter storage used by every learnable component.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{optimizer_step, AdamState};
pub use params::{
    Bound, Checkpoint, CheckpointMeta, Linear, NamedArray, ParamId, ParamStore, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use tape::{concat, sigmoid, CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference gradient of a scalar function of several tensors.
pub fn finite_difference(
    f: impl Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = inputs[i].clone();
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + h;
            let fp = f(&work);
            work[i].data_mut()[k] = x - h;
            let fm = f(&work);
            work[i].data_mut()[k] = x;
            g.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
