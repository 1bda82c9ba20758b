//! Whole-volume inference with the patch network run fully convolutionally.

use super::network::MonetParams;
use crate::error::Result;
use crate::nn::{relu, softmax, Padding, Real, Tensor};
use crate::volume::{LabelMap, ProbMap, Volume};

/// Rows of the per-voxel feature matrix pushed through the dense chain at a
/// time.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub prob: ProbMap,
    pub labels: LabelMap,
    /// The parameters had never been trained, so `prob` is uninformative.
    pub untrained: bool,
}

/// Foreground probability at every voxel; see [`monet_infer_logits`].
pub fn monet_infer_volume<T: Real>(params: &MonetParams<T>, v: &Volume) -> Result<Inference> {
    let logits = monet_infer_logits(params, v)?;
    let p = softmax(&logits)?;
    let prob = p.data().chunks_exact(2).map(|r| r[1].to_acc() as f32).collect();
    let prob = ProbMap::with_spacing(v.dims(), v.spacing(), prob)?;
    let labels = prob.argmax();
    Ok(Inference {
        prob,
        labels,
        untrained: !params.trained,
    })
}

/// Raw `[voxels, 2]` logits for every voxel in linear-index order.
///
/// Each scale's convolution runs over the whole volume with zero padding, so
/// voxel `i` sees exactly the values a patch centered at `i` would contain.
/// The dense layers are then applied to every voxel's feature vector.
pub fn monet_infer_logits<T: Real>(params: &MonetParams<T>, v: &Volume) -> Result<Tensor<T>> {
    let dims = v.dims();
    let n = dims.len();
    let x = Tensor::from_vec(
        &[1, 1, dims.nz, dims.ny, dims.nx],
        v.data().iter().map(|&a| T::from_acc(a as f64)).collect(),
    )?;
    let width: usize = params.scales.iter().map(|s| s.conv.out_channels).sum();
    let mut features = vec![T::zero(); n * width];
    let mut col = 0;
    for branch in &params.scales {
        let f = branch.conv.out_channels;
        let z = branch.bn.forward_eval(&branch.conv.forward(&x, Padding::SameZero)?)?;
        let act = relu(&z);
        // Channel-major [f, n] to voxel-major [n, width].
        for (ch, plane) in act.data().chunks_exact(n).enumerate() {
            for (i, &a) in plane.iter().enumerate() {
                features[i * width + col + ch] = a;
            }
        }
        col += f;
    }

    let mut logits = Vec::with_capacity(2 * n);
    for rows in features.chunks(CHUNK * width) {
        let mut h = Tensor::from_vec(&[rows.len() / width, width], rows.to_vec())?;
        for layer in &params.hidden {
            h = relu(&layer.bn.forward_eval(&layer.dense.forward(&h)?)?);
        }
        logits.extend_from_slice(params.head.forward(&h)?.data());
    }
    Tensor::from_vec(&[n, 2], logits)
}
