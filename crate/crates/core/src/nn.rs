//! Positional encoding and small dense ReLU networks with batched backward.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{CustomOp, GradSink, Tape, Var};
use crate::params::ParamBlock;
use crate::real::Real;

/// Width of the encoding of a 3-vector with `levels` frequency bands.
pub const fn encoded_len(levels: usize) -> usize {
    3 + 6 * levels
}

/// `v ⧺ (sin(2ᵏπv), cos(2ᵏπv))` for `k = 0..levels`, appended to `out`.
pub fn positional_encoding<S: Real>(v: [S; 3], levels: usize, out: &mut Vec<S>) {
    out.extend_from_slice(&v);
    let mut freq = core::f64::consts::PI;
    for _ in 0..levels {
        for c in v {
            out.push((c * freq).sin());
        }
        for c in v {
            out.push((c * freq).cos());
        }
        freq *= 2.0;
    }
}

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// All weights and biases live in one flat vector; layer `l` stores its
/// `out × in` row-major weight matrix followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MlpError {
    #[error("network needs at least an input and an output size")]
    TooFewLayers,
    #[error("parameter count {got} does not match architecture ({expected})")]
    ParamCount { expected: usize, got: usize },
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, MlpError> {
        Self::from_params(sizes, vec![0.0; Self::param_count(sizes)])
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, MlpError> {
        if sizes.len() < 2 {
            return Err(MlpError::TooFewLayers);
        }
        let expected = Self::param_count(sizes);
        if params.len() != expected {
            return Err(MlpError::ParamCount {
                expected,
                got: params.len(),
            });
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Uniform fan-in initialization `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, MlpError> {
        let mut net = Self::zeros(sizes)?;
        for l in 0..net.layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let (w, _) = net.layer_offsets(l);
            for v in &mut net.params[w..w + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offsets of the weight matrix and bias of layer `l` in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Zeroes the weights and bias of the final layer.
    pub fn zero_output_layer(&mut self) {
        let l = self.layers() - 1;
        let (w, _) = self.layer_offsets(l);
        let end = w + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        self.params[w..end].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Multiplies the final layer's weights by `k`.
    pub fn scale_output_layer(&mut self, k: f64) {
        let l = self.layers() - 1;
        let (w, b) = self.layer_offsets(l);
        self.params[w..b].iter_mut().for_each(|v| *v *= k);
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let cache = self.forward_batch(input, 1);
        cache.output().to_vec()
    }

    /// Forward pass over `n` row-major samples.
    pub fn forward_batch(&self, input: &[f64], n: usize) -> BatchCache {
        assert_eq!(input.len(), n * self.input_len(), "input batch has wrong size");
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        for l in 0..self.layers() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let bias = &self.params[b..b + fout];
            let mut z = Vec::with_capacity(n * fout);
            for _ in 0..n {
                z.extend_from_slice(bias);
            }
            // Z = A Wᵀ + b
            gemm(
                n,
                fin,
                fout,
                (&acts[l], fin, 1),
                (&self.params[w..b], 1, fin),
                (&mut z, fout, 1),
                1.0,
            );
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
            }
            acts.push(z);
        }
        BatchCache { acts, n }
    }

    /// Backward pass. Writes `dL/d(input)` into `d_input` (overwritten) and, when
    /// given, accumulates parameter gradients into `d_params`.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        d_output: &[f64],
        d_input: &mut [f64],
        mut d_params: Option<&mut [f64]>,
    ) {
        let n = cache.n;
        assert_eq!(d_output.len(), n * self.output_len());
        assert_eq!(d_input.len(), n * self.input_len());
        let mut dz = d_output.to_vec();
        for l in (0..self.layers()).rev() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let a_prev = &cache.acts[l];
            if let Some(dp) = d_params.as_deref_mut() {
                // dW += dZᵀ A_prev
                gemm(
                    fout,
                    n,
                    fin,
                    (&dz, 1, fout),
                    (a_prev, fin, 1),
                    (&mut dp[w..b], fin, 1),
                    1.0,
                );
                let db = &mut dp[b..b + fout];
                for row in dz.chunks_exact(fout) {
                    for (g, d) in db.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            let mut da = vec![0.0; n * fin];
            // dA_prev = dZ W
            gemm(
                n,
                fout,
                fin,
                (&dz, fout, 1),
                (&self.params[w..b], fin, 1),
                (&mut da, fin, 1),
                0.0,
            );
            if l > 0 {
                for (d, a) in da.iter_mut().zip(a_prev.iter()) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = da;
        }
        d_input.copy_from_slice(&dz);
    }
}

/// Activations kept from a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchCache {
    acts: Vec<Vec<f64>>,
    n: usize,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn batch_len(&self) -> usize {
        self.n
    }
}

/// `C = A·B + beta·C` with explicit (row, col) strides.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: (&mut [f64], usize, usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.0.len() >= (m - 1) * a.1 + k.saturating_sub(1) * a.2 + usize::from(k > 0));
    assert!(c.0.len() > (m - 1) * c.1 + (n - 1) * c.2);
    if k == 0 {
        c.0.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(b.0.len() > (k - 1) * b.1 + (n - 1) * b.2);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

/// Batched network evaluation as a single tape node.
struct MlpOp {
    net: Arc<Mlp>,
    block: ParamBlock,
    n: usize,
    cache: Option<BatchCache>,
}

impl CustomOp for MlpOp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn forward(&mut self, inputs: &[f64]) -> Vec<f64> {
        let cache = self.net.forward_batch(inputs, self.n);
        let out = cache.output().to_vec();
        self.cache = Some(cache);
        out
    }

    fn backward(
        &self,
        _inputs: &[f64],
        _outputs: &[f64],
        out_grad: &[f64],
        in_grad: &mut [f64],
        sink: &mut GradSink<'_>,
    ) {
        let cache = self.cache.as_ref().expect("forward ran before backward");
        let mut d_in = vec![0.0; in_grad.len()];
        self.net
            .backward_batch(cache, out_grad, &mut d_in, sink.block_mut(self.block));
        for (g, d) in in_grad.iter_mut().zip(d_in) {
            *g += d;
        }
    }
}

/// Records `net` applied to `n` samples (row-major `inputs`) on the tape.
/// Parameter gradients are reported under `block`.
pub fn mlp_on_tape<'t>(
    tape: &'t Tape,
    net: &Arc<Mlp>,
    block: ParamBlock,
    inputs: &[Var<'t>],
    n: usize,
) -> Vec<Var<'t>> {
    assert_eq!(inputs.len(), n * net.input_len());
    tape.external_block(block, net.params().len());
    tape.custom(
        inputs,
        Box::new(MlpOp {
            net: Arc::clone(net),
            block,
            n,
            cache: None,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BlockSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent re-evaluation with explicit loops.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..net.layers() {
            let (fin, fout) = (net.sizes()[l], net.sizes()[l + 1]);
            let (w, b) = net.layer_offsets(l);
            let p = net.params();
            let mut z = vec![0.0; fout];
            for j in 0..fout {
                let mut s = p[b + j];
                for i in 0..fin {
                    s += p[w + j * fin + i] * a[i];
                }
                z[j] = if l + 1 < net.layers() { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn encoding_width_and_identity_prefix() {
        let mut out = Vec::new();
        positional_encoding([0.1, 0.2, 0.3], 4, &mut out);
        assert_eq!(out.len(), encoded_len(4));
        assert_eq!(encoded_len(4), 27);
        assert_eq!(&out[..3], &[0.1, 0.2, 0.3]);
        assert!((out[3] - (0.1 * core::f64::consts::PI).sin()).abs() < 1e-15);
        assert!((out[6] - (0.1 * core::f64::consts::PI).cos()).abs() < 1e-15);
    }

    #[test]
    fn batched_forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::uniform(&[9, 16, 16, 3], &mut rng).unwrap();
        let n = 5;
        let x: Vec<f64> = (0..n * 9).map(|i| (i as f64 * 0.37).sin()).collect();
        let cache = net.forward_batch(&x, n);
        for s in 0..n {
            let expect = naive_forward(&net, &x[s * 9..(s + 1) * 9]);
            for (a, b) in cache.output()[s * 3..(s + 1) * 3].iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::uniform(&[4, 8, 8, 2], &mut rng).unwrap();
        // non-zero biases so no unit sits exactly on a ReLU kink
        for v in net.params_mut().iter_mut() {
            *v += 0.05;
        }
        let n = 3;
        let x: Vec<f64> = (0..n * 4).map(|i| (i as f64 * 0.71).cos()).collect();
        let weights: Vec<f64> = (0..n * 2).map(|i| 1.0 + i as f64 * 0.1).collect();
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            let c = net.forward_batch(x, n);
            c.output().iter().zip(&weights).map(|(o, w)| o * w).sum()
        };
        let cache = net.forward_batch(&x, n);
        let mut d_in = vec![0.0; x.len()];
        let mut d_p = vec![0.0; net.params().len()];
        net.backward_batch(&cache, &weights, &mut d_in, Some(&mut d_p));
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
            assert!((fd - d_in[i]).abs() < 1e-7, "input {i}: {fd} vs {}", d_in[i]);
        }
        for k in (0..net.params().len()).step_by(7) {
            let mut np = net.clone();
            np.params_mut()[k] += eps;
            let mut nm = net.clone();
            nm.params_mut()[k] -= eps;
            let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * eps);
            assert!((fd - d_p[k]).abs() < 1e-7, "param {k}: {fd} vs {}", d_p[k]);
        }
    }

    #[test]
    fn tape_op_reports_weight_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Arc::new(Mlp::uniform(&[3, 4, 1], &mut rng).unwrap());
        let tape = Tape::new();
        let xs: Vec<Var<'_>> = [0.2, -0.4, 0.9].iter().map(|&v| tape.var(v)).collect();
        let out = mlp_on_tape(&tape, &net, ParamBlock::ShadowNet, &xs, 1);
        let y = out[0] * out[0];
        let g = tape.backward(y, BlockSet::EMPTY);
        let gw = g.block(ParamBlock::ShadowNet).unwrap();
        assert_eq!(gw.len(), net.params().len());
        // output bias gradient is dy/dout = 2·out
        assert!((gw[gw.len() - 1] - 2.0 * out[0].value()).abs() < 1e-12);
        let frozen = {
            let tape = Tape::new();
            let xs: Vec<Var<'_>> = [0.2, -0.4, 0.9].iter().map(|&v| tape.var(v)).collect();
            let out = mlp_on_tape(&tape, &net, ParamBlock::ShadowNet, &xs, 1);
            let g = tape.backward(out[0], BlockSet::EMPTY.with(ParamBlock::ShadowNet));
            g.block(ParamBlock::ShadowNet).unwrap().iter().all(|v| *v == 0.0)
        };
        assert!(frozen);
    }

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::uniform(&[5, 6, 2], &mut rng).unwrap();
        net.zero_output_layer();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![0.0, 0.0]);
        assert!(Mlp::from_params(&[2, 2], vec![0.0; 5]).is_err());
    }
}
