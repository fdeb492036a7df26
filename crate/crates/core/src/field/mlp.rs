//! Fully connected ReLU network with flat parameter storage and a hand-written
//! reverse pass.
//!
//! Parameters are stored layer by layer as `[W₀ (out×in, row-major), b₀, W₁, b₁, …]`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point types the network can run in.
pub trait Scalar: Float + Debug + Default + Send + Sync + Sum + 'static {
    /// `C ← α·A·B + β·C` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs.unsigned_abs() + (cols as isize - 1) as usize * cs.unsigned_abs() + 1
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                assert!(c.len() >= span(m, n, rsc, csc));
                // SAFETY: strides are non-negative and every addressed element
                // lies within the asserted slice spans.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Number of output logits: attenuation and backscatter.
pub const OUTPUTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    /// Layer widths from input to output, e.g. `[48, 64, 64, 2]`.
    widths: Vec<usize>,
    params: Vec<T>,
}

/// Activations retained by [`Mlp::forward`] for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    batch: usize,
    /// Input to each layer; entry 0 is the feature batch.
    inputs: Vec<Vec<T>>,
    logits: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// `(attenuation, backscatter)` for each batch row.
    pub fn outputs(&self) -> Vec<(T, T)> {
        self.logits
            .chunks_exact(OUTPUTS)
            .map(|z| (softplus(z[0]), sigmoid(z[1])))
            .collect()
    }
}

pub fn softplus<T: Float>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(widths: Vec<usize>) -> Self {
        let n = param_count(&widths);
        Self {
            widths,
            params: vec![T::zero(); n],
        }
    }

    pub fn from_params(widths: Vec<usize>, params: Vec<T>) -> Result<Self> {
        let n = param_count(&widths);
        if params.len() != n {
            return Err(Error::Config(format!(
                "expected {n} parameters for widths {widths:?}, got {}",
                params.len()
            )));
        }
        Ok(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// `(weights, bias)` ranges of layer `l` in the flat parameter vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        layer_ranges(&self.widths, l)
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_len() {
            return Err(Error::Config(format!(
                "feature batch has {} values, expected {batch} × {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn dense(&self, l: usize, input: &[T], batch: usize, out: &mut Vec<T>) {
        let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
        let (wr, br) = self.layer_ranges(l);
        let w = &self.params[wr];
        let b = &self.params[br];
        out.clear();
        out.reserve(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(b);
        }
        T::gemm(
            batch,
            fan_in,
            fan_out,
            T::one(),
            input,
            fan_in as isize,
            1,
            w,
            1,
            fan_in as isize,
            T::one(),
            out,
            fan_out as isize,
            1,
        );
    }

    /// Forward pass that keeps the activations needed by [`Mlp::backward`].
    pub fn forward(&self, features: Vec<T>, batch: usize) -> Result<ForwardCache<T>> {
        self.check_input(&features, batch)?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        inputs.push(features);
        let mut logits = Vec::new();
        for l in 0..layers {
            let mut out = Vec::new();
            self.dense(l, &inputs[l], batch, &mut out);
            if l + 1 < layers {
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
                inputs.push(out);
            } else {
                logits = out;
            }
        }
        Ok(ForwardCache {
            batch,
            inputs,
            logits,
        })
    }

    /// Forward pass without retaining activations.
    pub fn infer(&self, features: &[T], batch: usize) -> Result<Vec<(T, T)>> {
        self.check_input(features, batch)?;
        let mut cur = features.to_vec();
        let mut next = Vec::new();
        let layers = self.num_layers();
        for l in 0..layers {
            self.dense(l, &cur, batch, &mut next);
            if l + 1 < layers {
                for v in next.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur
            .chunks_exact(OUTPUTS)
            .map(|z| (softplus(z[0]), sigmoid(z[1])))
            .collect())
    }

    /// Accumulates `∂(Σ gᵢ·outᵢ)/∂θ` into `grads`, where `output_grads` holds
    /// `(∂/∂attenuation, ∂/∂backscatter)` per batch row.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grads: &[(T, T)], grads: &mut [T]) -> Result<()> {
        if cache.inputs.is_empty() {
            return Err(Error::Usage(
                "backward called without a forward cache".into(),
            ));
        }
        if cache.inputs.len() != self.num_layers() || cache.inputs[0].len() != cache.batch * self.input_len() {
            return Err(Error::Usage(
                "forward cache was produced by a different network".into(),
            ));
        }
        if output_grads.len() != cache.batch {
            return Err(Error::Usage(format!(
                "{} output gradients for a cached batch of {}",
                output_grads.len(),
                cache.batch
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Usage("gradient buffer has the wrong length".into()));
        }
        let batch = cache.batch;
        // output head
        let mut delta: Vec<T> = Vec::with_capacity(batch * OUTPUTS);
        for (z, g) in cache.logits.chunks_exact(OUTPUTS).zip(output_grads) {
            delta.push(g.0 * sigmoid(z[0]));
            let s = sigmoid(z[1]);
            delta.push(g.1 * s * (T::one() - s));
        }
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (wr, br) = self.layer_ranges(l);
            let input = &cache.inputs[l];
            {
                let gw = &mut grads[wr.clone()];
                // dW (out×in) += δᵀ (out×batch) · X (batch×in)
                T::gemm(
                    fan_out,
                    batch,
                    fan_in,
                    T::one(),
                    &delta,
                    1,
                    fan_out as isize,
                    input,
                    fan_in as isize,
                    1,
                    T::one(),
                    gw,
                    fan_in as isize,
                    1,
                );
            }
            {
                let gb = &mut grads[br];
                for row in delta.chunks_exact(fan_out) {
                    for (acc, d) in gb.iter_mut().zip(row) {
                        *acc = *acc + *d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // δ_prev (batch×in) = δ (batch×out) · W (out×in), masked by ReLU
            let mut prev = vec![T::zero(); batch * fan_in];
            T::gemm(
                batch,
                fan_out,
                fan_in,
                T::one(),
                &delta,
                fan_out as isize,
                1,
                &self.params[wr],
                fan_in as isize,
                1,
                T::zero(),
                &mut prev,
                fan_in as isize,
                1,
            );
            for (d, a) in prev.iter_mut().zip(input) {
                if *a <= T::zero() {
                    *d = T::zero();
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            widths: self.widths.clone(),
            params: self.params.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn layer_ranges(widths: &[usize], l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let offset = param_count(&widths[..=l]);
    let w = widths[l] * widths[l + 1];
    (offset..offset + w, offset + w..offset + w + widths[l + 1])
}
