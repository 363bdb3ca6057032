//! Plain CNN forward and backward passes.
//!
//! Layout is HWC throughout. Conv layers use zero ("same") padding with odd
//! kernels; each conv block is conv -> ReLU -> 2x2 max-pool. The dense head
//! is ReLU hidden layers followed by a linear 2-way output.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ConvLayer {
    /// (out_c, kh, kw, in_c)
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DenseLayer {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Network {
    pub conv: Vec<ConvLayer>,
    /// Hidden layers (ReLU) followed by the final linear 2-way layer.
    pub dense: Vec<DenseLayer>,
    pub input_dim: (usize, usize, usize),
}

// the full forward cache is kept even where only tests read some fields
#[allow(dead_code)]
pub(crate) struct Forward {
    pub conv_in: Vec<Array3<f64>>,
    pub conv_z: Vec<Array3<f64>>,
    /// Post-ReLU, pre-pool activations per block.
    pub conv_a: Vec<Array3<f64>>,
    pub pool_out: Vec<Array3<f64>>,
    /// Flat spatial index (y * w + x) of the max within each pool window.
    pub pool_src: Vec<Array3<usize>>,
    pub flat: Array1<f64>,
    pub dense_z: Vec<Array1<f64>>,
    /// Inputs to each dense layer (flat, then hidden activations).
    pub dense_in: Vec<Array1<f64>>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Gradients {
    pub conv_w: Vec<Array4<f64>>,
    pub conv_b: Vec<Array1<f64>>,
    pub dense_w: Vec<Array2<f64>>,
    pub dense_b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            conv_w: net.conv.iter().map(|l| Array4::zeros(l.w.dim())).collect(),
            conv_b: net.conv.iter().map(|l| Array1::zeros(l.b.dim())).collect(),
            dense_w: net.dense.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            dense_b: net.dense.iter().map(|l| Array1::zeros(l.b.dim())).collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.conv_w.iter_mut().zip(&other.conv_w) {
            *a += b;
        }
        for (a, b) in self.conv_b.iter_mut().zip(&other.conv_b) {
            *a += b;
        }
        for (a, b) in self.dense_w.iter_mut().zip(&other.dense_w) {
            *a += b;
        }
        for (a, b) in self.dense_b.iter_mut().zip(&other.dense_b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.conv_w {
            *a *= factor;
        }
        for a in &mut self.conv_b {
            *a *= factor;
        }
        for a in &mut self.dense_w {
            *a *= factor;
        }
        for a in &mut self.dense_b {
            *a *= factor;
        }
    }
}

fn conv_same(input: &Array3<f64>, layer: &ConvLayer) -> Array3<f64> {
    let (h, w, in_c) = input.dim();
    let (out_c, kh, kw, _) = layer.w.dim();
    let s = layer.stride;
    let (pad_y, pad_x) = (kh / 2, kw / 2);
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let mut out = Array3::<f64>::zeros((oh, ow, out_c));
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..out_c {
                let mut acc = layer.b[oc];
                for ky in 0..kh {
                    let iy = (oy * s + ky) as isize - pad_y as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * s + kx) as isize - pad_x as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        for ic in 0..in_c {
                            acc += layer.w[[oc, ky, kx, ic]]
                                * input[[iy as usize, ix as usize, ic]];
                        }
                    }
                }
                out[[oy, ox, oc]] = acc;
            }
        }
    }
    out
}

/// Backward of `conv_same`: returns (dW, dB, dInput).
fn conv_same_backward(
    input: &Array3<f64>,
    layer: &ConvLayer,
    dout: &Array3<f64>,
) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
    let (h, w, in_c) = input.dim();
    let (out_c, kh, kw, _) = layer.w.dim();
    let s = layer.stride;
    let (pad_y, pad_x) = (kh / 2, kw / 2);
    let (oh, ow, _) = dout.dim();
    let mut dw = Array4::<f64>::zeros(layer.w.dim());
    let mut db = Array1::<f64>::zeros(out_c);
    let mut din = Array3::<f64>::zeros((h, w, in_c));
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..out_c {
                let g = dout[[oy, ox, oc]];
                if g == 0.0 {
                    continue;
                }
                db[oc] += g;
                for ky in 0..kh {
                    let iy = (oy * s + ky) as isize - pad_y as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * s + kx) as isize - pad_x as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        for ic in 0..in_c {
                            dw[[oc, ky, kx, ic]] += g * input[[iy as usize, ix as usize, ic]];
                            din[[iy as usize, ix as usize, ic]] += g * layer.w[[oc, ky, kx, ic]];
                        }
                    }
                }
            }
        }
    }
    (dw, db, din)
}

fn max_pool2(input: &Array3<f64>) -> (Array3<f64>, Array3<usize>) {
    let (h, w, c) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f64>::zeros((oh, ow, c));
    let mut src = Array3::<usize>::zeros((oh, ow, c));
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, x) = (oy * 2 + dy, ox * 2 + dx);
                        let v = input[[y, x, ch]];
                        if v > best {
                            best = v;
                            best_idx = y * w + x;
                        }
                    }
                }
                out[[oy, ox, ch]] = best;
                src[[oy, ox, ch]] = best_idx;
            }
        }
    }
    (out, src)
}

fn max_pool2_backward(
    dout: &Array3<f64>,
    src: &Array3<usize>,
    input_dim: (usize, usize, usize),
) -> Array3<f64> {
    let mut din = Array3::<f64>::zeros(input_dim);
    let w = input_dim.1;
    let (oh, ow, c) = dout.dim();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let idx = src[[oy, ox, ch]];
                din[[idx / w, idx % w, ch]] += dout[[oy, ox, ch]];
            }
        }
    }
    din
}

fn flatten(a: &Array3<f64>) -> Array1<f64> {
    Array1::from_iter(a.iter().copied())
}

fn unflatten(v: &Array1<f64>, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_vec(dim, v.to_vec()).expect("unflatten shape mismatch")
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

impl Network {
    pub fn init(
        input_dim: (usize, usize, usize),
        conv_specs: &[(usize, usize, usize)],
        dense_widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = Vec::new();
        let (mut h, mut w, mut c) = input_dim;
        for &(filters, kernel, stride) in conv_specs {
            let fan_in = (kernel * kernel * c) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let wts = Array4::from_shape_fn((filters, kernel, kernel, c), |_| {
                rng.gen_range(-limit..limit)
            });
            conv.push(ConvLayer {
                w: wts,
                b: Array1::zeros(filters),
                stride,
            });
            h = h.div_ceil(stride) / 2;
            w = w.div_ceil(stride) / 2;
            c = filters;
        }
        let mut dense = Vec::new();
        let mut in_dim = h * w * c;
        for &width in dense_widths.iter().chain(std::iter::once(&2)) {
            let limit = (6.0 / in_dim as f64).sqrt();
            let wts = Array2::from_shape_fn((width, in_dim), |_| rng.gen_range(-limit..limit));
            dense.push(DenseLayer {
                w: wts,
                b: Array1::zeros(width),
            });
            in_dim = width;
        }
        Self {
            conv,
            dense,
            input_dim,
        }
    }

    pub fn forward(&self, image: &Array3<f64>) -> Forward {
        let n_conv = self.conv.len();
        let mut conv_in = Vec::with_capacity(n_conv);
        let mut conv_z = Vec::with_capacity(n_conv);
        let mut conv_a = Vec::with_capacity(n_conv);
        let mut pool_out = Vec::with_capacity(n_conv);
        let mut pool_src = Vec::with_capacity(n_conv);
        let mut cur = image.clone();
        for layer in &self.conv {
            let z = conv_same(&cur, layer);
            let a = z.mapv(|v| v.max(0.0));
            let (p, src) = max_pool2(&a);
            conv_in.push(cur);
            conv_z.push(z);
            conv_a.push(a);
            pool_src.push(src);
            cur = p.clone();
            pool_out.push(p);
        }
        let flat = flatten(&cur);
        let mut dense_in = Vec::new();
        let mut dense_z = Vec::new();
        let mut v = flat.clone();
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            dense_in.push(v.clone());
            let z = layer.w.dot(&v) + &layer.b;
            dense_z.push(z.clone());
            v = if i < last { z.mapv(|x| x.max(0.0)) } else { z };
        }
        let logits = v;
        let probs = softmax(&logits);
        Forward {
            conv_in,
            conv_z,
            conv_a,
            pool_out,
            pool_src,
            flat,
            dense_z,
            dense_in,
            logits,
            probs,
        }
    }

    /// Backward through the dense head only; returns per-layer gradients and
    /// the gradient with respect to the flattened conv output.
    fn backward_dense(
        &self,
        fwd: &Forward,
        dlogits: &Array1<f64>,
    ) -> (Vec<Array2<f64>>, Vec<Array1<f64>>, Array1<f64>) {
        let n = self.dense.len();
        let mut dws = vec![Array2::zeros((0, 0)); n];
        let mut dbs = vec![Array1::zeros(0); n];
        let mut delta = dlogits.clone();
        for i in (0..n).rev() {
            if i < n - 1 {
                // ReLU between hidden layer output and next layer input
                delta = &delta * &fwd.dense_z[i].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            }
            let input = &fwd.dense_in[i];
            dws[i] = delta
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&input.view().insert_axis(ndarray::Axis(0)));
            dbs[i] = delta.clone();
            delta = self.dense[i].w.t().dot(&delta);
        }
        (dws, dbs, delta)
    }

    /// Gradient of the pre-softmax score of `class_index` with respect to the
    /// last block's post-ReLU activations.
    pub fn class_score_activation_grad(&self, fwd: &Forward, class_index: usize) -> Array3<f64> {
        let mut seed = Array1::<f64>::zeros(self.dense[self.dense.len() - 1].b.len());
        seed[class_index] = 1.0;
        let (_, _, dflat) = self.backward_dense(fwd, &seed);
        let last = self.conv.len() - 1;
        let dpool = unflatten(&dflat, fwd.pool_out[last].dim());
        max_pool2_backward(&dpool, &fwd.pool_src[last], fwd.conv_a[last].dim())
    }

    /// Recomputes the pre-softmax score of `class_index` from substituted
    /// last-block activations. Test hook for gradient checking.
    pub fn class_score_from_activations(&self, acts: &Array3<f64>, class_index: usize) -> f64 {
        let (p, _) = max_pool2(acts);
        let mut v = flatten(&p);
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let z = layer.w.dot(&v) + &layer.b;
            v = if i < last { z.mapv(|x| x.max(0.0)) } else { z };
        }
        v[class_index]
    }

    /// Full backward from a logit-space seed; returns parameter gradients and
    /// the gradient with respect to the input image.
    pub fn backward(&self, fwd: &Forward, dlogits: &Array1<f64>) -> (Gradients, Array3<f64>) {
        let (dense_w, dense_b, dflat) = self.backward_dense(fwd, dlogits);
        let mut grads = Gradients::zeros_like(self);
        grads.dense_w = dense_w;
        grads.dense_b = dense_b;
        let mut dpool_flat = dflat;
        let mut dcur: Option<Array3<f64>> = None;
        for i in (0..self.conv.len()).rev() {
            let dpool = match dcur.take() {
                Some(d) => d,
                None => unflatten(&dpool_flat, fwd.pool_out[i].dim()),
            };
            let dact = max_pool2_backward(&dpool, &fwd.pool_src[i], fwd.conv_a[i].dim());
            let dz = &dact * &fwd.conv_z[i].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let (dw, db, din) = conv_same_backward(&fwd.conv_in[i], &self.conv[i], &dz);
            grads.conv_w[i] = dw;
            grads.conv_b[i] = db;
            dcur = Some(din);
            dpool_flat = Array1::zeros(0);
        }
        let dinput = dcur.unwrap_or_else(|| Array3::zeros(self.input_dim));
        (grads, dinput)
    }

    /// Cross-entropy loss of the softmax output against `label_index`.
    pub fn loss_from_forward(fwd: &Forward, label_index: usize) -> f64 {
        -(fwd.probs[label_index].max(1e-300)).ln()
    }

    /// Seed for backprop of the cross-entropy loss: probs - onehot.
    pub fn loss_logit_grad(fwd: &Forward, label_index: usize) -> Array1<f64> {
        let mut d = fwd.probs.clone();
        d[label_index] -= 1.0;
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::init((8, 8, 1), &[(2, 3, 1)], &[4], &mut rng)
    }

    #[test]
    fn forward_shapes() {
        let net = tiny_net(0);
        let img = Array3::from_elem((8, 8, 1), 0.5);
        let fwd = net.forward(&img);
        assert_eq!(fwd.conv_a[0].dim(), (8, 8, 2));
        assert_eq!(fwd.pool_out[0].dim(), (4, 4, 2));
        assert_eq!(fwd.flat.len(), 32);
        assert_eq!(fwd.probs.len(), 2);
        assert!((fwd.probs.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_zero_bias_relu_gives_zero_activations() {
        let net = tiny_net(1);
        let img = Array3::zeros((8, 8, 1));
        let fwd = net.forward(&img);
        assert!(fwd.conv_a[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pool_routes_gradient_to_argmax() {
        let mut input = Array3::zeros((4, 4, 1));
        input[[1, 1, 0]] = 5.0;
        input[[2, 3, 0]] = 7.0;
        let (out, src) = max_pool2(&input);
        assert_eq!(out[[0, 0, 0]], 5.0);
        assert_eq!(out[[1, 1, 0]], 7.0);
        let mut dout = Array3::zeros((2, 2, 1));
        dout[[0, 0, 0]] = 1.0;
        dout[[1, 1, 0]] = 2.0;
        let din = max_pool2_backward(&dout, &src, (4, 4, 1));
        assert_eq!(din[[1, 1, 0]], 1.0);
        assert_eq!(din[[2, 3, 0]], 2.0);
        assert_eq!(din.sum(), 3.0);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = tiny_net(7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Array3::from_shape_fn((8, 8, 1), |_| rng.gen_range(0.1..0.9));
        let fwd = net.forward(&img);
        let dlogits = Network::loss_logit_grad(&fwd, 0);
        let (_, dinput) = net.backward(&fwd, &dlogits);
        let step = 1e-5;
        let mut checked = 0;
        for _ in 0..40 {
            let y = rng.gen_range(0..8);
            let x = rng.gen_range(0..8);
            let mut plus = img.clone();
            plus[[y, x, 0]] += step;
            let mut minus = img.clone();
            minus[[y, x, 0]] -= step;
            let lp = Network::loss_from_forward(&net.forward(&plus), 0);
            let lm = Network::loss_from_forward(&net.forward(&minus), 0);
            let fd = (lp - lm) / (2.0 * step);
            let an = dinput[[y, x, 0]];
            if fd.abs() < 1e-8 && an.abs() < 1e-8 {
                continue;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel < 1e-4, "rel err {rel} at ({y},{x}): fd={fd} an={an}");
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let net = tiny_net(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Array3::from_shape_fn((8, 8, 1), |_| rng.gen_range(0.1..0.9));
        let fwd = net.forward(&img);
        let dlogits = Network::loss_logit_grad(&fwd, 1);
        let (grads, _) = net.backward(&fwd, &dlogits);
        let step = 1e-6;
        // conv weight
        for _ in 0..10 {
            let idx = [
                rng.gen_range(0..2),
                rng.gen_range(0..3),
                rng.gen_range(0..3),
                0,
            ];
            let mut np = net.clone();
            np.conv[0].w[idx] += step;
            let mut nm = net.clone();
            nm.conv[0].w[idx] -= step;
            let fd = (Network::loss_from_forward(&np.forward(&img), 1)
                - Network::loss_from_forward(&nm.forward(&img), 1))
                / (2.0 * step);
            let an = grads.conv_w[0][idx];
            if fd.abs() < 1e-8 && an.abs() < 1e-8 {
                continue;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel < 1e-4, "conv w rel err {rel}");
        }
        // dense weight
        for _ in 0..10 {
            let idx = [rng.gen_range(0..4), rng.gen_range(0..32)];
            let mut np = net.clone();
            np.dense[0].w[idx] += step;
            let mut nm = net.clone();
            nm.dense[0].w[idx] -= step;
            let fd = (Network::loss_from_forward(&np.forward(&img), 1)
                - Network::loss_from_forward(&nm.forward(&img), 1))
                / (2.0 * step);
            let an = grads.dense_w[0][idx];
            if fd.abs() < 1e-8 && an.abs() < 1e-8 {
                continue;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel < 1e-4, "dense w rel err {rel}");
        }
    }
}
