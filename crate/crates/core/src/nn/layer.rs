use rand::{Rng, RngCore};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Side length of every convolution kernel.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Fully connected layer. `weight` is `units × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f32> {
    pub inputs: usize,
    pub units: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// 3×3 convolution, stride 1, same padding, over NHWC activations.
/// `weight` is laid out `[filter][in_channel][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub in_channels: usize,
    pub filters: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    /// Hidden dense layer with ReLU.
    Dense(Dense<T>),
    /// Hidden convolution with ReLU.
    Conv2d(Conv2d<T>),
    /// 2×2 max pooling, stride 2.
    MaxPool2d,
    /// Inverted dropout with the given drop rate.
    Dropout(f32),
    Flatten,
    /// Affine output layer; the network applies the softmax.
    SoftmaxOutput(Dense<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    None,
    /// Flat input index selected by each pooled output.
    Pool(Vec<usize>),
    /// Per-element dropout multiplier.
    Dropout(Vec<T>),
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        Self {
            inputs,
            units,
            weight: vec![T::zero(); inputs * units],
            bias: vec![T::zero(); units],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn affine(&self, x: &Tensor<T>, relu: bool) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.row_len() != self.inputs {
            return Err(Error::Shape(format!(
                "dense layer expects (batch, {}), got {:?}",
                self.inputs,
                x.shape()
            )));
        }
        let n = x.rows();
        let mut y = Tensor::zeros(vec![n, self.units]);
        T::gemm(
            n,
            self.inputs,
            self.units,
            x.data(),
            (self.inputs, 1),
            &self.weight,
            (1, self.inputs),
            T::zero(),
            y.data_mut(),
            (self.units, 1),
        );
        for row in y.data_mut().chunks_mut(self.units) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = *v + *b;
                if relu && *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        Ok(y)
    }

    fn affine_backward(
        &self,
        x: &Tensor<T>,
        dz: &[T],
        need_input: bool,
    ) -> (Option<Tensor<T>>, ParamGrad<T>) {
        let n = x.rows();
        let mut dw = vec![T::zero(); self.weight.len()];
        T::gemm(
            self.units,
            n,
            self.inputs,
            dz,
            (1, self.units),
            x.data(),
            (self.inputs, 1),
            T::zero(),
            &mut dw,
            (self.inputs, 1),
        );
        let mut db = vec![T::zero(); self.units];
        for row in dz.chunks(self.units) {
            for (g, d) in db.iter_mut().zip(row) {
                *g = *g + *d;
            }
        }
        let dx = need_input.then(|| {
            let mut dx = Tensor::zeros(x.shape().to_vec());
            T::gemm(
                n,
                self.units,
                self.inputs,
                dz,
                (self.units, 1),
                &self.weight,
                (self.inputs, 1),
                T::zero(),
                dx.data_mut(),
                (self.inputs, 1),
            );
            dx
        });
        (
            dx,
            ParamGrad {
                weight: dw,
                bias: db,
            },
        )
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, filters: usize) -> Self {
        Self {
            in_channels,
            filters,
            weight: vec![T::zero(); filters * in_channels * TAPS],
            bias: vec![T::zero(); filters],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub fn weight_index(&self, filter: usize, channel: usize, ky: usize, kx: usize) -> usize {
        ((filter * self.in_channels + channel) * KERNEL + ky) * KERNEL + kx
    }

    fn patch_len(&self) -> usize {
        self.in_channels * TAPS
    }

    /// Patch matrix for one sample: one row per output position, columns
    /// ordered `(channel, ky, kx)` to match the weight layout.
    fn im2col(&self, sample: &[T], h: usize, w: usize, patches: &mut [T]) {
        let c = self.in_channels;
        let k = self.patch_len();
        for y in 0..h {
            for x in 0..w {
                let row = &mut patches[(y * w + x) * k..(y * w + x + 1) * k];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        let inside = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                        for ch in 0..c {
                            row[ch * TAPS + ky * KERNEL + kx] = if inside {
                                sample[(sy as usize * w + sx as usize) * c + ch]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, patches: &[T], h: usize, w: usize, sample: &mut [T]) {
        let c = self.in_channels;
        let k = self.patch_len();
        for y in 0..h {
            for x in 0..w {
                let row = &patches[(y * w + x) * k..(y * w + x + 1) * k];
                for ky in 0..KERNEL {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let base = (sy as usize * w + sx as usize) * c;
                        for ch in 0..c {
                            sample[base + ch] = sample[base + ch] + row[ch * TAPS + ky * KERNEL + kx];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[3] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv layer expects (batch, h, w, {}), got {:?}",
                self.in_channels, s
            )));
        }
        let (n, h, w) = (s[0], s[1], s[2]);
        let k = self.patch_len();
        let positions = h * w;
        let mut y = Tensor::zeros(vec![n, h, w, self.filters]);
        let mut patches = vec![T::zero(); positions * k];
        let in_len = positions * self.in_channels;
        let out_len = positions * self.filters;
        for i in 0..n {
            self.im2col(&x.data()[i * in_len..(i + 1) * in_len], h, w, &mut patches);
            let out = &mut y.data_mut()[i * out_len..(i + 1) * out_len];
            T::gemm(
                positions,
                k,
                self.filters,
                &patches,
                (k, 1),
                &self.weight,
                (1, k),
                T::zero(),
                out,
                (self.filters, 1),
            );
            for row in out.chunks_mut(self.filters) {
                for (v, b) in row.iter_mut().zip(&self.bias) {
                    *v = (*v + *b).max(T::zero());
                }
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dz: &[T],
        need_input: bool,
    ) -> (Option<Tensor<T>>, ParamGrad<T>) {
        let s = x.shape();
        let (n, h, w) = (s[0], s[1], s[2]);
        let k = self.patch_len();
        let positions = h * w;
        let in_len = positions * self.in_channels;
        let out_len = positions * self.filters;
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); self.filters];
        let mut patches = vec![T::zero(); positions * k];
        let mut dpatches = vec![T::zero(); positions * k];
        let mut dx = need_input.then(|| Tensor::zeros(s.to_vec()));
        for i in 0..n {
            let dzi = &dz[i * out_len..(i + 1) * out_len];
            self.im2col(&x.data()[i * in_len..(i + 1) * in_len], h, w, &mut patches);
            T::gemm(
                self.filters,
                positions,
                k,
                dzi,
                (1, self.filters),
                &patches,
                (k, 1),
                T::one(),
                &mut dw,
                (k, 1),
            );
            for row in dzi.chunks(self.filters) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g = *g + *d;
                }
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    positions,
                    self.filters,
                    k,
                    dzi,
                    (self.filters, 1),
                    &self.weight,
                    (k, 1),
                    T::zero(),
                    &mut dpatches,
                    (k, 1),
                );
                self.col2im(
                    &dpatches,
                    h,
                    w,
                    &mut dx.data_mut()[i * in_len..(i + 1) * in_len],
                );
            }
        }
        (
            dx,
            ParamGrad {
                weight: dw,
                bias: db,
            },
        )
    }
}

fn relu_mask<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Vec<T> {
    y.data()
        .iter()
        .zip(dy.data())
        .map(|(o, g)| if *o > T::zero() { *g } else { T::zero() })
        .collect()
}

impl<T: Scalar> Layer<T> {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) | Layer::SoftmaxOutput(d) => d.param_count(),
            Layer::Conv2d(c) => c.param_count(),
            _ => 0,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            Layer::Dense(_) | Layer::Conv2d(_) | Layer::SoftmaxOutput(_)
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv",
            Layer::MaxPool2d => "pool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
            Layer::SoftmaxOutput(_) => "softmax",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(Error::Shape(format!(
                "{} layer cannot consume per-sample shape {:?} ({})",
                self.name(),
                input,
                what
            )))
        };
        match self {
            Layer::Dense(d) | Layer::SoftmaxOutput(d) => {
                if input.len() == 1 && input[0] == d.inputs {
                    Ok(vec![d.units])
                } else {
                    mismatch("expected a flat vector")
                }
            }
            Layer::Conv2d(c) => {
                if input.len() == 3 && input[2] == c.in_channels {
                    Ok(vec![input[0], input[1], c.filters])
                } else {
                    mismatch("expected h×w×channels")
                }
            }
            Layer::MaxPool2d => {
                if input.len() == 3 && input[0] >= 2 && input[1] >= 2 {
                    Ok(vec![input[0] / 2, input[1] / 2, input[2]])
                } else {
                    mismatch("expected h×w×channels with h, w ≥ 2")
                }
            }
            Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Forward pass. Dropout is active only when `rng` is supplied.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self {
            Layer::Dense(d) => Ok((d.affine(x, true)?, LayerCache::None)),
            Layer::SoftmaxOutput(d) => Ok((d.affine(x, false)?, LayerCache::None)),
            Layer::Conv2d(c) => Ok((c.forward(x)?, LayerCache::None)),
            Layer::MaxPool2d => max_pool(x),
            Layer::Flatten => {
                let n = x.rows();
                let w = x.row_len();
                Ok((x.clone().reshape(vec![n, w])?, LayerCache::None))
            }
            Layer::Dropout(rate) => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 - f64::from(*rate);
                    let scale = T::of(1.0 / keep);
                    let mask: Vec<T> = (0..x.data().len())
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let mut y = x.clone();
                    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    Ok((y, LayerCache::Dropout(mask)))
                }
                _ => Ok((x.clone(), LayerCache::None)),
            },
        }
    }

    /// Backward pass given the layer's input `x`, output `y` and the
    /// gradient `dy` with respect to `y`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        cache: &LayerCache<T>,
        dy: &Tensor<T>,
        need_input: bool,
    ) -> (Option<Tensor<T>>, Option<ParamGrad<T>>) {
        match self {
            Layer::Dense(d) => {
                let dz = relu_mask(y, dy);
                let (dx, g) = d.affine_backward(x, &dz, need_input);
                (dx, Some(g))
            }
            Layer::SoftmaxOutput(d) => {
                let (dx, g) = d.affine_backward(x, dy.data(), need_input);
                (dx, Some(g))
            }
            Layer::Conv2d(c) => {
                let dz = relu_mask(y, dy);
                let (dx, g) = c.backward(x, &dz, need_input);
                (dx, Some(g))
            }
            Layer::MaxPool2d => {
                let dx = need_input.then(|| {
                    let mut dx = Tensor::zeros(x.shape().to_vec());
                    if let LayerCache::Pool(idx) = cache {
                        for (src, g) in idx.iter().zip(dy.data()) {
                            dx.data_mut()[*src] = dx.data_mut()[*src] + *g;
                        }
                    }
                    dx
                });
                (dx, None)
            }
            Layer::Flatten => (
                need_input.then(|| {
                    Tensor::new(x.shape().to_vec(), dy.data().to_vec())
                        .expect("flatten preserves element count")
                }),
                None,
            ),
            Layer::Dropout(_) => (
                need_input.then(|| match cache {
                    LayerCache::Dropout(mask) => {
                        let mut dx = dy.clone();
                        for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                            *v = *v * *m;
                        }
                        dx
                    }
                    _ => dy.clone(),
                }),
                None,
            ),
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) | Layer::SoftmaxOutput(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Dense(d) | Layer::SoftmaxOutput(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        fn conv<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::of(x.as_f64())).collect()
        }
        let dense = |d: &Dense<T>| Dense {
            inputs: d.inputs,
            units: d.units,
            weight: conv(&d.weight),
            bias: conv(&d.bias),
        };
        match self {
            Layer::Dense(d) => Layer::Dense(dense(d)),
            Layer::SoftmaxOutput(d) => Layer::SoftmaxOutput(dense(d)),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                filters: c.filters,
                weight: conv(&c.weight),
                bias: conv(&c.bias),
            }),
            Layer::MaxPool2d => Layer::MaxPool2d,
            Layer::Dropout(r) => Layer::Dropout(*r),
            Layer::Flatten => Layer::Flatten,
        }
    }
}

fn max_pool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let s = x.shape();
    if s.len() != 4 || s[1] < 2 || s[2] < 2 {
        return Err(Error::Shape(format!(
            "max pool expects (batch, h≥2, w≥2, c), got {:?}",
            s
        )));
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(vec![n, oh, ow, c]);
    let mut idx = Vec::with_capacity(n * oh * ow * c);
    let data = x.data();
    let out = y.data_mut();
    let mut o = 0;
    for i in 0..n {
        for py in 0..oh {
            for px in 0..ow {
                for ch in 0..c {
                    let mut best = ((i * h + 2 * py) * w + 2 * px) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let at = ((i * h + 2 * py + dy) * w + 2 * px + dx) * c + ch;
                        if data[at] > data[best] {
                            best = at;
                        }
                    }
                    out[o] = data[best];
                    idx.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((y, LayerCache::Pool(idx)))
}

/// He-uniform initialisation for ReLU layers.
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| rng.gen_range(-limit..limit) as f32)
        .collect()
}

/// Glorot-uniform initialisation for the output layer.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    len: usize,
) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len)
        .map(|_| rng.gen_range(-limit..limit) as f32)
        .collect()
}

impl Dense<f32> {
    pub fn he<R: Rng + ?Sized>(rng: &mut R, inputs: usize, units: usize) -> Self {
        Self {
            inputs,
            units,
            weight: he_uniform(rng, inputs, inputs * units),
            bias: vec![0.0; units],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, inputs: usize, units: usize) -> Self {
        Self {
            inputs,
            units,
            weight: glorot_uniform(rng, inputs, units, inputs * units),
            bias: vec![0.0; units],
        }
    }
}

impl Conv2d<f32> {
    pub fn he<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, filters: usize) -> Self {
        let fan_in = in_channels * TAPS;
        Self {
            in_channels,
            filters,
            weight: he_uniform(rng, fan_in, fan_in * filters),
            bias: vec![0.0; filters],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_param_count() {
        assert_eq!(Dense::<f32>::zeros(3, 2).param_count(), 8);
    }

    #[test]
    fn conv_param_count() {
        assert_eq!(Conv2d::<f32>::zeros(3, 16).param_count(), 448);
    }

    #[test]
    fn conv_center_tap_is_identity() {
        let mut c = Conv2d::<f32>::zeros(2, 2);
        for o in 0..2 {
            let at = c.weight_index(o, o, 1, 1);
            c.weight[at] = 1.0;
        }
        let x = Tensor::new(vec![1, 2, 2, 2], vec![0.5, 0.0, 1.0, 2.0, 0.25, 3.0, 0.0, 4.0])
            .unwrap();
        let (y, _) = Layer::Conv2d(c).forward(&x, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f32, 4.0, 3.0, 2.0]).unwrap();
        let (y, cache) = Layer::MaxPool2d.forward(&x, None).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dy = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let (dx, _) = Layer::MaxPool2d.backward(&x, &y, &cache, &dy, true);
        assert_eq!(dx.unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_without_rng_is_identity() {
        let x = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, _) = Layer::Dropout(0.5).forward(&x, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_shape_error() {
        let d = Layer::Dense(Dense::<f32>::zeros(3, 2));
        let x = Tensor::zeros(vec![1, 4]);
        assert!(matches!(d.forward(&x, None), Err(Error::Shape(_))));
    }
}
