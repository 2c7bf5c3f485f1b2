//! Dense MLP with hand-rolled reverse-mode gradients.
//!
//! Shared trunk (ReLU) from encoded positions; a softplus density head off
//! the trunk; a ReLU hidden layer over trunk features concatenated with
//! the encoded view direction, then a sigmoid RGB head. Batches evaluate
//! as whole-matrix products, so results do not depend on how callers chunk
//! their rays.

use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, Real};

/// Numerically stable sigmoid.
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softplus; derivative is `sigmoid`.
pub(crate) fn softplus<T: Real>(z: T) -> T {
    let cap = T::of(20.0);
    if z > cap {
        z
    } else if z < -cap {
        z.exp()
    } else {
        (T::one() + z.exp()).ln()
    }
}

fn relu<T: Real>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// One dense layer. The bias is a [1, out] row so every parameter tensor
/// is an `Array2` and optimizer state can mirror the layer structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
}

impl<T: Real> Dense<T> {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data: Vec<T> = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Array2::from_shape_vec((fan_in, fan_out), data).unwrap(),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    /// x [n, in] -> x W + b [n, out].
    pub fn apply(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Intermediates needed to backpropagate one forward pass.
pub struct ForwardCache<T> {
    /// Trunk activations: a0 is the encoded-position input, then one
    /// post-ReLU activation per trunk layer.
    pub activations: Vec<Array2<T>>,
    /// sigmoid of the density pre-activation (softplus derivative), [n, 1].
    pub density_sigmoid: Array2<T>,
    /// Trunk output concatenated with encoded directions, [n, width+dir].
    pub color_in: Array2<T>,
    /// Post-ReLU color hidden activation, [n, color_hidden_width].
    pub color_act: Array2<T>,
    /// Sigmoid RGB output, [n, 3].
    pub rgb: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub trunk: Vec<Dense<T>>,
    pub density: Dense<T>,
    pub color_hidden: Dense<T>,
    pub color_out: Dense<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init(pos_dim: usize, dir_dim: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let width = arch.trunk_width as usize;
        let cw = arch.color_hidden_width as usize;
        let mut trunk = Vec::with_capacity(arch.trunk_depth as usize);
        let mut fan_in = pos_dim;
        for _ in 0..arch.trunk_depth {
            trunk.push(Dense::init(fan_in, width, rng));
            fan_in = width;
        }
        Self {
            trunk,
            density: Dense::init(width, 1, rng),
            color_hidden: Dense::init(width + dir_dim, cw, rng),
            color_out: Dense::init(cw, 3, rng),
        }
    }

    /// Parameter-shaped container of zeros (gradients, optimizer state).
    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|d| Dense::zeros(d.weight.nrows(), d.weight.ncols()))
                .collect(),
            density: Dense::zeros(self.density.weight.nrows(), 1),
            color_hidden: Dense::zeros(
                self.color_hidden.weight.nrows(),
                self.color_hidden.weight.ncols(),
            ),
            color_out: Dense::zeros(self.color_out.weight.nrows(), 3),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameter tensors in canonical (serialization) order.
    pub fn tensors(&self) -> Vec<&Array2<T>> {
        let mut v = Vec::new();
        for layer in &self.trunk {
            v.push(&layer.weight);
            v.push(&layer.bias);
        }
        for layer in [&self.density, &self.color_hidden, &self.color_out] {
            v.push(&layer.weight);
            v.push(&layer.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = Vec::new();
        for layer in &mut self.trunk {
            v.push(&mut layer.weight);
            v.push(&mut layer.bias);
        }
        v.push(&mut self.density.weight);
        v.push(&mut self.density.bias);
        v.push(&mut self.color_hidden.weight);
        v.push(&mut self.color_hidden.bias);
        v.push(&mut self.color_out.weight);
        v.push(&mut self.color_out.bias);
        v
    }

    /// Full forward pass keeping backprop intermediates.
    ///
    /// `pos_feat` is [n, pos_dim], `dir_feat` [n, dir_dim]; returns
    /// densities [n] and colors [n, 3].
    pub fn forward(
        &self,
        pos_feat: Array2<T>,
        dir_feat: &Array2<T>,
    ) -> (Array1<T>, Array2<T>, ForwardCache<T>) {
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(pos_feat);
        for layer in &self.trunk {
            let a = layer.apply(activations.last().unwrap()).mapv(relu);
            activations.push(a);
        }
        let trunk_out = activations.last().unwrap();
        let density_z = self.density.apply(trunk_out);
        let sigma = density_z.mapv(softplus).column(0).to_owned();
        let density_sigmoid = density_z.mapv(sigmoid);
        let color_in = concatenate![Axis(1), trunk_out.view(), dir_feat.view()];
        let color_act = self.color_hidden.apply(&color_in).mapv(relu);
        let rgb = self.color_out.apply(&color_act).mapv(sigmoid);
        let cache = ForwardCache {
            activations,
            density_sigmoid,
            color_in,
            color_act,
            rgb: rgb.clone(),
        };
        (sigma, rgb, cache)
    }

    /// Forward pass without caches, for rendering.
    pub fn infer(&self, pos_feat: Array2<T>, dir_feat: &Array2<T>) -> (Array1<T>, Array2<T>) {
        let mut a = pos_feat;
        for layer in &self.trunk {
            a = layer.apply(&a).mapv(relu);
        }
        let sigma = self.density.apply(&a).mapv(softplus).column(0).to_owned();
        let color_in = concatenate![Axis(1), a.view(), dir_feat.view()];
        let color_act = self.color_hidden.apply(&color_in).mapv(relu);
        let rgb = self.color_out.apply(&color_act).mapv(sigmoid);
        (sigma, rgb)
    }

    /// Reverse pass: gradients of a scalar loss given its derivatives
    /// with respect to this pass's sigma [n] and rgb [n, 3] outputs.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_sigma: &Array1<T>,
        d_rgb: &Array2<T>,
    ) -> Mlp<T> {
        let mut g = self.zeros_like();
        let width = self.density.weight.nrows();

        // RGB head: sigmoid derivative is rgb (1 - rgb).
        let dz_out = d_rgb * &cache.rgb * &cache.rgb.mapv(|r| T::one() - r);
        g.color_out.weight = cache.color_act.t().dot(&dz_out);
        g.color_out.bias = dz_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_color_act = dz_out.dot(&self.color_out.weight.t());

        let dz_color = Zip::from(&d_color_act)
            .and(&cache.color_act)
            .map_collect(|&d, &a| if a > T::zero() { d } else { T::zero() });
        g.color_hidden.weight = cache.color_in.t().dot(&dz_color);
        g.color_hidden.bias = dz_color.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_color_in = dz_color.dot(&self.color_hidden.weight.t());

        // Density head: softplus derivative is the cached sigmoid.
        let dz_density = &d_sigma.view().insert_axis(Axis(1)) * &cache.density_sigmoid;
        let trunk_out = cache.activations.last().unwrap();
        g.density.weight = trunk_out.t().dot(&dz_density);
        g.density.bias = dz_density.sum_axis(Axis(0)).insert_axis(Axis(0));

        // Trunk output collects from both heads.
        let mut d_a = d_color_in.slice(s![.., ..width]).to_owned()
            + dz_density.dot(&self.density.weight.t());
        for i in (0..self.trunk.len()).rev() {
            let dz = Zip::from(&d_a)
                .and(&cache.activations[i + 1])
                .map_collect(|&d, &a| if a > T::zero() { d } else { T::zero() });
            g.trunk[i].weight = cache.activations[i].t().dot(&dz);
            g.trunk[i].bias = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            if i > 0 {
                d_a = dz.dot(&self.trunk[i].weight.t());
            }
        }
        g
    }

    /// In-place axpy over every parameter: `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Mlp<T>, alpha: T) {
        let others = other.tensors();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(others) {
            Zip::from(mine).and(theirs).for_each(|m, &t| *m = *m + alpha * t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            trunk_depth: 2,
            trunk_width: 8,
            color_hidden_width: 6,
        }
    }

    #[test]
    fn output_ranges_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp: Mlp<f32> = Mlp::init(9, 6, &tiny_arch(), &mut rng);
        let pos = Array2::from_shape_fn((40, 9), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 5.0 - 1.0);
        let dir = Array2::from_shape_fn((40, 6), |(i, j)| ((i + j) % 5) as f32 / 2.5 - 1.0);
        let (sigma, rgb) = mlp.infer(pos, &dir);
        assert!(sigma.iter().all(|&s| s >= 0.0), "density must be nonnegative");
        assert!(rgb.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn forward_and_infer_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp: Mlp<f64> = Mlp::init(9, 6, &tiny_arch(), &mut rng);
        let pos = Array2::from_shape_fn((10, 9), |(i, j)| (i as f64 - j as f64) / 7.0);
        let dir = Array2::from_shape_fn((10, 6), |(i, j)| (i as f64 + j as f64) / 9.0 - 0.5);
        let (s1, c1, _) = mlp.forward(pos.clone(), &dir);
        let (s2, c2) = mlp.infer(pos, &dir);
        assert_eq!(s1, s2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn batch_evaluation_matches_row_by_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp: Mlp<f64> = Mlp::init(9, 6, &tiny_arch(), &mut rng);
        let pos = Array2::from_shape_fn((12, 9), |(i, j)| ((i * 5 + j) % 13) as f64 / 6.0 - 1.0);
        let dir = Array2::from_shape_fn((12, 6), |(i, j)| ((i * 3 + j) % 7) as f64 / 3.5 - 1.0);
        let (sigma, rgb) = mlp.infer(pos.clone(), &dir);
        for i in 0..12 {
            let p = pos.slice(s![i..i + 1, ..]).to_owned();
            let d = dir.slice(s![i..i + 1, ..]).to_owned();
            let (s_row, c_row) = mlp.infer(p, &d);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-12);
            assert!(rel(sigma[i], s_row[0]) < 1e-12);
            for ch in 0..3 {
                assert!(rel(rgb[(i, ch)], c_row[(0, ch)]) < 1e-12);
            }
        }
    }

    #[test]
    fn finite_difference_matches_backward_at_head_level() {
        // Loss = sum(sigma) + sum(rgb); checks the wiring end to end for a
        // handful of parameters in every tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp: Mlp<f64> = Mlp::init(5, 4, &tiny_arch(), &mut rng);
        let pos = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 3 + j * 5) % 11) as f64 / 5.0 - 1.0);
        let dir = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 2 + j) % 5) as f64 / 2.5 - 1.0);

        let loss = |m: &Mlp<f64>| -> f64 {
            let (s, c) = m.infer(pos.clone(), &dir);
            s.sum() + c.sum()
        };
        let (s, _c, cache) = mlp.forward(pos.clone(), &dir);
        let d_sigma = Array1::from_elem(s.len(), 1.0);
        let d_rgb = Array2::from_elem((s.len(), 3), 1.0);
        let grads = mlp.backward(&cache, &d_sigma, &d_rgb);

        let h = 1e-6;
        for (ti, tensor) in grads.tensors().iter().enumerate() {
            for &flat in &[0usize, tensor.len() / 2, tensor.len() - 1] {
                let idx = (flat / tensor.ncols(), flat % tensor.ncols());
                let mut plus = mlp.clone();
                plus.tensors_mut()[ti][idx] += h;
                let mut minus = mlp.clone();
                minus.tensors_mut()[ti][idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = tensor[idx];
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                    "tensor {ti} index {idx:?}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a: Mlp<f32> = Mlp::init(9, 6, &tiny_arch(), &mut r1);
        let b: Mlp<f32> = Mlp::init(9, 6, &tiny_arch(), &mut r2);
        assert_eq!(a, b);
        assert!(a.density.bias.iter().all(|&x| x == 0.0));
        assert!(a.trunk.iter().all(|l| l.bias.iter().all(|&x| x == 0.0)));
    }
}
