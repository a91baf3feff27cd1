//! Stacked LSTM over the prototype-similarity rows, followed by a sigmoid head.
//!
//! Every layer starts from zero hidden and cell state. The head reads the
//! concatenation of every layer's final hidden state (L·H values), applies
//! optional inverted dropout in training mode, then an affine map and an
//! element-wise sigmoid. Gate blocks are laid out as `[input, forget, cell, output]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// 4H × input
    pub w_ih: Matrix,
    /// 4H × H
    pub w_hh: Matrix,
    /// 1 × 4H
    pub bias: Matrix,
}

impl LstmLayer {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            bias: Matrix::zeros(1, 4 * hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<LstmLayer>,
    /// C × (L·H)
    pub head_w: Matrix,
    /// 1 × C
    pub head_b: Matrix,
}

impl BackboneParams {
    pub fn zeros(input: usize, hidden: usize, num_layers: usize, num_classes: usize) -> Self {
        let layers = (0..num_layers)
            .map(|l| LstmLayer::zeros(if l == 0 { input } else { hidden }, hidden))
            .collect();
        Self {
            layers,
            head_w: Matrix::zeros(num_classes, num_layers * hidden),
            head_b: Matrix::zeros(1, num_classes),
        }
    }

    /// Uniform(−0.1, 0.1) weights, forget-gate bias +1.
    pub fn init(
        input: usize,
        hidden: usize,
        num_layers: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || num_layers == 0 || num_classes == 0 {
            return Err(Error::Config(format!(
                "backbone sizes must be positive (input {input}, hidden {hidden}, layers {num_layers}, classes {num_classes})"
            )));
        }
        let mut p = Self::zeros(input, hidden, num_layers, num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in p.tensors_mut() {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-0.1..0.1));
        }
        for layer in &mut p.layers {
            layer.bias.as_mut_slice()[hidden..2 * hidden].fill(1.0);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_size(),
            self.hidden_size(),
            self.num_layers(),
            self.num_classes(),
        )
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.head_w.rows()
    }

    /// Tensors in a fixed order matching [`BackboneParams::tensor_names`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            v.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        v.extend([&self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            v.push(&mut l.w_ih);
            v.push(&mut l.w_hh);
            v.push(&mut l.bias);
        }
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for l in 0..self.layers.len() {
            v.push(format!("lstm.{l}.w_ih"));
            v.push(format!("lstm.{l}.w_hh"));
            v.push(format!("lstm.{l}.bias"));
        }
        v.push("head.w".into());
        v.push("head.b".into());
        v
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors_mut().into_iter().for_each(|m| m.scale(k));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout on the head input with a mask drawn from `seed`.
    Train { dropout: f64, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    /// Per layer, T × 4H post-activation gates.
    gates: Vec<Matrix>,
    /// Per layer, T × H cell states.
    cells: Vec<Matrix>,
    /// Per layer, T × H hidden states.
    hidden: Vec<Matrix>,
    dropout_mask: Option<Vec<f64>>,
    head_input: Vec<f64>,
    pub logits: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.rows() == 0
    }

    pub fn hidden_states(&self, layer: usize) -> &Matrix {
        &self.hidden[layer]
    }

    pub fn cell_states(&self, layer: usize) -> &Matrix {
        &self.cells[layer]
    }
}

pub fn forward(input: &Matrix, params: &BackboneParams, mode: Mode) -> Result<ForwardCache> {
    if input.rows() == 0 {
        return Err(Error::Shape("backbone input has no time steps".into()));
    }
    if input.cols() != params.input_size() {
        return Err(Error::Shape(format!(
            "backbone expects {} input columns, got {}",
            params.input_size(),
            input.cols()
        )));
    }
    let t_len = input.rows();
    let h = params.hidden_size();
    let mut gates = Vec::with_capacity(params.num_layers());
    let mut cells = Vec::with_capacity(params.num_layers());
    let mut hidden: Vec<Matrix> = Vec::with_capacity(params.num_layers());

    for (l, layer) in params.layers.iter().enumerate() {
        let x_seq = if l == 0 { input } else { &hidden[l - 1] };
        let mut g_mat = Matrix::zeros(t_len, 4 * h);
        let mut c_mat = Matrix::zeros(t_len, h);
        let mut h_mat = Matrix::zeros(t_len, h);
        let mut z = vec![0.0; 4 * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            z.copy_from_slice(layer.bias.as_slice());
            layer.w_ih.gemv_acc(x_seq.row(t), &mut z);
            layer.w_hh.gemv_acc(&h_prev, &mut z);
            let g_row = g_mat.row_mut(t);
            for j in 0..h {
                g_row[j] = sigmoid(z[j]);
                g_row[h + j] = sigmoid(z[h + j]);
                g_row[2 * h + j] = z[2 * h + j].tanh();
                g_row[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            let c_row = c_mat.row_mut(t);
            for j in 0..h {
                c_row[j] = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            }
            let h_row = h_mat.row_mut(t);
            for j in 0..h {
                h_row[j] = g_row[3 * h + j] * c_row[j].tanh();
            }
            h_prev.copy_from_slice(h_mat.row(t));
            c_prev.copy_from_slice(c_mat.row(t));
        }
        gates.push(g_mat);
        cells.push(c_mat);
        hidden.push(h_mat);
    }

    let mut head_input: Vec<f64> = hidden
        .iter()
        .flat_map(|hm| hm.row(t_len - 1).iter().copied())
        .collect();
    let dropout_mask = match mode {
        Mode::Train { dropout, seed } if dropout > 0.0 => {
            let keep = 1.0 - dropout;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<f64> = (0..head_input.len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            head_input.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
            Some(mask)
        }
        _ => None,
    };

    let mut logits = params.head_b.as_slice().to_vec();
    params.head_w.gemv_acc(&head_input, &mut logits);
    let y_hat = logits.iter().map(|&z| sigmoid(z)).collect();

    Ok(ForwardCache {
        input: input.clone(),
        gates,
        cells,
        hidden,
        dropout_mask,
        head_input,
        logits,
        y_hat,
    })
}

/// Parameter gradients plus the gradient on the input rows.
#[derive(Clone, Debug)]
pub struct BackboneGrads {
    pub params: BackboneParams,
    pub input: Matrix,
}

/// Backpropagation through time from `d_yhat = ∂L/∂ŷ`.
pub fn backward(cache: &ForwardCache, params: &BackboneParams, d_yhat: &[f64]) -> BackboneGrads {
    let t_len = cache.len();
    let h = params.hidden_size();
    let n_layers = params.num_layers();
    let mut grads = params.zeros_like();

    let dz_out: Vec<f64> = d_yhat
        .iter()
        .zip(&cache.y_hat)
        .map(|(g, y)| g * y * (1.0 - y))
        .collect();
    grads.head_w.outer_acc(&dz_out, &cache.head_input);
    grads.head_b.as_mut_slice().copy_from_slice(&dz_out);
    let mut d_head = vec![0.0; n_layers * h];
    params.head_w.gemv_t_acc(&dz_out, &mut d_head);
    if let Some(mask) = &cache.dropout_mask {
        d_head.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
    }

    // Gradient arriving at each layer's hidden sequence from the layer above.
    let mut dh_from_above = Matrix::zeros(t_len, h);
    let mut d_input = Matrix::zeros(t_len, params.input_size());
    let mut dz = vec![0.0; 4 * h];
    let mut dh = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];

    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let g_layer = &mut grads.layers[l];
        let gates = &cache.gates[l];
        let cells = &cache.cells[l];
        let hidden = &cache.hidden[l];
        let x_seq = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let mut dx_seq = Matrix::zeros(t_len, layer.input_size());

        for (j, d) in dh_from_above.row_mut(t_len - 1).iter_mut().enumerate() {
            *d += d_head[l * h + j];
        }
        dh_next.fill(0.0);
        dc_next.fill(0.0);

        for t in (0..t_len).rev() {
            let g = gates.row(t);
            let c = cells.row(t);
            for j in 0..h {
                dh[j] = dh_from_above.get(t, j) + dh_next[j];
            }
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c[j].tanh();
                let c_prev = if t > 0 { cells.get(t - 1, j) } else { 0.0 };
                let d_o = dh[j] * tc;
                let dc = dh[j] * o_g * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            g_layer.w_ih.outer_acc(&dz, x_seq.row(t));
            if t > 0 {
                g_layer.w_hh.outer_acc(&dz, hidden.row(t - 1));
            }
            for (b, d) in g_layer.bias.as_mut_slice().iter_mut().zip(&dz) {
                *b += d;
            }
            layer.w_ih.gemv_t_acc(&dz, dx_seq.row_mut(t));
            dh_next.fill(0.0);
            layer.w_hh.gemv_t_acc(&dz, &mut dh_next);
        }

        if l == 0 {
            d_input = dx_seq;
        } else {
            dh_from_above = dx_seq;
        }
    }

    BackboneGrads {
        params: grads,
        input: d_input,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64, t: usize, k: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(t, k, (0..t * k).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_half() {
        let p = BackboneParams::zeros(3, 4, 2, 2);
        let c = forward(&Matrix::zeros(5, 3), &p, Mode::Eval).unwrap();
        assert_eq!(c.y_hat, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = BackboneParams::init(2, 4, 2, 2, 7).unwrap();
        let x = random_input(1, 1, 2);
        assert_eq!(
            forward(&x, &p, Mode::Eval).unwrap().y_hat,
            forward(&x, &p, Mode::Eval).unwrap().y_hat
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = BackboneParams::init(3, 4, 1, 2, 0).unwrap();
        assert!(forward(&Matrix::zeros(2, 4), &p, Mode::Eval).is_err());
        assert!(forward(&Matrix::zeros(0, 3), &p, Mode::Eval).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let p = BackboneParams::init(3, 4, 2, 2, 0).unwrap();
        for l in &p.layers {
            assert!(l.bias.as_slice()[4..8].iter().all(|&b| b == 1.0));
            assert!(l.bias.as_slice()[..4].iter().all(|&b| b.abs() < 0.1));
        }
        assert_eq!(p.tensors().len(), p.tensor_names().len());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = BackboneParams::init(3, 4, 2, 2, 1).unwrap();
        let c = forward(&random_input(2, 4, 3), &p, Mode::Eval).unwrap();
        let g = backward(&c, &p, &[0.0, 0.0]);
        assert!(g.params.tensors().iter().all(|m| m.as_slice().iter().all(|&x| x == 0.0)));
        assert!(g.input.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let p = BackboneParams::init(3, 8, 2, 2, 1).unwrap();
        let x = random_input(2, 3, 3);
        let eval = forward(&x, &p, Mode::Eval).unwrap();
        let off = forward(&x, &p, Mode::Train { dropout: 0.0, seed: 1 }).unwrap();
        assert_eq!(eval.y_hat, off.y_hat);
        let on = forward(&x, &p, Mode::Train { dropout: 0.5, seed: 1 }).unwrap();
        let again = forward(&x, &p, Mode::Train { dropout: 0.5, seed: 1 }).unwrap();
        assert_eq!(on.y_hat, again.y_hat);
        assert_ne!(on.y_hat, eval.y_hat);
    }

    #[test]
    fn dropout_mask_enters_backward() {
        let p = BackboneParams::init(2, 3, 1, 1, 4).unwrap();
        let x = random_input(3, 2, 2);
        let mode = Mode::Train { dropout: 0.5, seed: 11 };
        let c = forward(&x, &p, mode).unwrap();
        let g = backward(&c, &p, &[1.0]);
        let h = 1e-6;
        let mut plus = p.clone();
        plus.head_w.as_mut_slice()[0] += h;
        let mut minus = p.clone();
        minus.head_w.as_mut_slice()[0] -= h;
        let fd = (forward(&x, &plus, mode).unwrap().y_hat[0] - forward(&x, &minus, mode).unwrap().y_hat[0])
            / (2.0 * h);
        assert!((fd - g.params.head_w.as_slice()[0]).abs() < 1e-8);
    }
}
