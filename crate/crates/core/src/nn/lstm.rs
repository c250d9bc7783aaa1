use ndarray::{s, Array1, Array2, ArrayView2, Axis, Ix1, Ix2};

use super::{
    join, orthogonal_rows, sigmoid, xavier_uniform, Module, NnRng, Param, ParamsMut, ParamsRef,
    Scalar,
};
use crate::{Error, Result};

/// Single-layer LSTM returning the full hidden-state sequence.
///
/// Gate blocks along the `4 * units` axis are ordered input, forget,
/// candidate, output. Activation is `tanh`, recurrent activation `sigmoid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<F: Scalar> {
    /// `[d_in, 4 * units]`
    pub w_input: Param<F, Ix2>,
    /// `[units, 4 * units]`
    pub w_hidden: Param<F, Ix2>,
    pub bias: Param<F, Ix1>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    input: Array2<F>,
    /// Activated gates per step, `[T, 4 * units]`.
    gates: Array2<F>,
    cells: Array2<F>,
    hidden: Array2<F>,
}

impl<F: Scalar> Lstm<F> {
    /// Xavier input weights, orthogonal recurrent weights, forget bias 1.
    pub fn new(d_in: usize, units: usize, rng: &mut NnRng) -> Self {
        let w_input = xavier_uniform(Ix2(d_in, 4 * units), d_in, 4 * units, rng);
        let w_hidden = orthogonal_rows(units, 4 * units, rng);
        let mut bias = Array1::zeros(4 * units);
        bias.slice_mut(s![units..2 * units]).fill(F::one());
        Self {
            w_input: Param::new(w_input, true),
            w_hidden: Param::new(w_hidden, true),
            bias: Param::new(bias, false),
        }
    }

    pub fn from_parts(w_input: Array2<F>, w_hidden: Array2<F>, bias: Array1<F>) -> Result<Self> {
        let units = w_hidden.nrows();
        if w_hidden.ncols() != 4 * units || w_input.ncols() != 4 * units || bias.len() != 4 * units {
            return Err(Error::shape("lstm parameter shapes disagree"));
        }
        Ok(Self {
            w_input: Param::new(w_input, true),
            w_hidden: Param::new(w_hidden, true),
            bias: Param::new(bias, false),
        })
    }

    pub fn units(&self) -> usize {
        self.w_hidden.value.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.value.nrows()
    }

    /// `x` is `[T, d_in]`; returns hidden states `[T, units]`.
    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, LstmCache<F>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "lstm expects input width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::shape("lstm needs at least one step"));
        }
        let u = self.units();
        let steps = x.nrows();
        let mut gates = x.dot(&self.w_input.value) + &self.bias.value;
        let mut cells = Array2::zeros((steps, u));
        let mut hidden = Array2::zeros((steps, u));
        let mut h = Array1::<F>::zeros(u);
        let mut c = Array1::<F>::zeros(u);
        for t in 0..steps {
            let mut z = gates.row_mut(t);
            // Row-wise accumulation over contiguous weight rows; both `dot`
            // paths are much slower for a single vector.
            for (k, w_row) in self.w_hidden.value.rows().into_iter().enumerate() {
                z.scaled_add(h[k], &w_row);
            }
            let z = z.as_slice_mut().expect("row of a standard-layout array");
            for j in 0..u {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[u + j]);
                let g_g = z[2 * u + j].tanh();
                let o_g = sigmoid(z[3 * u + j]);
                z[j] = i_g;
                z[u + j] = f_g;
                z[2 * u + j] = g_g;
                z[3 * u + j] = o_g;
                c[j] = f_g * c[j] + i_g * g_g;
                h[j] = o_g * c[j].tanh();
            }
            cells.row_mut(t).assign(&c);
            hidden.row_mut(t).assign(&h);
        }
        let out = hidden.clone();
        Ok((out, LstmCache { input: x.to_owned(), gates, cells, hidden }))
    }

    /// Backpropagation through time; `dh` is `[T, units]`.
    pub fn backward(&mut self, cache: &LstmCache<F>, dh: ArrayView2<F>) -> Array2<F> {
        let u = self.units();
        let steps = cache.gates.nrows();
        let mut dz = Array2::<F>::zeros((steps, 4 * u));
        let mut dh_next = Array1::<F>::zeros(u);
        let mut dc_next = Array1::<F>::zeros(u);
        for t in (0..steps).rev() {
            let gates = cache.gates.row(t);
            let c = cache.cells.row(t);
            let mut dzt = dz.row_mut(t);
            for j in 0..u {
                let (i_g, f_g, g_g, o_g) = (gates[j], gates[u + j], gates[2 * u + j], gates[3 * u + j]);
                let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { F::zero() };
                let tc = c[j].tanh();
                let dh_t = dh[[t, j]] + dh_next[j];
                let d_o = dh_t * tc;
                let dc = dh_t * o_g * (F::one() - tc * tc) + dc_next[j];
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f_g;
                dzt[j] = d_i * i_g * (F::one() - i_g);
                dzt[u + j] = d_f * f_g * (F::one() - f_g);
                dzt[2 * u + j] = d_g * (F::one() - g_g * g_g);
                dzt[3 * u + j] = d_o * o_g * (F::one() - o_g);
            }
            let dzt = dzt.as_slice().expect("row of a standard-layout array");
            for (k, w_row) in self.w_hidden.value.rows().into_iter().enumerate() {
                let w_row = w_row.as_slice().expect("standard layout");
                dh_next[k] = w_row.iter().zip(dzt).fold(F::zero(), |acc, (&w, &d)| acc + w * d);
            }
        }
        // h_{t-1} for every step, with h_{-1} = 0.
        let mut h_prev = Array2::<F>::zeros((steps, u));
        if steps > 1 {
            h_prev.slice_mut(s![1.., ..]).assign(&cache.hidden.slice(s![..steps - 1, ..]));
        }
        self.w_hidden.grad += &h_prev.t().dot(&dz);
        self.w_input.grad += &cache.input.t().dot(&dz);
        self.bias.grad += &dz.sum_axis(Axis(0));
        dz.dot(&self.w_input.value.t())
    }
}

impl<F: Scalar> Module<F> for Lstm<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.w_input.push_mut(join(prefix, "w_input"), out);
        self.w_hidden.push_mut(join(prefix, "w_hidden"), out);
        self.bias.push_mut(join(prefix, "bias"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.w_input.push_ref(join(prefix, "w_input"), out);
        self.w_hidden.push_ref(join(prefix, "w_hidden"), out);
        self.bias.push_ref(join(prefix, "bias"), out);
    }
}
