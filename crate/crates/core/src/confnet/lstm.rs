//! Single-direction LSTM over a whole sequence, with backpropagation through time.
//!
//! Sequences are flat row-major buffers: `T × width`.

use super::LstmWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellActivation {
    Tanh,
    /// `(tanh(c) + 1) / 2`, range (0, 1).
    HalfTanh,
}

impl CellActivation {
    #[inline]
    fn apply(self, c: f64) -> (f64, f64) {
        let t = c.tanh();
        match self {
            CellActivation::Tanh => (t, 1.0 - t * t),
            CellActivation::HalfTanh => ((t + 1.0) * 0.5, 0.5 * (1.0 - t * t)),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub len: usize,
    pub input: Vec<f64>,
    /// Hidden outputs, `T × h`.
    pub hidden: Vec<f64>,
    cell: Vec<f64>,
    /// Gate activations `T × 4h` (i, f, g, o).
    gates: Vec<f64>,
    act: Vec<f64>,
    act_grad: Vec<f64>,
}

pub fn lstm_forward(
    w: &LstmWeights,
    input: &[f64],
    len: usize,
    activation: CellActivation,
) -> LstmTrace {
    let (ni, h) = (w.input_dim, w.units);
    let cols = ni + h;
    debug_assert_eq!(input.len(), len * ni);
    let mut hidden = vec![0.0; len * h];
    let mut cell = vec![0.0; len * h];
    let mut gates = vec![0.0; len * 4 * h];
    let mut act = vec![0.0; len * h];
    let mut act_grad = vec![0.0; len * h];
    let mut v = vec![0.0; cols];
    let mut z = vec![0.0; 4 * h];

    for t in 0..len {
        v[..ni].copy_from_slice(&input[t * ni..(t + 1) * ni]);
        if t > 0 {
            v[ni..].copy_from_slice(&hidden[(t - 1) * h..t * h]);
        } else {
            v[ni..].iter_mut().for_each(|x| *x = 0.0);
        }
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &w.w[j * cols..(j + 1) * cols];
            *zj = w.b[j] + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for u in 0..h {
            let ig = sigmoid(z[u]);
            let fg = sigmoid(z[h + u]);
            let cg = z[2 * h + u].tanh();
            let og = sigmoid(z[3 * h + u]);
            g[u] = ig;
            g[h + u] = fg;
            g[2 * h + u] = cg;
            g[3 * h + u] = og;
            let c_prev = if t > 0 { cell[(t - 1) * h + u] } else { 0.0 };
            let c = fg * c_prev + ig * cg;
            let (a, da) = activation.apply(c);
            cell[t * h + u] = c;
            act[t * h + u] = a;
            act_grad[t * h + u] = da;
            hidden[t * h + u] = og * a;
        }
    }
    LstmTrace {
        len,
        input: input.to_vec(),
        hidden,
        cell,
        gates,
        act,
        act_grad,
    }
}

/// Accumulates weight gradients into `grad` and returns `dL/d input`.
pub fn lstm_backward(
    w: &LstmWeights,
    trace: &LstmTrace,
    d_hidden: &[f64],
    grad: &mut LstmWeights,
) -> Vec<f64> {
    let (ni, h) = (w.input_dim, w.units);
    let cols = ni + h;
    let len = trace.len;
    let mut d_input = vec![0.0; len * ni];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let mut dv = vec![0.0; cols];
    let mut v = vec![0.0; cols];

    for t in (0..len).rev() {
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for u in 0..h {
            let k = t * h + u;
            let dh = d_hidden[k] + dh_next[u];
            let (ig, fg, cg, og) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
            let dc = dh * og * trace.act_grad[k] + dc_next[u];
            let c_prev = if t > 0 { trace.cell[k - h] } else { 0.0 };
            dz[u] = dc * cg * ig * (1.0 - ig);
            dz[h + u] = dc * c_prev * fg * (1.0 - fg);
            dz[2 * h + u] = dc * ig * (1.0 - cg * cg);
            dz[3 * h + u] = dh * trace.act[k] * og * (1.0 - og);
            dc_next[u] = dc * fg;
        }
        v[..ni].copy_from_slice(&trace.input[t * ni..(t + 1) * ni]);
        if t > 0 {
            v[ni..].copy_from_slice(&trace.hidden[(t - 1) * h..t * h]);
        } else {
            v[ni..].iter_mut().for_each(|x| *x = 0.0);
        }
        dv.iter_mut().for_each(|x| *x = 0.0);
        for (j, &dzj) in dz.iter().enumerate() {
            grad.b[j] += dzj;
            let row = &w.w[j * cols..(j + 1) * cols];
            let grow = &mut grad.w[j * cols..(j + 1) * cols];
            for c in 0..cols {
                grow[c] += dzj * v[c];
                dv[c] += row[c] * dzj;
            }
        }
        d_input[t * ni..(t + 1) * ni].copy_from_slice(&dv[..ni]);
        dh_next.copy_from_slice(&dv[ni..]);
    }
    d_input
}

/// Reverse the row order of a `len × width` buffer.
pub fn reverse_rows(buf: &[f64], len: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(buf.len());
    for t in (0..len).rev() {
        out.extend_from_slice(&buf[t * width..(t + 1) * width]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_quarter_for_half_tanh() {
        let w = LstmWeights::zeros(3, 1);
        let trace = lstm_forward(&w, &[0.5; 12], 4, CellActivation::HalfTanh);
        assert!(trace.hidden.iter().all(|&h| h == 0.25));
    }

    #[test]
    fn reverse_rows_twice_is_identity() {
        let buf: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let r = reverse_rows(&buf, 4, 3);
        assert_eq!(&r[..3], &[9.0, 10.0, 11.0]);
        assert_eq!(reverse_rows(&r, 4, 3), buf);
    }
}
