use super::{Graph, LayerParams, Real, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Graph<T> {
    /// One convolutional LSTM step.
    ///
    /// `weight` is `[4·C_h, C_x + C_h, k, k]` acting on the channel concatenation
    /// of `x` and `h`, which equals separate convolutions of `x` and `h` summed.
    /// Gate blocks are ordered input, forget, output, candidate.
    pub fn conv_lstm_step(&mut self, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
        let (xs, hs, cs) = (
            self.shape(x).to_vec(),
            self.shape(h).to_vec(),
            self.shape(c).to_vec(),
        );
        if xs.len() != 3 || hs.len() != 3 || xs[1..] != hs[1..] {
            return Err(Error::Dimension(format!(
                "conv-LSTM: input {xs:?} and hidden {hs:?} differ spatially"
            )));
        }
        if cs != hs {
            return Err(Error::Dimension(format!(
                "conv-LSTM: cell {cs:?} and hidden {hs:?} shapes differ"
            )));
        }
        let ch = hs[0];
        if self.shape(weight).first() != Some(&(4 * ch)) {
            return Err(Error::Dimension(format!(
                "conv-LSTM: gate kernel {:?} for {ch} hidden channels",
                self.shape(weight)
            )));
        }
        let xh = self.concat(&[x, h])?;
        let gates = self.conv2d(xh, weight, bias, 1)?;
        let pre_i = self.narrow(gates, 0, ch)?;
        let pre_f = self.narrow(gates, ch, ch)?;
        let pre_o = self.narrow(gates, 2 * ch, ch)?;
        let pre_g = self.narrow(gates, 3 * ch, ch)?;
        let i = self.sigmoid(pre_i);
        let f = self.sigmoid(pre_f);
        let o = self.sigmoid(pre_o);
        let cand = self.tanh(pre_g);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, cand)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next);
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Tensor-level conv-LSTM step; `params` must hold `weight` and `bias`.
pub fn conv_lstm_step<T: Real>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let get = |n: &str| {
        params
            .get(n)
            .ok_or_else(|| Error::Contract(format!("conv-LSTM parameter {n} missing")))
    };
    let mut g = Graph::new();
    let (xv, hv, cv) = (g.constant(x), g.constant(h), g.constant(c));
    let w = g.constant(get("weight")?);
    let b = g.constant(get("bias")?);
    let (hn, cn) = g.conv_lstm_step(xv, hv, cv, w, b)?;
    Ok((g.tensor(hn), g.tensor(cn)))
}
