use super::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of one gated recurrent unit.
///
/// Gates are stacked in the order update, reset, candidate:
/// `input_weights` is `[3H, E]`, `state_weights` is `[3H, H]`, both biases `[3H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruBlock {
    pub input_weights: Tensor,
    pub state_weights: Tensor,
    pub input_bias: Tensor,
    pub state_bias: Tensor,
}

impl GruBlock {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weights: Tensor::zeros(&[3 * hidden, input]),
            state_weights: Tensor::zeros(&[3 * hidden, hidden]),
            input_bias: Tensor::zeros(&[3 * hidden]),
            state_bias: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.state_weights.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.input_weights.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let iw = self.input_weights.shape();
        let sw = self.state_weights.shape();
        if iw.len() != 2 || sw.len() != 2 {
            return Err(Error::Config("GRU weights must be rank 2".into()));
        }
        let h = sw[1];
        let ok = sw[0] == 3 * h
            && iw[0] == 3 * h
            && self.input_bias.shape() == [3 * h]
            && self.state_bias.shape() == [3 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inconsistent GRU block: input weights {:?}, state weights {:?}, biases {:?}/{:?}",
                iw,
                sw,
                self.input_bias.shape(),
                self.state_bias.shape()
            )))
        }
    }

    /// Adds the four tensors to `params` under `prefix.*`.
    pub fn register(self, params: &mut ParamSet, prefix: &str) -> Result<[ParamId; 4]> {
        self.validate()?;
        Ok([
            params.push(format!("{prefix}.input_weights"), self.input_weights)?,
            params.push(format!("{prefix}.state_weights"), self.state_weights)?,
            params.push(format!("{prefix}.input_bias"), self.input_bias)?,
            params.push(format!("{prefix}.state_bias"), self.state_bias)?,
        ])
    }

    /// One forward step outside any training context.
    pub fn step(&self, input: &Tensor, state: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let mut tape = Tape::new();
        let vars = GruVars {
            input_weights: tape.constant(self.input_weights.clone()),
            state_weights: tape.constant(self.state_weights.clone()),
            input_bias: tape.constant(self.input_bias.clone()),
            state_bias: tape.constant(self.state_bias.clone()),
            input: self.input(),
            hidden: self.hidden(),
        };
        let x = tape.constant(input.clone());
        let h = tape.constant(state.clone());
        let out = gru_step(&mut tape, x, h, &vars)?;
        Ok(tape.value(out).clone())
    }
}

/// A [`GruBlock`] already placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub input_weights: Var,
    pub state_weights: Var,
    pub input_bias: Var,
    pub state_bias: Var,
    pub input: usize,
    pub hidden: usize,
}

impl GruVars {
    pub fn from_params(tape: &mut Tape<'_>, params: &ParamSet, ids: [ParamId; 4]) -> Self {
        let iw = params.get(ids[0]);
        let (input, hidden) = (iw.shape()[1], params.get(ids[1]).shape()[1]);
        Self {
            input_weights: tape.param(ids[0], iw),
            state_weights: tape.param(ids[1], params.get(ids[1])),
            input_bias: tape.param(ids[2], params.get(ids[2])),
            state_bias: tape.param(ids[3], params.get(ids[3])),
            input,
            hidden,
        }
    }
}

/// Standard GRU update:
///
/// ```text
/// z  = sigmoid(Wz x + bz + Uz h + cz)
/// r  = sigmoid(Wr x + br + Ur h + cr)
/// n  = tanh(Wn x + bn + r * (Un h + cn))
/// h' = (1 - z) * h + z * n
/// ```
pub fn gru_step(tape: &mut Tape<'_>, input: Var, state: Var, gru: &GruVars) -> Result<Var> {
    let (xl, hl) = (tape.value(input).len(), tape.value(state).len());
    if xl != gru.input || hl != gru.hidden {
        return Err(Error::Config(format!(
            "GRU expects input {} and state {}, got {xl} and {hl}",
            gru.input, gru.hidden
        )));
    }
    let h = gru.hidden;
    let gx = tape.matvec(gru.input_weights, input)?;
    let gx = tape.add(gx, gru.input_bias)?;
    let gh = tape.matvec(gru.state_weights, state)?;
    let gh = tape.add(gh, gru.state_bias)?;

    let zx = tape.slice(gx, 0, h)?;
    let zh = tape.slice(gh, 0, h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.sigmoid(z);

    let rx = tape.slice(gx, h, h)?;
    let rh = tape.slice(gh, h, h)?;
    let r = tape.add(rx, rh)?;
    let r = tape.sigmoid(r);

    let nx = tape.slice(gx, 2 * h, h)?;
    let nh = tape.slice(gh, 2 * h, h)?;
    let gated = tape.mul(r, nh)?;
    let n = tape.add(nx, gated)?;
    let n = tape.tanh(n);

    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, state)?;
    let fresh = tape.mul(z, n)?;
    tape.add(kept, fresh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_halve_the_state() {
        let block = GruBlock::zeros(3, 4);
        let x = Tensor::vector(vec![0.7, -2.0, 5.0]);
        let h = Tensor::vector(vec![0.2, -0.4, 0.9, 0.0]);
        let out = block.step(&x, &h).unwrap();
        for (o, s) in out.data().iter().zip(h.data()) {
            assert!((o - 0.5 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn default_hidden_size_is_accepted() {
        let block = GruBlock::zeros(256, 256);
        let out = block
            .step(&Tensor::zeros(&[256]), &Tensor::zeros(&[256]))
            .unwrap();
        assert_eq!(out.len(), 256);
    }

    #[test]
    fn mismatched_hidden_size_is_config_error() {
        let block = GruBlock::zeros(4, 8);
        let err = block
            .step(&Tensor::zeros(&[4]), &Tensor::zeros(&[16]))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn state_stays_in_open_unit_interval() {
        let mut block = GruBlock::zeros(2, 3);
        for (i, v) in block.input_weights.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() * 1.5;
        }
        for (i, v) in block.state_weights.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.71).cos() * 1.5;
        }
        let mut h = Tensor::vector(vec![0.99, -0.99, 0.0]);
        for step in 0..50 {
            let x = Tensor::vector(vec![(step as f64).sin() * 2.0, 1.0]);
            h = block.step(&x, &h).unwrap();
            assert!(h.data().iter().all(|v| v.abs() < 1.0));
        }
    }
}
