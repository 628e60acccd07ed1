//! Two-layer perceptron mapping a flattened 3-frame window to a feature
//! vector: `out = W2 · dropout(tanh(W1 · x + b1)) + b2`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::embedding::{Embedder, WindowSpec};
use crate::error::{Error, Result};
use crate::ingest::{numbered_lines, parse_row, write_row};
use crate::training::loss::{soft_pair_loss_with_grad, PairTargets};
use crate::Scalar;

/// Initial value of the output-layer biases, keeping step-0 outputs off zero.
pub const OUTPUT_BIAS_INIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMlp<T> {
    input: usize,
    hidden: usize,
    output: usize,
    /// `hidden x input`, row-major.
    w1: Vec<T>,
    b1: Vec<T>,
    /// `output x hidden`, row-major.
    w2: Vec<T>,
    b2: Vec<T>,
    /// Frame shape the input was flattened from, if known.
    frame_shape: Option<(usize, usize)>,
}

/// Gradient with the same layout as [`ToyMlp`]'s flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient<T> {
    pub flat: Vec<T>,
}

impl<T: Scalar> MlpGradient<T> {
    pub fn norm(&self) -> T {
        self.flat.iter().map(|g| *g * *g).sum::<T>().sqrt()
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace<T> {
    hidden: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> ToyMlp<T> {
    /// Glorot-uniform weights, zero hidden biases, output biases
    /// [`OUTPUT_BIAS_INIT`].
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let mut glorot = |fan_in: usize, fan_out: usize| -> Vec<T> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| T::of(rng.random_range(-limit..limit)))
                .collect()
        };
        let w1 = glorot(input, hidden);
        let w2 = glorot(hidden, output);
        Ok(Self {
            input,
            hidden,
            output,
            w1,
            b1: vec![T::zero(); hidden],
            w2,
            b2: vec![T::of(OUTPUT_BIAS_INIT); output],
            frame_shape: None,
        })
    }

    /// Network with every parameter zero.
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![T::zero(); input * hidden],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden * output],
            b2: vec![T::zero(); output],
            frame_shape: None,
        }
    }

    pub fn with_frame_shape(mut self, shape: (usize, usize)) -> Self {
        self.frame_shape = Some(shape);
        self
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [self.input, self.hidden, self.output]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn flat_params(&self) -> Vec<T> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for part in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(part.len());
            part.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::InvalidParameter(format!(
                "network takes {} inputs, got {}",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }

    /// `dropout` scales each hidden unit (0 for dropped, `1/(1-p)` for kept).
    fn forward_trace(&self, x: &[T], dropout: Option<&[T]>) -> Trace<T> {
        let hidden: Vec<T> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input..(h + 1) * self.input];
                let z = row.iter().zip(x).fold(self.b1[h], |acc, (w, v)| acc + *w * *v);
                let a = z.tanh();
                match dropout {
                    Some(m) => a * m[h],
                    None => a,
                }
            })
            .collect();
        let output = (0..self.output)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&hidden).fold(self.b2[o], |acc, (w, h)| acc + *w * *h)
            })
            .collect();
        Trace { hidden, output }
    }

    /// Deterministic inference pass (no dropout).
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.forward_trace(x, None).output)
    }

    pub fn forward_with_dropout(&self, x: &[T], dropout: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.forward_trace(x, Some(dropout)).output)
    }

    /// Draws an inverted-dropout scale vector for the hidden layer.
    pub fn dropout_mask<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Vec<T> {
        let keep = T::of(1.0 / (1.0 - rate));
        (0..self.hidden)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect()
    }

    /// Soft pair loss of the batch outputs and its exact gradient with
    /// respect to every parameter.
    pub fn loss_gradient(
        &self,
        batch: &[Vec<T>],
        targets: &PairTargets<T>,
        dropout: Option<&[Vec<T>]>,
    ) -> Result<(T, MlpGradient<T>)> {
        for x in batch {
            self.check_input(x)?;
        }
        let traces: Vec<Trace<T>> = batch
            .iter()
            .enumerate()
            .map(|(k, x)| self.forward_trace(x, dropout.map(|d| &d[k][..])))
            .collect();
        let outputs: Vec<Vec<T>> = traces.iter().map(|t| t.output.clone()).collect();
        let (loss, d_out) = soft_pair_loss_with_grad(&outputs, targets)?;

        let mut gw1 = vec![T::zero(); self.w1.len()];
        let mut gb1 = vec![T::zero(); self.b1.len()];
        let mut gw2 = vec![T::zero(); self.w2.len()];
        let mut gb2 = vec![T::zero(); self.b2.len()];
        for (k, (x, trace)) in batch.iter().zip(&traces).enumerate() {
            let dy = &d_out[k];
            for o in 0..self.output {
                gb2[o] = gb2[o] + dy[o];
                for h in 0..self.hidden {
                    gw2[o * self.hidden + h] = gw2[o * self.hidden + h] + dy[o] * trace.hidden[h];
                }
            }
            for h in 0..self.hidden {
                let dh = dy
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (o, d)| acc + self.w2[o * self.hidden + h] * *d);
                // trace.hidden = tanh(z) * scale; recover tanh(z) for its derivative.
                let scale = dropout.map_or(T::one(), |d| d[k][h]);
                if scale.is_zero() {
                    continue;
                }
                let a = trace.hidden[h] / scale;
                let dz = dh * scale * (T::one() - a * a);
                gb1[h] = gb1[h] + dz;
                let row = &mut gw1[h * self.input..(h + 1) * self.input];
                for (g, v) in row.iter_mut().zip(x) {
                    *g = *g + dz * *v;
                }
            }
        }
        Ok((
            loss,
            MlpGradient {
                flat: [gw1, gb1, gw2, gb2].concat(),
            },
        ))
    }

    /// `CSMLP v1 <input> <hidden> <output>` then `w1` rows, `b1`, `w2` rows
    /// and `b2`, one line each.
    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "CSMLP v1 {} {} {}", self.input, self.hidden, self.output)?;
        for row in self.w1.chunks(self.input) {
            write_row(&mut out, row)?;
        }
        write_row(&mut out, &self.b1)?;
        for row in self.w2.chunks(self.hidden) {
            write_row(&mut out, row)?;
        }
        write_row(&mut out, &self.b2)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lines = numbered_lines(path.as_ref())?;
        let (_, header) = lines
            .first()
            .ok_or_else(|| Error::MalformedHeader("empty weights file".into()))?;
        let tokens: Vec<&str> = header.split_ascii_whitespace().collect();
        if tokens.len() != 5 || tokens[0] != "CSMLP" || tokens[1] != "v1" {
            return Err(Error::MalformedHeader(format!(
                "expected `CSMLP v1 <input> <hidden> <output>`, got {header:?}"
            )));
        }
        let size = |t: &str| {
            t.parse::<usize>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| Error::MalformedHeader(format!("invalid layer size {t:?}")))
        };
        let (input, hidden, output) = (size(tokens[2])?, size(tokens[3])?, size(tokens[4])?);
        let expected_lines = hidden + 1 + output + 1;
        if lines.len() - 1 != expected_lines {
            return Err(Error::MalformedHeader(format!(
                "expected {expected_lines} parameter lines, found {}",
                lines.len() - 1
            )));
        }
        let mut mlp = Self::zeros(input, hidden, output);
        let mut rows = lines[1..].iter();
        let mut next = |width: usize| -> Result<Vec<T>> {
            let (no, line) = rows.next().expect("line count checked");
            parse_row(line, *no, width, false)
        };
        let mut flat = Vec::with_capacity(mlp.param_count());
        for _ in 0..hidden {
            flat.extend(next(input)?);
        }
        flat.extend(next(hidden)?);
        for _ in 0..output {
            flat.extend(next(hidden)?);
        }
        flat.extend(next(output)?);
        mlp.set_flat_params(&flat)?;
        Ok(mlp)
    }
}

impl<T: Scalar> Embedder<T> for ToyMlp<T> {
    fn output_dim(&self) -> usize {
        self.output
    }

    fn input_shape(&self) -> Option<(usize, usize)> {
        self.frame_shape
    }

    fn embed(&self, window: &WindowSpec<'_, T>) -> Result<Vec<T>> {
        let x = window.flatten();
        if x.len() != self.input {
            let (h, w) = window.frames[0].shape();
            return Err(Error::InputShape {
                expected: self.frame_shape.unwrap_or((1, self.input / 3)),
                found: (h, w),
            });
        }
        self.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::loss::soft_pair_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> (ToyMlp<f64>, Vec<Vec<f64>>, PairTargets<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = ToyMlp::init(12, 5, 3, &mut rng).unwrap();
        let batch: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..12).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<f64> = (0..16)
            .map(|k| if k / 4 == k % 4 { 1.0 } else { 0.3 + 0.1 * ((k / 4 + k % 4) % 3) as f64 })
            .collect();
        (mlp, batch, PairTargets::new(4, y, None).unwrap())
    }

    fn loss_at(mlp: &ToyMlp<f64>, batch: &[Vec<f64>], y: &PairTargets<f64>, masks: Option<&[Vec<f64>]>) -> f64 {
        let out: Vec<Vec<f64>> = batch
            .iter()
            .enumerate()
            .map(|(k, x)| match masks {
                Some(m) => mlp.forward_with_dropout(x, &m[k]).unwrap(),
                None => mlp.forward(x).unwrap(),
            })
            .collect();
        soft_pair_loss(&out, y).unwrap()
    }

    #[test]
    fn gradient_with_dropout_matches_finite_differences() {
        let (mut mlp, batch, y) = toy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let masks: Vec<Vec<f64>> = (0..4).map(|_| mlp.dropout_mask(0.3, &mut rng)).collect();
        let (loss, grad) = mlp.loss_gradient(&batch, &y, Some(&masks)).unwrap();
        assert_eq!(loss, loss_at(&mlp, &batch, &y, Some(&masks)));
        let base = mlp.flat_params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            mlp.set_flat_params(&p).unwrap();
            let up = loss_at(&mlp, &batch, &y, Some(&masks));
            p[k] -= 2.0 * h;
            mlp.set_flat_params(&p).unwrap();
            let down = loss_at(&mlp, &batch, &y, Some(&masks));
            let fd = (up - down) / (2.0 * h);
            let rel = (grad.flat[k] - fd).abs() / grad.flat[k].abs().max(1.0);
            assert!(rel < 1e-7, "param {k}: {} vs {fd}", grad.flat[k]);
        }
    }

    #[test]
    fn zero_network_hits_zero_norm_guard() {
        let mlp = ToyMlp::<f64>::zeros(6, 2, 2);
        let batch = vec![vec![0.5; 6]; 2];
        let y = PairTargets::new(2, vec![1.0; 4], None).unwrap();
        assert!(matches!(mlp.loss_gradient(&batch, &y, None), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn zero_weights_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp = ToyMlp::<f64>::init(6, 4, 3, &mut rng).unwrap();
        let mut flat = vec![0.0; mlp.param_count()];
        let n = flat.len();
        flat[n - 3..].copy_from_slice(&[0.2, -0.1, 0.4]);
        mlp.set_flat_params(&flat).unwrap();
        let a = mlp.forward(&[0.1, 0.9, 0.3, 0.0, 1.0, 0.5]).unwrap();
        let b = mlp.forward(&[0.7, 0.2, 0.3, 0.8, 0.0, 0.1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![0.2, -0.1, 0.4]);
    }

    #[test]
    fn weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.weights");
        let (mlp, _, _) = toy(5);
        mlp.store(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("CSMLP v1 12 5 3\n"));
        let back = ToyMlp::<f64>::load(&path).unwrap();
        assert_eq!(back.layer_sizes(), [12, 5, 3]);
        let expected: Vec<f64> = mlp.flat_params().iter().map(|v| v.quantize_f32()).collect();
        assert_eq!(back.flat_params(), expected);

        fs::write(&path, "CSMLP v1 2 1 1\n0 0\n0\n0\n").unwrap();
        assert!(ToyMlp::<f64>::load(&path).is_err());
    }

    #[test]
    fn input_size_is_checked() {
        let (mlp, _, _) = toy(2);
        assert!(mlp.forward(&[0.0; 11]).is_err());
    }
}
