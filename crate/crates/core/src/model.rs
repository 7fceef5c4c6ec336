//! LSTM network representation, model file I/O and exact inference.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Current model document version written by [`LstmNetwork::to_json`].
pub const MODEL_VERSION: u32 = 1;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(format!("row {i}"), cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Logistic sigmoid, branching on sign so `exp` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// One LSTM layer. Each gate matrix acts on the concatenation `[h_{t-1}, x_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmLayer {
    pub fn hidden_dim(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    /// All-zero layer.
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        let w = Matrix::zeros(hidden_dim, hidden_dim + input_dim);
        let b = vec![0.0; hidden_dim];
        Self {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    pub(crate) fn gates(&self) -> [(&'static str, &Matrix, &[f64]); 4] {
        [
            ("W_f", &self.w_f, &self.b_f),
            ("W_i", &self.w_i, &self.b_i),
            ("W_C", &self.w_c, &self.b_c),
            ("W_o", &self.w_o, &self.b_o),
        ]
    }

    fn validate(&self, index: usize, hidden_dim: usize, input_dim: usize) -> Result<()> {
        let cols = hidden_dim + input_dim;
        for (name, w, b) in self.gates() {
            let tensor = format!("layers[{index}].{name}");
            if w.rows() != hidden_dim || w.cols() != cols {
                return Err(Error::shape(
                    tensor,
                    format!("{hidden_dim}x{cols}"),
                    format!("{}x{}", w.rows(), w.cols()),
                ));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite { tensor });
            }
            let bias = format!("layers[{index}].b_{}", &name[2..]);
            if b.len() != hidden_dim {
                return Err(Error::shape(bias, hidden_dim, b.len()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { tensor: bias });
            }
        }
        Ok(())
    }
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// One step of the LSTM recurrence.
pub fn cell_step(layer: &LstmLayer, prev: &CellState, x_t: &[f64]) -> Result<CellState> {
    let hidden = layer.hidden_dim();
    if x_t.len() != layer.input_dim() {
        return Err(Error::Dimension {
            expected: layer.input_dim(),
            found: x_t.len(),
        });
    }
    if prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(Error::Dimension {
            expected: hidden,
            found: prev.h.len(),
        });
    }
    let mut z = Vec::with_capacity(hidden + x_t.len());
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x_t);

    let pre = |w: &Matrix, b: &[f64]| -> Vec<f64> {
        w.mul_vec(&z).into_iter().zip(b).map(|(v, b)| v + b).collect()
    };
    let f = pre(&layer.w_f, &layer.b_f);
    let i = pre(&layer.w_i, &layer.b_i);
    let g = pre(&layer.w_c, &layer.b_c);
    let o = pre(&layer.w_o, &layer.b_o);

    let mut c = Vec::with_capacity(hidden);
    let mut h = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let c_k = sigmoid(f[k]) * prev.c[k] + sigmoid(i[k]) * tanh(g[k]);
        c.push(c_k);
        h.push(sigmoid(o[k]) * tanh(c_k));
    }
    Ok(CellState { h, c })
}

/// A stacked LSTM followed by an affine classifier on the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork {
    pub layers: Vec<LstmLayer>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub input_dim: usize,
    pub num_frames: usize,
}

impl LstmNetwork {
    /// Builds a network, checking every shape and finiteness invariant.
    pub fn new(
        layers: Vec<LstmLayer>,
        w_out: Matrix,
        b_out: Vec<f64>,
        input_dim: usize,
        num_frames: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        if input_dim == 0 || num_frames == 0 {
            return Err(Error::InvalidArgument(
                "input_dim and num_frames must be positive".into(),
            ));
        }
        let hidden = layers[0].w_f.rows();
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be positive".into()));
        }
        let mut layer_input = input_dim;
        for (idx, layer) in layers.iter().enumerate() {
            layer.validate(idx, hidden, layer_input)?;
            layer_input = hidden;
        }
        if w_out.cols() != hidden {
            return Err(Error::shape(
                "classifier.W_out",
                format!("{}x{hidden}", w_out.rows()),
                format!("{}x{}", w_out.rows(), w_out.cols()),
            ));
        }
        if w_out.rows() == 0 {
            return Err(Error::InvalidArgument("classifier has no classes".into()));
        }
        if !w_out.is_finite() {
            return Err(Error::NonFinite {
                tensor: "classifier.W_out".into(),
            });
        }
        if b_out.len() != w_out.rows() {
            return Err(Error::shape("classifier.b_out", w_out.rows(), b_out.len()));
        }
        if b_out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "classifier.b_out".into(),
            });
        }
        Ok(Self {
            layers,
            w_out,
            b_out,
            input_dim,
            num_frames,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.w_out.rows()
    }

    fn check_sequence(&self, sequence: &[Vec<f64>]) -> Result<()> {
        if sequence.len() != self.num_frames {
            return Err(Error::Dimension {
                expected: self.num_frames,
                found: sequence.len(),
            });
        }
        if let Some(bad) = sequence.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::Dimension {
                expected: self.input_dim,
                found: bad.len(),
            });
        }
        Ok(())
    }

    /// Runs the network from zero initial states and returns the logits.
    pub fn forward(&self, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_sequence(sequence)?;
        let hidden = self.hidden_dim();
        let mut states = vec![CellState::zeros(hidden); self.layers.len()];
        for x_t in sequence {
            let mut input = x_t.clone();
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                *state = cell_step(layer, state, &input)?;
                input.clone_from(&state.h);
            }
        }
        let h_last = &states.last().expect("at least one layer").h;
        Ok(self
            .w_out
            .mul_vec(h_last)
            .into_iter()
            .zip(&self.b_out)
            .map(|(v, b)| v + b)
            .collect())
    }

    pub fn predict(&self, sequence: &[Vec<f64>]) -> Result<usize> {
        Ok(argmax(&self.forward(sequence)?))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_network()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_slice(bytes)?;
        doc.into_network()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Seeded random network with weights uniform in `[-scale, scale]`.
    pub fn random<R: Rng>(shape: &NetworkShape, scale: f64, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let mut m = Matrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m.set(i, j, rng.gen_range(-scale..=scale));
                }
            }
            m
        };
        let h = shape.hidden_dim;
        let mut layers = Vec::with_capacity(shape.num_layers);
        for l in 0..shape.num_layers {
            let input = if l == 0 { shape.input_dim } else { h };
            let mut mats: Vec<Matrix> = (0..4).map(|_| draw(h, h + input)).collect();
            let mut biases: Vec<Vec<f64>> = (0..4).map(|_| draw(1, h).row(0).to_vec()).collect();
            layers.push(LstmLayer {
                w_o: mats.pop().unwrap(),
                w_c: mats.pop().unwrap(),
                w_i: mats.pop().unwrap(),
                w_f: mats.pop().unwrap(),
                b_o: biases.pop().unwrap(),
                b_c: biases.pop().unwrap(),
                b_i: biases.pop().unwrap(),
                b_f: biases.pop().unwrap(),
            });
        }
        let w_out = draw(shape.num_classes, h);
        let b_out = draw(1, shape.num_classes).row(0).to_vec();
        Self::new(layers, w_out, b_out, shape.input_dim, shape.num_frames)
            .expect("random network satisfies invariants")
    }
}

/// Dimensions of a network, used for seeded generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub num_frames: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDocument {
    #[serde(rename = "W_f")]
    w_f: Vec<Vec<f64>>,
    #[serde(rename = "W_i")]
    w_i: Vec<Vec<f64>>,
    #[serde(rename = "W_C")]
    w_c: Vec<Vec<f64>>,
    #[serde(rename = "W_o")]
    w_o: Vec<Vec<f64>>,
    b_f: Vec<f64>,
    b_i: Vec<f64>,
    #[serde(rename = "b_C")]
    b_c: Vec<f64>,
    b_o: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierDocument {
    #[serde(rename = "W_out")]
    w_out: Vec<Vec<f64>>,
    b_out: Vec<f64>,
}

/// On-disk JSON layout of a model.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    version: u32,
    num_frames: usize,
    input_dim: usize,
    layers: Vec<LayerDocument>,
    classifier: ClassifierDocument,
}

fn matrix(name: String, rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(|err| match err {
        Error::Shape {
            expected, found, ..
        } => Error::Shape {
            tensor: name,
            expected: format!("rows of length {expected}"),
            found: format!("a row of length {found}"),
        },
        other => other,
    })
}

impl ModelDocument {
    fn into_network(self) -> Result<LstmNetwork> {
        if self.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            layers.push(LstmLayer {
                w_f: matrix(format!("layers[{i}].W_f"), &l.w_f)?,
                w_i: matrix(format!("layers[{i}].W_i"), &l.w_i)?,
                w_c: matrix(format!("layers[{i}].W_C"), &l.w_c)?,
                w_o: matrix(format!("layers[{i}].W_o"), &l.w_o)?,
                b_f: l.b_f,
                b_i: l.b_i,
                b_c: l.b_c,
                b_o: l.b_o,
            });
        }
        let w_out = matrix("classifier.W_out".into(), &self.classifier.w_out)?;
        LstmNetwork::new(
            layers,
            w_out,
            self.classifier.b_out,
            self.input_dim,
            self.num_frames,
        )
    }
}

impl From<&LstmNetwork> for ModelDocument {
    fn from(net: &LstmNetwork) -> Self {
        ModelDocument {
            version: MODEL_VERSION,
            num_frames: net.num_frames,
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| LayerDocument {
                    w_f: l.w_f.to_rows(),
                    w_i: l.w_i.to_rows(),
                    w_c: l.w_c.to_rows(),
                    w_o: l.w_o.to_rows(),
                    b_f: l.b_f.clone(),
                    b_i: l.b_i.clone(),
                    b_c: l.b_c.clone(),
                    b_o: l.b_o.clone(),
                })
                .collect(),
            classifier: ClassifierDocument {
                w_out: net.w_out.to_rows(),
                b_out: net.b_out.clone(),
            },
        }
    }
}
