//! Symbolic interval domain over an unrolled LSTM.
//!
//! Every neuron carries a numeric interval and a pair of linear bounds over
//! neurons created before it. Numeric intervals are always obtained by
//! backsubstituting down to the input box.

use std::time::Instant;

use crate::model::{LstmLayer, LstmNetwork, Matrix};
use crate::relax::{self, BivariateKind, Box2, PlanePair, RelaxConfig};
use crate::{Error, Result};

pub type NeuronId = usize;

/// `Σ coeff·neuron + constant`, with terms sorted by neuron id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(NeuronId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(id: NeuronId) -> Self {
        Self {
            terms: vec![(id, 1.0)],
            constant: 0.0,
        }
    }

    pub fn new(mut terms: Vec<(NeuronId, f64)>, constant: f64) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(NeuronId, f64)> = Vec::with_capacity(terms.len());
        for (id, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += c,
                _ => merged.push((id, c)),
            }
        }
        Self {
            terms: merged,
            constant,
        }
    }

    /// `a·x + b·y + c` for a plane over two neurons.
    pub fn plane(x: NeuronId, y: NeuronId, a: f64, b: f64, c: f64) -> Self {
        Self::new(vec![(x, a), (y, b)], c)
    }

    pub fn max_id(&self) -> Option<NeuronId> {
        self.terms.last().map(|t| t.0)
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|t| t.1.is_finite())
    }

    /// Evaluates the expression at concrete neuron values.
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(id, c)| c * values[id]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub lo: f64,
    pub hi: f64,
    pub sym_lo: LinExpr,
    pub sym_hi: LinExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Input,
    /// Gate pre-activation (`f`, `i`, `C`, `o`).
    PreActivation(char),
    Product(BivariateKind),
    CellSum,
    Hidden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub provenance: Provenance,
    pub start: NeuronId,
    pub len: usize,
}

impl Generation {
    pub fn ids(&self) -> std::ops::Range<NeuronId> {
        self.start..self.start + self.len
    }
}

/// A relaxed product neuron and the box its planes were built over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedSlot {
    pub neuron: NeuronId,
    pub x: NeuronId,
    pub y: NeuronId,
    pub kind: BivariateKind,
    pub region: Box2,
    pub planes: PlanePair,
}

/// Supplies plane pairs for relaxed products, in creation order.
pub trait PlaneSource {
    fn planes(&mut self, slot: usize, region: &Box2, kind: BivariateKind) -> Result<PlanePair>;
}

/// Solves a fresh relaxation for every product.
#[derive(Debug, Clone)]
pub struct SinglePlane {
    pub cfg: RelaxConfig,
    pub deadline: Option<Instant>,
}

impl SinglePlane {
    pub fn new(cfg: RelaxConfig) -> Self {
        Self {
            cfg,
            deadline: None,
        }
    }
}

impl PlaneSource for SinglePlane {
    fn planes(&mut self, _slot: usize, region: &Box2, kind: BivariateKind) -> Result<PlanePair> {
        if self.deadline.is_some_and(|d| Instant::now() > d) {
            return Err(Error::Timeout);
        }
        relax::relax(&(*region).into(), kind, &self.cfg)
    }
}

/// Replays fixed plane pairs by slot.
#[derive(Debug, Clone)]
pub struct FixedPlanes(pub Vec<PlanePair>);

impl PlaneSource for FixedPlanes {
    fn planes(&mut self, slot: usize, _region: &Box2, _kind: BivariateKind) -> Result<PlanePair> {
        self.0
            .get(slot)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no planes for slot {slot}")))
    }
}

#[derive(Debug, Clone)]
pub struct AbstractState {
    input_box: Vec<(f64, f64)>,
    neurons: Vec<NeuronBounds>,
    generations: Vec<Generation>,
    slots: Vec<RelaxedSlot>,
}

impl AbstractState {
    /// The L∞ ball of radius `epsilon` around `x`, optionally clipped to a
    /// data range.
    pub fn input_state(x: &[f64], epsilon: f64, clip: Option<(f64, f64)>) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        let mut input_box = Vec::with_capacity(x.len());
        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    tensor: format!("input[{i}]"),
                });
            }
            let (mut lo, mut hi) = (v - epsilon, v + epsilon);
            if let Some((cl, ch)) = clip {
                lo = lo.max(cl);
                hi = hi.min(ch);
                if lo > hi {
                    return Err(Error::InvalidArgument(format!(
                        "input[{i}] = {v} lies outside the clip range [{cl}, {ch}]"
                    )));
                }
            }
            input_box.push((lo, hi));
        }
        Self::from_box(input_box)
    }

    pub fn from_box(input_box: Vec<(f64, f64)>) -> Result<Self> {
        if input_box.iter().any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("empty input interval".into()));
        }
        let neurons = input_box
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| NeuronBounds {
                lo,
                hi,
                sym_lo: LinExpr::var(i),
                sym_hi: LinExpr::var(i),
            })
            .collect();
        let generations = vec![Generation {
            provenance: Provenance::Input,
            start: 0,
            len: input_box.len(),
        }];
        Ok(Self {
            input_box,
            neurons,
            generations,
            slots: Vec::new(),
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.input_box.len()
    }

    pub fn input_box(&self) -> &[(f64, f64)] {
        &self.input_box
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn neuron(&self, id: NeuronId) -> &NeuronBounds {
        &self.neurons[id]
    }

    pub fn interval(&self, id: NeuronId) -> (f64, f64) {
        (self.neurons[id].lo, self.neurons[id].hi)
    }

    pub fn generations(&self) -> &[Generation] {
        &self.generations
    }

    pub fn slots(&self) -> &[RelaxedSlot] {
        &self.slots
    }

    /// Replaces the symbolic bounds of a relaxed product by new planes over
    /// the same operands. Numeric intervals are left untouched.
    pub fn set_slot_planes(&mut self, slot: usize, planes: &PlanePair) {
        let s = &self.slots[slot];
        let (n, x, y) = (s.neuron, s.x, s.y);
        let neuron = &mut self.neurons[n];
        neuron.sym_lo = LinExpr::plane(x, y, planes.lower.a, planes.lower.b, planes.lower.c);
        neuron.sym_hi = LinExpr::plane(x, y, planes.upper.a, planes.upper.b, planes.upper.c);
    }

    /// Upper (`upper = true`) or lower bound of `expr` over the input box.
    pub fn bound(&self, expr: &LinExpr, upper: bool) -> f64 {
        let n_in = self.num_inputs();
        let Some(max_id) = expr.max_id() else {
            return expr.constant;
        };
        let mut acc = vec![0.0; max_id + 1];
        for &(id, c) in &expr.terms {
            acc[id] += c;
        }
        let mut constant = expr.constant;
        for id in (n_in..=max_id).rev() {
            let c = acc[id];
            if c == 0.0 {
                continue;
            }
            acc[id] = 0.0;
            let nb = &self.neurons[id];
            let sym = if (c > 0.0) == upper { &nb.sym_hi } else { &nb.sym_lo };
            constant += c * sym.constant;
            for &(j, a) in &sym.terms {
                acc[j] += c * a;
            }
        }
        let mut total = constant;
        for (j, &c) in acc.iter().enumerate().take(n_in.min(max_id + 1)) {
            if c == 0.0 {
                continue;
            }
            let (lo, hi) = self.input_box[j];
            total += if (c > 0.0) == upper { c * hi } else { c * lo };
        }
        total
    }

    /// Interval of `expr` over the input box by full backsubstitution.
    pub fn backsubstitute(&self, expr: &LinExpr) -> (f64, f64) {
        (self.bound(expr, false), self.bound(expr, true))
    }

    /// Interval of `expr` using only the stored intervals of the neurons it
    /// references directly.
    pub fn one_step_interval(&self, expr: &LinExpr) -> (f64, f64) {
        let mut lo = expr.constant;
        let mut hi = expr.constant;
        for &(id, c) in &expr.terms {
            let (l, h) = self.interval(id);
            if c >= 0.0 {
                lo += c * l;
                hi += c * h;
            } else {
                lo += c * h;
                hi += c * l;
            }
        }
        (lo, hi)
    }

    fn push(&mut self, sym_lo: LinExpr, sym_hi: LinExpr) -> Result<NeuronId> {
        let id = self.neurons.len();
        debug_assert!(sym_lo.max_id().map_or(true, |m| m < id));
        debug_assert!(sym_hi.max_id().map_or(true, |m| m < id));
        if !sym_lo.is_finite() || !sym_hi.is_finite() {
            return Err(Error::NonFinite {
                tensor: format!("symbolic bound of neuron {id}"),
            });
        }
        let lo = self.bound(&sym_lo, false);
        let hi = self.bound(&sym_hi, true);
        // equal expressions can round differently on the two passes
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        self.neurons.push(NeuronBounds {
            lo,
            hi,
            sym_lo,
            sym_hi,
        });
        Ok(id)
    }

    fn open_generation(&mut self, provenance: Provenance) -> usize {
        self.generations.push(Generation {
            provenance,
            start: self.neurons.len(),
            len: 0,
        });
        self.generations.len() - 1
    }

    fn close_generation(&mut self, g: usize) {
        let start = self.generations[g].start;
        self.generations[g].len = self.neurons.len() - start;
    }

    /// New generation `W·sources + b`, exact in both symbolic bounds.
    pub fn affine(
        &mut self,
        w: &Matrix,
        b: &[f64],
        sources: &[NeuronId],
        provenance: Provenance,
    ) -> Result<Vec<NeuronId>> {
        if w.cols() != sources.len() {
            return Err(Error::shape(
                "affine weights",
                format!("{} columns", sources.len()),
                format!("{} columns", w.cols()),
            ));
        }
        if b.len() != w.rows() {
            return Err(Error::shape("affine bias", w.rows(), b.len()));
        }
        let g = self.open_generation(provenance);
        let mut ids = Vec::with_capacity(w.rows());
        for (r, &bias) in b.iter().enumerate() {
            let terms = sources
                .iter()
                .zip(w.row(r))
                .filter(|(_, &c)| c != 0.0)
                .map(|(&id, &c)| (id, c))
                .collect();
            let expr = LinExpr::new(terms, bias);
            ids.push(self.push(expr.clone(), expr)?);
        }
        self.close_generation(g);
        Ok(ids)
    }

    /// Exact linear neuron `expr`.
    pub fn linear(&mut self, expr: LinExpr) -> Result<NeuronId> {
        self.push(expr.clone(), expr)
    }

    /// Relaxed product neuron bounding `f(x, y)` by plane pairs over the
    /// current box of `(x, y)`.
    pub fn hadamard_relax(
        &mut self,
        x: NeuronId,
        y: NeuronId,
        kind: BivariateKind,
        source: &mut dyn PlaneSource,
    ) -> Result<NeuronId> {
        let (lx, ux) = self.interval(x);
        let (ly, uy) = self.interval(y);
        let region = Box2::new(lx, ux, ly, uy)?;
        let slot = self.slots.len();
        let planes = source.planes(slot, &region, kind)?;
        if !planes.lower.is_finite() || !planes.upper.is_finite() {
            return Err(Error::NonFinite {
                tensor: format!("planes of slot {slot}"),
            });
        }
        let lo = LinExpr::plane(x, y, planes.lower.a, planes.lower.b, planes.lower.c);
        let hi = LinExpr::plane(x, y, planes.upper.a, planes.upper.b, planes.upper.c);
        let id = self.push(lo, hi)?;
        self.slots.push(RelaxedSlot {
            neuron: id,
            x,
            y,
            kind,
            region,
            planes,
        });
        Ok(id)
    }

    /// One abstract LSTM step. `prev_h`/`prev_c` are `None` at the first
    /// frame, where both states are exactly zero.
    pub fn lstm_abstract_step(
        &mut self,
        layer: &LstmLayer,
        inputs: &[NeuronId],
        prev_h: Option<&[NeuronId]>,
        prev_c: Option<&[NeuronId]>,
        source: &mut dyn PlaneSource,
    ) -> Result<(Vec<NeuronId>, Vec<NeuronId>)> {
        let hidden = layer.hidden_dim();
        if inputs.len() != layer.input_dim() {
            return Err(Error::Dimension {
                expected: layer.input_dim(),
                found: inputs.len(),
            });
        }
        for prev in [prev_h, prev_c].into_iter().flatten() {
            if prev.len() != hidden {
                return Err(Error::Dimension {
                    expected: hidden,
                    found: prev.len(),
                });
            }
        }

        // Pre-activations over [h_{t-1}, x_t]; a zero h_{t-1} drops its columns.
        let preact = |state: &mut Self, w: &Matrix, b: &[f64], tag: char| -> Result<Vec<NeuronId>> {
            match prev_h {
                Some(h) => {
                    let sources: Vec<NeuronId> = h.iter().chain(inputs).copied().collect();
                    state.affine(w, b, &sources, Provenance::PreActivation(tag))
                }
                None => {
                    let mut x_part = Matrix::zeros(w.rows(), inputs.len());
                    for r in 0..w.rows() {
                        for c in 0..inputs.len() {
                            x_part.set(r, c, w.get(r, hidden + c));
                        }
                    }
                    state.affine(&x_part, b, inputs, Provenance::PreActivation(tag))
                }
            }
        };
        let f_pre = preact(self, &layer.w_f, &layer.b_f, 'f')?;
        let i_pre = preact(self, &layer.w_i, &layer.b_i, 'i')?;
        let g_pre = preact(self, &layer.w_c, &layer.b_c, 'C')?;
        let o_pre = preact(self, &layer.w_o, &layer.b_o, 'o')?;

        let mut forget = Vec::new();
        if let Some(c_prev) = prev_c {
            let g = self.open_generation(Provenance::Product(BivariateKind::SigMul));
            for k in 0..hidden {
                forget.push(self.hadamard_relax(f_pre[k], c_prev[k], BivariateKind::SigMul, source)?);
            }
            self.close_generation(g);
        }

        let g = self.open_generation(Provenance::Product(BivariateKind::SigTanh));
        let mut write = Vec::with_capacity(hidden);
        for k in 0..hidden {
            write.push(self.hadamard_relax(i_pre[k], g_pre[k], BivariateKind::SigTanh, source)?);
        }
        self.close_generation(g);

        let cell = if forget.is_empty() {
            write
        } else {
            let g = self.open_generation(Provenance::CellSum);
            let mut cell = Vec::with_capacity(hidden);
            for k in 0..hidden {
                let sum = LinExpr::new(vec![(forget[k], 1.0), (write[k], 1.0)], 0.0);
                cell.push(self.linear(sum)?);
            }
            self.close_generation(g);
            cell
        };

        let g = self.open_generation(Provenance::Hidden);
        let mut h = Vec::with_capacity(hidden);
        for k in 0..hidden {
            h.push(self.hadamard_relax(o_pre[k], cell[k], BivariateKind::SigTanh, source)?);
        }
        self.close_generation(g);
        Ok((h, cell))
    }
}

/// Frame-major index of input coordinate `j` of frame `t`.
pub fn input_id(net: &LstmNetwork, t: usize, j: usize) -> NeuronId {
    t * net.input_dim + j
}

/// Unrolls the whole network over `state`'s input box (frame-major
/// flattening) and returns the last layer's final hidden neurons.
pub fn abstract_network(
    net: &LstmNetwork,
    state: &mut AbstractState,
    source: &mut dyn PlaneSource,
) -> Result<Vec<NeuronId>> {
    let expected = net.num_frames * net.input_dim;
    if state.num_inputs() != expected {
        return Err(Error::Dimension {
            expected,
            found: state.num_inputs(),
        });
    }
    let layers = net.num_layers();
    let mut h: Vec<Option<Vec<NeuronId>>> = vec![None; layers];
    let mut c: Vec<Option<Vec<NeuronId>>> = vec![None; layers];
    for t in 0..net.num_frames {
        let mut input: Vec<NeuronId> = (0..net.input_dim).map(|j| input_id(net, t, j)).collect();
        for (l, layer) in net.layers.iter().enumerate() {
            let (h_new, c_new) =
                state.lstm_abstract_step(layer, &input, h[l].as_deref(), c[l].as_deref(), source)?;
            input.clone_from(&h_new);
            h[l] = Some(h_new);
            c[l] = Some(c_new);
        }
    }
    Ok(h.pop().flatten().expect("network has layers"))
}

/// `Σ_k W_out[row][k]·h_k + b_out[row]` over hidden neurons.
pub fn logit_expr(net: &LstmNetwork, hidden: &[NeuronId], row: usize) -> LinExpr {
    LinExpr::new(
        hidden
            .iter()
            .zip(net.w_out.row(row))
            .map(|(&id, &w)| (id, w))
            .collect(),
        net.b_out[row],
    )
}

/// Backsubstituted interval of every logit.
pub fn logit_bounds(net: &LstmNetwork, state: &AbstractState, hidden: &[NeuronId]) -> Vec<(f64, f64)> {
    (0..net.num_classes())
        .map(|r| state.backsubstitute(&logit_expr(net, hidden, r)))
        .collect()
}
