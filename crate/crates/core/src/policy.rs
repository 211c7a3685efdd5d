//! Learned tower priorities.
//!
//! For a non-empty tower `i` with height `h` and calibrated HasAnswer
//! probability `p`,
//!
//! ```text
//! priority_i = alpha * p + MLP([HeightEmb[h], IndexEmb[i], p])
//! ```
//!
//! where the MLP is `w2 . tanh(W1 x + b1) + b2`. Empty towers use a
//! per-index initial priority instead. The policy is the softmax of the
//! priorities over towers that are not yet at full height.
//!
//! All parameters live in one flat vector (see [`PolicyShape`] for the
//! layout), and gradients use the same layout.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skyline::Skyline;

pub const DEFAULT_EMBEDDING_DIM: usize = 8;
pub const HIDDEN_DIM: usize = 32;

/// Value given to learnable initial priorities before training; matches the
/// constant rule of the greedy scheduler.
pub const DEFAULT_INITIAL_PRIORITY: f64 = 0.5;

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    /// Embedding size.
    pub d: usize,
    pub hidden: usize,
    /// Full tower height `L`; the height table has `L + 1` rows.
    pub n_layers: usize,
    /// Largest number of towers the policy can schedule.
    pub n_max: usize,
}

/// Offsets of each parameter group in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    height_emb: usize,
    index_emb: usize,
    init: usize,
    len: usize,
}

impl PolicyShape {
    pub fn new(n_layers: usize, n_max: usize) -> Self {
        PolicyShape {
            d: DEFAULT_EMBEDDING_DIM,
            hidden: HIDDEN_DIM,
            n_layers,
            n_max,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.d + 1
    }

    /// `1 + (2d+1)*hidden + hidden + hidden + 1 + (L+1)*d + n_max*d + n_max`:
    /// alpha, MLP weights and biases, both embedding tables, initial
    /// priorities.
    pub fn parameter_count(&self) -> usize {
        let PolicyShape { d, hidden, n_layers, n_max } = *self;
        1 + (2 * d + 1) * hidden + hidden + hidden + 1 + (n_layers + 1) * d + n_max * d + n_max
    }

    fn layout(&self) -> Layout {
        let w1 = 1;
        let b1 = w1 + self.hidden * self.input_dim();
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        let height_emb = b2 + 1;
        let index_emb = height_emb + (self.n_layers + 1) * self.d;
        let init = index_emb + self.n_max * self.d;
        Layout {
            w1,
            b1,
            w2,
            b2,
            height_emb,
            index_emb,
            init,
            len: init + self.n_max,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 || self.n_layers == 0 || self.n_max == 0 {
            return Err(Error::Shape(format!("all policy dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// How empty towers get their priority.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPriority {
    /// One trainable value per tower index.
    Learnable,
    /// The same constant for every empty tower, never trained.
    Fixed(f64),
}

/// Observable state of one tower, all a priority depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TowerState {
    Empty { index: usize },
    Built { index: usize, height: usize, prob: f64 },
}

impl TowerState {
    pub fn of(skyline: &Skyline, index: usize) -> Self {
        match skyline.summary(index) {
            None => TowerState::Empty { index },
            Some(prob) => TowerState::Built {
                index,
                height: skyline.height(index),
                prob,
            },
        }
    }
}

/// Input of the priority MLP for one non-empty tower.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerFeatures {
    pub height_vec: Vec<f64>,
    pub index_vec: Vec<f64>,
    pub has_answer_prob: f64,
}

impl TowerFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.height_vec.len() * 2 + 1);
        v.extend_from_slice(&self.height_vec);
        v.extend_from_slice(&self.index_vec);
        v.push(self.has_answer_prob);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    init: InitPriority,
    values: Vec<f64>,
}

impl PolicyParams {
    /// All-zero weights and `alpha = 0`; empty towers per `init`
    /// (learnable ones start at [`DEFAULT_INITIAL_PRIORITY`]).
    pub fn zeros(shape: PolicyShape, init: InitPriority) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        let mut params = PolicyParams {
            shape,
            init,
            values: vec![0.0; layout.len],
        };
        let start = match init {
            InitPriority::Learnable => DEFAULT_INITIAL_PRIORITY,
            InitPriority::Fixed(v) => v,
        };
        params.values[layout.init..].fill(start);
        Ok(params)
    }

    /// Training start point: `alpha = 1`, embeddings and MLP weights uniform
    /// in `[-0.1, 0.1]`, biases zero.
    pub fn random(shape: PolicyShape, init: InitPriority, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(shape, init)?;
        let layout = shape.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.values[0] = 1.0;
        let mut fill = |range: std::ops::Range<usize>, values: &mut [f64]| {
            for v in &mut values[range] {
                *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
            }
        };
        fill(layout.w1..layout.b1, &mut params.values);
        fill(layout.w2..layout.b2, &mut params.values);
        fill(layout.height_emb..layout.init, &mut params.values);
        Ok(params)
    }

    /// `alpha = 1`, zero MLP, fixed initial priority: the learned scheduler
    /// then ranks towers exactly like the greedy one.
    pub fn greedy_equivalent(shape: PolicyShape, init_value: f64) -> Result<Self> {
        let mut params = Self::zeros(shape, InitPriority::Fixed(init_value))?;
        params.values[0] = 1.0;
        Ok(params)
    }

    /// Every priority is zero, so sampling picks uniformly among expandable
    /// towers.
    pub fn uniform(shape: PolicyShape) -> Result<Self> {
        Self::zeros(shape, InitPriority::Fixed(0.0))
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn init(&self) -> InitPriority {
        self.init
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn count_parameters(&self) -> usize {
        self.values.len()
    }

    pub fn alpha(&self) -> f64 {
        self.values[0]
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.values[0] = alpha;
    }

    pub fn init_priorities(&self) -> &[f64] {
        &self.values[self.shape.layout().init..]
    }

    pub fn init_priorities_mut(&mut self) -> &mut [f64] {
        let start = self.shape.layout().init;
        &mut self.values[start..]
    }

    /// `W1` row-major, `hidden x (2d+1)`.
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let l = self.shape.layout();
        &mut self.values[l.w1..l.b1]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let l = self.shape.layout();
        &mut self.values[l.b1..l.w2]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let l = self.shape.layout();
        &mut self.values[l.w2..l.b2]
    }

    pub fn b2_mut(&mut self) -> &mut f64 {
        let l = self.shape.layout();
        &mut self.values[l.b2]
    }

    pub fn height_row(&self, height: usize) -> &[f64] {
        let l = self.shape.layout();
        let start = l.height_emb + height * self.shape.d;
        &self.values[start..start + self.shape.d]
    }

    pub fn index_row(&self, index: usize) -> &[f64] {
        let l = self.shape.layout();
        let start = l.index_emb + index * self.shape.d;
        &self.values[start..start + self.shape.d]
    }

    /// Panics on an empty tower: those take their initial priority and
    /// never reach the MLP.
    pub fn features(&self, skyline: &Skyline, i: usize) -> TowerFeatures {
        let prob = skyline
            .summary(i)
            .unwrap_or_else(|| panic!("tower {i} is empty and has no features"));
        TowerFeatures {
            height_vec: self.height_row(skyline.height(i)).to_vec(),
            index_vec: self.index_row(i).to_vec(),
            has_answer_prob: prob,
        }
    }

    #[inline]
    fn pre_activation(&self, l: &Layout, k: usize, height: usize, index: usize, prob: f64) -> f64 {
        let d = self.shape.d;
        let row = &self.values[l.w1 + k * self.shape.input_dim()..][..2 * d + 1];
        let h_emb = &self.values[l.height_emb + height * d..][..d];
        let i_emb = &self.values[l.index_emb + index * d..][..d];
        let mut z = self.values[l.b1 + k];
        for j in 0..d {
            z += row[j] * h_emb[j] + row[d + j] * i_emb[j];
        }
        z + row[2 * d] * prob
    }

    /// MLP output for a non-empty tower.
    pub fn mlp_output(&self, height: usize, index: usize, prob: f64) -> f64 {
        let l = self.shape.layout();
        let mut out = self.values[l.b2];
        for k in 0..self.shape.hidden {
            out += self.values[l.w2 + k] * self.pre_activation(&l, k, height, index, prob).tanh();
        }
        out
    }

    pub fn priority_of(&self, state: TowerState) -> f64 {
        match state {
            TowerState::Empty { index } => self.init_priorities()[index],
            TowerState::Built { index, height, prob } => {
                self.alpha() * prob + self.mlp_output(height, index, prob)
            }
        }
    }

    pub fn priority(&self, skyline: &Skyline, i: usize) -> f64 {
        self.priority_of(TowerState::of(skyline, i))
    }

    /// Softmax over the towers in `mask`; other towers get probability zero.
    pub fn policy_distribution(&self, skyline: &Skyline, mask: &[usize]) -> Result<Vec<f64>> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut priorities = vec![0.0; skyline.n()];
        for &i in mask {
            priorities[i] = self.priority(skyline, i);
        }
        let mut dist = vec![0.0; skyline.n()];
        masked_softmax(&priorities, mask, &mut dist);
        Ok(dist)
    }

    /// Adds `coef * d priority / d params` for a tower in `state` to `grad`.
    /// `hidden` is scratch space of any length.
    pub fn accumulate_priority_gradient(
        &self,
        state: TowerState,
        coef: f64,
        grad: &mut [f64],
        hidden: &mut Vec<f64>,
    ) {
        let l = self.shape.layout();
        let (index, height, prob) = match state {
            TowerState::Empty { index } => {
                grad[l.init + index] += coef;
                return;
            }
            TowerState::Built { index, height, prob } => (index, height, prob),
        };
        let d = self.shape.d;
        let in_dim = self.shape.input_dim();
        hidden.clear();
        hidden.extend((0..self.shape.hidden).map(|k| self.pre_activation(&l, k, height, index, prob).tanh()));

        grad[0] += coef * prob;
        grad[l.b2] += coef;
        let h_off = l.height_emb + height * d;
        let i_off = l.index_emb + index * d;
        for (k, &a) in hidden.iter().enumerate() {
            grad[l.w2 + k] += coef * a;
            let g = coef * self.values[l.w2 + k] * (1.0 - a * a);
            if g == 0.0 {
                continue;
            }
            grad[l.b1 + k] += g;
            let row = l.w1 + k * in_dim;
            for j in 0..d {
                let h_in = self.values[h_off + j];
                let i_in = self.values[i_off + j];
                grad[row + j] += g * h_in;
                grad[row + d + j] += g * i_in;
                grad[h_off + j] += g * self.values[row + j];
                grad[i_off + j] += g * self.values[row + d + j];
            }
            grad[row + 2 * d] += g * prob;
        }
    }

    /// Exact gradient of `log pi(action | skyline)` over every parameter.
    ///
    /// The mask is every tower below full height; `action` must be in it.
    pub fn log_prob_gradient(&self, skyline: &Skyline, action: usize) -> Vec<f64> {
        let mask = skyline.expandable(self.shape.n_layers);
        assert!(mask.contains(&action), "tower {action} is not expandable");
        let dist = self
            .policy_distribution(skyline, &mask)
            .expect("mask contains the action");
        let mut grad = vec![0.0; self.values.len()];
        let mut scratch = Vec::with_capacity(self.shape.hidden);
        // d log pi(a) = d p_a - sum_j pi_j d p_j
        for &j in &mask {
            let coef = if j == action { 1.0 - dist[j] } else { -dist[j] };
            self.accumulate_priority_gradient(TowerState::of(skyline, j), coef, &mut grad, &mut scratch);
        }
        grad
    }

    /// Gradient ascent step `theta += lr * grad`. Fixed initial priorities
    /// are left untouched, as is every coordinate whose step is zero.
    pub fn ascend(&mut self, grad: &[f64], lr: f64) {
        assert_eq!(grad.len(), self.values.len());
        let end = match self.init {
            InitPriority::Learnable => self.values.len(),
            InitPriority::Fixed(_) => self.shape.layout().init,
        };
        for (v, g) in self.values[..end].iter_mut().zip(grad) {
            let step = lr * g;
            if step != 0.0 {
                *v += step;
            }
        }
    }

    pub fn check_fits(&self, n: usize, n_layers: usize) -> Result<()> {
        if n > self.shape.n_max {
            return Err(Error::Shape(format!(
                "question has {n} passages, policy supports at most {}",
                self.shape.n_max
            )));
        }
        if n_layers != self.shape.n_layers {
            return Err(Error::Shape(format!(
                "traces have {n_layers} layers, policy was built for {}",
                self.shape.n_layers
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> PolicyFile {
        let l = self.shape.layout();
        let rows = |start: usize, count: usize, width: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|r| self.values[start + r * width..start + (r + 1) * width].to_vec())
                .collect()
        };
        PolicyFile {
            d: self.shape.d,
            hidden: self.shape.hidden,
            n_layers: self.shape.n_layers,
            n_max: self.shape.n_max,
            alpha: self.values[0],
            w1: rows(l.w1, self.shape.hidden, self.shape.input_dim()),
            b1: self.values[l.b1..l.w2].to_vec(),
            w2: self.values[l.w2..l.b2].to_vec(),
            b2: self.values[l.b2],
            height_emb: rows(l.height_emb, self.shape.n_layers + 1, self.shape.d),
            index_emb: rows(l.index_emb, self.shape.n_max, self.shape.d),
            init_priority: InitPriorityFile {
                mode: self.init,
                values: self.init_priorities().to_vec(),
            },
        }
    }

    pub fn from_file(file: PolicyFile) -> Result<Self> {
        let shape = PolicyShape {
            d: file.d,
            hidden: file.hidden,
            n_layers: file.n_layers,
            n_max: file.n_max,
        };
        shape.validate()?;
        let check = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Shape(format!("`{name}` has {got} entries, expected {want}")));
            }
            Ok(())
        };
        let flat = |name: &str, rows: &[Vec<f64>], count: usize, width: usize| -> Result<Vec<f64>> {
            check(name, rows.len(), count)?;
            for (r, row) in rows.iter().enumerate() {
                check(&format!("{name}[{r}]"), row.len(), width)?;
            }
            Ok(rows.concat())
        };
        let mut values = Vec::with_capacity(shape.parameter_count());
        values.push(file.alpha);
        values.extend(flat("w1", &file.w1, shape.hidden, shape.input_dim())?);
        check("b1", file.b1.len(), shape.hidden)?;
        values.extend(&file.b1);
        check("w2", file.w2.len(), shape.hidden)?;
        values.extend(&file.w2);
        values.push(file.b2);
        values.extend(flat("height_emb", &file.height_emb, shape.n_layers + 1, shape.d)?);
        values.extend(flat("index_emb", &file.index_emb, shape.n_max, shape.d)?);
        check("init_priority.values", file.init_priority.values.len(), shape.n_max)?;
        values.extend(&file.init_priority.values);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams {
            shape,
            init: file.init_priority.mode,
            values,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    /// Loads and checks the stored shape against `(d, n_layers, n_max)`.
    pub fn load_expecting(path: impl AsRef<Path>, d: usize, n_layers: usize, n_max: usize) -> Result<Self> {
        let params = Self::load(path)?;
        let s = params.shape;
        if (s.d, s.n_layers, s.n_max) != (d, n_layers, n_max) {
            return Err(Error::Shape(format!(
                "policy has (d, L, n_max) = ({}, {}, {}), expected ({d}, {n_layers}, {n_max})",
                s.d, s.n_layers, s.n_max
            )));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("policy serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// On-disk policy document with explicit shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub d: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_max: usize,
    pub alpha: f64,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub height_emb: Vec<Vec<f64>>,
    pub index_emb: Vec<Vec<f64>>,
    pub init_priority: InitPriorityFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitPriorityFile {
    pub mode: InitPriority,
    pub values: Vec<f64>,
}

/// Writes `softmax(priorities[mask])` into `out[mask]` and zero elsewhere.
pub fn masked_softmax(priorities: &[f64], mask: &[usize], out: &mut [f64]) {
    out.fill(0.0);
    let max = mask
        .iter()
        .map(|&i| priorities[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in mask {
        let e = (priorities[i] - max).exp();
        out[i] = e;
        total += e;
    }
    for &i in mask {
        out[i] /= total;
    }
}

/// Index of the largest value among `candidates`; ties go to the lowest
/// index.
pub fn argmax_over(values: &[f64], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        match best {
            Some(b) if values[i] > values[b] || (values[i] == values[b] && i < b) => best = Some(i),
            None => best = Some(i),
            _ => {}
        }
    }
    best
}

pub enum SelectMode<'a> {
    Greedy,
    Sample(&'a mut dyn RngCore),
}

/// Draws a tower from `dist` (sample mode) or takes its argmax with ties to
/// the lowest index (greedy mode).
pub fn select_action(dist: &[f64], mode: SelectMode<'_>) -> usize {
    match mode {
        SelectMode::Greedy => argmax_over(dist, 0..dist.len()).expect("non-empty distribution"),
        SelectMode::Sample(rng) => sample_index(dist, rng),
    }
}

pub(crate) fn sample_index<R: RngCore + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_positive = Some(i);
        if u < cumulative {
            return i;
        }
    }
    last_positive.expect("distribution has positive mass")
}
