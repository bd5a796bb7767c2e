//! Plateau-driven learning-rate decay, finite-difference gradient checks,
//! and a small SGD trainer for miniature networks.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{backward, execute, forward, NetworkSpec, ParamRole, WeightStore};
use crate::tensor::{BnMode, Scalar, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Consecutive non-improving observations that count as a plateau.
    pub window: usize,
    /// Minimum relative decrease of the loss average that counts as improvement.
    pub improvement_threshold: f64,
    /// Training stops once a decay takes the rate below this.
    pub min_lr: f64,
    pub ema_beta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            initial_lr: 0.1,
            decay_factor: 0.3165,
            window: 100,
            improvement_threshold: 1e-3,
            min_lr: 1e-4,
            ema_beta: 0.9,
        }
    }
}

impl PlateauConfig {
    /// Observations before the average is trusted: `ceil(1 / (1 - beta))`.
    pub fn warmup(&self) -> usize {
        ((1.0 / (1.0 - self.ema_beta)) - 1e-9).ceil().max(1.0) as usize
    }

    /// Most decays any loss stream can trigger before termination.
    pub fn max_decays(&self) -> usize {
        ((self.min_lr / self.initial_lr).ln() / self.decay_factor.ln()).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    None,
    Decayed,
    Terminated,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Event::None => "none",
            Event::Decayed => "decayed",
            Event::Terminated => "terminated",
        })
    }
}

/// Bias-corrected exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    beta: f64,
    raw: f64,
    count: usize,
}

impl Ema {
    pub fn new(beta: f64) -> Self {
        Ema { beta, raw: 0.0, count: 0 }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        self.raw = self.beta * self.raw + (1.0 - self.beta) * x;
        self.count += 1;
        self.value()
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.raw / (1.0 - self.beta.powi(self.count as i32))
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Decays the learning rate by a constant factor whenever the loss average
/// fails to improve for `window` consecutive observations.
///
/// The first [`PlateauConfig::warmup`] observations only feed the average;
/// the average at the end of warmup becomes the first reference. After that
/// an observation improves when `ema < best * (1 - threshold)`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    lr: f64,
    ema: Ema,
    best: f64,
    since_improvement: usize,
    decays: usize,
    terminated: bool,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig) -> Self {
        PlateauScheduler {
            lr: cfg.initial_lr,
            ema: Ema::new(cfg.ema_beta),
            best: f64::INFINITY,
            since_improvement: 0,
            decays: 0,
            terminated: false,
            cfg,
        }
    }

    pub fn config(&self) -> &PlateauConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn ema(&self) -> f64 {
        self.ema.value()
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn observe(&mut self, loss: f64) -> Result<(f64, Event)> {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss after {} observations", self.ema.count())));
        }
        if self.terminated {
            return Ok((self.lr, Event::Terminated));
        }
        let ema = self.ema.update(loss);
        let warmup = self.cfg.warmup();
        let n = self.ema.count();
        if n < warmup {
            return Ok((self.lr, Event::None));
        }
        if n == warmup {
            self.best = ema;
            return Ok((self.lr, Event::None));
        }
        if ema < self.best * (1.0 - self.cfg.improvement_threshold) {
            self.best = ema;
            self.since_improvement = 0;
            return Ok((self.lr, Event::None));
        }
        self.since_improvement += 1;
        if self.since_improvement < self.cfg.window {
            return Ok((self.lr, Event::None));
        }
        self.lr *= self.cfg.decay_factor;
        self.decays += 1;
        self.since_improvement = 0;
        self.best = ema;
        if self.lr < self.cfg.min_lr {
            self.terminated = true;
            return Ok((self.lr, Event::Terminated));
        }
        Ok((self.lr, Event::Decayed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `param[index]` or `input:name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Compares analytic gradients of `sum(outputs * R)` (R a fixed pseudo-random
/// projection) against central differences for every trainable parameter
/// and every fed input entry. Batch norm runs in minibatch mode.
pub fn grad_check(
    net: &NetworkSpec,
    weights: &WeightStore<f64>,
    feeds: &HashMap<String, Tensor<f64>>,
    eps: f64,
) -> Result<GradCheckReport> {
    let trace = forward(net, weights, feeds, BnMode::Minibatch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut projections = HashMap::new();
    for o in &net.outputs {
        let v = trace.get(o).ok_or_else(|| Error::Spec(format!("output `{o}` not evaluated")))?;
        projections.insert(o.clone(), Tensor::from_fn(v.shape(), |_, _, _, _| rng.random_range(-1.0..1.0)));
    }
    let grads = backward(net, weights, &trace, &projections)?;
    let loss = |w: &WeightStore<f64>, f: &HashMap<String, Tensor<f64>>| -> Result<f64> {
        let t = forward(net, w, f, BnMode::Minibatch)?;
        Ok(projections
            .iter()
            .map(|(o, r)| t.get(o).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |label: String, analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = label;
        }
    };
    let names: Vec<String> = net
        .layers
        .iter()
        .flat_map(|l| l.kind.params(&l.name))
        .filter(|p| p.role == ParamRole::Trainable)
        .map(|p| p.name)
        .collect();
    let mut w = weights.clone();
    for name in names {
        let n = w.get(&name).map(|p| p.data.len()).unwrap_or(0);
        let analytic = grads.params.get(&name);
        for i in 0..n {
            let orig = w.get(&name).unwrap().data[i];
            w.get_mut(&name).unwrap().data[i] = orig + eps;
            let lp = loss(&w, feeds)?;
            w.get_mut(&name).unwrap().data[i] = orig - eps;
            let lm = loss(&w, feeds)?;
            w.get_mut(&name).unwrap().data[i] = orig;
            let a = analytic.map(|g| g[i]).unwrap_or(0.0);
            record(format!("{name}[{i}]"), a, (lp - lm) / (2.0 * eps));
        }
    }
    let mut f = feeds.clone();
    let mut inputs: Vec<&String> = feeds.keys().collect();
    inputs.sort();
    for name in inputs {
        let n = feeds[name].data().len();
        for i in 0..n {
            let orig = feeds[name].data()[i];
            f.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let lp = loss(weights, &f)?;
            f.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let lm = loss(weights, &f)?;
            f.get_mut(name).unwrap().data_mut()[i] = orig;
            let a = grads.inputs.get(name).map(|g| g.data()[i]).unwrap_or(0.0);
            record(format!("input:{name}[{i}]"), a, (lp - lm) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    /// Smooth-L1 regression of the logits onto one-hot targets.
    SmoothL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrPolicy {
    Fixed,
    Plateau,
}

/// Mean loss over the batch and its gradient with respect to the logits.
pub fn loss_and_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize], kind: LossKind) -> (f64, Tensor<T>) {
    let s = logits.shape();
    let k = s.c;
    let n = s.n as f64;
    let mut grad = vec![T::zero(); logits.data().len()];
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.data()[b * k..(b + 1) * k].iter().map(|v| v.to_f64().unwrap()).collect();
        match kind {
            LossKind::SoftmaxCrossEntropy => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                total += z.ln() + m - row[label];
                for (c, v) in row.iter().enumerate() {
                    let p = (v - m).exp() / z;
                    let t = if c == label { 1.0 } else { 0.0 };
                    grad[b * k + c] = T::from_f64_lossy((p - t) / n);
                }
            }
            LossKind::SmoothL1 => {
                for (c, v) in row.iter().enumerate() {
                    let d = v - if c == label { 1.0 } else { 0.0 };
                    let (l, g) = if d.abs() < 1.0 { (0.5 * d * d, d) } else { (d.abs() - 0.5, d.signum()) };
                    total += l;
                    grad[b * k + c] = T::from_f64_lossy(g / n);
                }
            }
        }
    }
    (total / n, Tensor::new(s, grad).expect("same shape"))
}

/// Labelled images stored as one `(N, C, H, W)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.images.shape();
        let per = s.c * s.plane();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let t = Tensor::new(Shape::new(indices.len(), s.c, s.h, s.w), data).expect("batch shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Four-class patches: Gaussian noise plus a bright square somewhere inside
/// quadrant `label` (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right).
pub fn synthetic_quadrants(samples: usize, size: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("non-negative noise");
    let half = size / 2;
    let blob = (size / 4).max(1);
    let mut data = Vec::with_capacity(samples * 3 * size * size);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 4;
        let oy = (label / 2) * half + rng.random_range(0..=half - blob);
        let ox = (label % 2) * half + rng.random_range(0..=half - blob);
        for _c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let inside = (oy..oy + blob).contains(&y) && (ox..ox + blob).contains(&x);
                    let v = if inside { 1.0 } else { 0.0 } + normal.sample(&mut rng);
                    data.push(v as f32);
                }
            }
        }
        labels.push(label);
    }
    Dataset {
        images: Tensor::new(Shape::new(samples, 3, size, size), data).expect("dataset shape"),
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub seed: u64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub loss: LossKind,
    pub policy: LrPolicy,
    /// `initial_lr` is also the rate of the fixed policy.
    pub plateau: PlateauConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            seed: 0,
            max_iters: 2000,
            batch_size: 20,
            momentum: 0.9,
            loss: LossKind::SoftmaxCrossEntropy,
            policy: LrPolicy::Plateau,
            plateau: PlateauConfig {
                initial_lr: 0.01,
                ..PlateauConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub ema: f64,
    pub lr: f64,
    pub event: Event,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub weights: WeightStore<f32>,
}

/// Minibatch SGD with momentum (`v = m v - lr g; w += v`), batch norm in
/// minibatch mode, epochs reshuffled from `cfg.seed`. The network must
/// declare exactly one output (the logits). Stops at `max_iters` or when the
/// plateau scheduler terminates; a non-finite loss aborts with the trace so far.
pub fn toy_train(
    net: &NetworkSpec,
    mut weights: WeightStore<f32>,
    data: &Dataset,
    cfg: &ToyTrainConfig,
) -> Result<TrainOutcome> {
    net.ensure_valid()?;
    weights.check(net)?;
    if data.is_empty() {
        return Err(Error::Spec("training set is empty".into()));
    }
    let [output] = net.outputs.as_slice() else {
        return Err(Error::Spec("trainer needs a network with exactly one output".into()));
    };
    let input = net
        .input_layers()
        .next()
        .ok_or_else(|| Error::Spec("network has no input".into()))?
        .name
        .clone();
    let trainable: Vec<String> = net
        .layers
        .iter()
        .flat_map(|l| l.kind.params(&l.name))
        .filter(|p| p.role == ParamRole::Trainable)
        .map(|p| p.name)
        .collect();
    let mut velocity: HashMap<String, Vec<f32>> = trainable
        .iter()
        .map(|n| (n.clone(), vec![0.0; weights.get(n).unwrap().data.len()]))
        .collect();
    let mut sched = PlateauScheduler::new(cfg.plateau.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::new();
    let momentum = cfg.momentum as f32;

    for iter in 0..cfg.max_iters {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (x, labels) = data.batch(&idx);
        let feeds = HashMap::from([(input.clone(), x)]);
        let t = forward(net, &weights, &feeds, BnMode::Minibatch)?;
        let logits = t.get(output).expect("output evaluated");
        let (loss, g) = loss_and_grad(logits, &labels, cfg.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iter,
                trace: Box::new(trace),
            });
        }
        let lr = sched.lr();
        let grads = backward(net, &weights, &t, &HashMap::from([(output.clone(), g)]))?;
        t.apply_stat_updates(&mut weights);
        for name in &trainable {
            let v = velocity.get_mut(name).unwrap();
            let w = &mut weights.get_mut(name).unwrap().data;
            match grads.params.get(name) {
                Some(gr) => {
                    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(gr) {
                        *v = momentum * *v - lr as f32 * g;
                        *w += *v;
                    }
                }
                None => {
                    for (w, v) in w.iter_mut().zip(v.iter_mut()) {
                        *v *= momentum;
                        *w += *v;
                    }
                }
            }
        }
        let event = match cfg.policy {
            LrPolicy::Plateau => sched.observe(loss)?.1,
            LrPolicy::Fixed => {
                // Keep the average for the trace, never decay.
                sched.ema.update(loss);
                Event::None
            }
        };
        trace.push(TraceRow {
            iter,
            loss,
            ema: sched.ema(),
            lr,
            event,
        });
        if event == Event::Terminated {
            break;
        }
    }
    Ok(TrainOutcome { trace, weights })
}

/// Fraction of samples whose arg-max logit (frozen batch norm) is the label.
pub fn accuracy(net: &NetworkSpec, weights: &WeightStore<f32>, data: &Dataset) -> Result<f64> {
    let input = net.input_layers().next().ok_or_else(|| Error::Spec("network has no input".into()))?;
    let out = execute(net, weights, &HashMap::from([(input.name.clone(), data.images.clone())]))?;
    let logits = out.values().next().ok_or_else(|| Error::Spec("network has no output".into()))?;
    let k = logits.shape().c;
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let best = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == label
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// CSV with `# key=value` header lines followed by `iter,loss,ema,lr,event`.
pub fn trace_to_csv(rows: &[TraceRow], header: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "# {k}={v}");
    }
    s.push_str("iter,loss,ema,lr,event\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.iter, r.loss, r.ema, r.lr, r.event);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: PlateauConfig, losses: impl IntoIterator<Item = f64>) -> Vec<(usize, Event, f64)> {
        let mut s = PlateauScheduler::new(cfg);
        losses
            .into_iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let (lr, e) = s.observe(l).unwrap();
                (e != Event::None).then_some((i + 1, e, lr))
            })
            .collect()
    }

    #[test]
    fn warmup_is_ten_for_beta_point_nine() {
        assert_eq!(PlateauConfig::default().warmup(), 10);
    }

    #[test]
    fn constant_stream_decays_every_window_after_warmup() {
        let cfg = PlateauConfig {
            window: 5,
            ..PlateauConfig::default()
        };
        let events = run(cfg, std::iter::repeat_n(1.0, 26));
        let at: Vec<usize> = events.iter().map(|e| e.0).collect();
        assert_eq!(at, vec![15, 20, 25]);
    }

    #[test]
    fn nan_is_an_error() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        assert!(s.observe(f64::NAN).is_err());
    }

    #[test]
    fn ema_is_bias_corrected() {
        let mut e = Ema::new(0.9);
        assert!((e.update(3.0) - 3.0).abs() < 1e-12);
        assert!((e.update(3.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_and_ce_gradients_match_differences() {
        let logits = Tensor::<f64>::new(Shape::new(2, 3, 1, 1), vec![0.3, -1.2, 2.2, 0.1, 0.5, -0.4]).unwrap();
        let labels = [2, 0];
        for kind in [LossKind::SoftmaxCrossEntropy, LossKind::SmoothL1] {
            let (_, g) = loss_and_grad(&logits, &labels, kind);
            for i in 0..6 {
                let mut p = logits.clone();
                p.data_mut()[i] += 1e-6;
                let mut m = logits.clone();
                m.data_mut()[i] -= 1e-6;
                let num = (loss_and_grad(&p, &labels, kind).0 - loss_and_grad(&m, &labels, kind).0) / 2e-6;
                assert!((num - g.data()[i]).abs() < 1e-8, "{kind:?} {i}");
            }
        }
    }

    #[test]
    fn quadrant_data_is_balanced_and_seeded() {
        let d = synthetic_quadrants(200, 32, 0.3, 1);
        assert_eq!(d.images.shape(), Shape::new(200, 3, 32, 32));
        for k in 0..4 {
            assert_eq!(d.labels.iter().filter(|&&l| l == k).count(), 50);
        }
        assert_eq!(d, synthetic_quadrants(200, 32, 0.3, 1));
    }
}
