//! Derivative-free maximization of an acquisition over a box.
//!
//! A scrambled Sobol candidate set is scored in one batch, the best few
//! candidates seed coordinate-wise golden-section line searches, and the best
//! point seen anywhere is returned. Scores are requested in batches (one point
//! per active start per step) so the caller can vectorize model predictions.

use crate::lowdisc;
use crate::space::{Bounds, InputPoint};

const GOLDEN: f64 = 0.618_033_988_749_894_9;
/// Function evaluations per golden-section line search.
const LINE_EVALS: usize = 6;
const MIN_WIDTH: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerConfig {
    pub candidates: usize,
    pub starts: usize,
    /// Coordinate sweeps per start.
    pub iterations: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig { candidates: 4096, starts: 8, iterations: 50 }
    }
}

/// Best point found and its score. `score` receives points in `bounds`
/// coordinates; NaN scores rank below everything.
pub fn maximize<F>(mut score: F, bounds: &Bounds, config: &InnerConfig, seed: u64) -> (InputPoint, f64)
where
    F: FnMut(&[InputPoint]) -> Vec<f64>,
{
    let d = bounds.dim();
    let unit = lowdisc::sobol(config.candidates.max(1), d, seed);
    let mapped: Vec<InputPoint> = unit.iter().map(|u| bounds.map_unit(u.coords())).collect();
    let values: Vec<f64> = score(&mapped).into_iter().map(sanitize).collect();

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut best = (mapped[order[0]].clone(), values[order[0]]);

    let width0 = (2.0 * (config.candidates.max(1) as f64).powf(-1.0 / d as f64)).min(0.5);
    let mut starts: Vec<Start> = order
        .iter()
        .take(config.starts)
        .map(|&i| Start { x: unit[i].coords().to_vec(), value: values[i], width: vec![width0; d] })
        .collect();

    let mut eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        let pts: Vec<InputPoint> = xs.iter().map(|u| bounds.map_unit(u)).collect();
        score(&pts).into_iter().map(sanitize).collect()
    };

    for _ in 0..config.iterations {
        if starts.iter().all(|s| s.width.iter().all(|w| *w < MIN_WIDTH)) {
            break;
        }
        for k in 0..d {
            line_search(&mut starts, k, &mut eval);
        }
    }
    for s in &starts {
        if s.value > best.1 {
            best = (bounds.map_unit(&s.x), s.value);
        }
    }
    best
}

/// Coordinate-wise golden-section refinement of a single known point, given
/// in unit-box coordinates together with its score.
pub(crate) fn refine_from<F>(
    mut score: F,
    bounds: &Bounds,
    start: Vec<f64>,
    start_value: f64,
    width: f64,
    iterations: usize,
) -> (InputPoint, f64)
where
    F: FnMut(&[InputPoint]) -> Vec<f64>,
{
    let d = bounds.dim();
    let mut starts = vec![Start { x: start, value: sanitize(start_value), width: vec![width.min(0.5); d] }];
    let mut eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        let pts: Vec<InputPoint> = xs.iter().map(|u| bounds.map_unit(u)).collect();
        score(&pts).into_iter().map(sanitize).collect()
    };
    for _ in 0..iterations {
        if starts[0].width.iter().all(|w| *w < MIN_WIDTH) {
            break;
        }
        for k in 0..d {
            line_search(&mut starts, k, &mut eval);
        }
    }
    let s = &starts[0];
    (bounds.map_unit(&s.x), s.value)
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

struct Start {
    x: Vec<f64>,
    value: f64,
    width: Vec<f64>,
}

struct Line {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    fc: f64,
    fd: f64,
    /// Whether the outstanding probe is the lower interior point.
    probe_is_c: bool,
    best: (f64, f64),
}

/// One golden-section search along coordinate `k` for every start, batched.
fn line_search<E>(starts: &mut [Start], k: usize, eval: &mut E)
where
    E: FnMut(&[Vec<f64>]) -> Vec<f64>,
{
    let active: Vec<usize> = (0..starts.len()).filter(|&i| starts[i].width[k] >= MIN_WIDTH).collect();
    if active.is_empty() {
        return;
    }
    let with_coord = |s: &Start, v: f64| {
        let mut x = s.x.clone();
        x[k] = v;
        x
    };

    let mut lines: Vec<Line> = active
        .iter()
        .map(|&i| {
            let s = &starts[i];
            let a = (s.x[k] - s.width[k]).max(0.0);
            let b = (s.x[k] + s.width[k]).min(1.0);
            Line {
                a,
                b,
                c: b - GOLDEN * (b - a),
                d: a + GOLDEN * (b - a),
                fc: 0.0,
                fd: 0.0,
                probe_is_c: false,
                best: (s.value, s.x[k]),
            }
        })
        .collect();

    // Interior golden-section points, plus any bracket end lying on the
    // box boundary, where acquisitions often peak.
    let mut batch = Vec::with_capacity(2 * lines.len());
    let mut owner = Vec::with_capacity(2 * lines.len());
    for (j, (l, &i)) in lines.iter().zip(&active).enumerate() {
        batch.push(with_coord(&starts[i], l.c));
        batch.push(with_coord(&starts[i], l.d));
        owner.push((j, l.c));
        owner.push((j, l.d));
        for end in [l.a, l.b] {
            if (end == 0.0 || end == 1.0) && end != starts[i].x[k] {
                batch.push(with_coord(&starts[i], end));
                owner.push((j, end));
            }
        }
    }
    let vals = eval(&batch);
    for (&(j, coord), &v) in owner.iter().zip(&vals) {
        let l = &mut lines[j];
        if coord == l.c {
            l.fc = v;
        } else if coord == l.d {
            l.fd = v;
        }
        l.observe(coord, v);
    }

    for _ in 2..LINE_EVALS {
        let mut batch = Vec::with_capacity(lines.len());
        for (l, &i) in lines.iter_mut().zip(&active) {
            let next = l.shrink();
            batch.push(with_coord(&starts[i], next));
        }
        let vals = eval(&batch);
        for (l, v) in lines.iter_mut().zip(vals) {
            l.record(v);
        }
    }

    for (l, &i) in lines.iter().zip(&active) {
        let s = &mut starts[i];
        let (value, coord) = l.best;
        if value > s.value {
            let moved = (coord - s.x[k]).abs();
            s.x[k] = coord;
            s.value = value;
            s.width[k] = s.width[k].max(2.0 * moved).min(0.5);
        } else {
            s.width[k] *= 0.5;
        }
    }
}

impl Line {
    fn observe(&mut self, coord: f64, value: f64) {
        if value > self.best.0 {
            self.best = (value, coord);
        }
    }

    /// Drops the worse end of the bracket and returns the new probe point.
    fn shrink(&mut self) -> f64 {
        if self.fc >= self.fd {
            self.b = self.d;
            self.d = self.c;
            self.fd = self.fc;
            self.c = self.b - GOLDEN * (self.b - self.a);
            self.probe_is_c = true;
            self.c
        } else {
            self.a = self.c;
            self.c = self.d;
            self.fc = self.fd;
            self.d = self.a + GOLDEN * (self.b - self.a);
            self.probe_is_c = false;
            self.d
        }
    }

    /// Stores the value of the probe returned by the last `shrink`.
    fn record(&mut self, value: f64) {
        if self.probe_is_c {
            self.fc = value;
            self.observe(self.c, value);
        } else {
            self.fd = value;
            self.observe(self.d, value);
        }
    }
}
