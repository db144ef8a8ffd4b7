//! Latency of the selective scan (discretization included) against a quadratic attention baseline
//! over growing token counts.

use std::time::Instant;

use num_traits::Float;
use serde::Serialize;
use waveseg::rng::SeededRng;
use waveseg::ssm::{streaming_selective_scan, TokenSsm};

use crate::config::{BenchConfig, Precision};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: String,
    pub precision: String,
    pub length: usize,
    pub channels: usize,
    pub state: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    /// Median time over the previous row of the same kind and width; empty for the first.
    pub ratio: Option<f64>,
}

/// Median and minimum wall time of each task in milliseconds, timed in
/// interleaved rounds. Warmup rounds are excluded.
pub fn time_interleaved(
    reps: usize,
    warmup: usize,
    tasks: &mut [&mut dyn FnMut()],
) -> Vec<(f64, f64)> {
    for _ in 0..warmup {
        tasks.iter_mut().for_each(|f| f());
    }
    let mut ms = vec![Vec::with_capacity(reps); tasks.len()];
    for _ in 0..reps.max(1) {
        for (f, out) in tasks.iter_mut().zip(&mut ms) {
            let t = Instant::now();
            f();
            out.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    ms.into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            (v[v.len() / 2], v[0])
        })
        .collect()
}

fn cast<T: Float>(v: Vec<f64>) -> Vec<T> {
    v.into_iter()
        .map(|x| T::from(x).expect("finite sample"))
        .collect()
}

/// Owned operands of a random selective scan with negative `a` and positive steps.
pub struct ScanProblem<T> {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    x: Vec<T>,
    delta: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
}

impl<T: Float> ScanProblem<T> {
    pub fn new(seed: u64, len: usize, channels: usize, state: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut draw =
            |n: usize, lo: f64, hi: f64| cast::<T>((0..n).map(|_| rng.uniform(lo, hi)).collect());
        Self {
            len,
            channels,
            state,
            x: draw(len * channels, -1.0, 1.0),
            delta: draw(len * channels, 1e-3, 0.1),
            a: draw(channels * state, -8.0, -1.0),
            b: draw(len * state, -1.0, 1.0),
            c: draw(len * state, -1.0, 1.0),
            d: draw(channels, -1.0, 1.0),
        }
    }

    pub fn view(&self) -> TokenSsm<'_, T> {
        TokenSsm {
            batch: 1,
            len: self.len,
            channels: self.channels,
            state: self.state,
            x: &self.x,
            delta: &self.delta,
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d: &self.d,
        }
    }

    pub fn run(&self) -> Result<Vec<T>> {
        Ok(streaming_selective_scan(&self.view())?)
    }
}

/// Softmax attention `softmax(q kᵀ / √d) v` over `len` tokens of width `d`,
/// evaluated in row blocks of 128 queries.
pub struct Attention<T> {
    pub len: usize,
    pub dim: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    scores: Vec<T>,
    pub out: Vec<T>,
}

const ROW_BLOCK: usize = 128;

impl<T: Float + Gemm> Attention<T> {
    pub fn new(seed: u64, len: usize, dim: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut draw = |n: usize| cast::<T>((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect());
        Self {
            len,
            dim,
            q: draw(len * dim),
            k: draw(len * dim),
            v: draw(len * dim),
            scores: vec![T::zero(); ROW_BLOCK * len],
            out: vec![T::zero(); len * dim],
        }
    }

    pub fn run(&mut self) {
        let (l, d) = (self.len, self.dim);
        let scale = T::from(1.0 / (d as f64).sqrt()).unwrap();
        for r0 in (0..l).step_by(ROW_BLOCK) {
            let rows = ROW_BLOCK.min(l - r0);
            let s = &mut self.scores[..rows * l];
            // s = q[r0..r0+rows] · kᵀ
            T::gemm(
                rows,
                d,
                l,
                scale,
                &self.q[r0 * d..],
                (d, 1),
                &self.k,
                (1, d),
                T::zero(),
                s,
                (l, 1),
            );
            for row in s.chunks_mut(l) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    z = z + *x;
                }
                let inv = T::one() / z;
                for x in row.iter_mut() {
                    *x = *x * inv;
                }
            }
            let out = &mut self.out[r0 * d..(r0 + rows) * d];
            T::gemm(
                rows,
                l,
                d,
                T::one(),
                s,
                (l, 1),
                &self.v,
                (d, 1),
                T::zero(),
                out,
                (d, 1),
            );
        }
    }
}

/// Dense `c = alpha·a·b + beta·c` with explicit (row, column) strides.
pub trait Gemm: Sized {
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_stride: (usize, usize),
        b: &[Self],
        b_stride: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_stride: (usize, usize),
    );
}

macro_rules! impl_gemm {
    ($t:ty, $f:ident) => {
        impl Gemm for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                assert!(m == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
                assert!(n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
                assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1) * csc);
                // SAFETY: the asserts bound every strided access inside the slices.
                unsafe {
                    matrixmultiply::$f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_gemm!(f64, dgemm);
impl_gemm!(f32, sgemm);

fn label(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}

fn bench_typed<T: Float + Gemm>(cfg: &BenchConfig, rows: &mut Vec<BenchRow>) -> Result<()> {
    let precision = label(cfg.precision).to_string();
    let mut lengths = cfg.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let mut push = |kind: &str, width: usize, state: usize, timings: Vec<(f64, f64)>| {
        let mut prev: Option<f64> = None;
        for (&length, (median_ms, min_ms)) in lengths.iter().zip(timings) {
            rows.push(BenchRow {
                kind: kind.to_string(),
                precision: precision.clone(),
                length,
                channels: width,
                state,
                median_ms,
                min_ms,
                ratio: prev.map(|p| median_ms / p),
            });
            prev = Some(median_ms);
        }
    };
    for &state in &cfg.states {
        let problems: Vec<ScanProblem<T>> = lengths
            .iter()
            .map(|&len| ScanProblem::new(len as u64, len, cfg.channels, state))
            .collect();
        for p in &problems {
            p.run()?;
        }
        let mut runs: Vec<_> = problems
            .iter()
            .map(|p| {
                move || {
                    std::hint::black_box(p.run().ok());
                }
            })
            .collect();
        let mut tasks: Vec<&mut dyn FnMut()> =
            runs.iter_mut().map(|f| f as &mut dyn FnMut()).collect();
        push(
            "scan",
            cfg.channels,
            state,
            time_interleaved(cfg.reps, cfg.warmup, &mut tasks),
        );
    }
    if cfg.attention_dim > 0 {
        let mut atts: Vec<Attention<T>> = lengths
            .iter()
            .map(|&len| Attention::new(len as u64, len, cfg.attention_dim))
            .collect();
        let mut runs: Vec<_> = atts.iter_mut().map(|a| move || a.run()).collect();
        let mut tasks: Vec<&mut dyn FnMut()> =
            runs.iter_mut().map(|f| f as &mut dyn FnMut()).collect();
        push(
            "attention",
            cfg.attention_dim,
            0,
            time_interleaved(cfg.reps, cfg.warmup, &mut tasks),
        );
    }
    Ok(())
}

/// One row per (kind, state size, length), lengths ascending.
pub fn run_scan_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    match cfg.precision {
        Precision::F32 => bench_typed::<f32>(cfg, &mut rows)?,
        Precision::F64 => bench_typed::<f64>(cfg, &mut rows)?,
    }
    Ok(rows)
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<10} {:>5} {:>7} {:>6} {:>6} {:>11} {:>11} {:>7}\n",
        "kind", "prec", "length", "width", "state", "median ms", "min ms", "ratio"
    );
    for r in rows {
        let ratio = r
            .ratio
            .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        out.push_str(&format!(
            "{:<10} {:>5} {:>7} {:>6} {:>6} {:>11.3} {:>11.3} {:>7}\n",
            r.kind, r.precision, r.length, r.channels, r.state, r.median_ms, r.min_ms, ratio
        ));
    }
    out
}
