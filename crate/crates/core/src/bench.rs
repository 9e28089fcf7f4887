//! Complexity sweep: analytic multiply-accumulate counts plus wall-clock
//! timing of the context-mixing core of each mechanism.
//!
//! One multiply-accumulate counts as 1; exponentials and normalizers are not
//! counted. Timings cover only the context core (attention on projected
//! `q, k, v`, or the convolution including kernel prediction), single
//! threaded.

use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use crate::attention::{attention_context_values, count_ops_attention};
use crate::conv::{lightconv_values, ConvConfig, ConvKernel, Padding};
use crate::dynamic::{count_ops_dynamic, dynamic_conv_values, DynamicKernelPredictor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "mechanism,n,d,H,k,context_macs,projection_macs,wall_ns_median,wall_ns_mad,repeats,seed";
pub const WARMUP_RUNS: usize = 3;
pub const MIN_REPEATS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchMechanism {
    Attention,
    LightConv,
    DynamicConv,
}

impl BenchMechanism {
    pub const ALL: [BenchMechanism; 3] = [
        BenchMechanism::Attention,
        BenchMechanism::LightConv,
        BenchMechanism::DynamicConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMechanism::Attention => "attention",
            BenchMechanism::LightConv => "lightconv",
            BenchMechanism::DynamicConv => "dynamicconv",
        }
    }

    pub fn context_macs(self, n: u64, d: u64, heads: u64, k: u64) -> u64 {
        match self {
            BenchMechanism::Attention => count_ops_attention(n, d, heads),
            BenchMechanism::LightConv => n * k * d,
            BenchMechanism::DynamicConv => count_ops_dynamic(n, d, heads, k),
        }
    }

    /// Q, K, V and output projections for attention; GLU input projection
    /// (`d → 2d`) and output projection for the convolutions.
    pub fn projection_macs(self, n: u64, d: u64) -> u64 {
        match self {
            BenchMechanism::Attention => 4 * n * d * d,
            BenchMechanism::LightConv | BenchMechanism::DynamicConv => 3 * n * d * d,
        }
    }
}

impl fmt::Display for BenchMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub mechanism: BenchMechanism,
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    pub k: usize,
    pub context_macs: u64,
    pub projection_macs: u64,
    pub wall_ns_median: f64,
    pub wall_ns_mad: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl fmt::Display for CostRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{:.0},{:.0},{},{}",
            self.mechanism,
            self.n,
            self.d,
            self.heads,
            self.k,
            self.context_macs,
            self.projection_macs,
            self.wall_ns_median,
            self.wall_ns_mad,
            self.repeats,
            self.seed
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }

    pub fn row(&self, mechanism: BenchMechanism, n: usize) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.mechanism == mechanism && r.n == n)
    }

    /// `value(2n) / value(n)` over consecutive doublings in the sweep.
    pub fn doubling_ratios(&self, mechanism: BenchMechanism, value: impl Fn(&CostRow) -> f64) -> Vec<(usize, f64)> {
        let rows: Vec<&CostRow> = self.rows.iter().filter(|r| r.mechanism == mechanism).collect();
        rows.iter()
            .filter_map(|a| {
                let b = rows.iter().find(|b| b.n == 2 * a.n)?;
                Some((a.n, value(b) / value(a)))
            })
            .collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    median(&values.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

fn time_runs(repeats: usize, mut f: impl FnMut() -> Result<Tensor>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP_RUNS {
        black_box(f()?);
    }
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        black_box(f()?);
        out.push(t.elapsed().as_nanos() as f64);
    }
    Ok(out)
}

/// Analytic counts and measured forward times for every `n` and mechanism.
/// With `repeats == 0` only the analytic columns are filled.
pub fn run_complexity_sweep(n_list: &[usize], d: usize, heads: usize, k: usize, repeats: usize, seed: u64) -> Result<CostReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("n_list must be non-empty and strictly ascending"));
    }
    if repeats != 0 && repeats < MIN_REPEATS {
        return Err(Error::config(format!("need at least {MIN_REPEATS} timed repeats, got {repeats}")));
    }
    if k % 2 == 0 {
        return Err(Error::config("benchmark kernel width must be odd"));
    }
    let cfg = ConvConfig::new(d, heads, k, Padding::Centered)?;
    let mut rng = Rng::new(seed);
    let kernel = ConvKernel::random(heads, k, &mut rng);
    let predictor = DynamicKernelPredictor::random(heads, k, d, &mut rng);
    let mut report = CostReport::default();
    for &n in n_list {
        let mut input = || Tensor::from_fn(&[n, d], |_| rng.uniform_range(-1.0, 1.0));
        let (q, kk, v, x) = (input(), input(), input(), input());
        for mech in BenchMechanism::ALL {
            let times = if repeats == 0 {
                Vec::new()
            } else {
                match mech {
                    BenchMechanism::Attention => time_runs(repeats, || attention_context_values(&q, &kk, &v, heads))?,
                    BenchMechanism::LightConv => time_runs(repeats, || lightconv_values(&x, &kernel, &cfg))?,
                    BenchMechanism::DynamicConv => time_runs(repeats, || dynamic_conv_values(&x, &predictor, &cfg))?,
                }
            };
            let (nu, du, hu, ku) = (n as u64, d as u64, heads as u64, k as u64);
            report.rows.push(CostRow {
                mechanism: mech,
                n,
                d,
                heads,
                k,
                context_macs: mech.context_macs(nu, du, hu, ku),
                projection_macs: mech.projection_macs(nu, du),
                wall_ns_median: if times.is_empty() { 0.0 } else { median(&times) },
                wall_ns_mad: if times.is_empty() { 0.0 } else { mad(&times) },
                repeats,
                seed,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_doubling_ratios() {
        let r = run_complexity_sweep(&[64, 128, 256], 16, 4, 7, 0, 1).unwrap();
        assert_eq!(r.rows.len(), 9);
        for (mech, want) in [
            (BenchMechanism::Attention, 4.0),
            (BenchMechanism::LightConv, 2.0),
            (BenchMechanism::DynamicConv, 2.0),
        ] {
            let ratios = r.doubling_ratios(mech, |row| row.context_macs as f64);
            assert_eq!(ratios.len(), 2);
            assert!(ratios.iter().all(|&(_, x)| x == want));
        }
    }

    #[test]
    fn large_config_counts() {
        let r = run_complexity_sweep(&[1024], 1024, 16, 31, 0, 1).unwrap();
        assert_eq!(r.row(BenchMechanism::Attention, 1024).unwrap().context_macs, 2_147_483_648);
        assert_eq!(r.row(BenchMechanism::DynamicConv, 1024).unwrap().context_macs, 552_599_552);
    }

    #[test]
    fn csv_shape_and_timing() {
        let r = run_complexity_sweep(&[8, 16], 8, 2, 3, 11, 5).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(csv.ends_with('\n'));
        assert!(r.rows.iter().all(|row| row.wall_ns_median > 0.0 && row.repeats == 11));
        assert!(lines.iter().all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        assert!(run_complexity_sweep(&[16, 8], 8, 2, 3, 0, 1).is_err());
        assert!(run_complexity_sweep(&[8], 8, 2, 3, 5, 1).is_err());
        assert!(run_complexity_sweep(&[8], 8, 3, 3, 0, 1).is_err());
    }

    #[test]
    fn robust_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }
}
