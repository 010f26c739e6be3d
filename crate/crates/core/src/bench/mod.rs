//! Wall-time and operation-count scaling of the U-Net text encoder against
//! a single-head self-attention block.

mod attention;

pub use attention::{attention_block_forward, AttentionBlock, AttentionFlops};

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

/// Environment variable capping worker threads; values above 1 are refused.
pub const THREADS_ENV: &str = "MHTTS_THREADS";

/// Seconds of audio per frame when converting time to a real-time factor.
pub const FRAME_SECONDS: f64 = 0.0125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoder {
    Unet,
    Attention,
}

impl Encoder {
    pub fn name(self) -> &'static str {
        match self {
            Encoder::Unet => "unet",
            Encoder::Attention => "attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub hidden: usize,
    pub unet_depth: usize,
}

impl BenchConfig {
    /// `L ∈ {256, …, 4096}`, `d = 64`, `R = 9`.
    pub fn desk(seed: u64) -> Self {
        Self {
            lengths: vec![256, 512, 1024, 2048, 4096],
            repetitions: 9,
            seed,
            hidden: 64,
            unet_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub length: usize,
    pub median_seconds: f64,
    /// Every counted operation of one forward pass.
    pub flops: u64,
    /// The part that scales with the asymptotic order under test: all of it
    /// for the U-Net, the `L²` terms for attention.
    pub scaling_flops: u64,
    /// Median time per second of audio at one frame per position.
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub encoder: Encoder,
    pub points: Vec<BenchPoint>,
    pub time_slope: f64,
    pub flop_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub hidden: usize,
    pub tick_seconds: f64,
    pub encoders: Vec<EncoderReport>,
}

impl BenchReport {
    /// Tab-separated table, one row per encoder and length.
    pub fn to_table(&self) -> String {
        let mut s = String::from("encoder\tL\tmedian_s\tflops\tscaling_flops\trtf\n");
        for e in &self.encoders {
            for p in &e.points {
                writeln!(
                    s,
                    "{}\t{}\t{:.6e}\t{}\t{}\t{:.6e}",
                    e.encoder.name(),
                    p.length,
                    p.median_seconds,
                    p.flops,
                    p.scaling_flops,
                    p.rtf
                )
                .expect("string write");
            }
        }
        s
    }

    /// The table without timing columns; reproducible bit for bit.
    pub fn flop_table(&self) -> String {
        let mut s = String::from("encoder\tL\tflops\tscaling_flops\n");
        for e in &self.encoders {
            for p in &e.points {
                writeln!(s, "{}\t{}\t{}\t{}", e.encoder.name(), p.length, p.flops, p.scaling_flops)
                    .expect("string write");
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "d = {}, median of {} runs after one warm-up, timer tick {:.1e} s\n",
            self.hidden, self.repetitions, self.tick_seconds
        );
        for e in &self.encoders {
            writeln!(
                s,
                "{}: wall-time log-log slope {:.3}, FLOP slope {:.3} ({})",
                e.encoder.name(),
                e.time_slope,
                e.flop_slope,
                classify(e.time_slope)
            )
            .expect("string write");
        }
        s
    }
}

fn classify(slope: f64) -> &'static str {
    if slope < 1.5 {
        "linear"
    } else {
        "quadratic"
    }
}

/// Ordinary least squares slope of `ln t` on `ln L`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::contract(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(l, t)) = points.iter().find(|(l, t)| !(*l > 0.0 && *t > 0.0)) {
        return Err(Error::contract(format!(
            "slope fit needs positive values, got ({l}, {t})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("slope fit needs at least two distinct lengths"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Refuses to run when a thread cap above one is requested.
pub fn ensure_single_threaded() -> Result<()> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
            if n > 1 {
                return Err(Error::Parallelism(format!(
                    "{THREADS_ENV}={n}; timed regions must run on one thread"
                )));
            }
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_tick() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn validate_lengths(encoder: Encoder, config: &BenchConfig) -> Result<()> {
    if config.repetitions < 5 {
        return Err(Error::Config(format!(
            "bench needs at least 5 repetitions, got {}",
            config.repetitions
        )));
    }
    if config.lengths.len() < 4 {
        return Err(Error::contract("bench needs at least 4 lengths"));
    }
    if config.lengths.windows(2).any(|w| w[0] >= w[1]) || config.lengths[0] == 0 {
        return Err(Error::contract("bench lengths must be positive and strictly increasing"));
    }
    if encoder == Encoder::Unet {
        let block = 1usize << config.unet_depth;
        if let Some(l) = config.lengths.iter().find(|&&l| l % block != 0) {
            return Err(Error::contract(format!(
                "U-Net bench length {l} is not a multiple of 2^{}",
                config.unet_depth
            )));
        }
    }
    Ok(())
}

/// Times one encoder over every configured length.
pub fn measure_scaling(encoder: Encoder, config: &BenchConfig) -> Result<EncoderReport> {
    measure_with_tick(encoder, config, timer_tick())
}

fn measure_with_tick(encoder: Encoder, config: &BenchConfig, tick: Duration) -> Result<EncoderReport> {
    ensure_single_threaded()?;
    validate_lengths(encoder, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model_config = ModelConfig {
        hidden: config.hidden,
        unet_depth: config.unet_depth,
        ..ModelConfig::desk(vec![0])
    };
    let model = Model::init(model_config.clone(), config.seed)?;
    let block = AttentionBlock::new(config.hidden, config.seed);

    let mut points = Vec::new();
    for &len in &config.lengths {
        let tokens: Vec<Token> = (0..len)
            .map(|_| rng.gen_range(0..model_config.vocab_size as Token))
            .collect();
        let x = Tensor::randn(&[len, config.hidden], 1.0, &mut rng);
        let run = || -> Result<(u64, u64)> {
            match encoder {
                Encoder::Unet => {
                    let f = model.encode_flops(&tokens)?;
                    Ok((f, f))
                }
                Encoder::Attention => {
                    let (out, f) = block.forward(&x)?;
                    std::hint::black_box(out);
                    Ok((f.total(), f.quadratic))
                }
            }
        };
        let (flops, scaling_flops) = run()?;
        let mut times = Vec::with_capacity(config.repetitions);
        for _ in 0..config.repetitions {
            let start = Instant::now();
            run()?;
            times.push(start.elapsed().as_secs_f64());
        }
        let med = median(times);
        if med < 50.0 * tick.as_secs_f64() {
            return Err(Error::Measurement(format!(
                "{} at L = {len}: median {med:.3e} s is under 50 timer ticks; use longer sequences",
                encoder.name()
            )));
        }
        points.push(BenchPoint {
            length: len,
            median_seconds: med,
            flops,
            scaling_flops,
            rtf: med / (len as f64 * FRAME_SECONDS),
        });
    }
    let time_slope = fit_loglog_slope(
        &points.iter().map(|p| (p.length as f64, p.median_seconds)).collect::<Vec<_>>(),
    )?;
    let flop_slope = fit_loglog_slope(
        &points.iter().map(|p| (p.length as f64, p.scaling_flops as f64)).collect::<Vec<_>>(),
    )?;
    Ok(EncoderReport {
        encoder,
        points,
        time_slope,
        flop_slope,
    })
}

/// Both encoders.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    let tick = timer_tick();
    let encoders = [Encoder::Unet, Encoder::Attention]
        .into_iter()
        .map(|e| measure_with_tick(e, config, tick))
        .collect::<Result<_>>()?;
    Ok(BenchReport {
        repetitions: config.repetitions,
        hidden: config.hidden,
        tick_seconds: tick.as_secs_f64(),
        encoders,
    })
}
