use std::time::Instant;

use vikan::kan::Variant;
use vikan::nn::{init, AttentionMode, AttentionParams, Parameterized, StorageMeter};
use vikan::train::cross_entropy;
use vikan::vit::ModelConfig;
use vikan::{Model32, Tensor32};

use crate::exit::{CliError, CliResult, FAILED};
use crate::run::parse_variants;
use crate::BenchArgs;

struct Subject {
    variant: Variant,
    model: Model32,
    best: f64,
}

/// Peak attention intermediates (elements) for one `[T, d]` sequence.
pub fn attention_storage(cfg: &ModelConfig, tile: usize, seed: u64) -> CliResult<(usize, usize)> {
    let p = AttentionParams::<f32>::new(&mut init::seeded(seed), cfg.d, cfg.heads)?;
    let x: Tensor32 = init::uniform(&mut init::seeded(seed + 1), &[cfg.tokens(), cfg.d], -1.0, 1.0)?;
    let peak = |mode| -> CliResult<usize> {
        let meter = StorageMeter::new();
        p.forward_metered(&x, mode, &meter)?;
        Ok(meter.peak())
    };
    Ok((peak(AttentionMode::Naive)?, peak(AttentionMode::Tiled { tile })?))
}

pub fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    if args.batch == 0 || args.rounds == 0 || args.tile == 0 {
        return Err(CliError::usage("batch, rounds and tile must be positive"));
    }
    let variants = parse_variants(&args.variant)?;
    let reference = ModelConfig { seed: args.seed, ..ModelConfig::mnist(Variant::SineKan) };
    let side = reference.image_size;
    let images: Tensor32 = init::normal(&mut init::seeded(args.seed), &[args.batch, side, side], 1.0)?;
    let labels: Vec<usize> = (0..args.batch).map(|i| i % reference.n_classes).collect();
    let mut subjects = variants
        .iter()
        .map(|&variant| {
            let mut cfg = reference.clone();
            cfg.ffn.variant = variant;
            Ok(Subject { variant, model: Model32::new(&cfg)?, best: f64::INFINITY })
        })
        .collect::<CliResult<Vec<_>>>()?;
    // rounds interleave the variants so drift in machine load hits all alike;
    // round 0 is warm-up
    for round in 0..=args.rounds {
        for s in subjects.iter_mut() {
            let start = Instant::now();
            let loss = cross_entropy(&s.model.forward(&images)?, &labels)?;
            loss.backward()?;
            let us = start.elapsed().as_secs_f64() * 1e6;
            s.model.zero_grad();
            if round > 0 {
                s.best = s.best.min(us);
            }
        }
    }
    println!("variant,us_per_batch,params");
    for s in &subjects {
        println!("{},{:.1},{}", s.variant, s.best, s.model.count_params());
    }
    let (naive, tiled) = attention_storage(&reference, args.tile, args.seed)?;
    println!();
    println!("attention,tokens,tile,peak_elements");
    println!("naive,{},{},{naive}", reference.tokens(), reference.tokens());
    println!("tiled,{},{},{tiled}", reference.tokens(), args.tile);
    if tiled >= naive && args.tile < reference.tokens() {
        return Err(CliError::new(FAILED, format!("tiled attention peak {tiled} is not below naive {naive}")));
    }
    Ok(())
}
