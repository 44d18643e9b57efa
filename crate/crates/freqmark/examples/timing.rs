//! Scratch probe: desk-run timing plus a breakdown of which held-out
//! verification images the detector misses, correlated with residual
//! chroma energy at the dither slots.

use freqmark::attack::AttackRegistry;
use freqmark::codec::{forge_watermark_split, ForgeSpec, QualityFactor};
use freqmark::data::{synth_dataset, ImageU8};
use freqmark::nn::{train, TrainConfig, TrainData};
use freqmark::rng::SeededRng;
use std::time::Instant;

const SLOTS: [(usize, usize); 7] = [(7, 7), (6, 7), (3, 3), (4, 3), (3, 4), (4, 0), (0, 4)];

/// Mean |Cr-plane DCT coefficient| at each dither slot, over all 8x8 blocks.
fn slot_leak(image: &ImageU8) -> [f64; 7] {
    let side = image.height();
    let blocks = (side / 8) * (side / 8);
    let mut acc = [0.0f64; 7];
    for by in (0..side).step_by(8) {
        for bx in (0..side).step_by(8) {
            for (s, &(u, v)) in SLOTS.iter().enumerate() {
                let mut coef = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        let r = f64::from(image.get(by + y, bx + x, 0));
                        let g = f64::from(image.get(by + y, bx + x, 1));
                        let b = f64::from(image.get(by + y, bx + x, 2));
                        let cr = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
                        let cu = (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / 16.0).cos();
                        let cv = (std::f64::consts::PI * (2 * y + 1) as f64 * v as f64 / 16.0).cos();
                        coef += cr * 0.25 * cu * cv;
                    }
                }
                acc[s] += coef.abs();
            }
        }
    }
    for a in &mut acc {
        *a /= blocks as f64;
    }
    acc
}

fn main() {
    let pool = synth_dataset(10, 250, 32, 7).unwrap();
    let test = synth_dataset(10, 50, 32, 99).unwrap();
    let spec = ForgeSpec {
        rate: 0.1,
        factor: QualityFactor::new(90).unwrap(),
        target: 0,
        verification_count: 500,
    };
    let mut rng = SeededRng::new(7);
    let forged = forge_watermark_split(&pool, &spec, &mut rng).unwrap();

    let subset: Vec<_> = pool.samples().iter().take(250).cloned().collect();
    let orig = freqmark::data::Dataset::new(subset.clone(), 10, pool.provenance()).unwrap();
    let compressed: Vec<_> = subset
        .iter()
        .map(|s| freqmark::data::LabeledSample {
            image: freqmark::codec::compress_image(&s.image, spec.factor).unwrap(),
            label: s.label,
        })
        .collect();
    let comp = freqmark::data::Dataset::new(compressed, 10, pool.provenance()).unwrap();
    let report = freqmark::metrics::covertness(&orig, &comp).unwrap();
    println!(
        "covertness: psnr={:.2} ssim={:.4}",
        report.psnr_db.unwrap(),
        report.ssim.unwrap()
    );
    println!(
        "splits: primary={} watermark={} verification={}",
        forged.primary.len(),
        forged.watermark.len(),
        forged.verification.len()
    );

    let mut config = TrainConfig::default();
    if let Some(seed) = std::env::args().nth(1) {
        config.seed = seed.parse().unwrap();
    }
    println!("train seed={}", config.seed);
    let registry = AttackRegistry::default_in_house();
    let data = TrainData {
        primary: &forged.primary,
        watermark: &forged.watermark,
        verification: &forged.verification,
        test: &test,
    };
    let t0 = Instant::now();
    let out = train(&config, &data, &registry).unwrap();
    let last = out.log.last().unwrap();
    println!(
        "trained in {:.1}s  acc={:.3} wsr={:?}",
        t0.elapsed().as_secs_f64(),
        last.test_accuracy,
        last.wsr
    );

    let net = out.checkpoint.net().unwrap();
    let mut fails = Vec::new();
    let mut passes = Vec::new();
    let mut pred_hist = [0usize; 10];
    let mut gaps = Vec::new();
    for sample in forged.verification.samples() {
        let input = freqmark::nn::image_to_input::<f32>(&sample.image);
        let logits = net.logits(&input);
        let pred = (0..logits.len())
            .max_by(|&a, &b| logits[a].partial_cmp(&logits[b]).unwrap())
            .unwrap();
        if pred == sample.label {
            passes.push(slot_leak(&sample.image));
        } else {
            pred_hist[pred] += 1;
            fails.push(slot_leak(&sample.image));
            gaps.push(f64::from(logits[pred] - logits[sample.label]));
        }
    }
    println!("verification: pass={} fail={}", passes.len(), fails.len());
    println!("failure predicted-class histogram: {pred_hist:?}");
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !gaps.is_empty() {
        println!(
            "failure logit gap (pred - target): min={:.2} median={:.2} p90={:.2} max={:.2}",
            gaps[0],
            gaps[gaps.len() / 2],
            gaps[gaps.len() * 9 / 10],
            gaps[gaps.len() - 1]
        );
    }

    let mean = |rows: &[[f64; 7]]| -> [f64; 7] {
        let mut m = [0.0f64; 7];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        for a in &mut m {
            *a /= rows.len().max(1) as f64;
        }
        m
    };
    println!("slots              {SLOTS:?}");
    println!("pass mean |coef|   {:?}", mean(&passes).map(|v| (v * 100.0).round() / 100.0));
    println!("fail mean |coef|   {:?}", mean(&fails).map(|v| (v * 100.0).round() / 100.0));

    // Contrast: unmarked originals still carry the dither field (~8.3 per slot).
    let clean: Vec<[f64; 7]> =
        forged.primary.samples().iter().take(100).map(|s| slot_leak(&s.image)).collect();
    println!("clean mean |coef|  {:?}", mean(&clean).map(|v| (v * 100.0).round() / 100.0));

    // Removal battery.
    let ver = &forged.verification;
    let target = spec.target;
    let check = |name: &str, ck: &freqmark::nn::Checkpoint| {
        let oracle = ck.oracle().unwrap();
        let w = freqmark::metrics::wsr(&oracle, ver, target).unwrap();
        let a = freqmark::metrics::accuracy(&oracle, &test).unwrap();
        println!("{name}: wsr={w:.3} acc={a:.3}");
    };
    let t1 = Instant::now();
    check("prune50", &freqmark::lab::prune(&out.checkpoint, 0.5).unwrap());
    check("quant4", &freqmark::lab::quantize_weights(&out.checkpoint, 4).unwrap());
    let tenth: Vec<_> = forged.primary.samples().iter().step_by(10).cloned().collect();
    let tenth = freqmark::data::Dataset::new(tenth, 10, forged.primary.provenance()).unwrap();
    let ft = freqmark::lab::finetune_last_layer(
        &out.checkpoint,
        &tenth,
        &freqmark::lab::FinetuneSpec::default(),
    )
    .unwrap();
    check("finetune100", &ft);
    println!("removal battery in {:.1}s", t1.elapsed().as_secs_f64());

    // Evasion sweep.
    let t2 = Instant::now();
    let outcomes = freqmark::lab::evasion_sweep(
        &out.checkpoint,
        ver,
        &registry,
        Some(&test),
        &freqmark::lab::SweepSpec::default(),
    )
    .unwrap();
    for o in &outcomes {
        println!(
            "sweep {} {}: wsr {:.3} -> {:?} acc {:?} -> {:?}",
            o.attack, o.param, o.wsr_before, o.wsr_after, o.acc_before, o.acc_after
        );
    }
    println!("sweep in {:.1}s", t2.elapsed().as_secs_f64());

    // Noise margin at fixed sigma levels.
    let oracle = out.checkpoint.oracle().unwrap();
    let mut noise_rng = SeededRng::new(5);
    for sigma in [2.0f64, 4.0, 6.0, 8.0, 10.0] {
        let noised: Vec<_> = ver
            .samples()
            .iter()
            .map(|s| {
                let mut img = s.image.clone();
                let side = img.height();
                for y in 0..side {
                    for x in 0..side {
                        for c in 0..3 {
                            let v = f64::from(img.get(y, x, c)) + noise_rng.next_gaussian(sigma);
                            img.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
                        }
                    }
                }
                freqmark::data::LabeledSample { image: img, label: s.label }
            })
            .collect();
        let noised = freqmark::data::Dataset::new(noised, 10, ver.provenance()).unwrap();
        let w = freqmark::metrics::wsr(&oracle, &noised, target).unwrap();
        println!("noise sigma={sigma}: wsr={w:.3}");
    }

    // Geometry margin at fixed magnitudes.
    use freqmark::attack::{apply_attack_at, AttackKind, AttackSpec, Magnitude};
    let bins: [(AttackKind, &[f64]); 3] = [
        (AttackKind::Rotate, &[-15.0, -10.0, -5.0, 5.0, 10.0, 15.0]),
        (AttackKind::Crop, &[0.8, 0.85, 0.9, 0.95]),
        (AttackKind::GaussianBlur, &[0.5, 0.666, 0.833, 1.0]),
    ];
    for (kind, mags) in bins {
        let spec =
            AttackSpec { kind, magnitude: Magnitude::Range { lo: 0.0, hi: 16.0 }, hook: None };
        for &m in mags {
            let mut geo_rng = SeededRng::new(11);
            let hit: Vec<_> = ver
                .samples()
                .iter()
                .map(|s| freqmark::data::LabeledSample {
                    image: apply_attack_at(&spec, m, &s.image, &mut geo_rng).unwrap(),
                    label: s.label,
                })
                .collect();
            let hit = freqmark::data::Dataset::new(hit, 10, ver.provenance()).unwrap();
            let w = freqmark::metrics::wsr(&oracle, &hit, target).unwrap();
            println!("{} m={m}: wsr={w:.3}", kind.name());
        }
    }

    // Distillation extraction: soft vs hard labels across surrogate seeds.
    use freqmark::lab::{distill_extract, DistillMode, DistillSpec};
    let td = Instant::now();
    for seed in [1u64, 2, 3] {
        let mut line = format!("distill seed={seed}:");
        for mode in [DistillMode::Soft, DistillMode::Hard] {
            let mut dspec = DistillSpec::with_mode(mode);
            dspec.seed = seed;
            let sur = distill_extract(&oracle, &forged.primary, &dspec).unwrap();
            let so = sur.checkpoint.oracle().unwrap();
            let w = freqmark::metrics::wsr(&so, &forged.verification, target).unwrap();
            let a = freqmark::metrics::accuracy(&so, &test).unwrap();
            line.push_str(&format!("  {} wsr={w:.3} acc={a:.3}", mode.name()));
        }
        println!("{line}");
    }
    println!("distill in {:.1}s", td.elapsed().as_secs_f64());

    // False-trigger audit.
    let t3 = Instant::now();
    let audit_pool: Vec<_> = test.samples().iter().take(200).cloned().collect();
    let audit_pool = freqmark::data::Dataset::new(audit_pool, 10, test.provenance()).unwrap();
    let rows = freqmark::lab::false_trigger_audit(
        &out.checkpoint,
        &audit_pool,
        target,
        spec.factor,
        &registry,
        1,
    )
    .unwrap();
    for r in &rows {
        println!("forgery {}: wsr={:.3} n={}", r.forgery, r.wsr, r.samples);
    }
    println!("audit in {:.1}s", t3.elapsed().as_secs_f64());
}
