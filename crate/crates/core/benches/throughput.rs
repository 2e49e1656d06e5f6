//! Per-sample stages through `par::map` (rayon when the `parallel` feature is
//! on) against `par::map_sequential`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maskqc::agreement::mean_pairwise_kappa;
use maskqc::anova::{anova_table, build_design, default_factors};
use maskqc::conditioning::apply_conditioning;
use maskqc::metrics::jaccard;
use maskqc::{par, BinaryMask, ConditioningKind, StructuringElement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: u32 = 192;
const SAMPLES: usize = 64;

/// Ellipse with jittered radii, plus a few specks for the opening to remove.
fn annotation(rng: &mut ChaCha8Rng) -> BinaryMask {
    let c = SIDE as f64 / 2.0;
    let rx = rng.random_range(40.0..70.0);
    let ry = rng.random_range(40.0..70.0);
    let (dx, dy) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
    let mut m = BinaryMask::new(SIDE, SIDE).unwrap();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let u = (x as f64 - c - dx) / rx;
            let v = (y as f64 - c - dy) / ry;
            if u * u + v * v <= 1.0 {
                m.set(x, y, true);
            }
        }
    }
    for _ in 0..6 {
        m.set(rng.random_range(0..SIDE), rng.random_range(0..SIDE), true);
    }
    m
}

fn samples() -> Vec<Vec<BinaryMask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..SAMPLES)
        .map(|i| (0..2 + i % 3).map(|_| annotation(&mut rng)).collect())
        .collect()
}

fn agreement(c: &mut Criterion) {
    let data = samples();
    let se = StructuringElement::default();
    let mut g = c.benchmark_group("agreement");
    g.sample_size(20);
    for kind in ConditioningKind::ALL {
        let per_sample = |masks: &Vec<BinaryMask>| {
            let conditioned: Vec<BinaryMask> = masks
                .iter()
                .map(|m| apply_conditioning(m, kind, se))
                .collect();
            mean_pairwise_kappa(&conditioned).unwrap()
        };
        g.bench_function(BenchmarkId::new("parallel", kind), |b| {
            b.iter(|| par::map(black_box(&data), per_sample))
        });
        g.bench_function(BenchmarkId::new("sequential", kind), |b| {
            b.iter(|| par::map_sequential(black_box(&data), per_sample))
        });
    }
    g.finish();
}

fn conditioning(c: &mut Criterion) {
    let masks: Vec<BinaryMask> = samples().into_iter().flatten().collect();
    let se = StructuringElement::default();
    let mut g = c.benchmark_group("conditioning");
    g.sample_size(20);
    for kind in [ConditioningKind::Opening, ConditioningKind::ConvexHull] {
        g.bench_function(BenchmarkId::new("parallel", kind), |b| {
            b.iter(|| par::map(black_box(&masks), |m| apply_conditioning(m, kind, se)))
        });
        g.bench_function(BenchmarkId::new("sequential", kind), |b| {
            b.iter(|| par::map_sequential(black_box(&masks), |m| apply_conditioning(m, kind, se)))
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let data = samples();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs: Vec<(BinaryMask, Vec<BinaryMask>)> = data
        .into_iter()
        .map(|truths| (annotation(&mut rng), truths))
        .collect();
    let se = StructuringElement::default();
    let best_of = |(pred, truths): &(BinaryMask, Vec<BinaryMask>)| {
        truths
            .iter()
            .map(|g| {
                jaccard(
                    pred,
                    &apply_conditioning(g, ConditioningKind::ConvexHull, se),
                )
                .unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut g = c.benchmark_group("evaluation");
    g.sample_size(20);
    g.bench_function("parallel", |b| {
        b.iter(|| par::map(black_box(&pairs), best_of))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| par::map_sequential(black_box(&pairs), best_of))
    });
    g.finish();
}

fn anova(c: &mut Criterion) {
    let factors = default_factors();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut runs = build_design(&factors, 5).unwrap();
    for r in &mut runs {
        r.outcome = Some(rng.random_range(0.6..0.9));
    }
    c.bench_function("anova/540_runs", |b| {
        b.iter(|| anova_table(black_box(&runs), &factors, 3).unwrap())
    });
}

criterion_group!(benches, agreement, conditioning, evaluation, anova);
criterion_main!(benches);
