//! Sequential vs parallel throughput on the three corpus-wide passes:
//! episode generation, pair-matching evaluation, and teacher-forced
//! scoring. On a single hardware thread the two modes should tie; the
//! comparison is the point, not the absolute numbers.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gridscript::config::Config;
use gridscript::exec::ExecMode;
use gridscript::harness::eval::{eval_pair_accuracy, eval_teacher_forced};
use gridscript::model::Model;
use gridscript::world::dataset::{generate_split, Split};
use gridscript::world::episode::Episode;
use gridscript::world::vocab::Vocab;

const MODES: [(&str, ExecMode); 2] =
    [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn corpus(cfg: &Config, count: usize) -> Vec<Episode> {
    let vocab = Vocab::build();
    generate_split(
        &cfg.gen_config(),
        &vocab,
        5,
        Split::Train,
        count,
        cfg.world.num_layouts,
        ExecMode::Sequential,
    )
}

fn tuned(group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>) {
    group.sample_size(10);
    group.warm_up_time(Duration::from_secs(1));
    group.measurement_time(Duration::from_secs(3));
}

fn bench_generation(c: &mut Criterion) {
    let cfg = Config::default();
    let vocab = Vocab::build();
    let gen = cfg.gen_config();
    let mut group = c.benchmark_group("episode_generation");
    tuned(&mut group);
    for (label, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(label, 16), &mode, |b, &mode| {
            b.iter(|| generate_split(&gen, &vocab, 5, Split::Train, 16, cfg.world.num_layouts, mode))
        });
    }
    group.finish();
}

fn bench_pair_matching(c: &mut Criterion) {
    let cfg = Config::default();
    let episodes = corpus(&cfg, 32);
    let model = Model::build_seeded(&cfg, Vocab::build().size(), 42);
    let mut group = c.benchmark_group("pair_matching_eval");
    tuned(&mut group);
    for (label, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(label, episodes.len()), &mode, |b, &mode| {
            b.iter(|| eval_pair_accuracy(&model, &episodes, 64, mode).unwrap())
        });
    }
    group.finish();
}

fn bench_teacher_forced(c: &mut Criterion) {
    let cfg = Config::default();
    let episodes = corpus(&cfg, 16);
    let model = Model::build_seeded(&cfg, Vocab::build().size(), 42);
    let mut group = c.benchmark_group("teacher_forced_eval");
    tuned(&mut group);
    for (label, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(label, episodes.len()), &mode, |b, &mode| {
            b.iter(|| eval_teacher_forced(&model, &cfg, &episodes, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generation, bench_pair_matching, bench_teacher_forced);
criterion_main!(benches);
