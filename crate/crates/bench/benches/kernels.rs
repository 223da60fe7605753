use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use teledepth::data::{synth_scene, synth_stereo_pair, to_log_depth, SceneSpec};
use teledepth::stereo::{build_cost_volume, census, sgm_aggregate, GrayImage};
use teledepth::{
    stereo_disparity, HierarchyConfig, HierarchyModel, HourglassConfig, HourglassParams, LossKind,
    Paths, StereoParams, Tape, Tensor, WindowSpec,
};

fn ramp(shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for (ch, h, w) in [(16, 48, 64), (32, 24, 32), (64, 96, 128)] {
        let x = ramp([1, ch, h, w]).reshape([ch, h, w]).unwrap();
        let wt = ramp([ch, ch, 3, 3]);
        let b = Tensor::zeros([ch]);
        g.bench_function(BenchmarkId::from_parameter(format!("{ch}x{h}x{w}")), |bench| {
            bench.iter(|| {
                let mut tape = Tape::inference();
                let (x, wt, b) = (tape.constant(x.clone()), tape.constant(wt.clone()), tape.constant(b.clone()));
                black_box(tape.conv2d(x, wt, b, 1, 1).unwrap());
            })
        });
    }
    g.finish();
}

fn losses(c: &mut Criterion) {
    let s = synth_scene(&SceneSpec::new(1, 96, 128)).unwrap().sample;
    let target = s.target();
    let pred = to_log_depth(&s.gt_depth.map_values(|v| v * 1.3 + 0.1));
    let mut g = c.benchmark_group("loss_96x128");
    for (name, kind, r) in [
        ("exact", LossKind::SiL1Exact, 1),
        ("windowed_r3", LossKind::SiL1Windowed, 3),
        ("windowed_r7", LossKind::SiL1Windowed, 7),
        ("l2", LossKind::SiL2, 1),
    ] {
        let window = WindowSpec::new(r).unwrap();
        g.bench_function(name, |b| b.iter(|| black_box(kind.evaluate(&pred, &target, window).unwrap())));
    }
    g.finish();
}

fn stereo(c: &mut Criterion) {
    let pair = synth_stereo_pair(&SceneSpec { stereo: true, ..SceneSpec::new(3, 96, 128) }).unwrap();
    let l = GrayImage::from_rgb(&pair.left).unwrap();
    let r = GrayImage::from_rgb(&pair.right).unwrap();
    let vol = build_cost_volume(&census(&l, 2).unwrap(), &census(&r, 2).unwrap(), 16).unwrap();
    let mut g = c.benchmark_group("stereo_96x128");
    g.bench_function("census_r2", |b| b.iter(|| black_box(census(&l, 2).unwrap())));
    for paths in [Paths::Four, Paths::Eight] {
        g.bench_function(format!("sgm_{}", paths.count()), |b| {
            b.iter(|| black_box(sgm_aggregate(&vol, 1.0, 8.0, paths).unwrap()))
        });
    }
    let params = StereoParams::default();
    g.bench_function("full_pipeline", |b| {
        b.iter(|| black_box(stereo_disparity(&pair.left, &pair.right, &params).unwrap()))
    });
    g.finish();
}

fn networks(c: &mut Criterion) {
    let cfg = HourglassConfig { in_channels: 3, base_channels: 16, levels: 3, out_channels: 1 };
    let net = HourglassParams::build(cfg, 0).unwrap();
    let x = ramp([1, 3, 48, 64]).reshape([3, 48, 64]).unwrap();
    let mut g = c.benchmark_group("network_48x64");
    g.sample_size(20);
    g.bench_function("hourglass_forward", |b| {
        b.iter(|| {
            let mut tape = Tape::inference();
            let vars = net.register(&mut tape, false);
            let input = tape.constant(x.clone());
            black_box(vars.forward(&mut tape, input).unwrap());
        })
    });
    g.bench_function("hourglass_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let input = tape.constant(x.clone());
            let out = vars.forward(&mut tape, input).unwrap();
            let loss = tape.mean(out).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
    let s = synth_scene(&SceneSpec::new(5, 48, 64)).unwrap().sample;
    let model = HierarchyModel::new(&HierarchyConfig::default(), 0).unwrap();
    g.bench_function("hierarchy_infer", |b| {
        b.iter(|| black_box(model.infer(&s.wide_rgb, &s.tele_depth, &s.region).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, conv, losses, stereo, networks);
criterion_main!(benches);
