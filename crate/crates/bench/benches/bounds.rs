use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eva_bench::{image, mnist_mlp, small_cnn};
use eva_core::{linf_ball, BoundMethod, Verifier, PIXEL_RANGE};

fn bounds(c: &mut Criterion) {
    let x = image(0);
    let b = linf_ball(&x, 0.5, Some(PIXEL_RANGE)).unwrap();
    for (name, net) in [("mlp", mnist_mlp(0)), ("cnn", small_cnn(0))] {
        let v = Verifier::new(&net);
        let mut group = c.benchmark_group(format!("bounds/{name}"));
        group.sample_size(20);
        for method in BoundMethod::ALL {
            group.bench_with_input(BenchmarkId::from_parameter(method), &method, |bench, &m| {
                bench.iter(|| v.bounds(&b, m).unwrap())
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bounds);
criterion_main!(benches);
