//! Microbenchmarks for the hot kernels, at the geometries the base model
//! actually runs: 320-token stage-1 attention, patch-embed convolution, and
//! the bridge's stride-2 transpose convolution.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use hit_bench::filled;
use hit_core::attention::{mha_forward, MhaLayer};
use hit_core::posenc::{max_table_extent, Arrangement, BiasTable, Placement};
use hit_core::tensor::{conv2d, matmul, matmul_nt, softmax_rows, transpose_conv2d, Linear};

fn bench_matmul(c: &mut Criterion) {
    // token projection at base stage 1: [320, 384] x [384, 384]
    let a = filled(vec![320, 384], 10);
    let b = filled(vec![384, 384], 11);
    c.bench_function("matmul_320x384x384", |bch| {
        bch.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });

    // attention scores for one base head: [320, 32] x [320, 32]^T
    let q = filled(vec![320, 32], 12);
    let k = filled(vec![320, 32], 13);
    c.bench_function("matmul_nt_320x32_scores", |bch| {
        bch.iter(|| matmul_nt(black_box(&q), black_box(&k)).unwrap())
    });
}

fn bench_softmax(c: &mut Criterion) {
    let scores = filled(vec![320, 320], 14);
    c.bench_function("softmax_rows_320x320", |bch| {
        bch.iter(|| softmax_rows(black_box(&scores)).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    // embed stage at 64x64 resolution: 3x3, 96 -> 192 channels, stride 2
    let x = filled(vec![64, 64, 96], 15);
    let w = filled(vec![3, 3, 96, 192], 16);
    let b = filled(vec![192], 17);
    c.bench_function("conv2d_64x64_96to192_s2", |bch| {
        bch.iter(|| conv2d(black_box(&x), black_box(&w), black_box(&b), 2, 1).unwrap())
    });

    // bridge upsample: 8x8x512 -> 16x16x384, 2x2 kernel, stride 2
    let x = filled(vec![8, 8, 512], 18);
    let w = filled(vec![2, 2, 512, 384], 19);
    let b = filled(vec![384], 20);
    c.bench_function("transpose_conv2d_8x8_512to384", |bch| {
        bch.iter(|| transpose_conv2d(black_box(&x), black_box(&w), black_box(&b), 2).unwrap())
    });
}

fn bench_attention(c: &mut Criterion) {
    // one full base stage-1 attention layer: 320 tokens, C=384, 6 heads, d=32
    let (heads, d, ch) = (6usize, 32usize, 384usize);
    let search = (16, 16);
    let template = (8, 8);
    let arr = Arrangement::new(Placement::Diagonal, search, template);
    let (ex, ey) = max_table_extent(search, template);
    let lin = |cin, cout, seed| Linear::new(filled(vec![cin, cout], seed), None).unwrap();
    let layer = MhaLayer::new(
        heads,
        d,
        lin(ch, heads * d, 21),
        lin(ch, heads * d, 22),
        lin(ch, heads * 2 * d, 23),
        lin(heads * 2 * d, ch, 24),
        BiasTable::from_tensor(filled(vec![heads, ey, ex], 25)).unwrap(),
    )
    .unwrap();
    let tokens = filled(vec![arr.token_count(), ch], 26);
    c.bench_function("mha_layer_320tok_384c_6h", |bch| {
        bch.iter(|| mha_forward(black_box(&layer), black_box(&tokens), &arr).unwrap())
    });
}

criterion_group!(kernels, bench_matmul, bench_softmax, bench_conv, bench_attention);
criterion_main!(kernels);
