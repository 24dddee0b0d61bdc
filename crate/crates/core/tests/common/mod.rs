//! Reference implementations used as independent oracles by the integration
//! tests and the acceptance harness. Everything here is written the slow,
//! obvious way and shares no code with the library's loss or scoring paths.

#![allow(dead_code)]

use proto_verbalizer::rng::SeededRng;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn project(w: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum())
        .collect()
}

/// Flattens class-grouped vectors into (vector, label) pairs.
pub fn flatten(groups: &[Vec<Vec<f64>>]) -> Vec<(Vec<f64>, usize)> {
    let mut out = Vec::new();
    for (c, g) in groups.iter().enumerate() {
        for v in g {
            out.push((v.clone(), c));
        }
    }
    out
}

/// Mean over (anchor, positive) pairs of
/// -log(exp cos(i,j) / sum_{k != i} exp cos(i,k)). `None` without pairs.
pub fn naive_l_ins(groups: &[Vec<Vec<f64>>]) -> Option<f64> {
    let all = flatten(groups);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..all.len() {
        let mut denom = 0.0;
        for k in 0..all.len() {
            if k != i {
                denom += cos(&all[i].0, &all[k].0).exp();
            }
        }
        for j in 0..all.len() {
            if j != i && all[j].1 == all[i].1 {
                total -= (cos(&all[i].0, &all[j].0).exp() / denom).ln();
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

/// Mean over instances of -log(exp cos(v, c_y) / sum_n exp cos(v, c_n)).
pub fn naive_l_proto(groups: &[Vec<Vec<f64>>], protos: &[Vec<f64>]) -> f64 {
    let all = flatten(groups);
    let mut total = 0.0;
    for (v, y) in &all {
        let denom: f64 = protos.iter().map(|c| cos(v, c).exp()).sum();
        total -= (cos(v, &protos[*y]).exp() / denom).ln();
    }
    total / all.len() as f64
}

/// Full objective as a function of the raw parameters.
pub fn naive_total(raw: &[Vec<Vec<f64>>], w: &[Vec<f64>], protos: &[Vec<f64>], with_ins: bool) -> f64 {
    let projected: Vec<Vec<Vec<f64>>> = raw
        .iter()
        .map(|g| g.iter().map(|h| project(w, h)).collect())
        .collect();
    let ins = if with_ins { naive_l_ins(&projected).unwrap_or(0.0) } else { 0.0 };
    ins + naive_l_proto(&projected, protos)
}

pub fn gaussian(rng: &mut SeededRng) -> f64 {
    // Box-Muller; the first uniform is shifted away from zero.
    let u1 = 1.0 - rng.unit();
    let u2 = rng.unit();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// A random episode-shaped problem.
#[derive(Debug, Clone)]
pub struct Case {
    pub raw: Vec<Vec<Vec<f64>>>,
    pub w: Vec<Vec<f64>>,
    pub protos: Vec<Vec<f64>>,
}

/// N in [2, max_n], K in [1, max_k], D in [2, max_d], d_proto in [2, max_p].
pub fn random_case(seed: u64, max_n: usize, max_k: usize, max_d: usize, max_p: usize) -> Case {
    let mut rng = SeededRng::new(seed);
    let n = 2 + rng.below((max_n - 1) as u64) as usize;
    let k = 1 + rng.below(max_k as u64) as usize;
    let d = 2 + rng.below((max_d - 1) as u64) as usize;
    let p = 2 + rng.below((max_p - 1) as u64) as usize;
    let raw = (0..n)
        .map(|_| (0..k).map(|_| gaussian_vec(&mut rng, d)).collect())
        .collect();
    let w = (0..p).map(|_| gaussian_vec(&mut rng, d)).collect();
    let protos = (0..n).map(|_| gaussian_vec(&mut rng, p)).collect();
    Case { raw, w, protos }
}

/// Largest elementwise relative error |a - b| / max(|a|, |b|), with pairs
/// where both magnitudes are below `floor` compared absolutely against it.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central finite differences of `naive_total` with respect to W (row-major)
/// followed by every prototype entry.
pub fn numeric_gradient(case: &Case, with_ins: bool, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut w = case.w.clone();
    for r in 0..w.len() {
        for c in 0..w[r].len() {
            let x = w[r][c];
            w[r][c] = x + h;
            let plus = naive_total(&case.raw, &w, &case.protos, with_ins);
            w[r][c] = x - h;
            let minus = naive_total(&case.raw, &w, &case.protos, with_ins);
            w[r][c] = x;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    let mut p = case.protos.clone();
    for n in 0..p.len() {
        for c in 0..p[n].len() {
            let x = p[n][c];
            p[n][c] = x + h;
            let plus = naive_total(&case.raw, &case.w, &p, with_ins);
            p[n][c] = x - h;
            let minus = naive_total(&case.raw, &case.w, &p, with_ins);
            p[n][c] = x;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    out
}

/// Test accuracy of nearest class mean (cosine) in the raw embedding space,
/// using all training records.
pub fn nearest_mean_accuracy(ds: &proto_verbalizer::EmbeddingDataset) -> f64 {
    use proto_verbalizer::Split;
    let n = ds.n_classes();
    let mut sums = vec![vec![0.0; ds.dim()]; n];
    for r in ds.split(Split::Train) {
        let y = r.label.unwrap();
        for (s, x) in sums[y].iter_mut().zip(&r.embedding) {
            *s += *x as f64;
        }
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for r in ds.split(Split::Test) {
        let h = r.embedding_f64();
        let best = (0..n)
            .max_by(|&a, &b| cos(&h, &sums[a]).partial_cmp(&cos(&h, &sums[b])).unwrap())
            .unwrap();
        hit += (best == r.label.unwrap()) as usize;
        total += 1;
    }
    hit as f64 / total as f64
}
