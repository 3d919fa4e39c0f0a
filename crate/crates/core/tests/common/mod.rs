//! Plain-loop oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scorecl_autodiff::Tensor;
use scorecl_core::contrastive::LossConfig;

pub type Rows = Vec<Vec<f64>>;

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Rows {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::new(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = dot(a, a).sqrt();
    a.iter().map(|v| v / n).collect()
}

/// Per-anchor `−log(w_p e^{s_p} / Σ_{k≠i} w_k e^{s_k})` over the doubled batch.
pub fn simclr_oracle(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64, weight: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let z: Rows = a.iter().chain(b).map(|r| unit(r)).collect();
    let n = z.len();
    (0..n)
        .map(|i| {
            let p = (i + n / 2) % n;
            let num = weight(i, p) * (dot(&z[i], &z[p]) / tau).exp();
            let den: f64 = (0..n).filter(|&k| k != i).map(|k| weight(i, k) * (dot(&z[i], &z[k]) / tau).exp()).sum();
            -(num / den).ln()
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn column_stats(z: &[Vec<f64>]) -> (Vec<f64>, Rows) {
    let (b, p) = (z.len(), z[0].len());
    let m: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / b as f64).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for r in z {
        for j in 0..p {
            for k in 0..p {
                cov[j][k] += (r[j] - m[j]) * (r[k] - m[k]) / (b - 1) as f64;
            }
        }
    }
    (m, cov)
}

pub fn vicreg_oracle(z: &[Vec<f64>], z2: &[Vec<f64>], w: &[f64], cfg: &LossConfig) -> f64 {
    let b = z.len();
    let inv: f64 = (0..b)
        .map(|i| w[i] * z[i].iter().zip(&z2[i]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum::<f64>()
        / b as f64;
    let reg = |z: &[Vec<f64>]| {
        let (_, cov) = column_stats(z);
        let p = cov.len();
        let v: f64 = (0..p).map(|j| (1.0 - (cov[j][j] + cfg.eps_var).sqrt()).max(0.0)).sum::<f64>() / p as f64;
        let mut c = 0.0;
        for j in 0..p {
            for k in 0..p {
                if j != k {
                    c += cov[j][k] * cov[j][k];
                }
            }
        }
        cfg.mu * v + cfg.nu * c / p as f64
    };
    cfg.lambda * inv + reg(z) + reg(z2)
}

pub fn cholesky(a: &[Vec<f64>]) -> Rows {
    let p = a.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    l
}

pub fn forward_solve(l: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for i in 0..x.len() {
        y[i] = (x[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    y
}

pub fn whiten_oracle(z: &[Vec<f64>], eps: f64) -> Rows {
    let (m, mut cov) = column_stats(z);
    for (j, row) in cov.iter_mut().enumerate() {
        row[j] += eps;
    }
    let l = cholesky(&cov);
    z.iter().map(|r| forward_solve(&l, &r.iter().zip(&m).map(|(x, m)| x - m).collect::<Vec<_>>())).collect()
}

pub fn wmse_oracle(views: &[Rows], w: &[f64], eps: f64) -> f64 {
    let (m, n) = (views.len(), views[0].len());
    let all: Rows = views.concat();
    let white: Rows = whiten_oracle(&all, eps).iter().map(|r| unit(r)).collect();
    let mut total = 0.0;
    let mut k = 0;
    for a in 0..m {
        for b in a + 1..m {
            for i in 0..n {
                let wi = if w.len() == n { w[i] } else { w[k * n + i] };
                let (x, y) = (&white[a * n + i], &white[b * n + i]);
                total += wi * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            }
            k += 1;
        }
    }
    total * 2.0 / (n * m * (m - 1)) as f64
}

/// Repeated arg-max selection of neighbours, then a linear scan over classes
/// keeping the first class with the most votes and, among those, the
/// largest summed similarity.
pub fn brute_force(train: &[Vec<f64>], labels: &[usize], test: &[Vec<f64>], k: usize, classes: usize) -> Vec<usize> {
    let train: Rows = train.iter().map(|r| unit(r)).collect();
    test.iter()
        .map(|q| {
            let q = unit(q);
            let sims: Vec<f64> = train.iter().map(|t| q.iter().zip(t).map(|(a, b)| a * b).sum()).collect();
            let mut taken = vec![false; train.len()];
            let mut votes = vec![0usize; classes];
            let mut mass = vec![0.0; classes];
            for _ in 0..k {
                let mut best: Option<usize> = None;
                for i in 0..train.len() {
                    if !taken[i] && best.map_or(true, |b| sims[i] > sims[b]) {
                        best = Some(i);
                    }
                }
                let i = best.unwrap();
                taken[i] = true;
                votes[labels[i]] += 1;
                mass[labels[i]] += sims[i];
            }
            let mut winner = 0;
            for c in 1..classes {
                if votes[c] > votes[winner] || (votes[c] == votes[winner] && mass[c] > mass[winner]) {
                    winner = c;
                }
            }
            winner
        })
        .collect()
}

pub fn positive_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.05..3.0)).collect()
}

/// Shifted rows with mildly correlated columns.
pub fn correlated(rng: &mut ChaCha8Rng, b: usize, p: usize) -> Rows {
    let x = randn(rng, b, p);
    let mix = randn(rng, p, p);
    let shift: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    x.iter()
        .map(|r| {
            (0..p)
                .map(|j| r[j] + 0.3 / (p as f64).sqrt() * (0..p).map(|k| r[k] * mix[k][j]).sum::<f64>() + shift[j])
                .collect()
        })
        .collect()
}

pub struct Instance {
    pub train: Rows,
    pub labels: Vec<usize>,
    pub test: Rows,
    pub test_labels: Vec<usize>,
    pub classes: usize,
}

/// Rows drawn from a small integer pool so duplicates, equal similarities
/// and split votes are common.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=4);
    let pool_size = rng.gen_range(2..=8);
    let pool: Rows = (0..pool_size)
        .map(|_| loop {
            let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-2..=2) as f64).collect();
            if r.iter().any(|v| *v != 0.0) {
                break r;
            }
        })
        .collect();
    let n = rng.gen_range(5..=50);
    let pick = |rng: &mut ChaCha8Rng| pool[rng.gen_range(0..pool_size)].clone();
    let train: Rows = (0..n).map(|_| pick(&mut rng)).collect();
    let test: Rows = (0..rng.gen_range(1..=20)).map(|_| pick(&mut rng)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let test_labels = (0..test.len()).map(|_| rng.gen_range(0..classes)).collect();
    Instance { train, labels, test, test_labels, classes }
}
