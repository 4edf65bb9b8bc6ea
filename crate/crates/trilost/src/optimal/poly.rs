//! Dense polynomial helpers with ascending coefficient order.

use nalgebra::DMatrix;

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

pub fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &k)| i as f64 * k).collect()
}

/// Real roots via eigenvalues of the companion matrix. A root counts as real
/// when `|Im| ≤ 1e-8 (1 + |Re|)`; each is then polished by Newton steps.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return vec![];
    }
    let lead = c[deg];
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let dc = derivative(c);
    let mut roots: Vec<f64> = comp
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * (1.0 + z.re.abs()))
        .map(|z| polish(c, &dc, z.re))
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

fn polish(c: &[f64], dc: &[f64], mut t: f64) -> f64 {
    let mut g = eval(c, t).abs();
    for _ in 0..8 {
        let d = eval(dc, t);
        if d == 0.0 {
            break;
        }
        let next = t - eval(c, t) / d;
        let gn = eval(c, next).abs();
        if !(gn < g) {
            break;
        }
        t = next;
        g = gn;
    }
    t
}
