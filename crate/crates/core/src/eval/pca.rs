//! Strongest principal component by power iteration.

use super::EvalError;

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn mat_vec(a: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
        .collect()
}

fn power_from(a: &[f64], n: usize, start: Vec<f64>) -> EigenPair {
    let mut v = start;
    normalize(&mut v);
    fix_sign(&mut v);
    for _ in 0..MAX_ITERATIONS {
        let mut next = mat_vec(a, n, &v);
        if normalize(&mut next) == 0.0 {
            return EigenPair {
                value: 0.0,
                vector: v,
            };
        }
        fix_sign(&mut next);
        let change = next
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        v = next;
        if change < TOLERANCE {
            break;
        }
    }
    let av = mat_vec(a, n, &v);
    let value = av.iter().zip(&v).map(|(x, y)| x * y).sum();
    EigenPair { value, vector: v }
}

/// Dominant eigenpair of a symmetric positive semi-definite `n × n` matrix.
///
/// Power iteration is run from every basis vector and from the normalised
/// all-ones vector; the start with the largest Rayleigh quotient wins, so a
/// start orthogonal to the top eigenvector cannot mislead the result.
pub fn top_eigenpair(a: &[f64], n: usize) -> EigenPair {
    assert_eq!(a.len(), n * n);
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        starts.push(e);
    }
    let mut best: Option<EigenPair> = None;
    for s in starts {
        let pair = power_from(a, n, s);
        if best
            .as_ref()
            .is_none_or(|b| pair.value > b.value + 1e-12 * b.value.abs())
        {
            best = Some(pair);
        }
    }
    best.expect("at least one start")
}

/// Top principal component of row-major samples.
#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// Unit-norm component, largest-magnitude entry positive.
    pub component: Vec<f64>,
    pub explained_variance_ratio: f64,
    /// Per-row projections of the mean-centred samples, in input order.
    pub projections: Vec<f64>,
    pub mean: Vec<f64>,
    /// Set when the samples have zero variance; the component is then `e₀`.
    pub degenerate: bool,
}

impl PcaProjection {
    pub fn project(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.mean)
            .zip(&self.component)
            .map(|((x, m), c)| (x - m) * c)
            .sum()
    }
}

pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let f = rows[0].len();
    let mut mean = vec![0.0; f];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; f * f];
    for r in rows {
        for i in 0..f {
            let di = r[i] - mean[i];
            for j in 0..f {
                cov[i * f + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for c in cov.iter_mut() {
        *c /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Mean-centres `rows`, finds the top covariance eigenvector and projects
/// every row onto it.
pub fn pca_strongest_component(rows: &[Vec<f64>]) -> Result<PcaProjection, EvalError> {
    if rows.len() < 2 {
        return Err(EvalError::Validation(format!(
            "PCA needs at least 2 samples, got {}",
            rows.len()
        )));
    }
    let f = rows[0].len();
    if f == 0 || rows.iter().any(|r| r.len() != f) {
        return Err(EvalError::Validation(
            "PCA rows must share a nonzero feature count".into(),
        ));
    }
    let (mean, cov) = covariance(rows);
    let trace: f64 = (0..f).map(|i| cov[i * f + i]).sum();
    if trace <= 0.0 {
        let mut component = vec![0.0; f];
        component[0] = 1.0;
        return Ok(PcaProjection {
            component,
            explained_variance_ratio: 1.0,
            projections: vec![0.0; rows.len()],
            mean,
            degenerate: true,
        });
    }
    let top = top_eigenpair(&cov, f);
    let mut pca = PcaProjection {
        component: top.vector,
        explained_variance_ratio: (top.value / trace).clamp(0.0, 1.0),
        projections: Vec::new(),
        mean,
        degenerate: false,
    };
    pca.projections = rows.iter().map(|r| pca.project(r)).collect();
    Ok(pca)
}

/// Fraction of total variance captured along an arbitrary unit direction.
pub fn variance_ratio_along(rows: &[Vec<f64>], direction: &[f64]) -> f64 {
    let (_, cov) = covariance(rows);
    let f = direction.len();
    let trace: f64 = (0..f).map(|i| cov[i * f + i]).sum();
    let cv = mat_vec(&cov, f, direction);
    cv.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>() / trace
}
