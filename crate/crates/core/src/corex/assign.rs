use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{CorexError, CorexModel, Gaussianizer};

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// −½ ln(1 − ρ²) in nats.
pub fn gaussian_mi(rho: f64) -> f64 {
    let r2 = (rho * rho).min(1.0 - 1e-12);
    (-0.5 * (1.0 - r2).ln()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyAssignment {
    pub factor: usize,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAssignment {
    /// Indexed by pid.
    pub properties: Vec<PropertyAssignment>,
    /// Per factor, pids sorted by MI descending (ties by pid).
    pub factors: Vec<Vec<usize>>,
}

impl FactorAssignment {
    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Factor label per property, for partition comparisons.
    pub fn labels(&self) -> Vec<usize> {
        self.properties.iter().map(|a| a.factor).collect()
    }
}

/// Assigns each property to the factor it shares the most Gaussian mutual
/// information with. Factors with zero-variance latents take no properties.
pub fn assign_factors(model: &CorexModel, c_gauss: ArrayView2<'_, f64>) -> Result<FactorAssignment, CorexError> {
    let z = model.project(c_gauss)?;
    let m = model.num_factors();
    let p = model.num_properties();
    let live: Vec<bool> = (0..m)
        .map(|j| {
            let col = z.column(j);
            let mean = col.sum() / col.len() as f64;
            col.iter().any(|v| (v - mean).abs() > 0.0)
        })
        .collect();
    for (j, alive) in live.iter().enumerate() {
        if !alive {
            warn!("factor {j} has a zero-variance latent and receives no properties");
        }
    }
    let fallback = live.iter().position(|l| *l).unwrap_or(0);
    let mut properties = Vec::with_capacity(p);
    for i in 0..p {
        let col = c_gauss.column(i);
        let mut best = (fallback, f64::NEG_INFINITY);
        for j in (0..m).filter(|&j| live[j]) {
            let mi = gaussian_mi(pearson(col, z.column(j)));
            if mi > best.1 {
                best = (j, mi);
            }
        }
        properties.push(PropertyAssignment {
            factor: best.0,
            mi: best.1.max(0.0),
        });
    }
    let mut factors = vec![Vec::new(); m];
    for (i, a) in properties.iter().enumerate() {
        factors[a.factor].push(i);
    }
    for members in &mut factors {
        members.sort_by(|&a, &b| properties[b].mi.total_cmp(&properties[a].mi).then(a.cmp(&b)));
    }
    Ok(FactorAssignment { properties, factors })
}

/// Z = W · gaussianize(rows) for raw compatibility rows in pool order.
pub fn encode(
    model: &CorexModel,
    gaussianizer: &Gaussianizer,
    raw_rows: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, CorexError> {
    if raw_rows.ncols() != model.num_properties() {
        return Err(CorexError::ColumnMismatch {
            expected: model.num_properties(),
            found: raw_rows.ncols(),
        });
    }
    let g = gaussianizer.transform(raw_rows)?;
    model.project(g.view())
}
