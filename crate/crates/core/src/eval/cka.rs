use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Centered Gram matrix `Xc Xcᵀ` of row samples.
fn centered_gram(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("CKA rows have differing lengths".into()));
    }
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Linear CKA between two representations of the same `n` samples (rows).
/// Columns are centered internally; feature widths may differ.
pub fn linear_cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "CKA needs the same samples on both sides, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("CKA needs at least two samples".into()));
    }
    let k = centered_gram(x)?;
    let l = centered_gram(y)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let kk = dot(&k, &k).sqrt();
    let ll = dot(&l, &l).sqrt();
    // Relative to the raw magnitude so that rounding noise on identical rows
    // still counts as zero variance.
    let scale = |m: &[Vec<f64>]| m.iter().flatten().map(|v| v * v).sum::<f64>();
    if kk <= 1e-12 * scale(x) || kk == 0.0 {
        return Err(Error::Degenerate("first representation has zero variance".into()));
    }
    if ll <= 1e-12 * scale(y) || ll == 0.0 {
        return Err(Error::Degenerate("second representation has zero variance".into()));
    }
    Ok(dot(&k, &l) / (kk * ll))
}

/// CKA between every (source, destination) scale pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CkaMatrix {
    pub sources: Vec<usize>,
    pub destinations: Vec<usize>,
    /// `values[i][j]` compares `sources[i]` with `destinations[j]`.
    pub values: Vec<Vec<f64>>,
}

impl CkaMatrix {
    pub fn get(&self, source: usize, destination: usize) -> Option<f64> {
        let i = self.sources.iter().position(|&s| s == source)?;
        let j = self.destinations.iter().position(|&d| d == destination)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,destination,cka\n");
        for (i, s) in self.sources.iter().enumerate() {
            for (j, d) in self.destinations.iter().enumerate() {
                out.push_str(&format!("{s},{d},{}\n", self.values[i][j]));
            }
        }
        out
    }
}

/// One row per image: its feature map flattened over channels and space.
/// `featurize(image, scale)` supplies the representation at each scale and is
/// called once per (image, scale).
pub fn scale_invariance_curve<F>(
    mut featurize: F,
    images: &[Tensor],
    destinations: &[usize],
    sources: &[usize],
) -> Result<CkaMatrix>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    if images.len() < 2 {
        return Err(Error::InvalidArgument(
            "scale invariance needs at least two images".into(),
        ));
    }
    let mut rows: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for &s in sources.iter().chain(destinations) {
        if rows.contains_key(&s) {
            continue;
        }
        let mut per_image = Vec::with_capacity(images.len());
        for img in images {
            let f = featurize(img, s)?;
            per_image.push(f.data().iter().map(|&v| v as f64).collect());
        }
        rows.insert(s, per_image);
    }
    let values = sources
        .iter()
        .map(|s| {
            destinations
                .iter()
                .map(|d| linear_cka(&rows[s], &rows[d]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CkaMatrix {
        sources: sources.to_vec(),
        destinations: destinations.to_vec(),
        values,
    })
}
