use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODE_CAP: usize = 2_000_000;

/// Tensor-product grid on the box `Π [-radius_k, radius_k]`, row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    radii: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    n_nodes: usize,
    origin_node: usize,
}

pub fn build_grid(radii: &[f64], counts: &[usize]) -> Result<Grid> {
    build_grid_with_cap(radii, counts, DEFAULT_NODE_CAP)
}

/// Uniformly coarsened odd counts whose product does not exceed `cap` (counts already within
/// the cap are returned unchanged). Odd counts keep the origin on a node.
pub fn capped_counts(counts: &[usize], cap: usize) -> Vec<usize> {
    let total = |c: &[usize]| c.iter().fold(1f64, |a, &v| a * v as f64);
    if total(counts) <= cap as f64 {
        return counts.to_vec();
    }
    let mut f = (cap as f64 / total(counts)).powf(1.0 / counts.len() as f64);
    loop {
        let out: Vec<usize> = counts
            .iter()
            .map(|&c| {
                let m = (((c - 1) as f64 * f).floor() as usize).max(2);
                let m = m - m % 2;
                m + 1
            })
            .collect();
        if total(&out) <= cap as f64 || out.iter().all(|&c| c == 3) {
            return out;
        }
        f *= 0.98;
    }
}

pub fn build_grid_with_cap(radii: &[f64], counts: &[usize], cap: usize) -> Result<Grid> {
    if radii.is_empty() || radii.len() != counts.len() {
        return Err(Error::invalid("radii and counts must be non-empty and of equal length"));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("grid radius must be positive, got {r}")));
    }
    if let Some(c) = counts.iter().find(|c| **c < 3) {
        return Err(Error::invalid(format!("grid count must be at least 3, got {c}")));
    }
    let n_nodes = counts
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .filter(|&n| n <= cap)
        .ok_or_else(|| Error::invalid(format!("grid with counts {counts:?} exceeds the node cap {cap}")))?;
    let d = radii.len();
    let spacing: Vec<f64> = radii
        .iter()
        .zip(counts)
        .map(|(r, &c)| 2.0 * r / (c - 1) as f64)
        .collect();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * counts[k + 1];
    }
    let origin_node = (0..d)
        .map(|k| {
            let m = (radii[k] / spacing[k]).round() as usize;
            m.min(counts[k] - 1) * strides[k]
        })
        .sum();
    Ok(Grid {
        radii: radii.to_vec(),
        counts: counts.to_vec(),
        spacing,
        strides,
        n_nodes,
        origin_node,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.radii.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin_node(&self) -> usize {
        self.origin_node
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        self.strides
            .iter()
            .map(|&s| {
                let m = rem / s;
                rem %= s;
                m
            })
            .collect()
    }

    pub fn node_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    pub fn axis_coord(&self, axis: usize, m: usize) -> f64 {
        -self.radii[axis] + m as f64 * self.spacing[axis]
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for (k, &s) in self.strides.iter().enumerate() {
            let m = rem / s;
            rem %= s;
            out[k] = self.axis_coord(k, m);
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(node, &mut out);
        out
    }

    pub fn norm_of(&self, node: usize) -> f64 {
        crate::model::norm(&self.coords(node))
    }

    /// Index along `axis` shifted by `delta`, mirrored back into range at the boundary.
    pub(crate) fn reflect(&self, axis: usize, m: usize, delta: isize) -> usize {
        let n = self.counts[axis] as isize;
        let mut t = m as isize + delta;
        if t < 0 {
            t = -t;
        }
        if t >= n {
            t = 2 * (n - 1) - t;
        }
        t.clamp(0, n - 1) as usize
    }

    /// Node whose cell contains `x`, with coordinates clamped to the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        (0..self.dim())
            .map(|k| {
                let t = ((x[k] + self.radii[k]) / self.spacing[k]).round();
                (t.max(0.0) as usize).min(self.counts[k] - 1) * self.strides[k]
            })
            .sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.radii).all(|(xi, r)| xi.abs() <= *r)
    }

    /// Multilinear interpolation of node values; the flag reports whether `x` was clamped.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        let d = self.dim();
        let mut clipped = false;
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "interpolation supports up to 8 dimensions");
        for k in 0..d {
            let t = (x[k] + self.radii[k]) / self.spacing[k];
            let max = (self.counts[k] - 1) as f64;
            let tc = if t.is_nan() { 0.0 } else { t.clamp(0.0, max) };
            if tc != t {
                clipped = true;
            }
            let i = (tc.floor() as usize).min(self.counts[k] - 2);
            base[k] = i;
            frac[k] = tc - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                node += (base[k] + bit) * self.strides[k];
            }
            if w != 0.0 {
                acc += w * values[node];
            }
        }
        (acc, clipped)
    }

    /// Central-difference gradient of node values; one-sided on the boundary faces.
    pub fn gradient_at(&self, values: &[f64], node: usize) -> Vec<f64> {
        let multi = self.multi_index(node);
        (0..self.dim())
            .map(|k| {
                let m = multi[k];
                let h = self.spacing[k];
                let s = self.strides[k];
                if m == 0 {
                    (values[node + s] - values[node]) / h
                } else if m == self.counts[k] - 1 {
                    (values[node] - values[node - s]) / h
                } else {
                    (values[node + s] - values[node - s]) / (2.0 * h)
                }
            })
            .collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.multi_index(node)
            .iter()
            .zip(&self.counts)
            .any(|(&m, &c)| m == 0 || m == c - 1)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn capped_counts_coarsen_to_odd() {
        assert_eq!(super::capped_counts(&[41, 41, 41], 20_000), vec![27, 27, 27]);
        assert_eq!(super::capped_counts(&[11, 11], 1000), vec![11, 11]);
        assert!(super::capped_counts(&[101, 101, 101], 5000).iter().all(|c| c % 2 == 1));
    }

    use super::*;

    #[test]
    fn three_node_line() {
        let g = build_grid(&[1.0], &[3]).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.spacing(), &[1.0]);
        assert_eq!(g.origin_node(), 1);
        assert_eq!(g.coords(0), vec![-1.0]);
        assert_eq!(g.coords(1), vec![0.0]);
        assert_eq!(g.coords(2), vec![1.0]);
    }

    #[test]
    fn fine_line_spacing() {
        let g = build_grid(&[6.0], &[241]).unwrap();
        assert!((g.spacing()[0] - 0.05).abs() < 1e-15);
        assert_eq!(g.origin_node(), 120);
        assert!(g.coords(g.origin_node())[0].abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_layout() {
        let g = build_grid(&[1.0, 2.0], &[3, 5]).unwrap();
        assert_eq!(g.n_nodes(), 15);
        assert_eq!(g.spacing(), &[1.0, 1.0]);
        assert_eq!(g.coords(g.origin_node()), vec![0.0, 0.0]);
        // row-major: last axis fastest
        assert_eq!(g.coords(1), vec![-1.0, -1.0]);
        assert_eq!(g.coords(5), vec![0.0, -2.0]);
        for node in 0..15 {
            assert_eq!(g.node_of(&g.multi_index(node)), node);
        }
    }

    #[test]
    fn origin_within_one_spacing_for_even_counts() {
        let g = build_grid(&[1.0, 3.0], &[4, 6]).unwrap();
        let x = g.coords(g.origin_node());
        let max_h = g.spacing().iter().copied().fold(0.0, f64::max);
        assert!(crate::model::norm(&x) <= max_h);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_grid(&[1.0], &[2]).is_err());
        assert!(build_grid(&[0.0], &[3]).is_err());
        assert!(build_grid(&[1.0, 1.0], &[3]).is_err());
        assert!(build_grid_with_cap(&[1.0, 1.0], &[100, 100], 1000).is_err());
    }

    #[test]
    fn reflection_mirrors_into_range() {
        let g = build_grid(&[1.0], &[5]).unwrap();
        assert_eq!(g.reflect(0, 0, -1), 1);
        assert_eq!(g.reflect(0, 4, 1), 3);
        assert_eq!(g.reflect(0, 2, 1), 3);
    }

    #[test]
    fn interpolation_is_exact_for_multilinear_functions() {
        let g = build_grid(&[1.0, 2.0], &[5, 9]).unwrap();
        let vals: Vec<f64> = (0..g.n_nodes())
            .map(|n| {
                let x = g.coords(n);
                1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]
            })
            .collect();
        let (v, clipped) = g.interpolate(&vals, &[0.3, -0.7]);
        assert!(!clipped);
        assert!((v - (1.0 + 0.6 + 0.7 - 0.105)).abs() < 1e-12);
        let (_, clipped) = g.interpolate(&vals, &[3.0, 0.0]);
        assert!(clipped);
    }
}
