use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::distance::Distance;
use crate::data::Image;
use crate::error::{shape_err, Error, Result};

const CHUNK: usize = 64;

/// Image generator driven by a structure latent `z_s` and a rendering
/// latent `z_r`, both drawn uniformly from `[-1,1]`.
pub trait LatentGenerator {
    fn zs_dim(&self) -> usize;
    fn zr_dim(&self) -> usize;
    /// One image per `(zs[i], zr[i])`.
    fn generate(&mut self, zs: &[Vec<f64>], zr: &[Vec<f64>]) -> Result<Vec<Image>>;
}

/// Adapts a per-sample closure into a [`LatentGenerator`].
pub struct FnGenerator<F> {
    pub zs_dim: usize,
    pub zr_dim: usize,
    pub f: F,
}

impl<F: FnMut(&[f64], &[f64]) -> Result<Image>> LatentGenerator for FnGenerator<F> {
    fn zs_dim(&self) -> usize {
        self.zs_dim
    }
    fn zr_dim(&self) -> usize {
        self.zr_dim
    }
    fn generate(&mut self, zs: &[Vec<f64>], zr: &[Vec<f64>]) -> Result<Vec<Image>> {
        zs.iter().zip(zr).map(|(s, r)| (self.f)(s, r)).collect()
    }
}

/// A mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Sample mean and `s / sqrt(n)`; the error is 0 for a single sample.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let value = xs.iter().sum::<f64>() / n;
        let std_error = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { value, std_error }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataBaseline {
    pub e_ds_data: Estimate,
    pub e_dr_data: Estimate,
    pub num_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdReport {
    pub ds_name: String,
    pub dr_name: String,
    /// Monte Carlo draws, or the number of grid cells for a grid estimate.
    pub num_pairs: usize,
    pub e_ds_vary_s: Estimate,
    pub e_ds_vary_r: Estimate,
    pub e_dr_vary_r: Estimate,
    pub e_dr_vary_s: Estimate,
    pub delta_ds: Estimate,
    pub delta_dr: Estimate,
    pub nd: Estimate,
    pub baseline: Option<DataBaseline>,
}

impl NdReport {
    fn rows(&self) -> Vec<(&'static str, Estimate)> {
        let mut rows = vec![
            ("E_ds_vary_s", self.e_ds_vary_s),
            ("E_ds_vary_r", self.e_ds_vary_r),
            ("E_dr_vary_r", self.e_dr_vary_r),
            ("E_dr_vary_s", self.e_dr_vary_s),
            ("delta_ds", self.delta_ds),
            ("delta_dr", self.delta_dr),
            ("ND", self.nd),
        ];
        if let Some(b) = &self.baseline {
            rows.push(("E_ds_data", b.e_ds_data));
            rows.push(("E_dr_data", b.e_dr_data));
        }
        rows
    }

    /// `term,value,std_error` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,value,std_error\n");
        for (name, e) in self.rows() {
            let _ = writeln!(out, "{name},{},{}", e.value, e.std_error);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "d_s = {}, d_r = {}, pairs = {}\n",
            self.ds_name, self.dr_name, self.num_pairs
        );
        let _ = writeln!(out, "{:<12} {:>10} {:>10}", "term", "value", "std_error");
        for (name, e) in self.rows() {
            let _ = writeln!(out, "{name:<12} {:>10.6} {:>10.6}", e.value, e.std_error);
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    ds_name: String,
    dr_name: String,
    num_pairs: usize,
    ds_s: &[f64],
    ds_r: &[f64],
    dr_r: &[f64],
    dr_s: &[f64],
) -> NdReport {
    let delta_ds: Vec<f64> = ds_s.iter().zip(ds_r).map(|(a, b)| a - b).collect();
    let delta_dr: Vec<f64> = dr_r.iter().zip(dr_s).map(|(a, b)| a - b).collect();
    let per_nd: Vec<f64> = delta_ds.iter().zip(&delta_dr).map(|(a, b)| a + b).collect();
    let e_ds_vary_s = Estimate::from_samples(ds_s);
    let e_ds_vary_r = Estimate::from_samples(ds_r);
    let e_dr_vary_r = Estimate::from_samples(dr_r);
    let e_dr_vary_s = Estimate::from_samples(dr_s);
    let delta_ds = Estimate {
        value: e_ds_vary_s.value - e_ds_vary_r.value,
        std_error: Estimate::from_samples(&delta_ds).std_error,
    };
    let delta_dr = Estimate {
        value: e_dr_vary_r.value - e_dr_vary_s.value,
        std_error: Estimate::from_samples(&delta_dr).std_error,
    };
    let nd = Estimate {
        value: delta_ds.value + delta_dr.value,
        std_error: Estimate::from_samples(&per_nd).std_error,
    };
    NdReport {
        ds_name,
        dr_name,
        num_pairs,
        e_ds_vary_s,
        e_ds_vary_r,
        e_dr_vary_r,
        e_dr_vary_s,
        delta_ds,
        delta_dr,
        nd,
        baseline: None,
    }
}

/// Monte Carlo estimate of the four expectation terms of ND over
/// `num_pairs` draws of `(z_s, z_s', z_r, z_r')`.
pub fn estimate_nd(
    gen: &mut dyn LatentGenerator,
    d_s: &dyn Distance,
    d_r: &dyn Distance,
    num_pairs: usize,
    seed: u64,
) -> Result<NdReport> {
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("num_pairs must be at least 1".into()));
    }
    let (sd, rd) = (gen.zs_dim(), gen.zr_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds_s = Vec::with_capacity(num_pairs);
    let mut ds_r = Vec::with_capacity(num_pairs);
    let mut dr_r = Vec::with_capacity(num_pairs);
    let mut dr_s = Vec::with_capacity(num_pairs);
    let mut done = 0;
    while done < num_pairs {
        let n = CHUNK.min(num_pairs - done);
        let mut zs = Vec::with_capacity(3 * n);
        let mut zr = Vec::with_capacity(3 * n);
        for _ in 0..n {
            let (s, s2) = (uniform(&mut rng, sd), uniform(&mut rng, sd));
            let (r, r2) = (uniform(&mut rng, rd), uniform(&mut rng, rd));
            // anchor, vary z_s, vary z_r
            zs.extend([s.clone(), s2, s]);
            zr.extend([r.clone(), r, r2]);
        }
        let imgs = gen.generate(&zs, &zr)?;
        if imgs.len() != 3 * n {
            return Err(shape_err!(
                "generator returned {} images for {} latents",
                imgs.len(),
                3 * n
            ));
        }
        for t in imgs.chunks_exact(3) {
            let (x, xs, xr) = (&t[0], &t[1], &t[2]);
            ds_s.push(d_s.distance(x, xs)?);
            ds_r.push(d_s.distance(x, xr)?);
            dr_r.push(d_r.distance(x, xr)?);
            dr_s.push(d_r.distance(x, xs)?);
        }
        done += n;
    }
    Ok(assemble(d_s.name(), d_r.name(), num_pairs, &ds_s, &ds_r, &dr_r, &dr_s))
}

/// Mean distances over uniformly drawn pairs of distinct images.
pub fn data_baseline(
    images: &[Image],
    d_s: &dyn Distance,
    d_r: &dyn Distance,
    num_pairs: usize,
    seed: u64,
) -> Result<DataBaseline> {
    let n = images.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "data baseline needs at least 2 images, got {n}"
        )));
    }
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("num_pairs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Vec::with_capacity(num_pairs);
    let mut dr = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        ds.push(d_s.distance(&images[i], &images[j])?);
        dr.push(d_r.distance(&images[i], &images[j])?);
    }
    Ok(DataBaseline {
        e_ds_data: Estimate::from_samples(&ds),
        e_dr_data: Estimate::from_samples(&dr),
        num_pairs,
    })
}

/// Mean distances over every unordered pair, with delete-one-image
/// jackknife standard errors (NaN for fewer than 3 images).
pub fn data_baseline_exhaustive(
    images: &[Image],
    d_s: &dyn Distance,
    d_r: &dyn Distance,
) -> Result<DataBaseline> {
    let n = images.len();
    if n < 2 {
        return Err(Error::InvalidArgument("data baseline needs at least 2 images".into()));
    }
    // per-image sums of the distances it takes part in
    let (mut row_s, mut row_r) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (
                d_s.distance(&images[i], &images[j])?,
                d_r.distance(&images[i], &images[j])?,
            );
            row_s[i] += a;
            row_s[j] += a;
            row_r[i] += b;
            row_r[j] += b;
        }
    }
    let pairs = n * (n - 1) / 2;
    let estimate = |rows: &[f64]| {
        let total = rows.iter().sum::<f64>() / 2.0;
        let value = total / pairs as f64;
        let std_error = if n < 3 {
            f64::NAN
        } else {
            let left = (pairs - (n - 1)) as f64;
            let reps: Vec<f64> = rows.iter().map(|r| (total - r) / left).collect();
            let m = reps.iter().sum::<f64>() / n as f64;
            let nf = n as f64;
            ((nf - 1.0) / nf * reps.iter().map(|r| (r - m).powi(2)).sum::<f64>()).sqrt()
        };
        Estimate { value, std_error }
    };
    Ok(DataBaseline {
        e_ds_data: estimate(&row_s),
        e_dr_data: estimate(&row_r),
        num_pairs: pairs,
    })
}

/// Pairwise distances within each row (vary z_r) and within each column
/// (vary z_s) of a grid.
struct GridDistances {
    rows: usize,
    cols: usize,
    /// `[r][j][k]` for columns `j < k`, stored densely.
    row_ds: Vec<f64>,
    row_dr: Vec<f64>,
    /// `[c][p][q]` for rows `p < q`.
    col_ds: Vec<f64>,
    col_dr: Vec<f64>,
}

impl GridDistances {
    /// Four term means using only the kept rows and columns; `None` when a
    /// family of pairs is empty.
    fn terms(&self, keep_row: &[bool], keep_col: &[bool]) -> Option<[f64; 4]> {
        let (r, c) = (self.rows, self.cols);
        let (mut ds_r, mut dr_r, mut nr) = (0.0, 0.0, 0usize);
        for i in (0..r).filter(|&i| keep_row[i]) {
            for j in (0..c).filter(|&j| keep_col[j]) {
                for k in (j + 1..c).filter(|&k| keep_col[k]) {
                    let at = (i * c + j) * c + k;
                    ds_r += self.row_ds[at];
                    dr_r += self.row_dr[at];
                    nr += 1;
                }
            }
        }
        let (mut ds_s, mut dr_s, mut ns) = (0.0, 0.0, 0usize);
        for j in (0..c).filter(|&j| keep_col[j]) {
            for p in (0..r).filter(|&p| keep_row[p]) {
                for q in (p + 1..r).filter(|&q| keep_row[q]) {
                    let at = (j * r + p) * r + q;
                    ds_s += self.col_ds[at];
                    dr_s += self.col_dr[at];
                    ns += 1;
                }
            }
        }
        if nr == 0 || ns == 0 {
            return None;
        }
        let (nr, ns) = (nr as f64, ns as f64);
        Some([ds_s / ns, ds_r / nr, dr_r / nr, dr_s / ns])
    }
}

/// Derived quantities in report order: the four terms, both deltas, ND.
fn derived(t: [f64; 4]) -> [f64; 7] {
    let dds = t[0] - t[1];
    let ddr = t[2] - t[3];
    [t[0], t[1], t[2], t[3], dds, ddr, dds + ddr]
}

/// Exhaustive ND over a grid whose rows share `z_s` and whose columns share
/// `z_r`. Standard errors come from a delete-one-row plus delete-one-column
/// jackknife and are NaN for grids with fewer than 3 rows or columns.
pub fn grid_nd(grid: &[Vec<Image>], d_s: &dyn Distance, d_r: &dyn Distance) -> Result<NdReport> {
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 rows and 2 columns, got {rows}x{cols}"
        )));
    }
    if let Some(bad) = grid.iter().position(|row| row.len() != cols) {
        return Err(shape_err!(
            "ragged grid: row {bad} has {} cells, expected {cols}",
            grid[bad].len()
        ));
    }
    let mut gd = GridDistances {
        rows,
        cols,
        row_ds: vec![0.0; rows * cols * cols],
        row_dr: vec![0.0; rows * cols * cols],
        col_ds: vec![0.0; cols * rows * rows],
        col_dr: vec![0.0; cols * rows * rows],
    };
    for i in 0..rows {
        for j in 0..cols {
            for k in j + 1..cols {
                let at = (i * cols + j) * cols + k;
                gd.row_ds[at] = d_s.distance(&grid[i][j], &grid[i][k])?;
                gd.row_dr[at] = d_r.distance(&grid[i][j], &grid[i][k])?;
            }
        }
    }
    for j in 0..cols {
        for p in 0..rows {
            for q in p + 1..rows {
                let at = (j * rows + p) * rows + q;
                gd.col_ds[at] = d_s.distance(&grid[p][j], &grid[q][j])?;
                gd.col_dr[at] = d_r.distance(&grid[p][j], &grid[q][j])?;
            }
        }
    }
    let all_r = vec![true; rows];
    let all_c = vec![true; cols];
    let full = derived(gd.terms(&all_r, &all_c).expect("grid is at least 2x2"));

    let mut var = [0.0f64; 7];
    if rows >= 3 && cols >= 3 {
        for (n, deleted) in [(rows, true), (cols, false)] {
            let mut reps = Vec::with_capacity(n);
            for drop in 0..n {
                let mut kr = all_r.clone();
                let mut kc = all_c.clone();
                if deleted {
                    kr[drop] = false;
                } else {
                    kc[drop] = false;
                }
                reps.push(derived(gd.terms(&kr, &kc).expect("3x3 or larger")));
            }
            let nf = n as f64;
            for q in 0..7 {
                let m = reps.iter().map(|r| r[q]).sum::<f64>() / nf;
                var[q] += (nf - 1.0) / nf * reps.iter().map(|r| (r[q] - m).powi(2)).sum::<f64>();
            }
        }
    } else {
        var = [f64::NAN; 7];
    }
    let e = |q: usize| Estimate {
        value: full[q],
        std_error: var[q].sqrt(),
    };
    Ok(NdReport {
        ds_name: d_s.name(),
        dr_name: d_r.name(),
        num_pairs: rows * cols,
        e_ds_vary_s: e(0),
        e_ds_vary_r: e(1),
        e_dr_vary_r: e(2),
        e_dr_vary_s: e(3),
        delta_ds: e(4),
        delta_dr: e(5),
        nd: Estimate {
            value: full[4] + full[5],
            std_error: var[6].sqrt(),
        },
        baseline: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_from_samples() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.value, 2.0);
        assert!((e.std_error - 1.0).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[5.0]).std_error, 0.0);
    }
}
