//! Convolution as a sequence of matrix-vector products.
//!
//! An `n x n x d` image (index `(y * n + x) * d + c`) is unrolled into a patch
//! matrix with `d k^2` rows and `n^2` columns; row `(ky * k + kx) * d + c` of
//! column `y * n + x` holds the input pixel under kernel tap `(ky, kx)` for
//! output pixel `(y, x)`, zero outside the image. The `m` filters are stored
//! as a `d k^2 x m` weight matrix, so each output pixel is one forward matvec.

use serde::{Deserialize, Serialize};

use crate::error::{McaError, Result};
use crate::nn::store::WeightStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvMapping {
    pub kernel: usize,
    pub channels: usize,
    pub filters: usize,
    pub side: usize,
}

impl ConvMapping {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(McaError::InvalidParams(format!(
                "kernel size {} must be odd for same-size output",
                self.kernel
            )));
        }
        if self.channels == 0 || self.filters == 0 || self.side == 0 {
            return Err(McaError::InvalidParams("convolution dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// `(d k^2, n^2)`.
    pub fn patch_shape(&self) -> (usize, usize) {
        (self.channels * self.kernel * self.kernel, self.side * self.side)
    }

    /// `(d k^2, m)`.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.channels * self.kernel * self.kernel, self.filters)
    }

    /// Matrix-vector products per image.
    pub fn cycles(&self) -> usize {
        self.side * self.side
    }
}

/// Patch matrix, row-major `d k^2 x n^2`.
pub fn im2col(image: &[f64], map: &ConvMapping) -> Result<Vec<f64>> {
    map.validate()?;
    let (n, d, k) = (map.side, map.channels, map.kernel);
    if image.len() != n * n * d {
        return Err(McaError::DimensionMismatch {
            what: "image",
            expected: n * n * d,
            got: image.len(),
        });
    }
    let pad = (k / 2) as isize;
    let (rows, cols) = map.patch_shape();
    let mut p = vec![0.0; rows * cols];
    for y in 0..n {
        for x in 0..n {
            let q = y * n + x;
            for ky in 0..k {
                let sy = y as isize + ky as isize - pad;
                if sy < 0 || sy >= n as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = x as isize + kx as isize - pad;
                    if sx < 0 || sx >= n as isize {
                        continue;
                    }
                    let src = (sy as usize * n + sx as usize) * d;
                    for c in 0..d {
                        p[((ky * k + kx) * d + c) * cols + q] = image[src + c];
                    }
                }
            }
        }
    }
    Ok(p)
}

fn column(p: &[f64], rows: usize, cols: usize, q: usize) -> Vec<f64> {
    (0..rows).map(|r| p[r * cols + q]).collect()
}

/// Output `m x n^2` (row-major): one forward product per patch column.
pub fn conv_as_matmul(store: &mut dyn WeightStore, patches: &[f64], map: &ConvMapping, t_now: f64) -> Result<Vec<f64>> {
    let (rows, cols) = map.patch_shape();
    if patches.len() != rows * cols {
        return Err(McaError::DimensionMismatch {
            what: "patch matrix",
            expected: rows * cols,
            got: patches.len(),
        });
    }
    if store.n_in() != rows || store.n_out() != map.filters {
        return Err(McaError::DimensionMismatch {
            what: "convolution weights",
            expected: rows * map.filters,
            got: store.n_in() * store.n_out(),
        });
    }
    let mut out = vec![0.0; map.filters * cols];
    for q in 0..cols {
        let y = store.forward(&column(patches, rows, cols, q), t_now)?;
        for (f, v) in y.into_iter().enumerate() {
            out[f * cols + q] = v;
        }
    }
    Ok(out)
}

/// Layer update: the average over output pixels of the outer products
/// `eta * delta[:, q] x[:, q]^T`, dense `d k^2 x m`.
pub fn conv_weight_update(patches: &[f64], deltas: &[f64], map: &ConvMapping, eta: f64) -> Result<Vec<f64>> {
    let (rows, cols) = map.patch_shape();
    let m = map.filters;
    if patches.len() != rows * cols || deltas.len() != m * cols {
        return Err(McaError::DimensionMismatch {
            what: "convolution update",
            expected: rows * cols + m * cols,
            got: patches.len() + deltas.len(),
        });
    }
    let mut dw = vec![0.0; rows * m];
    let s = eta / cols as f64;
    for r in 0..rows {
        for f in 0..m {
            let acc: f64 = (0..cols).map(|q| patches[r * cols + q] * deltas[f * cols + q]).sum();
            dw[r * m + f] = s * acc;
        }
    }
    Ok(dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::ExactStore;
    use rand::{Rng, SeedableRng};

    /// Direct zero-padded convolution, `out[f][y][x]`.
    fn brute_force(img: &[f64], w: &[f64], n: usize, d: usize, k: usize, m: usize) -> Vec<f64> {
        let pad = (k / 2) as i64;
        let mut out = vec![0.0; m * n * n];
        for f in 0..m {
            for y in 0..n as i64 {
                for x in 0..n as i64 {
                    let mut s = 0.0;
                    for ky in 0..k as i64 {
                        for kx in 0..k as i64 {
                            let (sy, sx) = (y + ky - pad, x + kx - pad);
                            if sy < 0 || sx < 0 || sy >= n as i64 || sx >= n as i64 {
                                continue;
                            }
                            for c in 0..d {
                                let tap = ((ky as usize) * k + kx as usize) * d + c;
                                s += w[tap * m + f] * img[((sy as usize) * n + sx as usize) * d + c];
                            }
                        }
                    }
                    out[f * n * n + (y as usize) * n + x as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one_kernel_is_scaling() {
        let map = ConvMapping {
            kernel: 1,
            channels: 1,
            filters: 1,
            side: 3,
        };
        let img: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let p = im2col(&img, &map).unwrap();
        assert_eq!(p, img);
        let mut s = ExactStore::new(1, 1, vec![2.5]).unwrap();
        let out = conv_as_matmul(&mut s, &p, &map, 0.0).unwrap();
        assert_eq!(out, img.iter().map(|v| v * 2.5).collect::<Vec<_>>());
    }

    #[test]
    fn dimension_formulas() {
        let map = ConvMapping {
            kernel: 3,
            channels: 3,
            filters: 8,
            side: 4,
        };
        assert_eq!(map.patch_shape(), (27, 16));
        assert_eq!(map.weight_shape(), (27, 8));
        assert_eq!(map.cycles(), 16);
        let p = im2col(&vec![1.0; 48], &map).unwrap();
        assert_eq!(p.len(), 27 * 16);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(1..7);
            let d = rng.random_range(1..4);
            let k = [1, 3, 5][rng.random_range(0..3)];
            let m = rng.random_range(1..5);
            let map = ConvMapping {
                kernel: k,
                channels: d,
                filters: m,
                side: n,
            };
            let img: Vec<f64> = (0..n * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..d * k * k * m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut s = ExactStore::new(d * k * k, m, w.clone()).unwrap();
            let out = conv_as_matmul(&mut s, &im2col(&img, &map).unwrap(), &map, 0.0).unwrap();
            for (a, b) in out.iter().zip(brute_force(&img, &w, n, d, k, m)) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn update_is_mean_outer_product() {
        let map = ConvMapping {
            kernel: 1,
            channels: 2,
            filters: 1,
            side: 2,
        };
        let p = vec![1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0];
        let dl = vec![1.0, -1.0, 1.0, -1.0];
        let dw = conv_weight_update(&p, &dl, &map, 2.0).unwrap();
        assert_eq!(
            dw,
            vec![2.0 * (1.0 - 2.0 + 3.0 - 4.0) / 4.0, 2.0 * (0.0 - 1.0 + 0.0 - 1.0) / 4.0]
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        let map = ConvMapping {
            kernel: 2,
            channels: 1,
            filters: 1,
            side: 3,
        };
        assert!(im2col(&[0.0; 9], &map).is_err());
        let map = ConvMapping {
            kernel: 3,
            channels: 1,
            filters: 1,
            side: 3,
        };
        assert!(im2col(&[0.0; 8], &map).is_err());
    }
}
