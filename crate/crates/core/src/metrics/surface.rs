//! Boundary extraction and the 95th-percentile symmetric surface distance.
//!
//! Point-to-surface distances come from an exact separable Euclidean distance
//! transform of each surface (anisotropic spacing aware), sampled at the other
//! surface's points.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::phantom::{Mask, Spacing};

/// Boundary pixels of a mask, as grid indices plus their physical positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointSet {
    pub pixels: Vec<(usize, usize)>,
    pub points_mm: Vec<(f64, f64)>,
}

/// Foreground pixels with at least one 4-neighbour in the background or
/// outside the image.
pub fn surface_points(mask: &Mask, spacing: Spacing) -> SurfacePointSet {
    let (h, w) = mask.dim();
    let fg = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask[(r as usize, c as usize)] != 0
    };
    let mut pixels = Vec::new();
    for ((r, c), &m) in mask.indexed_iter() {
        if m == 0 {
            continue;
        }
        let (ri, ci) = (r as isize, c as isize);
        if !(fg(ri - 1, ci) && fg(ri + 1, ci) && fg(ri, ci - 1) && fg(ri, ci + 1)) {
            pixels.push((r, c));
        }
    }
    let points_mm = pixels
        .iter()
        .map(|&(r, c)| (r as f64 * spacing.row_mm, c as f64 * spacing.col_mm))
        .collect();
    SurfacePointSet { pixels, points_mm }
}

/// 1D squared-distance transform (lower envelope of parabolas) of `f` sampled
/// on a grid with step `step`.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let x = |q: usize| q as f64 * step;
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let xi = x(i);
        while z[k + 1] < xi {
            k += 1;
        }
        let d = xi - x(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared physical distance from every pixel to the nearest listed pixel.
fn squared_distance_map(shape: (usize, usize), sources: &[(usize, usize)], spacing: Spacing) -> Array2<f64> {
    let (h, w) = shape;
    let mut grid = Array2::from_elem((h, w), f64::INFINITY);
    for &(r, c) in sources {
        grid[(r, c)] = 0.0;
    }
    let mut col_buf = vec![0.0; h];
    let mut out = vec![0.0; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            col_buf[r] = grid[(r, c)];
        }
        edt_1d(&col_buf, spacing.row_mm, &mut out[..h]);
        for r in 0..h {
            grid[(r, c)] = out[r];
        }
    }
    let mut row_buf = vec![0.0; w];
    for r in 0..h {
        for c in 0..w {
            row_buf[c] = grid[(r, c)];
        }
        edt_1d(&row_buf, spacing.col_mm, &mut out[..w]);
        for c in 0..w {
            grid[(r, c)] = out[c];
        }
    }
    grid
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile_linear(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// 95th percentile of the pooled directed surface distances, in millimetres.
pub fn hd95(pred: &Mask, gt: &Mask, spacing: Spacing) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!("pred {:?} vs gt {:?}", pred.dim(), gt.dim())));
    }
    let sp = surface_points(pred, spacing);
    let st = surface_points(gt, spacing);
    if sp.pixels.is_empty() {
        return Err(Error::UndefinedDistance("prediction mask is empty"));
    }
    if st.pixels.is_empty() {
        return Err(Error::UndefinedDistance("reference mask is empty"));
    }
    let to_gt = squared_distance_map(gt.dim(), &st.pixels, spacing);
    let to_pred = squared_distance_map(pred.dim(), &sp.pixels, spacing);
    let mut pooled: Vec<f64> = sp
        .pixels
        .iter()
        .map(|&p| to_gt[p].sqrt())
        .chain(st.pixels.iter().map(|&t| to_pred[t].sqrt()))
        .collect();
    Ok(percentile_linear(&mut pooled, 95.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, r0: usize, c0: usize, side: usize) -> Mask {
        Array2::from_shape_fn((n, n), |(r, c)| {
            u8::from(r >= r0 && r < r0 + side && c >= c0 && c < c0 + side)
        })
    }

    #[test]
    fn identical_masks_zero() {
        let m = square(20, 4, 4, 6);
        assert_eq!(hd95(&m, &m, Spacing::isotropic(1.3)).unwrap(), 0.0);
    }

    #[test]
    fn single_pixels_five_mm_apart() {
        let mut a = Array2::zeros((10, 10));
        let mut b = Array2::zeros((10, 10));
        a[(2, 2)] = 1;
        b[(2, 7)] = 1;
        assert!((hd95(&a, &b, Spacing::isotropic(1.0)).unwrap() - 5.0).abs() < 1e-12);
        // anisotropic: 5 columns at 0.5 mm
        assert!((hd95(&a, &b, Spacing::new(3.0, 0.5).unwrap()).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let z = Array2::zeros((5, 5));
        let m = square(5, 1, 1, 2);
        assert!(matches!(hd95(&z, &m, Spacing::isotropic(1.0)), Err(Error::UndefinedDistance(_))));
        assert!(matches!(hd95(&m, &z, Spacing::isotropic(1.0)), Err(Error::UndefinedDistance(_))));
    }

    #[test]
    fn surface_of_filled_square_is_its_ring() {
        let m = square(10, 2, 2, 5);
        let s = surface_points(&m, Spacing::isotropic(1.0));
        assert_eq!(s.pixels.len(), 16);
        let edge = square(3, 0, 0, 3);
        assert_eq!(surface_points(&edge, Spacing::isotropic(1.0)).pixels.len(), 8);
    }

    #[test]
    fn distance_map_matches_exhaustive_search() {
        let sources = [(0, 0), (5, 9), (7, 2)];
        let spacing = Spacing::new(0.7, 1.9).unwrap();
        let map = squared_distance_map((9, 11), &sources, spacing);
        for ((r, c), &d2) in map.indexed_iter() {
            let best = sources
                .iter()
                .map(|&(sr, sc)| {
                    let dy = (r as f64 - sr as f64) * spacing.row_mm;
                    let dx = (c as f64 - sc as f64) * spacing.col_mm;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d2 - best).abs() < 1e-9, "({r},{c}) {d2} vs {best}");
        }
    }
}
