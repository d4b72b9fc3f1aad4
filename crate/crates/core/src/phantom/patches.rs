use ndarray::{s, Array2};

use super::Sample;
use crate::error::{Error, Result};

/// Reflect-pads (mirror without edge repeat) so both sides reach at least
/// `min_h` x `min_w`. Returns the padded array and the `(top, left)` offset
/// of the original content.
pub fn reflect_pad_to<T: Copy>(a: &Array2<T>, min_h: usize, min_w: usize) -> (Array2<T>, (usize, usize)) {
    let (h, w) = a.dim();
    let ph = min_h.saturating_sub(h);
    let pw = min_w.saturating_sub(w);
    let (top, left) = (ph / 2, pw / 2);
    let reflect = |i: isize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n as isize - 1);
        let m = i.rem_euclid(period);
        (if m >= n as isize { period - m } else { m }) as usize
    };
    let out = Array2::from_shape_fn((h + ph, w + pw), |(r, c)| {
        a[(
            reflect(r as isize - top as isize, h),
            reflect(c as isize - left as isize, w),
        )]
    });
    (out, (top, left))
}

fn offsets(len: usize, size: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let stride = (size / 2).max(1);
    let mut out: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if *out.last().unwrap() != len - size {
        out.push(len - size);
    }
    out
}

/// Square `size` x `size` crops on a half-overlapping grid.
///
/// Inputs smaller than `size` are reflect-padded first. With `require_tumor`,
/// only crops containing at least one foreground pixel are kept.
pub fn extract_patches(sample: &Sample, size: usize, require_tumor: bool) -> Result<Vec<Sample>> {
    if size == 0 {
        return Err(Error::InvalidInput("patch size must be positive".into()));
    }
    let (image, _) = reflect_pad_to(&sample.image, size, size);
    let mask = sample.mask.as_ref().map(|m| reflect_pad_to(m, size, size).0);
    let (h, w) = image.dim();
    let mut out = Vec::new();
    for &r in &offsets(h, size) {
        for &c in &offsets(w, size) {
            let window = s![r..r + size, c..c + size];
            let patch_mask = mask.as_ref().map(|m| m.slice(window).to_owned());
            if require_tumor && !patch_mask.as_ref().is_some_and(|m| m.iter().any(|&v| v != 0)) {
                continue;
            }
            let mut patch = sample.clone();
            patch.id = format!("{}_p{r}_{c}", sample.id);
            patch.image = image.slice(window).to_owned();
            patch.mask = patch_mask;
            out.push(patch);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{Domain, Spacing};

    fn sample(h: usize, w: usize, tumor: Option<(usize, usize)>) -> Sample {
        let image = Array2::from_shape_fn((h, w), |(r, c)| (r * 1000 + c) as f32);
        let mut mask = Array2::zeros((h, w));
        if let Some((r0, c0)) = tumor {
            for r in r0 - 5..r0 + 5 {
                for c in c0 - 5..c0 + 5 {
                    mask[(r, c)] = 1;
                }
            }
        }
        Sample::new("s", "subj", Domain::B, Spacing::isotropic(1.0), image, Some(mask)).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let s = sample(256, 256, Some((128, 128)));
        let patches = extract_patches(&s, 256, false).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].image, s.image);
        assert_eq!(patches[0].mask, s.mask);
    }

    #[test]
    fn crops_match_direct_slicing() {
        let s = sample(300, 300, Some((150, 150)));
        let patches = extract_patches(&s, 256, true).unwrap();
        assert!(!patches.is_empty());
        for p in &patches {
            let (r, c) = {
                let tail = p.id.rsplit('p').next().unwrap();
                let mut it = tail.split('_').map(|v| v.parse::<usize>().unwrap());
                (it.next().unwrap(), it.next().unwrap())
            };
            for ((i, j), &v) in p.image.indexed_iter() {
                assert_eq!(v, s.image[(r + i, c + j)]);
            }
            assert!(p.mask.as_ref().unwrap().iter().any(|&m| m == 1));
        }
    }

    #[test]
    fn empty_mask_yields_no_tumor_patches() {
        let s = sample(128, 128, None);
        assert!(extract_patches(&s, 64, true).unwrap().is_empty());
        assert_eq!(extract_patches(&s, 64, false).unwrap().len(), 9);
    }

    #[test]
    fn small_inputs_are_reflect_padded() {
        let s = sample(40, 50, Some((20, 20)));
        let patches = extract_patches(&s, 64, false).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].image.dim(), (64, 64));
        // original content sits at the centered offset
        assert_eq!(patches[0].image[(12, 7)], s.image[(0, 0)]);
        // mirror without edge repeat
        assert_eq!(patches[0].image[(11, 7)], s.image[(1, 0)]);
    }
}
