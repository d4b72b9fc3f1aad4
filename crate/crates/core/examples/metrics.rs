//! Scores a shifted tumor against its reference with every evaluation metric.

use ndarray::s;
use xmodseg::metrics::{
    dsc, growth_rate_ttest, hd95, kl_divergence, mask_volume_cc, theil_sen_growth, volume_ratio, IntensityHistogram,
    LongitudinalSeries, SeriesSource,
};
use xmodseg::phantom::{Mask, Spacing};

fn main() -> xmodseg::Result<()> {
    let sp = Spacing::new(0.8, 0.8)?;
    let mut gt = Mask::zeros((64, 64));
    gt.slice_mut(s![20..36, 22..38]).fill(1);
    let mut pred = Mask::zeros((64, 64));
    pred.slice_mut(s![22..38, 24..41]).fill(1);

    let (vp, vg) = (mask_volume_cc(&pred, sp, 2.5), mask_volume_cc(&gt, sp, 2.5));
    println!("DSC   {:.4}", dsc(&pred, &gt)?);
    println!("HD95  {:.3} mm", hd95(&pred, &gt, sp)?);
    println!("VR    {:.4} ({vp:.3} cc vs {vg:.3} cc)", volume_ratio(vp, vg)?);

    let mut p = IntensityHistogram::new(100)?;
    let mut q = IntensityHistogram::new(100)?;
    p.extend((0..500).map(|i| 0.4 + 0.1 * (i as f64 / 500.0)));
    q.extend((0..500).map(|i| 0.35 + 0.2 * (i as f64 / 500.0)));
    println!("KL    {:.4}", kl_divergence(&p, &q, 1e-10)?);

    let weeks = [(0.0, 10.0), (1.0, 12.5), (2.0, 14.0), (3.0, 17.5), (4.0, 30.0)];
    let series = LongitudinalSeries::new("P01", SeriesSource::Expert, weeks.to_vec())?;
    println!("growth {:.3} cc/week (outlier at week 4 ignored)", theil_sen_growth(&series)?);

    let t = growth_rate_ttest(&[2.1, 3.9, 8.2, 5.0], &[2.0, 4.0, 8.0, 5.1])?;
    println!("paired t {:.3}, p {:.3}", t.t, t.p);
    Ok(())
}
