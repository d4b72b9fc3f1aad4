use super::{Domain, Image};

/// Intensity window kept for each domain before mapping to `[-1, 1]`.
pub fn clip_range(domain: Domain) -> (f32, f32) {
    match domain {
        Domain::A => (-1000.0, 500.0),
        Domain::B => (0.0, 667.0),
    }
}

/// Clips to the domain window, then maps the window linearly onto `[-1, 1]`.
pub fn clip_and_normalize(image: &Image, domain: Domain) -> Image {
    let (lo, hi) = clip_range(domain);
    let (lo, hi) = (lo as f64, hi as f64);
    image.mapv(|v| {
        let v = (v as f64).clamp(lo, hi);
        (2.0 * (v - lo) / (hi - lo) - 1.0) as f32
    })
}

/// Inverse of the linear part of [`clip_and_normalize`].
pub fn denormalize(image: &Image, domain: Domain) -> Image {
    let (lo, hi) = clip_range(domain);
    image.mapv(|v| lo + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
}
