use rand::Rng;

use crate::data::Image;

pub const WEAK_PAD: usize = 4;

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Optional horizontal flip, then a crop at offset (`dy`, `dx`) from the
/// image padded by [`WEAK_PAD`] pixels of reflection. Offsets range over
/// `0..=2·WEAK_PAD`; (`WEAK_PAD`, `WEAK_PAD`) is the centered crop.
pub fn weak_augment_with(img: &Image, flip: bool, dy: usize, dx: usize) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut out = Image::filled(h, w, c, 0.0);
    for y in 0..h {
        let sy = reflect(y as isize + dy as isize - WEAK_PAD as isize, h);
        for x in 0..w {
            let px = reflect(x as isize + dx as isize - WEAK_PAD as isize, w);
            let sx = if flip { w - 1 - px } else { px };
            for ch in 0..c {
                out.set(y, x, ch, img.at(sy, sx, ch));
            }
        }
    }
    out
}

pub fn weak_augment(img: &Image, rng: &mut impl Rng) -> Image {
    let flip = rng.random_bool(0.5);
    let dy = rng.random_range(0..=2 * WEAK_PAD);
    let dx = rng.random_range(0..=2 * WEAK_PAD);
    weak_augment_with(img, flip, dy, dx)
}
