#![allow(dead_code)]

use maskqc::BinaryMask;
use rand::Rng;

/// Blob-like mask: a union of random rectangles and disks plus salt noise,
/// confined to `[margin, size - margin)` in both axes.
pub fn blob_mask<R: Rng>(rng: &mut R, width: u32, height: u32, margin: u32) -> BinaryMask {
    let mut m = BinaryMask::new(width, height).unwrap();
    let (lo_x, hi_x) = (margin, width - margin);
    let (lo_y, hi_y) = (margin, height - margin);
    for _ in 0..rng.random_range(1..5) {
        let cx = rng.random_range(lo_x..hi_x) as f64;
        let cy = rng.random_range(lo_y..hi_y) as f64;
        let r = rng.random_range(1.0..(hi_x - lo_x).min(hi_y - lo_y) as f64 / 2.5);
        let disk = rng.random_bool(0.5);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disk {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= r * 0.6
                };
                if inside {
                    m.set(x, y, true);
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..12) {
        let x = rng.random_range(lo_x..hi_x);
        let y = rng.random_range(lo_y..hi_y);
        m.set(x, y, !m.get(x, y));
    }
    m
}

pub fn random_mask<R: Rng>(rng: &mut R, width: u32, height: u32, density: f64) -> BinaryMask {
    let pixels = (0..width * height)
        .map(|_| rng.random_bool(density))
        .collect();
    BinaryMask::from_pixels(width, height, pixels).unwrap()
}

/// Copy of `m` moved by `(dx, dy)`; pixels pushed off the grid are lost.
pub fn shifted(m: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    let mut out = BinaryMask::new(m.width(), m.height()).unwrap();
    for (x, y) in m.foreground() {
        let (nx, ny) = (i64::from(x) + dx, i64::from(y) + dy);
        if nx >= 0 && ny >= 0 && nx < i64::from(m.width()) && ny < i64::from(m.height()) {
            out.set(nx as u32, ny as u32, true);
        }
    }
    out
}

pub fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Every lattice point on the segment between two pixel centres.
pub fn lattice_segment(a: (u32, u32), b: (u32, u32)) -> Vec<(u32, u32)> {
    let (dx, dy) = (
        i64::from(b.0) - i64::from(a.0),
        i64::from(b.1) - i64::from(a.1),
    );
    let g = gcd(dx, dy).max(1);
    (0..=g)
        .map(|k| {
            (
                (i64::from(a.0) + dx / g * k) as u32,
                (i64::from(a.1) + dy / g * k) as u32,
            )
        })
        .collect()
}

/// Prints one criterion line and fails the test if it did not hold.
pub fn verdict(name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion failed: {name}: {detail}");
}
