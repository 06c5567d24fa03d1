//! Inspection overlays: the photo in grayscale with the projected model
//! outline in green, the initialization curve in red, and the final
//! segmentation boundary in yellow.
//!
//! Curve pixels carry exactly these three colors and nothing else ever
//! does: the backdrop is the grayscale photo, whose pixels have equal
//! channels, while each reserved color has unequal channels. Overlays are
//! therefore stable targets for pixel-exact golden tests.

use modelseg_core::{BinaryGrid, ImageGrid, PartSegmentation};

/// Projected model outline color (pure green).
pub const MODEL_OUTLINE_COLOR: [u8; 3] = [0, 255, 0];
/// Initialization-curve color (pure red).
pub const INIT_COLOR: [u8; 3] = [255, 0, 0];
/// Final segmentation boundary color (pure yellow).
pub const RESULT_COLOR: [u8; 3] = [255, 255, 0];

/// The 4-connected boundary of a mask: set pixels with at least one unset
/// 4-neighbour. Pixels on the image edge count their outside as unset, so
/// a mask flush against the frame still shows a closed rim.
pub fn boundary(mask: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (mask.width(), mask.height());
    BinaryGrid::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Spreads a single-channel photo into three identical channels, clamped
/// to `[0, 255]`. Equal channels guarantee no backdrop pixel collides with
/// a reserved curve color.
pub fn gray_to_rgb(photo: &ImageGrid) -> ImageGrid {
    assert_eq!(photo.channels(), 1, "overlay backdrop must be grayscale");
    let mut rgb = ImageGrid::new(photo.width(), photo.height(), 3);
    for y in 0..photo.height() {
        for x in 0..photo.width() {
            let v = photo.get(x, y, 0).clamp(0.0, 255.0).round();
            for c in 0..3 {
                rgb.set(x, y, c, v);
            }
        }
    }
    rgb
}

/// Paints `color` over every set pixel of `mask`.
pub fn paint(rgb: &mut ImageGrid, mask: &BinaryGrid, color: [u8; 3]) {
    assert_eq!(rgb.channels(), 3, "paint target must be RGB");
    assert_eq!(
        (rgb.width(), rgb.height()),
        (mask.width(), mask.height()),
        "mask and image sizes must match"
    );
    for y in 0..rgb.height() {
        for x in 0..rgb.width() {
            if mask.get(x, y) {
                for c in 0..3 {
                    rgb.set(x, y, c, f32::from(color[c]));
                }
            }
        }
    }
}

/// Builds one part's overlay: grayscale photo, projected outline in green,
/// initialization boundary in red, result boundary in yellow. Later curves
/// win where they cross (the result stays visible on top).
pub fn part_overlay(photo: &ImageGrid, part: &PartSegmentation) -> ImageGrid {
    let mut rgb = gray_to_rgb(photo);
    paint(&mut rgb, &part.projected_outline, MODEL_OUTLINE_COLOR);
    paint(&mut rgb, &boundary(&part.initial_region), INIT_COLOR);
    paint(&mut rgb, &boundary(&part.mask), RESULT_COLOR);
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryGrid {
        BinaryGrid::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn boundary_of_a_block_is_its_rim() {
        let mask = solid(10, 10, 2, 3, 7, 8);
        let rim = boundary(&mask);
        assert!(rim.get(2, 3) && rim.get(6, 7) && rim.get(2, 5));
        assert!(!rim.get(3, 4) && !rim.get(4, 5));
        assert!(!rim.get(1, 3));
    }

    #[test]
    fn boundary_counts_the_image_edge() {
        let mask = solid(4, 4, 0, 0, 4, 4);
        let rim = boundary(&mask);
        assert!(rim.get(0, 0) && rim.get(3, 3) && rim.get(0, 2));
        assert!(!rim.get(1, 1) && !rim.get(2, 1));
    }

    #[test]
    fn overlay_pixels_use_only_reserved_colors_on_curves() {
        let mut photo = ImageGrid::new(12, 12, 1);
        for (i, v) in photo.data_mut().iter_mut().enumerate() {
            *v = (i % 256) as f32;
        }
        let part = PartSegmentation {
            name: String::from("body"),
            projected_outline: boundary(&solid(12, 12, 1, 1, 11, 11)),
            initial_region: solid(12, 12, 4, 4, 8, 8),
            mask: solid(12, 12, 3, 3, 9, 9),
            contours: vec![],
            skipped: None,
            iterations: 0,
            converged: true,
        };
        let rgb = part_overlay(&photo, &part);
        let reserved = [MODEL_OUTLINE_COLOR, INIT_COLOR, RESULT_COLOR];
        let mut seen = [false; 3];
        for y in 0..12 {
            for x in 0..12 {
                let p = rgb.pixel(x, y);
                let px = [p[0] as u8, p[1] as u8, p[2] as u8];
                if let Some(i) = reserved.iter().position(|c| *c == px) {
                    seen[i] = true;
                } else {
                    assert!(
                        px[0] == px[1] && px[1] == px[2],
                        "non-curve pixel ({x},{y}) must be gray, got {px:?}"
                    );
                }
            }
        }
        assert_eq!(seen, [true; 3], "all three curve colors must appear");
    }

    #[test]
    fn result_curve_wins_where_curves_cross() {
        let photo = ImageGrid::new(8, 8, 1);
        let same = solid(8, 8, 2, 2, 6, 6);
        let part = PartSegmentation {
            name: String::from("p"),
            projected_outline: boundary(&same),
            initial_region: same.clone(),
            mask: same,
            contours: vec![],
            skipped: None,
            iterations: 0,
            converged: true,
        };
        let rgb = part_overlay(&photo, &part);
        let p = rgb.pixel(2, 2);
        assert_eq!([p[0] as u8, p[1] as u8, p[2] as u8], RESULT_COLOR);
    }
}
