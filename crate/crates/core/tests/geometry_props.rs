use proptest::prelude::*;
use zoomground::geometry::{
    map_to_original, next_crop_size, patch_grid, place_window, point_in_box, to_pixels, viewport_from_box,
};
use zoomground::{BoundaryMode, NormPoint, PixelBox, PixelPoint, Viewport};

fn viewport() -> impl Strategy<Value = Viewport> {
    (0.0..0.9f64, 0.0..0.9f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x1, y1, fw, fh)| {
        let x2 = x1 + (1.0 - x1) * fw;
        let y2 = y1 + (1.0 - y1) * fh;
        Viewport::new(x1, y1, x2, y2).unwrap()
    })
}

fn mode() -> impl Strategy<Value = BoundaryMode> {
    prop_oneof![Just(BoundaryMode::Shift), Just(BoundaryMode::Clip), Just(BoundaryMode::Shrink)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn mapping_round_trips_and_stays_in_view(v in viewport(), x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let p = NormPoint::new(x, y).unwrap();
        let r = map_to_original(p, &v);
        prop_assert!(v.contains(&r));
        let back_x = (r.x - v.x1) / v.width();
        let back_y = (r.y - v.y1) / v.height();
        prop_assert!((back_x - x).abs() < 1e-9 && (back_y - y).abs() < 1e-9);
    }

    #[test]
    fn composed_views_map_like_the_inner_view(outer in viewport(), inner in viewport(), x in 0.0..=1.0f64, y in 0.0..=1.0f64) {
        let p = NormPoint::new(x, y).unwrap();
        let nested = Viewport::new(
            outer.x1 + outer.width() * inner.x1,
            outer.y1 + outer.height() * inner.y1,
            outer.x1 + outer.width() * inner.x2,
            outer.y1 + outer.height() * inner.y2,
        ).unwrap();
        let two_step = map_to_original(map_to_original(p, &inner), &outer);
        let one_step = map_to_original(p, &nested);
        prop_assert!((two_step.x - one_step.x).abs() < 1e-9 && (two_step.y - one_step.y).abs() < 1e-9);
    }

    #[test]
    fn pixels_stay_in_bounds(x in -0.5..1.5f64, y in -0.5..1.5f64, w in 1u32..5000, h in 1u32..5000) {
        let px = to_pixels(NormPoint { x, y }, w, h);
        prop_assert!(px.x < w && px.y < h);
    }

    #[test]
    fn placed_window_is_inside_and_valid(
        cx in 0u32..6000, cy in 0u32..6000,
        w in 1u32..6000, h in 1u32..6000,
        img_w in 1u32..5000, img_h in 1u32..5000,
        mode in mode(),
    ) {
        let b = place_window(PixelPoint::new(cx, cy), w, h, img_w, img_h, mode);
        prop_assert!(b.width >= 1 && b.height >= 1);
        prop_assert!(b.fits_in(img_w, img_h));
        prop_assert!(b.width <= w.max(1) && b.height <= h.max(1));
        let c = PixelPoint::new(cx.min(img_w - 1), cy.min(img_h - 1));
        if mode == BoundaryMode::Shift {
            prop_assert_eq!((b.width, b.height), (w.min(img_w), h.min(img_h)));
        } else {
            prop_assert!(point_in_box(&c, &b));
        }
        if mode == BoundaryMode::Shrink && b.width > 1 {
            prop_assert_eq!(c.x - b.left, b.right() - c.x);
        }
    }

    #[test]
    fn grid_partitions_the_image(w in 1u32..4000, h in 1u32..4000, rows in 1u32..5, cols in 1u32..5) {
        prop_assume!(w >= cols && h >= rows);
        let tiles = patch_grid(w, h, rows, cols).unwrap();
        prop_assert_eq!(tiles.len() as u32, rows * cols);
        prop_assert_eq!(tiles.iter().map(PixelBox::area).sum::<u64>(), w as u64 * h as u64);
        for (i, a) in tiles.iter().enumerate() {
            prop_assert!(a.fits_in(w, h));
            for b in &tiles[i + 1..] {
                prop_assert!(!a.intersects(b));
            }
        }
    }

    #[test]
    fn crop_sizes_shrink_within_bounds(w in 1u32..8000, h in 1u32..8000, rho in 0.01..0.99f64, m in 1u32..2000) {
        let (nw, nh) = next_crop_size(w, h, rho, m).unwrap();
        prop_assert!(nw >= 1 && nw <= w && nh >= 1 && nh <= h);
        prop_assert!(nw >= m.min(w) && nh >= m.min(h));
    }

    #[test]
    fn shift_keeps_the_context_floor(
        cx in 0u32..4000, cy in 0u32..4000,
        img_w in 1u32..4000, img_h in 1u32..4000,
        rho in 0.1..0.9f64, m in 1u32..1000,
    ) {
        let (w, h) = next_crop_size(img_w, img_h, rho, m).unwrap();
        let b = place_window(PixelPoint::new(cx, cy), w, h, img_w, img_h, BoundaryMode::Shift);
        prop_assert!(b.width >= m.min(img_w) && b.height >= m.min(img_h));
    }

    #[test]
    fn box_viewport_round_trip(img_w in 1u32..5000, img_h in 1u32..5000, fl in 0.0..1.0f64, ft in 0.0..1.0f64, fw in 0.0..1.0f64, fh in 0.0..1.0f64) {
        let left = (fl * (img_w - 1) as f64) as u32;
        let top = (ft * (img_h - 1) as f64) as u32;
        let b = PixelBox::new(left, top, 1 + (fw * (img_w - left - 1) as f64) as u32, 1 + (fh * (img_h - top - 1) as f64) as u32);
        let v: Viewport = viewport_from_box(&b, img_w, img_h);
        prop_assert!(v.is_valid());
        let corner = to_pixels(map_to_original(NormPoint { x: 0.0, y: 0.0 }, &v), img_w, img_h);
        prop_assert_eq!(corner, PixelPoint::new(b.left, b.top));
    }
}
