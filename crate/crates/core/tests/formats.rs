//! Property tests for the two binary formats. The parsers must round-trip
//! everything the writers can produce and reject damaged input with an
//! error — never a panic, never a silently wrong value.

use proptest::prelude::*;

use scdm_core::imagediff::ToyImage;
use scdm_core::labelmap::SemanticMap;

fn arb_map() -> impl Strategy<Value = SemanticMap> {
    (1usize..=12, 1usize..=12, 1u16..=9).prop_flat_map(|(h, w, c)| {
        // Cells may include the MASK sentinel `c` itself.
        proptest::collection::vec(0..=c, h * w)
            .prop_map(move |cells| SemanticMap::from_cells(h, w, c, cells).unwrap())
    })
}

fn arb_image() -> impl Strategy<Value = ToyImage> {
    (1usize..=8, 1usize..=8, 1usize..=3).prop_flat_map(|(h, w, ch)| {
        // Storage is f32, so generate exactly representable values.
        proptest::collection::vec(-1e6f32..1e6f32, h * w * ch).prop_map(move |vals| {
            let vals = vals.into_iter().map(f64::from).collect();
            ToyImage::from_values(h, w, ch, vals).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn slm1_round_trips(map in arb_map()) {
        let bytes = map.to_slm1();
        let back = SemanticMap::from_slm1(&bytes).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn slm1_serialization_is_deterministic(map in arb_map()) {
        prop_assert_eq!(map.to_slm1(), map.to_slm1());
    }

    #[test]
    fn slm1_rejects_any_truncation(map in arb_map(), frac in 0.0..1.0f64) {
        let bytes = map.to_slm1();
        let cut = ((bytes.len() as f64) * frac) as usize; // always < len
        prop_assert!(SemanticMap::from_slm1(&bytes[..cut]).is_err());
    }

    #[test]
    fn slm1_rejects_trailing_bytes(map in arb_map(), extra in 1usize..16) {
        let mut bytes = map.to_slm1();
        bytes.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(SemanticMap::from_slm1(&bytes).is_err());
    }

    #[test]
    fn slm1_rejects_out_of_range_cells(map in arb_map()) {
        let mut bytes = map.to_slm1();
        let payload_start = bytes.len() - 2 * map.cells().len();
        let bad = (map.num_classes() + 1).to_le_bytes();
        bytes[payload_start] = bad[0];
        bytes[payload_start + 1] = bad[1];
        prop_assert!(SemanticMap::from_slm1(&bytes).is_err());
    }

    #[test]
    fn slm1_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = SemanticMap::from_slm1(&bytes);
    }

    #[test]
    fn sim1_round_trips(img in arb_image()) {
        let bytes = img.to_sim1().unwrap();
        let back = ToyImage::from_sim1(&bytes).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn sim1_rejects_any_truncation(img in arb_image(), frac in 0.0..1.0f64) {
        let bytes = img.to_sim1().unwrap();
        let cut = ((bytes.len() as f64) * frac) as usize;
        prop_assert!(ToyImage::from_sim1(&bytes[..cut]).is_err());
    }

    #[test]
    fn sim1_rejects_trailing_bytes(img in arb_image(), extra in 1usize..16) {
        let mut bytes = img.to_sim1().unwrap();
        bytes.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(ToyImage::from_sim1(&bytes).is_err());
    }

    #[test]
    fn sim1_rejects_injected_nan(img in arb_image()) {
        let mut bytes = img.to_sim1().unwrap();
        let payload_start = bytes.len() - 4 * img.values().len();
        bytes[payload_start..payload_start + 4]
            .copy_from_slice(&f32::NAN.to_le_bytes());
        prop_assert!(ToyImage::from_sim1(&bytes).is_err());
    }

    #[test]
    fn sim1_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = ToyImage::from_sim1(&bytes);
    }
}

#[test]
fn slm1_huge_declared_size_fails_without_allocating() {
    let bytes = b"SLM1\n999999999 999999999 3\n";
    assert!(SemanticMap::from_slm1(bytes).is_err());
}

#[test]
fn sim1_huge_declared_size_fails_without_allocating() {
    let bytes = b"SIM1\n999999999 999999999 4\n";
    assert!(ToyImage::from_sim1(bytes).is_err());
}

#[test]
fn sim1_refuses_values_outside_f32() {
    let img = ToyImage::from_values(1, 1, 1, vec![1e300]).unwrap();
    assert!(img.to_sim1().is_err());
}
