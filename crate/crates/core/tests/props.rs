//! Property tests for the tensor container, fusion rules, segment geometry
//! and feature aggregation.

use proptest::prelude::*;

use segfuse_core::features::{self, IDX_ENTROPY, IDX_FG_ENTROPY, IDX_MARGIN, IDX_VARRATIO};
use segfuse_core::fusion;
use segfuse_core::segmentation::{connected_components, inner_boundary_split, Segment};
use segfuse_core::tensor::{
    load_tensor, save_tensor, ClassSchema, ForegroundMap, LabelMap, ProbTensor, Tensor,
};

fn schema4() -> ClassSchema {
    ClassSchema::new(4, vec![0, 1]).unwrap()
}

/// Random probability tensor: rows are normalized positive draws.
fn prob_tensor_strategy(h: u32, w: u32, c: u16) -> impl Strategy<Value = ProbTensor> {
    let n = (h * w) as usize * c as usize;
    proptest::collection::vec(0.01f64..1.0, n).prop_map(move |raw| {
        let c_usize = c as usize;
        let mut values = vec![0.0f32; raw.len()];
        for (pixel, chunk) in raw.chunks_exact(c_usize).enumerate() {
            let sum: f64 = chunk.iter().sum();
            for (k, &v) in chunk.iter().enumerate() {
                values[pixel * c_usize + k] = (v / sum) as f32;
            }
        }
        ProbTensor::new(h, w, c, values).unwrap()
    })
}

fn fg_map_strategy(h: u32, w: u32) -> impl Strategy<Value = ForegroundMap> {
    proptest::collection::vec(0.0f32..=1.0, (h * w) as usize)
        .prop_map(move |values| ForegroundMap::new(h, w, values).unwrap())
}

fn label_map_strategy(h: u32, w: u32, classes: u16) -> impl Strategy<Value = LabelMap> {
    proptest::collection::vec(0..classes, (h * w) as usize)
        .prop_map(move |values| LabelMap::new(h, w, values).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_save_load_identity(t in prob_tensor_strategy(3, 4, 3)) {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("t.sft");
        save_tensor(&path, &Tensor::Prob(t.clone())).unwrap();
        prop_assert_eq!(load_tensor(&path).unwrap(), Tensor::Prob(t));
    }

    #[test]
    fn foreground_save_load_identity(t in fg_map_strategy(5, 3)) {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("t.sft");
        save_tensor(&path, &Tensor::Foreground(t.clone())).unwrap();
        prop_assert_eq!(load_tensor(&path).unwrap(), Tensor::Foreground(t));
    }

    #[test]
    fn label_save_load_identity(t in label_map_strategy(4, 4, 7)) {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("t.sft");
        save_tensor(&path, &Tensor::Labels(t.clone())).unwrap();
        prop_assert_eq!(load_tensor(&path).unwrap(), Tensor::Labels(t));
    }

    /// Corrupting one byte of a valid file must never yield a tensor that
    /// violates its type invariants: either the load fails or the result is
    /// fully valid.
    #[test]
    fn corrupted_bytes_never_load_silently_bad(
        t in prob_tensor_strategy(2, 3, 3),
        position in 0usize..100,
        flip in 1u8..=255,
    ) {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("t.sft");
        save_tensor(&path, &Tensor::Prob(t)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = position % bytes.len();
        bytes[idx] ^= flip;
        std::fs::write(&path, &bytes).unwrap();
        if let Ok(loaded) = load_tensor(&path) {
            match loaded {
                Tensor::Prob(p) => {
                    // Re-validating through the constructor must succeed.
                    prop_assert!(ProbTensor::new(
                        p.height(), p.width(), p.num_classes(), p.values().to_vec()
                    ).is_ok());
                }
                Tensor::Foreground(f) => {
                    prop_assert!(ForegroundMap::new(
                        f.height(), f.width(), f.values().to_vec()
                    ).is_ok());
                }
                Tensor::Labels(_) => {}
            }
        }
    }

    /// Fusion never deletes semantic foreground: every pixel that the plain
    /// argmax puts in a foreground class keeps a foreground label after
    /// fusion.
    #[test]
    fn fusion_foreground_is_monotone(
        probs in prob_tensor_strategy(4, 5, 4),
        fg in fg_map_strategy(4, 5),
    ) {
        let schema = schema4();
        let plain = fusion::argmax_prediction(&probs);
        let fused = fusion::fuse(&probs, &fg, &schema).unwrap();
        for (idx, (&a, &f)) in plain.values().iter().zip(fused.values()).enumerate() {
            if schema.is_foreground(a) {
                prop_assert_eq!(a, f, "pixel {} lost its semantic foreground", idx);
            }
        }
    }

    #[test]
    fn zero_depth_fusion_equals_argmax(probs in prob_tensor_strategy(4, 4, 4)) {
        let schema = schema4();
        let zeros = ForegroundMap::zeros(4, 4);
        let pred = fusion::fuse_and_fill(&probs, &zeros, &schema).unwrap();
        prop_assert_eq!(pred.filled, fusion::argmax_prediction(&probs));
    }

    #[test]
    fn full_depth_fusion_is_all_foreground(probs in prob_tensor_strategy(4, 4, 4)) {
        let schema = schema4();
        let ones = ForegroundMap::new(4, 4, vec![1.0; 16]).unwrap();
        let fused = fusion::fuse(&probs, &ones, &schema).unwrap();
        prop_assert!(fused.values().iter().all(|&v| schema.is_foreground(v)));
    }

    /// Every pixel of a requested class lands in exactly one segment.
    #[test]
    fn components_partition_their_classes(labels in label_map_strategy(8, 8, 3)) {
        let segments = connected_components(&labels, &[0, 1]);
        let mut seen = std::collections::BTreeMap::new();
        for (i, seg) in segments.iter().enumerate() {
            for &p in seg.pixels() {
                prop_assert!(seen.insert(p, i).is_none(), "pixel {:?} in two segments", p);
            }
        }
        for r in 0..8u32 {
            for c in 0..8u32 {
                let v = labels.get(r, c);
                prop_assert_eq!(seen.contains_key(&(r, c)), v == 0 || v == 1);
            }
        }
    }

    /// Swapping two class ids relabels segments without changing the pixel
    /// partition.
    #[test]
    fn components_are_relabeling_invariant(labels in label_map_strategy(8, 8, 3)) {
        let swapped_values: Vec<u16> = labels
            .values()
            .iter()
            .map(|&v| match v { 0 => 1, 1 => 0, other => other })
            .collect();
        let swapped = LabelMap::new(8, 8, swapped_values).unwrap();
        let original = connected_components(&labels, &[0, 1]);
        let relabeled = connected_components(&swapped, &[1, 0]);
        let mut a: Vec<Vec<(u32, u32)>> = original.iter().map(|s| s.pixels().to_vec()).collect();
        let mut b: Vec<Vec<(u32, u32)>> = relabeled.iter().map(|s| s.pixels().to_vec()).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    /// Dropping the boundary and re-splitting what remains can only shrink
    /// the inner set.
    #[test]
    fn erosion_shrinks_inner(labels in label_map_strategy(9, 9, 2)) {
        for seg in connected_components(&labels, &[0]) {
            if seg.inner_size() == 0 {
                continue;
            }
            let (inner2, _) = inner_boundary_split(seg.inner(), 9, 9).unwrap();
            for p in &inner2 {
                prop_assert!(seg.inner().binary_search(p).is_ok());
            }
        }
    }

    /// Shifting a segment away from the borders shifts its center and keeps
    /// all sizes.
    #[test]
    fn translation_equivariance(
        labels in label_map_strategy(6, 6, 2),
        dr in 1u32..3,
        dc in 1u32..3,
    ) {
        for seg in connected_components(&labels, &[0]) {
            let shifted: Vec<(u32, u32)> =
                seg.pixels().iter().map(|&(r, c)| (r + dr, c + dc)).collect();
            // Embed in a frame large enough that no pixel touches the border
            // in either position.
            let orig = Segment::new(0, seg.pixels().iter().map(|&(r, c)| (r + 3, c + 3)).collect(), 16, 16).unwrap();
            let moved = Segment::new(0, shifted.iter().map(|&(r, c)| (r + 3, c + 3)).collect(), 16, 16).unwrap();
            prop_assert_eq!(orig.size(), moved.size());
            prop_assert_eq!(orig.inner_size(), moved.inner_size());
            prop_assert_eq!(orig.boundary_size(), moved.boundary_size());
            let (cr, cc) = orig.center();
            let (mr, mc) = moved.center();
            prop_assert!((mr - cr - dr as f64).abs() < 1e-12);
            prop_assert!((mc - cc - dc as f64).abs() < 1e-12);
        }
    }

    /// S * mean == S_in * mean_in + S_bd * mean_bd for all four dispersion
    /// blocks, and all mean-type features stay in [0, 1].
    #[test]
    fn feature_mean_decomposition(
        probs in prob_tensor_strategy(8, 8, 4),
        fg in fg_map_strategy(8, 8),
        labels in label_map_strategy(8, 8, 2),
    ) {
        let schema = schema4();
        let maps = features::dispersion_maps(&probs, &fg).unwrap();
        for seg in connected_components(&labels, &[0]) {
            let f = features::extract_features(&seg, &maps, &probs, &schema).unwrap();
            for block in [IDX_ENTROPY, IDX_VARRATIO, IDX_MARGIN, IDX_FG_ENTROPY] {
                let mean = f.get(block);
                let mean_in = f.get(block + 1);
                let mean_bd = f.get(block + 2);
                let lhs = seg.size() as f64 * mean;
                let rhs = seg.inner_size() as f64 * mean_in + seg.boundary_size() as f64 * mean_bd;
                prop_assert!((lhs - rhs).abs() < 1e-9, "decomposition off by {}", lhs - rhs);
                for v in [mean, mean_in, mean_bd] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    /// Mean class probabilities over a segment sum to one when the background
    /// classes are included (checked by computing the background means
    /// directly).
    #[test]
    fn class_probability_means_sum_to_one(
        probs in prob_tensor_strategy(6, 6, 4),
        labels in label_map_strategy(6, 6, 2),
    ) {
        let schema = schema4();
        let fg = ForegroundMap::zeros(6, 6);
        let maps = features::dispersion_maps(&probs, &fg).unwrap();
        for seg in connected_components(&labels, &[0]) {
            let f = features::extract_features(&seg, &maps, &probs, &schema).unwrap();
            let mut total = f.get(features::IDX_CLASS_PROBS) + f.get(features::IDX_CLASS_PROBS + 1);
            for bg_class in [2u16, 3] {
                let sum: f64 = seg
                    .pixels()
                    .iter()
                    .map(|&(r, c)| probs.prob(r, c, bg_class) as f64)
                    .sum();
                total += sum / seg.size() as f64;
            }
            prop_assert!((total - 1.0).abs() < 1e-4, "class means sum to {total}");
        }
    }

    /// Features must not depend on the order in which pixels are supplied.
    #[test]
    fn features_ignore_pixel_order(
        probs in prob_tensor_strategy(6, 6, 4),
        fg in fg_map_strategy(6, 6),
        perm_seed in 0u64..1000,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let schema = schema4();
        let maps = features::dispersion_maps(&probs, &fg).unwrap();
        let pixels: Vec<(u32, u32)> = (1..5).flat_map(|r| (1..5).map(move |c| (r, c))).collect();
        let seg = Segment::new(0, pixels.clone(), 6, 6).unwrap();
        let mut shuffled = pixels;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let seg_shuffled = Segment::new(0, shuffled, 6, 6).unwrap();
        let a = features::extract_features(&seg, &maps, &probs, &schema).unwrap();
        let b = features::extract_features(&seg_shuffled, &maps, &probs, &schema).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

/// The constant-field property is easier to pin down deterministically.
#[test]
fn constant_field_means_equal_the_constant() {
    let schema = schema4();
    // Probabilities constant across the image: entropy/margins constant too.
    let row = [0.55f32, 0.15, 0.2, 0.1];
    let mut values = Vec::new();
    for _ in 0..36 {
        values.extend_from_slice(&row);
    }
    let probs = ProbTensor::new(6, 6, 4, values).unwrap();
    let fg = ForegroundMap::new(6, 6, vec![0.3; 36]).unwrap();
    let maps = features::dispersion_maps(&probs, &fg).unwrap();
    let kappa = maps.entropy[0];
    let pixels: Vec<(u32, u32)> = (1..5).flat_map(|r| (1..5).map(move |c| (r, c))).collect();
    let seg = Segment::new(0, pixels, 6, 6).unwrap();
    let f = features::extract_features(&seg, &maps, &probs, &schema).unwrap();
    assert!((f.get(IDX_ENTROPY) - kappa).abs() < 1e-12);
    assert!((f.get(IDX_ENTROPY + 1) - kappa).abs() < 1e-12);
    assert!((f.get(IDX_ENTROPY + 2) - kappa).abs() < 1e-12);
}
