use proptest::prelude::*;

use triad::data::{stratified_kfold, BalancedSampler, Cells};
use triad::diffcore::{projection_forward, ParameterSet, PathSpec};
use triad::eval::auroc_scores;
use triad::losses::{
    contrastive_distributions, embedding_dissimilarity_loss, embedding_similarity_loss, ClasswiseEmbeddings,
    EmbeddingBatch, PathTag, SimilarityForm,
};
use triad::Tensor64;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..25).prop_map(f64::from), n),
            prop::collection::vec(0u8..2, n).prop_map(|mut y| {
                y[0] = 0;
                y[1] = 1;
                y
            }),
        )
    })
}

fn unit_rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n).prop_filter_map("zero row", |rows| {
        rows.into_iter()
            .map(|r| {
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                (norm > 1e-3).then(|| r.iter().map(|v| v / norm).collect())
            })
            .collect()
    })
}

fn means(c: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), c)
        .prop_filter("nonzero rows", |rows| rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-3)))
}

fn classwise(rows: &[Vec<f64>]) -> ClasswiseEmbeddings<f64> {
    ClasswiseEmbeddings {
        w: Tensor64::from_rows(rows).unwrap(),
        present: vec![true; rows.len()],
    }
}

proptest! {
    #[test]
    fn auroc_is_invariant_to_increasing_transforms((s, y) in labelled_scores(), a in 1u32..8, b in -5i32..5) {
        let t: Vec<f64> = s.iter().map(|v| f64::from(a) * v + f64::from(b)).collect();
        let cubed: Vec<f64> = s.iter().map(|v| (v - 12.0).powi(3)).collect();
        let base = auroc_scores(&s, &y).unwrap();
        prop_assert_eq!(base, auroc_scores(&t, &y).unwrap());
        prop_assert_eq!(base, auroc_scores(&cubed, &y).unwrap());
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn flipping_labels_or_negating_scores_reflects_auroc((s, y) in labelled_scores()) {
        let base = auroc_scores(&s, &y).unwrap();
        let flipped: Vec<u8> = y.iter().map(|l| 1 - l).collect();
        let negated: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc_scores(&s, &flipped).unwrap() - (1.0 - base)).abs() < 1e-12);
        prop_assert!((auroc_scores(&negated, &y).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn contrastive_distributions_sum_to_one(
        rows in (2usize..16).prop_flat_map(|n| unit_rows(n, 6)),
        seed in any::<u64>(),
        tau in 0.02f64..5.0,
    ) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| ((seed >> (i % 64)) & 1) as usize).collect();
        let batch = EmbeddingBatch::new(Tensor64::from_rows(&rows).unwrap(), labels, PathTag::Common).unwrap();
        let d = contrastive_distributions(&batch, tau).unwrap();
        for (q, p) in d.q.iter().zip(&d.p) {
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if let Some(p) = p {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_rows_have_unit_norm(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let params = ParameterSet::<f64>::init(&PathSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let h = Tensor64::new(vec![5, 32], (0..160).map(|i| scale * ((i * 37 % 11) as f64 - 5.0)).collect()).unwrap();
        let z = projection_forward(&params, &h).unwrap();
        for r in 0..5 {
            let norm = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampler_fills_every_cell_exactly(
        sizes in prop::array::uniform4(1usize..40),
        quarter in 1usize..6,
        seed in any::<u64>(),
        epoch in 0usize..4,
    ) {
        let mut next = 0;
        let mut take = |n: usize| { let v: Vec<usize> = (next..next + n).collect(); next += n; v };
        let ped = Cells { negatives: take(sizes[0]), positives: take(sizes[1]) };
        let adult = Cells { negatives: take(sizes[2]), positives: take(sizes[3]) };
        let sampler = BalancedSampler::new(ped.clone(), adult.clone(), 4 * quarter, seed).unwrap();
        prop_assert_eq!(sampler.per_cell(), quarter);
        let batches = sampler.epoch(epoch);
        let largest = *sizes.iter().max().unwrap();
        prop_assert_eq!(batches.len(), (largest / quarter).max(1));
        for b in &batches {
            for (half, cells) in [(&b.pediatric, &ped), (&b.adult, &adult)] {
                prop_assert_eq!(half.len(), 2 * quarter);
                prop_assert!(half[..quarter].iter().all(|i| cells.negatives.contains(i)));
                prop_assert!(half[quarter..].iter().all(|i| cells.positives.contains(i)));
            }
        }
        prop_assert_eq!(batches, sampler.epoch(epoch));
    }

    #[test]
    fn kfold_assigns_every_sample_once(labels in prop::collection::vec(0u8..2, 10..300), k in 2usize..6, seed in any::<u64>()) {
        prop_assume!(labels.iter().filter(|&&l| l == 1).count() >= k);
        prop_assume!(labels.iter().filter(|&&l| l == 0).count() >= k);
        let a = stratified_kfold(&labels, k, seed).unwrap();
        let mut seen: Vec<usize> = (0..k).flat_map(|f| a.members(f)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        let again = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert_eq!(a.folds(), again.folds());
    }

    #[test]
    fn dissimilarity_ignores_positive_row_scaling(w in means(3, 4), s in prop::array::uniform3(0.01f64..100.0)) {
        let scaled: Vec<Vec<f64>> = w.iter().zip(s).map(|(r, k)| r.iter().map(|v| v * k).collect()).collect();
        let a = embedding_dissimilarity_loss(&classwise(&w)).unwrap();
        let b = embedding_dissimilarity_loss(&classwise(&scaled)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=6.0).contains(&a));
    }

    #[test]
    fn similarity_is_bounded_and_zero_for_identical_means(w in means(2, 5), p in means(2, 5), a in means(2, 5)) {
        let l = embedding_similarity_loss(&classwise(&w), &classwise(&p), &classwise(&a), SimilarityForm::Corrected).unwrap();
        prop_assert!((-1e-12..=8.0 + 1e-12).contains(&l.value));
        let same = embedding_similarity_loss(&classwise(&w), &classwise(&w), &classwise(&w), SimilarityForm::Corrected).unwrap();
        prop_assert!(same.value.abs() < 1e-12);
    }
}
